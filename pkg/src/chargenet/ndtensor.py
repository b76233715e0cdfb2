"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything the encoders and losses are built from: a small op set
(matmul, elementwise, concat/slice/gather, softmax, cross entropy),
an explicit single-use gradient tape, plain SGD, finite-difference
gradient checking, and a binary checkpoint format.

Ops record their backward closures on the innermost active ``Tape``;
with no tape active they run forward-only, which is the inference path.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_EPS = 1e-12  # probability clamp inside cross_entropy

__all__ = [
    "Tensor", "Tape", "SgdConfig", "ShapeError", "DomainError", "StateError",
    "matmul", "add", "sub", "mul", "tanh", "sigmoid", "concat", "narrow",
    "take_cols", "embed", "reshape", "tsum", "softmax", "cross_entropy",
    "sgd_step", "grad_check", "GradCheckReport", "parameter", "zeros",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_VERSION",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """Input outside an operation's domain (empty sequence, non-scalar loss, ...)."""


class StateError(RuntimeError):
    """Object used out of protocol (spent tape, missing gradient, ...)."""


class Tensor:
    """A dense float64 array plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Arithmetic sugar; non-Tensor operands are treated as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


_STATE = threading.local()


def _tape() -> "Tape | None":
    stack = getattr(_STATE, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of backward closures for one forward pass.

    Ops append in execution order, so the list is topologically sorted by
    construction; ``backward`` replays it in exact reverse. A tape may be
    swept once only: re-running backward without a fresh forward raises
    ``StateError``.
    """

    def __init__(self):
        self._steps: list[Callable[[], None]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        stack = getattr(_STATE, "stack", None)
        if stack is None:
            stack = _STATE.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STATE.stack.pop()

    def record(self, step: Callable[[], None]) -> None:
        self._steps.append(step)

    def __len__(self) -> int:
        return len(self._steps)

    def backward(self, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
        """Seed d(loss)/d(loss)=1 and sweep the tape in reverse.

        Every tensor on a path from a recorded op to ``loss`` receives its
        gradient; tensors in ``params`` that the loss does not reach get an
        explicit zero buffer.
        """
        if self._spent:
            raise StateError("tape already swept; re-run the forward pass first")
        if loss.size != 1:
            raise DomainError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for step in reversed(self._steps):
            step()
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def _record(step: Callable[[], None]) -> None:
    t = _tape()
    if t is not None:
        t.record(step)


def _accum(t: Tensor, delta: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def back():
        g = out.grad
        if g is None:
            return
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(back)
    return out


def _binary(a, b, fwd, back_a, back_b) -> Tensor:
    """Shared plumbing for broadcasting binary ops; non-Tensor sides are constants."""
    a_t = a if isinstance(a, Tensor) else None
    b_t = b if isinstance(b, Tensor) else None
    ad = a_t.data if a_t is not None else np.asarray(a, dtype=np.float64)
    bd = b_t.data if b_t is not None else np.asarray(b, dtype=np.float64)
    try:
        out = Tensor(fwd(ad, bd))
    except ValueError as exc:
        raise ShapeError(f"operand shapes do not broadcast: {ad.shape} vs {bd.shape}") from exc

    def back():
        g = out.grad
        if g is None:
            return
        if a_t is not None:
            _accum(a_t, _unbroadcast(back_a(g, ad, bd), ad.shape))
        if b_t is not None:
            _accum(b_t, _unbroadcast(back_b(g, ad, bd), bd.shape))

    if a_t is not None or b_t is not None:
        _record(back)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def back():
        if out.grad is not None:
            _accum(a, (1.0 - out.data * out.data) * out.grad)

    _record(back)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    val = np.empty_like(x)
    pos = x >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    val[~pos] = ex / (1.0 + ex)
    out = Tensor(val)

    def back():
        if out.grad is not None:
            _accum(a, out.data * (1.0 - out.data) * out.grad)

    _record(back)
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; all other axes must agree."""
    if not parts:
        raise DomainError("concat of zero tensors")
    for p in parts[1:]:
        if (p.data.ndim != parts[0].data.ndim
                or any(s != t for i, (s, t) in enumerate(zip(p.shape, parts[0].shape)) if i != axis)):
            raise ShapeError(f"concat shapes disagree off-axis: {[p.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]

    def back():
        g = out.grad
        if g is None:
            return
        offset = 0
        for p, n in zip(parts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(p, g[tuple(idx)])
            offset += n

    _record(back)
    return out


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] outside axis {axis} of {a.shape}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def back():
        if out.grad is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += out.grad

    _record(back)
    return out


def take_cols(a: Tensor, cols) -> Tensor:
    """Gather columns of a 2-D tensor by index (repeats allowed)."""
    cols = np.asarray(cols, dtype=np.intp)
    out = Tensor(a.data[:, cols])

    def back():
        if out.grad is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad.T, cols, out.grad.T)

    _record(back)
    return out


def embed(table: Tensor, ids) -> Tensor:
    """Look rows of an embedding table up by id, returned as columns (dim, n)."""
    ids = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[ids].T)

    def back():
        if out.grad is None:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, out.grad.T)

    _record(back)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def back():
        if out.grad is not None:
            _accum(a, out.grad.reshape(a.shape))

    _record(back)
    return out


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def back():
        g = out.grad
        if g is None:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    _record(back)
    return out


def softmax(logits: Tensor, axis: int = 0, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax along ``axis``; outputs sum to 1 over the axis.

    ``mask`` (a constant 0/1 array broadcastable to the logits) excludes
    entries: masked slots get exactly 0 and take no gradient. Every slice
    must keep at least one unmasked entry.
    """
    x = logits.data
    if x.size == 0:
        raise DomainError("softmax of empty input")
    if mask is None:
        e = np.exp(x - x.max(axis=axis, keepdims=True))
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=np.float64), x.shape)
        if (mask.sum(axis=axis) == 0).any():
            raise DomainError("softmax slice fully masked")
        valid = np.where(mask > 0, x, -np.inf).max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask > 0, x - valid, 0.0)) * mask
    out = Tensor(e / e.sum(axis=axis, keepdims=True))

    def back():
        g = out.grad
        if g is None:
            return
        p = out.data
        inner = (p * g).sum(axis=axis, keepdims=True)
        _accum(logits, p * (g - inner))

    _record(back)
    return out


def cross_entropy(target, predicted: Tensor) -> Tensor:
    """-sum(target * log(predicted)) with probabilities clamped to [1e-12, 1].

    ``target`` is a constant distribution (Tensor or array); no gradient
    flows to it. Both arguments must sum to 1 within 1e-6.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != predicted.shape:
        raise ShapeError(f"cross_entropy shapes differ: {t.shape} vs {predicted.shape}")
    if abs(t.sum() - 1.0) > 1e-6 or abs(predicted.data.sum() - 1.0) > 1e-6:
        raise DomainError("cross_entropy arguments must each sum to 1")
    clamped = np.clip(predicted.data, LOG_EPS, 1.0)
    out = Tensor(-(t * np.log(clamped)).sum())

    def back():
        if out.grad is None:
            return
        live = predicted.data >= LOG_EPS  # below the clamp the loss is locally flat
        _accum(predicted, np.where(live, -t / clamped, 0.0) * out.grad)

    _record(back)
    return out


@dataclass
class SgdConfig:
    """Plain stochastic gradient descent settings."""
    learning_rate: float = 0.1
    batch_size: int = 8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DomainError(f"batch_size must be >= 1, got {self.batch_size}")


def sgd_step(params: Iterable[Tensor], config: SgdConfig) -> None:
    """p <- p - lr * grad for every parameter, then clear the gradients."""
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p.name or p.shape} has no gradient; run backward first")
        p.data -= config.learning_rate * p.grad
        p.grad = None


def parameter(shape, rng: np.random.Generator, scale: float | None = None,
              name: str | None = None) -> Tensor:
    """Trainable weight drawn uniformly from [-scale, scale].

    Without an explicit scale, the limit is sqrt(6 / (fan_in + fan_out)),
    which keeps activation variance roughly constant through tanh stacks at
    any layer width; a fixed small constant starves narrow desk-scale models.
    """
    if scale is None:
        fan_out = shape[0] if len(shape) > 0 else 1
        fan_in = shape[1] if len(shape) > 1 else 1
        scale = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-scale, scale, size=shape), name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), name=name)


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    """Per-parameter agreement between analytic and finite-difference gradients."""
    checks: list[ParamCheck] = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.ok]


def grad_check(model_fn: Callable[[], Tensor], params, tolerance: float = 1e-4,
               step: float = 1e-5) -> GradCheckReport:
    """Compare tape gradients of a deterministic scalar loss to central differences.

    ``model_fn`` runs a pure forward pass over the current parameter values.
    Relative error uses a 1e-4 denominator floor so finite-difference noise on
    near-zero gradients does not trip the check.
    """
    named = list(params.items()) if isinstance(params, dict) else list(params)
    tensors = [p for _, p in named]
    for p in tensors:
        p.grad = None
    with Tape() as tape:
        loss = model_fn()
        tape.backward(loss, tensors)
    analytic = {name: p.grad.copy() for name, p in named}

    report = GradCheckReport(tolerance=tolerance)
    for name, p in named:
        worst = 0.0
        flat = p.data.reshape(-1)
        ana = analytic[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = model_fn().item()
            flat[i] = keep - step
            down = model_fn().item()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            err = abs(ana[i] - fd) / max(abs(ana[i]), abs(fd), 1e-4)
            worst = max(worst, err)
        report.checks.append(ParamCheck(name, worst, worst < tolerance))
    for p in tensors:
        p.grad = None
    return report


CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_params: Iterable[tuple[str, Tensor]]) -> None:
    """Write parameters to ``path`` in the versioned binary layout.

    Layout (all integers little-endian): uint32 format version, uint32
    parameter count, then per parameter: uint16 name length, UTF-8 name,
    uint8 rank, rank * uint32 dims, raw little-endian float64 data in
    row-major order. ``load_checkpoint(save_checkpoint(p)) == p`` bit-exact.
    """
    items = list(named_params)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name, tensor in items:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            dims = tensor.shape
            fh.write(struct.pack("<B", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(tensor.data.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> array mapping (see save_checkpoint)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, blob, off)
        off += struct.calcsize(fmt)
        return vals

    version, count = take("<II")
    if version != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        out[name] = arr.astype(np.float64)
    return out
