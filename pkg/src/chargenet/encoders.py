"""Recurrent sequence encoders: GRU cell, bidirectional GRU, attentive pooling,
and the two-level (word -> sentence) document encoder.

Sequences are lists of column tensors. Every function accepts either single
vectors (1-D) or batches stacked as columns (dim, B); batched calls carry an
optional 0/1 mask so right-padded sequences encode exactly like their
unpadded counterparts (masked steps pass the previous state through).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ndtensor as nd
from .ndtensor import DomainError, ShapeError, Tensor


@dataclass
class GruParams:
    """Gate weights for one GRU direction."""

    input_dim: int
    hidden_dim: int
    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
               prefix: str = "gru") -> "GruParams":
        def w(tag):
            return nd.parameter((hidden_dim, input_dim), rng, name=f"{prefix}.{tag}")

        def u(tag):
            return nd.parameter((hidden_dim, hidden_dim), rng, name=f"{prefix}.{tag}")

        def b(tag):
            return nd.zeros((hidden_dim, 1), name=f"{prefix}.{tag}")

        return cls(input_dim, hidden_dim,
                   w("w_z"), u("u_z"), b("b_z"),
                   w("w_r"), u("u_r"), b("b_r"),
                   w("w_h"), u("u_h"), b("b_h"))

    def named(self):
        for tag in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
            yield getattr(self, tag).name or tag, getattr(self, tag)


@dataclass
class BiGruParams:
    """Independent forward and backward GRUs of equal hidden size."""

    forward: GruParams
    backward: GruParams

    def __post_init__(self):
        if self.forward.hidden_dim != self.backward.hidden_dim:
            raise ShapeError("forward/backward hidden sizes differ")

    @property
    def state_dim(self) -> int:
        return 2 * self.forward.hidden_dim

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
               prefix: str = "bigru") -> "BiGruParams":
        return cls(GruParams.create(input_dim, hidden_dim, rng, f"{prefix}.fwd"),
                   GruParams.create(input_dim, hidden_dim, rng, f"{prefix}.bwd"))

    def named(self):
        yield from self.forward.named()
        yield from self.backward.named()


@dataclass
class AttentivePoolParams:
    """Score projection plus, for globally-contexted pools, the trained context vector."""

    w: Tensor
    u: Tensor | None = None

    @classmethod
    def create(cls, state_dim: int, rng: np.random.Generator, prefix: str = "pool",
               global_context: bool = True) -> "AttentivePoolParams":
        w = nd.parameter((state_dim, state_dim), rng, name=f"{prefix}.w")
        u = nd.parameter((state_dim, 1), rng, name=f"{prefix}.u") if global_context else None
        return cls(w, u)

    def named(self):
        yield self.w.name or "w", self.w
        if self.u is not None:
            yield self.u.name or "u", self.u


@dataclass
class DocEncoderParams:
    """Word-level and sentence-level encoder/pool pairs."""

    word_gru: BiGruParams
    word_pool: AttentivePoolParams
    sent_gru: BiGruParams
    sent_pool: AttentivePoolParams

    def __post_init__(self):
        if self.sent_gru.forward.input_dim != self.word_gru.state_dim:
            raise ShapeError("sentence-level input dim must equal word-level state dim")

    @property
    def out_dim(self) -> int:
        return self.sent_gru.state_dim

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator,
               prefix: str = "doc", global_context: bool = True) -> "DocEncoderParams":
        word_gru = BiGruParams.create(input_dim, hidden_dim, rng, f"{prefix}.word")
        word_pool = AttentivePoolParams.create(2 * hidden_dim, rng, f"{prefix}.word_pool",
                                               global_context)
        sent_gru = BiGruParams.create(2 * hidden_dim, hidden_dim, rng, f"{prefix}.sent")
        sent_pool = AttentivePoolParams.create(2 * hidden_dim, rng, f"{prefix}.sent_pool",
                                               global_context)
        return cls(word_gru, word_pool, sent_gru, sent_pool)

    def named(self):
        yield from self.word_gru.named()
        yield from self.word_pool.named()
        yield from self.sent_gru.named()
        yield from self.sent_pool.named()


def _as_column(x: Tensor) -> tuple[Tensor, bool]:
    if x.data.ndim == 1:
        return nd.reshape(x, (x.shape[0], 1)), True
    return x, False


def gru_step(x: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One gated update: z and r gates, candidate state, convex mix with h_prev."""
    x, squeeze = _as_column(x)
    h_prev, _ = _as_column(h_prev)
    if x.shape[0] != p.input_dim or h_prev.shape[0] != p.hidden_dim:
        raise ShapeError(
            f"gru_step got x {x.shape}, h {h_prev.shape}; "
            f"expected ({p.input_dim}, B), ({p.hidden_dim}, B)")
    if x.shape[1] != h_prev.shape[1]:
        raise ShapeError(f"batch sizes differ: x {x.shape} vs h {h_prev.shape}")
    z = nd.sigmoid(p.w_z @ x + p.u_z @ h_prev + p.b_z)
    r = nd.sigmoid(p.w_r @ x + p.u_r @ h_prev + p.b_r)
    cand = nd.tanh(p.w_h @ x + p.u_h @ (r * h_prev) + p.b_h)
    h = (1.0 - z) * h_prev + z * cand
    return nd.reshape(h, (p.hidden_dim,)) if squeeze else h


def _gru_scan(xs: list[Tensor], p: GruParams, masks: list[np.ndarray] | None,
              reverse: bool) -> list[Tensor]:
    """Run the recurrence over padded timesteps; masked steps keep the prior state."""
    batch = xs[0].shape[1]
    h = Tensor(np.zeros((p.hidden_dim, batch)))
    states: list[Tensor | None] = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for t in order:
        h_new = gru_step(xs[t], h, p)
        if masks is not None:
            m = masks[t]
            h_new = h_new * m + h * (1.0 - m)
        states[t] = h_new
        h = h_new
    return states  # type: ignore[return-value]


def bigru_encode(seq: Sequence[Tensor], p: BiGruParams) -> list[Tensor]:
    """Concatenation of forward and backward GRU states at every position."""
    if not seq:
        raise DomainError("bigru_encode of empty sequence")
    cols = [_as_column(x)[0] for x in seq]
    squeeze = seq[0].data.ndim == 1
    fwd = _gru_scan(cols, p.forward, None, reverse=False)
    bwd = _gru_scan(cols, p.backward, None, reverse=True)
    out = [nd.concat([f, b], axis=0) for f, b in zip(fwd, bwd)]
    if squeeze:
        out = [nd.reshape(h, (p.state_dim,)) for h in out]
    return out


def attentive_pool(states: Sequence[Tensor], w: Tensor, u: Tensor,
                   mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Score each state by tanh(W h)^T u, softmax over positions, return the
    attention-weighted sum and the attention distribution itself.

    ``u`` is either a trained global context vector or one generated per case.
    """
    if not states:
        raise DomainError("attentive_pool of empty state sequence")
    cols = [_as_column(h)[0] for h in states]
    squeeze = states[0].data.ndim == 1
    u_col, _ = _as_column(u)
    rows = [nd.tsum(nd.tanh(w @ h) * u_col, axis=0, keepdims=True) for h in cols]
    alpha = nd.softmax(nd.concat(rows, axis=0), axis=0, mask=mask)
    pooled = None
    for t, h in enumerate(cols):
        term = h * nd.narrow(alpha, 0, t, 1)
        pooled = term if pooled is None else pooled + term
    if squeeze:
        pooled = nd.reshape(pooled, (cols[0].shape[0],))
        alpha = nd.reshape(alpha, (len(cols),))
    return pooled, alpha


def _flat_mask(lengths: list[int], max_len: int) -> list[np.ndarray]:
    return [np.array([[1.0 if t < n else 0.0 for n in lengths]]) for t in range(max_len)]


def _pool_mask(lengths: list[int], max_len: int) -> np.ndarray:
    return np.array([[1.0 if t < n else 0.0 for n in lengths] for t in range(max_len)])


def _encode_level(xs: list[Tensor], lengths: list[int], gru: BiGruParams,
                  pool: AttentivePoolParams, u: Tensor | None) -> tuple[Tensor, Tensor]:
    """One Bi-GRU + attentive pool over a padded batch of sequences."""
    max_len = len(xs)
    masks = _flat_mask(lengths, max_len)
    fwd = _gru_scan(xs, gru.forward, masks, reverse=False)
    bwd = _gru_scan(xs, gru.backward, masks, reverse=True)
    states = [nd.concat([f, b], axis=0) for f, b in zip(fwd, bwd)]
    context = u if u is not None else pool.u
    if context is None:
        raise DomainError("no context vector: pool has no global u and none was supplied")
    return attentive_pool(states, pool.w, context, mask=_pool_mask(lengths, max_len))


def encode_documents(docs: Sequence[Sequence[tuple[np.ndarray, np.ndarray]]],
                     p: DocEncoderParams,
                     embed_tokens: Callable[[np.ndarray, np.ndarray], Tensor],
                     u_word: Tensor | None = None,
                     u_sent: Tensor | None = None,
                     ) -> tuple[Tensor, list[list[np.ndarray]], list[np.ndarray]]:
    """Encode several documents in one padded batch.

    Each document is a list of sentences; each sentence a pair of id arrays
    (word ids, pos ids). ``embed_tokens`` turns one timestep's id slice into
    input columns. Returns the document embeddings as columns of a single
    (state_dim, n_docs) tensor plus per-sentence word attention and per-document
    sentence attention as plain arrays.
    """
    if not docs:
        raise DomainError("encode_documents of empty document list")
    for doc in docs:
        if not doc:
            raise DomainError("document with no sentences")
        for wids, _ in doc:
            if len(wids) == 0:
                raise DomainError("sentence with no tokens")

    flat = [(d, s) for d, doc in enumerate(docs) for s in range(len(doc))]
    sent_of = {pair: i for i, pair in enumerate(flat)}
    word_lens = [len(docs[d][s][0]) for d, s in flat]
    max_words = max(word_lens)

    xs = []
    for t in range(max_words):
        wid = np.array([docs[d][s][0][t] if t < len(docs[d][s][0]) else 0 for d, s in flat])
        pid = np.array([docs[d][s][1][t] if t < len(docs[d][s][1]) else 0 for d, s in flat])
        xs.append(embed_tokens(wid, pid))
    sent_emb, word_alpha = _encode_level(xs, word_lens, p.word_gru, p.word_pool, u_word)

    sent_lens = [len(doc) for doc in docs]
    max_sents = max(sent_lens)
    sent_xs = [nd.take_cols(sent_emb,
                            [sent_of[(d, min(t, len(docs[d]) - 1))] for d in range(len(docs))])
               for t in range(max_sents)]
    d_emb, sent_alpha = _encode_level(sent_xs, sent_lens, p.sent_gru, p.sent_pool, u_sent)

    word_attn = [[word_alpha.data[:word_lens[sent_of[(d, s)]], sent_of[(d, s)]]
                  for s in range(len(doc))] for d, doc in enumerate(docs)]
    sent_attn = [sent_alpha.data[:sent_lens[d], d] for d in range(len(docs))]
    return d_emb, word_attn, sent_attn


def encode_document(doc: Sequence[Sequence[Tensor]], p: DocEncoderParams,
                    u_word: Tensor | None = None, u_sent: Tensor | None = None,
                    ) -> tuple[Tensor, list[np.ndarray], np.ndarray]:
    """Two-level encoding of one document given per-token input embeddings.

    Words pool into sentence embeddings, sentences pool into the document
    embedding ``d``. Returns ``d`` (1-D) with the word attention per sentence
    and the sentence attention.
    """
    if not doc:
        raise DomainError("encode_document of empty document")
    if any(len(sent) == 0 for sent in doc):
        raise DomainError("document contains an empty sentence")

    in_dim = doc[0][0].shape[0]
    lens = [len(sent) for sent in doc]
    max_words = max(lens)
    pad = Tensor(np.zeros((in_dim, 1)))
    xs = [nd.concat([_as_column(doc[s][t])[0] if t < lens[s] else pad
                     for s in range(len(doc))], axis=1)
          for t in range(max_words)]
    sent_emb, word_alpha = _encode_level(xs, lens, p.word_gru, p.word_pool, u_word)

    sent_xs = [nd.narrow(sent_emb, 1, s, 1) for s in range(len(doc))]
    d_emb, sent_alpha = _encode_level(sent_xs, [len(doc)], p.sent_gru, p.sent_pool, u_sent)
    return (nd.reshape(d_emb, (p.out_dim,)),
            [word_alpha.data[:lens[s], s] for s in range(len(doc))],
            sent_alpha.data.reshape(-1))
