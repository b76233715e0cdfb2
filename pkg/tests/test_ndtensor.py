import math

import numpy as np
import numpy.testing as npt
import pytest

from chargenet import ndtensor as nd
from chargenet.ndtensor import (
    DomainError,
    SgdConfig,
    ShapeError,
    StateError,
    Tape,
    Tensor,
)


def fd_grad(fn, tensors, step=1e-5):
    """Central finite differences of a scalar-valued fn over every entry."""
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = fn().item()
            flat[i] = keep - step
            down = fn().item()
            flat[i] = keep
            g[i] = (up - down) / (2 * step)
        grads.append(g.reshape(t.shape))
    return grads


def assert_matches_fd(fn, tensors, tol=1e-4):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = fn()
        tape.backward(loss, tensors)
    analytic = [t.grad.copy() for t in tensors]
    numeric = fd_grad(fn, tensors)
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, 1e-4)])
        assert err.max() < tol, f"max rel err {err.max():.3g}"


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = nd.matmul(Tensor(np.eye(2)), a)
        npt.assert_array_equal(out.data, a.data)

    def test_zero(self):
        z = Tensor(np.zeros((2, 3)))
        out = nd.matmul(z, Tensor(np.ones((3, 4))))
        npt.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            nd.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.uniform(-2, 2, (3, 4)))
        b = Tensor(rng.uniform(-2, 2, (4, 2)))
        assert_matches_fd(lambda: nd.tsum(nd.matmul(a, b)), [a, b], tol=1e-6)


class TestElementwise:
    def test_tanh_at_zero(self):
        x = Tensor([0.0])
        with Tape() as tape:
            out = nd.tsum(nd.tanh(x))
            tape.backward(out)
        assert out.item() == 0.0
        npt.assert_array_equal(x.grad, [1.0])

    def test_sigmoid_at_zero(self):
        x = Tensor([0.0])
        with Tape() as tape:
            out = nd.tsum(nd.sigmoid(x))
            tape.backward(out)
        assert out.item() == 0.5
        npt.assert_array_equal(x.grad, [0.25])

    def test_concat_halves(self):
        a = Tensor(np.arange(75.0))
        b = Tensor(np.arange(75.0, 150.0))
        out = nd.concat([a, b])
        assert out.shape == (150,)
        npt.assert_array_equal(out.data[:75], a.data)

    def test_concat_off_axis_mismatch(self):
        with pytest.raises(ShapeError):
            nd.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 4)))], axis=0)

    def test_add_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            nd.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    @pytest.mark.parametrize("op", ["tanh", "sigmoid", "add", "mul", "concat"])
    def test_gradients_vs_finite_differences(self, op):
        rng = np.random.default_rng(7)
        a = Tensor(rng.uniform(-2, 2, (3, 4)))
        b = Tensor(rng.uniform(-2, 2, (3, 4)))
        fns = {
            "tanh": lambda: nd.tsum(nd.tanh(a)),
            "sigmoid": lambda: nd.tsum(nd.sigmoid(a)),
            "add": lambda: nd.tsum(nd.tanh(nd.add(a, b))),
            "mul": lambda: nd.tsum(nd.tanh(nd.mul(a, b))),
            "concat": lambda: nd.tsum(nd.tanh(nd.concat([a, b], axis=1))),
        }
        assert_matches_fd(fns[op], [a, b])

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(8)
        a = Tensor(rng.uniform(-2, 2, (3, 5)))
        bias = Tensor(rng.uniform(-2, 2, (3, 1)))
        assert_matches_fd(lambda: nd.tsum(nd.sigmoid(nd.add(a, bias))), [a, bias])
        assert_matches_fd(lambda: nd.tsum(nd.tanh(nd.mul(a, bias))), [a, bias])

    def test_structural_ops_gradients(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.uniform(-2, 2, (4, 6)))
        table = Tensor(rng.uniform(-2, 2, (5, 3)))
        assert_matches_fd(lambda: nd.tsum(nd.tanh(nd.narrow(a, 1, 2, 3))), [a])
        assert_matches_fd(lambda: nd.tsum(nd.tanh(nd.take_cols(a, [0, 2, 2, 5]))), [a])
        assert_matches_fd(lambda: nd.tsum(nd.tanh(nd.embed(table, [1, 1, 4, 0]))), [table])
        assert_matches_fd(lambda: nd.tsum(nd.tanh(nd.reshape(a, (6, 4)))), [a])


class TestSoftmax:
    def test_equal_logits_uniform(self):
        for c in (-3.0, 0.0, 11.5):
            out = nd.softmax(Tensor([c, c, c]))
            npt.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_single_element(self):
        npt.assert_array_equal(nd.softmax(Tensor([4.2])).data, [1.0])

    def test_log_ratios(self):
        out = nd.softmax(Tensor([math.log(1), math.log(2), math.log(3)]))
        npt.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_empty_input(self):
        with pytest.raises(DomainError):
            nd.softmax(Tensor(np.zeros(0)))

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            x = rng.uniform(-50, 50, rng.integers(1, 12))
            p = nd.softmax(Tensor(x)).data
            assert abs(p.sum() - 1.0) < 1e-9
            shifted = nd.softmax(Tensor(x + 123.456)).data
            npt.assert_allclose(p, shifted, atol=1e-12)

    def test_masked_columns(self):
        x = Tensor(np.array([[1.0, 5.0], [2.0, -1.0], [3.0, 900.0]]))
        mask = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        p = nd.softmax(x, axis=0, mask=mask).data
        assert p[2, 0] == 0.0 and p[1, 1] == 0.0
        npt.assert_allclose(p.sum(axis=0), [1.0, 1.0], atol=1e-12)
        assert np.isfinite(p).all()

    def test_fully_masked_slice_rejected(self):
        with pytest.raises(DomainError):
            nd.softmax(Tensor(np.ones((2, 2))), axis=0, mask=np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(-2, 2, (5, 3)))
        w = Tensor(rng.uniform(-2, 2, (5, 3)))
        mask = np.array([[1, 1, 1], [1, 1, 0], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
        assert_matches_fd(lambda: nd.tsum(nd.mul(nd.softmax(x, axis=0), w)), [x, w])
        assert_matches_fd(lambda: nd.tsum(nd.mul(nd.softmax(x, axis=0, mask=mask), w)), [x, w])


class TestCrossEntropy:
    def test_perfect_one_hot(self):
        t = np.array([0.0, 1.0, 0.0])
        out = nd.cross_entropy(t, Tensor(t.copy()))
        assert out.item() == 0.0

    def test_uniform_prediction(self):
        out = nd.cross_entropy(np.array([0.5, 0.5, 0.0, 0.0]), Tensor(np.full(4, 0.25)))
        npt.assert_allclose(out.item(), math.log(4), atol=1e-12)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = rng.integers(2, 10)
            t = rng.uniform(0.01, 1, n)
            t /= t.sum()
            p = rng.uniform(0.01, 1, n)
            p /= p.sum()
            expected = -sum(ti * math.log(pi) for ti, pi in zip(t, p))
            got = nd.cross_entropy(t, Tensor(p)).item()
            assert abs(got - expected) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            nd.cross_entropy(np.array([1.0, 0.0]), Tensor(np.full(3, 1 / 3)))

    def test_non_distribution_rejected(self):
        with pytest.raises(DomainError):
            nd.cross_entropy(np.array([0.9, 0.4]), Tensor(np.array([0.5, 0.5])))

    def test_gradient_through_softmax(self):
        rng = np.random.default_rng(13)
        logits = Tensor(rng.uniform(-2, 2, 6))
        t = rng.uniform(0.01, 1, 6)
        t /= t.sum()
        assert_matches_fd(lambda: nd.cross_entropy(t, nd.softmax(logits)), [logits], tol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(1).uniform(-2, 2, (3, 4)))
        with Tape() as tape:
            tape.backward(nd.tsum(x), [x])
        npt.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_chain_rule_at_zero_weight(self):
        x = Tensor(np.array([[1.5], [-0.5]]))
        w = Tensor(np.zeros((1, 2)))
        with Tape() as tape:
            loss = nd.tsum(nd.tanh(nd.matmul(w, x)))
            tape.backward(loss, [w])
        npt.assert_allclose(w.grad, x.data.T, atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros((2, 2)))
        with Tape() as tape:
            out = nd.tanh(x)
            with pytest.raises(DomainError):
                tape.backward(out)

    def test_unreachable_parameter_gets_zero_grad(self):
        x = Tensor(np.ones(3))
        unused = Tensor(np.ones(2))
        with Tape() as tape:
            tape.backward(nd.tsum(x), [x, unused])
        npt.assert_array_equal(unused.grad, np.zeros(2))

    def test_tape_is_single_use(self):
        x = Tensor(np.ones(3))
        with Tape() as tape:
            loss = nd.tsum(x)
            tape.backward(loss, [x])
            with pytest.raises(StateError):
                tape.backward(loss, [x])

    def test_no_tape_means_no_recording(self):
        x = Tensor(np.ones(3))
        out = nd.tanh(x)
        assert out.grad is None and x.grad is None

    def test_grad_accumulates_across_reuse(self):
        x = Tensor(np.array([2.0]))
        with Tape() as tape:
            loss = nd.tsum(nd.add(nd.mul(x, x), x))  # x^2 + x
            tape.backward(loss, [x])
        npt.assert_allclose(x.grad, [5.0], atol=1e-15)


class TestSgd:
    def test_basic_step(self):
        p = Tensor(np.array([1.0]))
        p.grad = np.array([2.0])
        nd.sgd_step([p], SgdConfig(learning_rate=0.1))
        npt.assert_allclose(p.data, [0.8], atol=1e-15)
        assert p.grad is None

    def test_zero_grad_keeps_param(self):
        p = Tensor(np.array([1.0, -1.0]))
        p.grad = np.zeros(2)
        nd.sgd_step([p], SgdConfig())
        npt.assert_array_equal(p.data, [1.0, -1.0])

    def test_missing_grad_raises(self):
        with pytest.raises(StateError):
            nd.sgd_step([Tensor(np.ones(2), name="w")], SgdConfig())

    def test_descent_on_quadratic(self):
        p = Tensor(np.array([5.0]))
        cfg = SgdConfig(learning_rate=0.1, batch_size=1)
        prev = math.inf
        for _ in range(10):
            with Tape() as tape:
                loss = nd.tsum(nd.mul(p, p))
                tape.backward(loss, [p])
            assert loss.item() < prev
            prev = loss.item()
            nd.sgd_step([p], cfg)
        with Tape() as tape:
            final = nd.tsum(nd.mul(p, p))
        assert final.item() < prev

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SgdConfig(learning_rate=0.0)
        with pytest.raises(DomainError):
            SgdConfig(batch_size=0)


class TestGradCheck:
    def test_linear_model_tight(self):
        rng = np.random.default_rng(2)
        w = Tensor(rng.uniform(-1, 1, (1, 4)), name="w")
        x = rng.uniform(-1, 1, (4, 1))
        report = nd.grad_check(lambda: nd.tsum(nd.matmul(w, Tensor(x))), [("w", w)])
        assert report.ok and report.max_rel_err < 1e-8

    def test_corrupted_rule_is_flagged(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.uniform(-1, 1, (2, 3)), name="w")
        x = Tensor(rng.uniform(-1, 1, (3, 1)))

        def bad_tanh(a):
            out = Tensor(np.tanh(a.data))

            def back():
                if out.grad is not None:
                    a.grad = (a.grad if a.grad is not None else 0) + \
                        1.05 * (1.0 - out.data ** 2) * out.grad

            nd._record(back)
            return out

        report = nd.grad_check(lambda: nd.tsum(bad_tanh(nd.matmul(w, x))), [("w", w)])
        assert not report.ok and "w" in report.failures()


class TestDeterminism:
    def run_once(self):
        rng = np.random.default_rng(99)
        w = nd.parameter((3, 3), rng, name="w")
        x = Tensor(rng.uniform(-1, 1, (3, 2)))
        with Tape() as tape:
            loss = nd.tsum(nd.tanh(nd.matmul(w, x)))
            tape.backward(loss, [w])
        nd.sgd_step([w], SgdConfig(learning_rate=0.1))
        return loss.item(), w.data.copy()

    def test_forward_backward_step_bit_identical(self):
        l1, w1 = self.run_once()
        l2, w2 = self.run_once()
        assert l1 == l2
        npt.assert_array_equal(w1, w2)


class TestFiniteness:
    def test_values_stay_finite(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            x = Tensor(rng.uniform(-2, 2, (4, 3)))
            w = Tensor(rng.uniform(-2, 2, (4, 4)))
            with Tape() as tape:
                h = nd.tanh(nd.matmul(w, x))
                p = nd.softmax(h, axis=0)
                loss = nd.cross_entropy(np.full((4, 3), 1 / 12), nd.mul(p, 1 / 3.0))
                tape.backward(loss, [x, w])
            assert np.isfinite(loss.data).all()
            assert np.isfinite(x.grad).all() and np.isfinite(w.grad).all()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        params = [
            ("emb.word", Tensor(rng.uniform(-1, 1, (7, 4)))),
            ("enc.w_z", Tensor(rng.uniform(-1, 1, (3, 5)))),
            ("bias", Tensor(rng.uniform(-1, 1, 3))),
            ("scalar", Tensor(np.float64(0.123456789))),
        ]
        path = tmp_path / "model.ckpt"
        nd.save_checkpoint(path, params)
        loaded = nd.load_checkpoint(path)
        assert set(loaded) == {n for n, _ in params}
        for name, t in params:
            assert loaded[name].shape == t.shape
            npt.assert_array_equal(loaded[name], t.data)

    def test_version_guard(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(struct_pack_bad())
        with pytest.raises(StateError):
            nd.load_checkpoint(path)


def struct_pack_bad():
    import struct

    return struct.pack("<II", 999, 0)
