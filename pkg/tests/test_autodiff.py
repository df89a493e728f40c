import numpy as np
import pytest

from cellgraph.autodiff import (NonFiniteGradient, ParamStore, Tape,
                                TapeReuseError, adam_step,
                                finite_difference_check, load_checkpoint,
                                lr_decay, save_checkpoint)
from cellgraph.gradcheck import run_gradient_checks


def store_with(**params):
    store = ParamStore()
    for name, value in params.items():
        store.register(name, np.asarray(value, dtype=np.float64))
    return store


class TestForwardOps:
    def test_relu_definition(self):
        t = Tape()
        out = t.relu(t.constant([[-1.0, 2.0]]))
        assert np.array_equal(t.value(out), [[0.0, 2.0]])

    def test_softmax_symmetry(self):
        t = Tape()
        out = t.softmax_rows(t.constant([[0.0, 0.0]]))
        assert np.allclose(t.value(out), [[0.5, 0.5]])

    def test_group_norm_single_group_row(self):
        store = store_with(g=np.ones((1, 2)), b=np.zeros((1, 2)))
        t = Tape(store)
        out = t.group_norm(t.constant([[1.0, 3.0]]), t.param("g"),
                           t.param("b"), n_groups=1)
        # mean 2, population sd 1 (up to the 1e-5 epsilon)
        assert np.allclose(t.value(out), [[-1.0, 1.0]], atol=1e-4)

    def test_dropout_rate_zero_is_identity(self):
        t = Tape()
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(t.value(t.dropout(t.constant(x), 0.0)), x)

    def test_dropout_eval_mode_is_identity(self):
        t = Tape(train=False)
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(t.value(t.dropout(t.constant(x), 0.7)), x)

    def test_dropout_inverted_scaling_expectation(self):
        rate = 0.3
        rng = np.random.default_rng(0)
        total = np.zeros((1, 4))
        n = 10_000
        x = np.ones((1, 4))
        t = Tape(rng=rng)
        for _ in range(n):
            total += t.value(t.dropout(t.constant(x), rate))
        assert np.all(np.abs(total / n - 1.0) < 0.02)

    def test_shape_mismatch_reports_op_kind(self):
        t = Tape()
        with pytest.raises(ValueError, match="matmul"):
            t.matmul(t.constant(np.ones((2, 3))), t.constant(np.ones((2, 3))))
        with pytest.raises(ValueError, match="add"):
            t.add(t.constant(np.ones((2, 3))), t.constant(np.ones((3, 2))))

    def test_record_dispatch(self):
        t = Tape()
        out = t.record("relu", t.constant([[-2.0, 5.0]]))
        assert np.array_equal(t.value(out), [[0.0, 5.0]])
        with pytest.raises(ValueError, match="unknown op kind"):
            t.record("conv3d", 0)


class TestBackward:
    def test_sum_gives_ones(self):
        store = store_with(w=np.arange(6.0).reshape(2, 3))
        t = Tape(store)
        # sum(W) via mse against zero scaled back: use matmul with ones
        ones_col = t.constant(np.ones((3, 1)))
        row = t.matmul(t.param("w"), ones_col)
        total = t.matmul(t.constant(np.ones((1, 2))), row)
        t.backward(total)
        assert np.allclose(store.grad("w"), np.ones((2, 3)))

    def test_mse_closed_form(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((3, 3))
        x = rng.standard_normal((3, 2))
        y = rng.standard_normal((3, 2))
        store = store_with(w=w)
        t = Tape(store)
        pred = t.matmul(t.param("w"), t.constant(x))
        t.backward(t.mse(pred, y))
        expected = 2 * (w @ x - y) @ x.T / y.size
        assert np.allclose(store.grad("w"), expected, atol=1e-12)

    def test_softmax_backward_rows_orthogonal_to_ones(self):
        rng = np.random.default_rng(2)
        store = store_with(x=rng.standard_normal((4, 5)))
        t = Tape(store)
        out = t.softmax_rows(t.param("x"))
        t.backward(t.mse(out, rng.standard_normal((4, 5))))
        assert np.abs(store.grad("x").sum(axis=1)).max() < 1e-10

    def test_non_scalar_loss_rejected(self):
        store = store_with(x=np.ones((2, 2)))
        t = Tape(store)
        h = t.relu(t.param("x"))
        with pytest.raises(ValueError, match="scalar"):
            t.backward(h)

    def test_tape_reuse_rejected(self):
        store = store_with(x=np.ones((2, 2)))
        t = Tape(store)
        loss = t.mse(t.param("x"), np.zeros((2, 2)))
        t.backward(loss)
        with pytest.raises(TapeReuseError):
            t.backward(loss)

    def test_fanout_accumulates(self):
        store = store_with(x=np.full((1, 2), 3.0))
        t = Tape(store)
        x = t.param("x")
        both = t.add(x, x)
        t.backward(t.mse(both, np.zeros((1, 2))))
        assert np.allclose(store.grad("x"), 2 * 2 * 2 * 3.0 / 2)

    def test_finite_differences_all_ops(self):
        results, worst, passed = run_gradient_checks(n_seeds=20,
                                                     network_seeds=())
        assert passed, f"worst op-gradient error {worst:.2e}: {results}"


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        store = store_with(w=np.ones((2, 2)))
        adam_step(store, lr=0.1)
        assert np.array_equal(store.value("w"), np.ones((2, 2)))

    def test_first_step_is_signed_lr(self):
        store = store_with(w=np.zeros((1, 3)))
        store.entries["w"].grad[:] = np.array([[0.5, -2.0, 1e-3]])
        adam_step(store, lr=0.01, step=1)
        assert np.allclose(store.value("w"),
                           [[-0.01, 0.01, -0.01]], atol=1e-4)

    def test_quadratic_convergence(self):
        # lr small enough that the iterate approaches 0 without reaching the
        # oscillation floor within 200 steps
        store = store_with(w=np.array([[1.0]]))
        values = []
        for step in range(1, 201):
            store.entries["w"].grad[:] = 2 * store.value("w")
            adam_step(store, lr=0.005, step=step)
            values.append(abs(store.value("w")[0, 0]))
        assert values[-1] < 0.3
        assert all(b <= a + 1e-12 for a, b in zip(values[5:], values[6:]))

    def test_decoupled_weight_decay(self):
        store = store_with(w=np.array([[2.0]]))
        adam_step(store, lr=0.1, weight_decay=0.5)
        # zero gradient: the only update is -lr * wd * w
        assert store.value("w")[0, 0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_non_finite_gradient_aborts_step(self):
        store = store_with(w=np.ones((1, 2)), v=np.ones((1, 2)))
        store.entries["w"].grad[:] = np.array([[np.nan, 0.0]])
        store.entries["v"].grad[:] = 1.0
        with pytest.raises(NonFiniteGradient, match="'w'"):
            adam_step(store, lr=0.1)
        assert np.array_equal(store.value("v"), np.ones((1, 2)))

    def test_gradients_zeroed_after_step(self):
        store = store_with(w=np.ones((1, 2)))
        store.entries["w"].grad[:] = 1.0
        adam_step(store, lr=0.1)
        assert np.array_equal(store.grad("w"), np.zeros((1, 2)))


class TestLrDecay:
    def test_no_decay_at_step_zero(self):
        assert lr_decay(0.1, 0, 0.5, 100) == 0.1

    def test_power_arithmetic(self):
        assert lr_decay(0.8, 200, 0.5, 100) == pytest.approx(0.2)

    def test_monotone_non_increasing(self):
        values = [lr_decay(1.0, s, 0.9, 7) for s in range(100)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_invalid_period(self):
        with pytest.raises(ValueError):
            lr_decay(0.1, 5, 0.5, 0)


class TestSnapshotAndCheckpoint:
    def test_snapshot_restore(self):
        store = store_with(w=np.ones((2, 2)))
        snap = store.snapshot()
        store.entries["w"].value[:] = 5.0
        store.restore(snap)
        assert np.array_equal(store.value("w"), np.ones((2, 2)))

    def test_checkpoint_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        store = store_with(alpha=rng.standard_normal((3, 4)),
                           beta=rng.standard_normal(5))
        store.entries["alpha"].adam_m[:] = rng.standard_normal((3, 4))
        store.entries["alpha"].adam_v[:] = np.abs(rng.standard_normal((3, 4)))
        store.step_count = 77
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path)
        loaded = load_checkpoint(path)
        assert loaded.step_count == 77
        assert sorted(loaded.names()) == ["alpha", "beta"]
        for name in store.names():
            assert np.array_equal(loaded.value(name), store.value(name))
            assert np.array_equal(loaded.entries[name].adam_m,
                                  store.entries[name].adam_m)
            assert np.array_equal(loaded.entries[name].adam_v,
                                  store.entries[name].adam_v)

    def test_checkpoint_resumes_optimizer_exactly(self, tmp_path):
        # identical Adam trajectories from the live store and a reloaded one
        rng = np.random.default_rng(4)
        store = store_with(w=rng.standard_normal((2, 3)))
        for step in range(1, 6):
            store.entries["w"].grad[:] = rng.standard_normal((2, 3))
            adam_step(store, lr=0.01, weight_decay=0.1, step=step)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(store, path)
        resumed = load_checkpoint(path)
        grad = np.random.default_rng(5).standard_normal((2, 3))
        for s in (store, resumed):
            s.entries["w"].grad[:] = grad
            adam_step(s, lr=0.01, weight_decay=0.1)
        assert store.step_count == resumed.step_count == 6
        assert np.array_equal(store.value("w"), resumed.value("w"))
        assert np.array_equal(store.entries["w"].adam_m,
                              resumed.entries["w"].adam_m)

    def test_checkpoint_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a cellgraph checkpoint"):
            load_checkpoint(path)

    def test_duplicate_registration_rejected(self):
        store = store_with(w=np.ones((1, 1)))
        with pytest.raises(ValueError, match="already registered"):
            store.register("w", np.ones((1, 1)))


class TestDeterminism:
    def test_training_step_bitwise_reproducible(self):
        def run():
            store = store_with(w=np.linspace(-1, 1, 12).reshape(3, 4))
            rng = np.random.default_rng(9)
            for epoch in range(5):
                t = Tape(store, rng=np.random.default_rng([9, epoch]))
                h = t.dropout(t.relu(t.param("w")), 0.25)
                loss = t.mse(h, np.ones((3, 4)))
                t.backward(loss)
                adam_step(store, lr=0.01)
            return store.value("w").copy()

        assert np.array_equal(run(), run())
