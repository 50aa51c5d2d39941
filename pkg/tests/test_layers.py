"""Layer tests: init, LSTM semantics, gradient checks, checkpoint IO."""

from __future__ import annotations

import numpy as np
import pytest

from softinterp import autodiff as ad
from softinterp.layers import (
    LSTM,
    Dense,
    LayerNorm,
    ParamStore,
    dropout,
    load_checkpoint,
    rnn_step,
    save_checkpoint,
)


def make_store(seed=0):
    return ParamStore(np.random.default_rng(seed))


class TestParamStore:
    def test_uniform_init_bounds_and_seeding(self):
        a = make_store(3).add("w", (50, 20), fan_in=25)
        b = make_store(3).add("w", (50, 20), fan_in=25)
        bound = 1 / np.sqrt(25)
        assert np.all(np.abs(a.data) <= bound)
        assert np.array_equal(a.data, b.data)
        assert a.data.std() > 0

    def test_zero_init_for_biases(self):
        store = make_store()
        assert np.all(store.add("b", (7,)).data == 0)

    def test_duplicate_name_rejected(self):
        store = make_store()
        store.add("w", (2, 2), fan_in=2)
        with pytest.raises(ValueError):
            store.add("w", (2, 2), fan_in=2)

    def test_load_arrays_validates(self):
        store = make_store()
        store.add("w", (2, 2), fan_in=2)
        with pytest.raises(ValueError):
            store.load_arrays({})
        with pytest.raises(ValueError):
            store.load_arrays({"w": np.zeros((3, 3))})
        store.load_arrays({"w": np.ones((2, 2))})
        assert np.all(store["w"].data == 1)


class TestLstm:
    def test_zero_weights_zero_state_zero_output(self):
        store = make_store()
        cell = LSTM(store, "rnn", input_dim=3, hidden_dim=4, layers=2)
        for t in store.params.values():
            t.data[:] = 0.0
        state = cell.init_state((2,))
        new_state, out = rnn_step(cell, state, ad.constant(np.zeros((2, 3))))
        assert np.allclose(out.data, 0.0)
        for h, c in new_state:
            assert np.allclose(h.data, 0.0) and np.allclose(c.data, 0.0)

    def test_determinism(self):
        store = make_store(5)
        cell = LSTM(store, "rnn", 3, 4)
        x = ad.constant(np.random.default_rng(1).normal(size=(2, 3)))
        _, out1 = cell.step(cell.init_state((2,)), x)
        _, out2 = cell.step(cell.init_state((2,)), x)
        assert np.array_equal(out1.data, out2.data)

    def test_two_step_unroll_gradient(self):
        store = make_store(7)
        cell = LSTM(store, "rnn", 2, 3, layers=2)
        rng = np.random.default_rng(11)
        x1 = ad.constant(rng.normal(size=(1, 2)))
        x2 = ad.constant(rng.normal(size=(1, 2)))
        weights = ad.constant(rng.normal(size=(1, 3)))

        def f():
            state = cell.init_state((1,))
            state, _ = cell.step(state, x1)
            _, out = cell.step(state, x2)
            return ad.tsum(ad.mul(out, weights))

        err = ad.grad_check(f, store.tensors())
        assert err < 1e-4

    def test_output_is_top_layer_hidden(self):
        store = make_store(9)
        cell = LSTM(store, "rnn", 2, 3, layers=2)
        state, out = cell.step(cell.init_state((4,)), ad.constant(np.ones((4, 2))))
        assert np.array_equal(out.data, state[-1][0].data)


class TestDenseAndNorm:
    def test_dense_gradient(self):
        store = make_store(2)
        layer = Dense(store, "out", 3, 2)
        x = ad.constant(np.random.default_rng(0).normal(size=(4, 3)))
        w = ad.constant(np.random.default_rng(1).normal(size=(4, 2)))
        err = ad.grad_check(lambda: ad.tsum(ad.mul(layer(x), w)), store.tensors())
        assert err < 1e-4

    def test_layernorm_output_and_gradient(self):
        store = make_store(4)
        norm = LayerNorm(store, "ln", 6)
        x_arr = np.random.default_rng(3).normal(size=(5, 6)) * 3 + 1
        out = norm(ad.constant(x_arr))
        assert np.allclose(out.data.mean(axis=-1), 0, atol=1e-9)
        assert np.allclose(out.data.std(axis=-1), 1, atol=1e-3)
        x = ad.parameter(x_arr)
        w = ad.constant(np.random.default_rng(5).normal(size=(5, 6)))
        err = ad.grad_check(lambda: ad.tsum(ad.mul(norm(x), w)), [x, *store.tensors()])
        assert err < 1e-4


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = ad.constant(np.ones((3, 3)))
        out = dropout(x, 0.5, np.random.default_rng(0), train=False)
        assert out is x

    def test_zero_rate_is_identity(self):
        x = ad.constant(np.ones((3, 3)))
        assert dropout(x, 0.0, np.random.default_rng(0), train=True) is x

    def test_train_mode_scales_kept_units(self):
        x = ad.constant(np.ones((2000,)))
        out = dropout(x, 0.25, np.random.default_rng(0), train=True)
        values = set(np.round(np.unique(out.data), 9))
        assert values <= {0.0, np.round(1 / 0.75, 9)}
        assert abs(out.data.mean() - 1.0) < 0.05


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "b.w": rng.normal(size=(3, 4)),
            "a.scalar": np.array(2.5),
            "c.vec": rng.normal(size=(7,)),
        }
        meta = {"model": "demo", "hidden": 4, "lr": 0.1}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, arrays, meta)
        loaded, loaded_meta = load_checkpoint(path)
        assert loaded_meta == meta
        assert set(loaded) == set(arrays)
        for name in arrays:
            assert np.array_equal(loaded[name], arrays[name])
            assert loaded[name].shape == np.asarray(arrays[name]).shape

    def test_byte_identical_rewrite(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = {"x": rng.normal(size=(5, 5)), "y": rng.normal(size=(2,))}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, arrays, {"seed": 7})
        save_checkpoint(p2, dict(reversed(list(arrays.items()))), {"seed": 7})
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_checkpoint(path)
