import struct

import numpy as np
import pytest

from conftest import rel_err
from semiseg.errors import CorruptCheckpoint, DimensionMismatch, StaleCache
from semiseg.model import (
    ModelConfig,
    ModelParams,
    backward,
    fan_in,
    forward,
    init_params,
    load_checkpoint,
    param_shapes,
    predict,
    save_checkpoint,
)


def small(stages=1, layers=3, channels=5):
    return ModelConfig(feature_dim=4, num_classes=3, stages=stages, layers_per_stage=layers, channels=channels)


class TestForward:
    def test_zero_output_projection_gives_uniform(self, rng):
        params = init_params(small(stages=2), 0)
        params["s1.out.w"][:] = 0
        params["s1.out.b"][:] = 0
        P = forward(params, rng.normal(size=(10, 4))).probs[-1]
        np.testing.assert_allclose(P, 1 / 3)

    def test_shapes_and_rows(self, rng):
        params = init_params(ModelConfig(6, 5), 3)
        cache = forward(params, rng.normal(size=(37, 6)) * 10)
        assert len(cache.probs) == 2
        for P in cache.probs:
            assert P.shape == (37, 5)
            assert np.all(P >= 0) and np.allclose(P.sum(axis=1), 1)

    def test_deterministic(self, rng):
        x = rng.normal(size=(20, 4))
        a = forward(init_params(small(2), 9), x).probs
        b = forward(init_params(small(2), 9), x).probs
        for p, q in zip(a, b):
            assert np.array_equal(p, q)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            forward(init_params(small(), 0), np.zeros((5, 3)))

    def test_single_frame(self):
        assert predict(init_params(small(2), 0), np.ones((1, 4))).shape == (1,)

    def test_temporal_equivariance(self, rng):
        cfg = small(stages=2, layers=3)
        params = init_params(cfg, 1)
        x = rng.normal(size=(61, 4))
        a = forward(params, x[:-1]).probs[-1]
        b = forward(params, x[1:]).probs[-1]
        reach = 2 * (2**3 - 1)  # receptive half-width over both stages
        np.testing.assert_allclose(b[reach:60 - reach - 1], a[reach + 1:60 - reach], atol=1e-12)


def _model_loss(params, x, G, H):
    c = forward(params, x)
    return sum((g * p).sum() + (h * lp).sum() for g, h, p, lp in zip(G, H, c.probs, c.log_probs))


def _fd_grad(params, x, G, H, h=1e-5):
    g = np.zeros_like(params.vector)
    for i in range(len(g)):
        old = params.vector[i]
        params.vector[i] = old + h
        fp = _model_loss(params, x, G, H)
        params.vector[i] = old - h
        fm = _model_loss(params, x, G, H)
        params.vector[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


class TestBackward:
    def test_zero_upstream(self, rng):
        params = init_params(small(2), 0)
        g = backward(forward(params, rng.normal(size=(8, 4))), [np.zeros((8, 3))] * 2)
        assert not np.any(g.vector)

    @pytest.mark.parametrize("case", range(4))
    def test_matches_finite_differences(self, case):
        rng = np.random.default_rng(case)
        params = init_params(small(stages=1), case)
        x = rng.normal(size=(8, 4))
        G = [rng.normal(size=(8, 3))]
        H = [rng.normal(size=(8, 3))]
        g = backward(forward(params, x), G, H)
        assert rel_err(g.vector, _fd_grad(params, x, G, H)) <= 1e-3

    def test_two_stage_matches_finite_differences(self, rng):
        params = init_params(small(stages=2, layers=2, channels=3), 5)
        x = rng.normal(size=(7, 4))
        G = [rng.normal(size=(7, 3)) for _ in range(2)]
        H = [None, rng.normal(size=(7, 3))]
        g = backward(forward(params, x), G, H)
        H0 = [np.zeros((7, 3)), H[1]]
        assert rel_err(g.vector, _fd_grad(params, x, G, H0)) <= 1e-3

    def test_stage_sum_property(self, rng):
        two = init_params(small(stages=2), 4)
        one = ModelParams(small(stages=1), {k: v for k, v in two.arrays.items() if k.startswith("s0.")})
        x = rng.normal(size=(12, 4))
        g0 = rng.normal(size=(12, 3))
        g_two = backward(forward(two, x), [g0, None])
        g_one = backward(forward(one, x), [g0])
        for k in one.arrays:
            np.testing.assert_allclose(g_two[k], g_one[k], rtol=1e-12, atol=1e-15)
        assert all(not np.any(g_two[k]) for k in g_two if k.startswith("s1."))

    def test_stale_cache(self, rng):
        params = init_params(small(), 0)
        cache = forward(params, rng.normal(size=(5, 4)))
        params.version += 1
        with pytest.raises(StaleCache):
            backward(cache, [np.zeros((5, 3))])
        with pytest.raises(StaleCache):
            backward(None, [np.zeros((5, 3))])

    def test_bad_gradient_shape(self, rng):
        params = init_params(small(), 0)
        with pytest.raises(DimensionMismatch):
            backward(forward(params, rng.normal(size=(5, 4))), [np.zeros((4, 3))])


class TestInit:
    def test_seeded(self):
        a, b, c = init_params(small(), 1), init_params(small(), 1), init_params(small(), 2)
        assert np.array_equal(a.vector, b.vector)
        assert not np.array_equal(a.vector, c.vector)

    def test_bound(self):
        cfg = ModelConfig(10, 7)
        params = init_params(cfg, 0)
        for name, arr in params.arrays.items():
            assert np.max(np.abs(arr)) <= np.sqrt(3 / fan_in(name, cfg))
            assert np.all(np.isfinite(arr))

    def test_views_share_vector(self):
        params = init_params(small(), 0)
        params.vector[:] = 0
        assert not np.any(params["s0.in.w"])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = init_params(ModelConfig(8, 6, stages=2, layers_per_stage=3, channels=4), 11)
        path = tmp_path / "m.tssm"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == params.config
        assert np.array_equal(loaded.vector, params.vector)

    def test_layout(self, tmp_path):
        cfg = small()
        params = init_params(cfg, 0)
        path = tmp_path / "m.tssm"
        save_checkpoint(params, path)
        data = path.read_bytes()
        assert data[:4] == b"TSSM"
        assert struct.unpack("<6I", data[4:28]) == (1, 1, 3, 5, 4, 3)
        first = list(param_shapes(cfg))[0]
        n = params[first].size
        np.testing.assert_array_equal(np.frombuffer(data[28:28 + 8 * n], "<f8"), params[first].ravel())

    def test_corrupt(self, tmp_path):
        path = tmp_path / "bad.tssm"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)
        save_checkpoint(init_params(small(), 0), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)
