import numpy as np
import pytest

from trajvid import tensor as T
from trajvid import encoder as enc

from conftest import finite_diff_probe, rel_err


def tiny_params(c_f=8, dtype=np.float64, seed=0):
    return enc.init_encoder_params(c_f=c_f, seed=seed, dtype=dtype)


class TestEncode:
    def test_zero_input_zero_biases_gives_zero(self):
        params = tiny_params(c_f=8)
        # identity linear with zero bias keeps zeros through the whole stack
        p = np.zeros((2, 8, 8, 3))
        f = enc.encode(p, params)
        assert f.shape == (2, 8, 2, 2)
        assert np.all(f.data == 0.0)

    def test_shape_contract_32x32(self):
        params = enc.init_encoder_params(c_f=32, seed=1)
        f = enc.encode(np.zeros((2, 32, 32, 3), dtype=np.float32), params)
        assert f.shape == (2, 32, 8, 8)

    def test_batched_shape(self):
        params = tiny_params()
        f = enc.encode(np.zeros((3, 2, 8, 8, 3)), params)
        assert f.shape == (3, 2, 8, 2, 2)

    def test_resolution_not_divisible_rejected(self):
        params = tiny_params()
        with pytest.raises(ValueError, match="divisible by 4"):
            enc.encode(np.zeros((2, 6, 6, 3)), params)

    def test_frame_equivariance(self, rng):
        params = tiny_params(c_f=8, dtype=np.float32, seed=2)
        p = rng.random((4, 8, 8, 3)).astype(np.float32)
        perm = np.array([2, 0, 3, 1])
        f = enc.encode(p, params).data
        f_perm = enc.encode(p[perm], params).data
        assert np.array_equal(f[perm], f_perm)

    def test_gradients_match_finite_differences(self, rng):
        params = tiny_params(c_f=4, dtype=np.float64, seed=3)
        p = rng.random((2, 8, 8, 3))

        def build():
            return T.sum_all(T.square(enc.encode(p, params)))

        grads = T.backward(build())
        probes = 0
        local = np.random.default_rng(5)
        for name, param in params.items():
            analytic = grads[param]
            for idx in local.choice(param.data.size, size=min(4, param.data.size), replace=False):
                numeric = finite_diff_probe(build, param, int(idx))
                assert rel_err(analytic.ravel()[idx], numeric) <= 1e-4, name
                probes += 1
        assert probes >= 40


class TestDownsampleFeatures:
    def test_identity_pooling_is_rearrangement(self, rng):
        f = T.constant(rng.random((2, 5, 4, 4)).astype(np.float32))
        seq = enc.downsample_features(f, 4, 4)
        assert seq.shape == (16, 2, 5)
        # position (i, j) sequence equals f[:, :, i, j]
        assert np.allclose(seq.data[4 * 1 + 2], f.data[:, :, 1, 2])

    def test_constant_maps_give_constant_sequences(self):
        f = T.constant(np.full((3, 4, 8, 8), 0.7, dtype=np.float32))
        seq = enc.downsample_features(f, 2, 2)
        assert seq.shape == (4, 3, 4)
        assert np.allclose(seq.data, 0.7)

    def test_ramp_window_means(self):
        ramp = np.arange(64, dtype=np.float64).reshape(1, 1, 8, 8)
        seq = enc.downsample_features(T.constant(ramp), 4, 4)
        expected = ramp[0, 0].reshape(4, 2, 4, 2).mean(axis=(1, 3)).reshape(16)
        assert np.allclose(seq.data[:, 0, 0], expected)

    def test_channel_means_preserved(self, rng):
        f = rng.random((4, 6, 8, 8))
        seq = enc.downsample_features(T.constant(f), 2, 2)
        # mean over positions of the pooled sequences == mean over pixels
        assert np.allclose(seq.data.mean(axis=0), f.mean(axis=(2, 3)), atol=1e-6)

    def test_non_divisible_rejected(self):
        f = T.constant(np.zeros((2, 3, 8, 8)))
        with pytest.raises(ValueError, match="divide"):
            enc.downsample_features(f, 3, 3)

    def test_batched(self, rng):
        f = T.constant(rng.random((2, 3, 5, 4, 4)).astype(np.float32))
        seq = enc.downsample_features(f, 2, 2)
        assert seq.shape == (2, 4, 3, 5)


def test_encoder_attention_composite_gradient(rng):
    """Finite-difference check through encoder + attention + scalar loss."""
    from trajvid import attention as attn

    c_f = 4
    params = tiny_params(c_f=c_f, dtype=np.float64, seed=7)
    params.update(attn.init_attention_params("blk", d_model=c_f, c_f=c_f, d=4,
                                             seed=7, dtype=np.float64))
    p = rng.random((2, 4, 4, 3))
    x = rng.standard_normal((1, 2, c_f))
    cfg = attn.SuppressionConfig(alpha=0.9)

    def build():
        f = enc.encode(p, params)
        f_seq = enc.downsample_features(f, 1, 1)
        out, a, a_prime = attn.fused_block(T.constant(x, np.float64), f_seq, params, "blk", cfg)
        return T.add(T.sum_all(T.square(out)), T.sum_all(T.square(T.diag_part(a))))

    grads = T.backward(build())
    local = np.random.default_rng(8)
    checked = 0
    for name, param in params.items():
        if param not in grads:
            continue
        analytic = grads[param]
        for idx in local.choice(param.data.size, size=min(3, param.data.size), replace=False):
            numeric = finite_diff_probe(build, param, int(idx))
            assert rel_err(analytic.ravel()[idx], numeric) <= 1e-4, name
            checked += 1
    assert checked >= 30
