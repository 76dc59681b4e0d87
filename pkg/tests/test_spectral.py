"""Spectral filter layer: transform-domain fixtures, the circular-convolution
oracle, and finite-difference gradient checks."""

import numpy as np
import pytest

from s3fnet import fft, spectral
from s3fnet.errors import ConfigError, ShapeError

from oracles import circular_convolve2d, finite_difference, relative_error

SEEDS = [0, 1, 2, 3, 4]


def make_layer(cin, cout, h, w, seed, scheme="direct"):
    layer = spectral.SpectralFilter("sf", cin, cout, h, w, init_scheme=scheme)
    layer.init_params(np.random.default_rng(seed))
    return layer


class TestForwardFixtures:
    def test_identity_spectrum(self):
        layer = spectral.SpectralFilter("sf", 1, 1, 6, 6)
        layer.params["w_real"][:] = 1.0
        x = np.random.default_rng(0).standard_normal((2, 6, 6, 1))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-10)

    def test_zero_filter_outputs_bias(self):
        layer = spectral.SpectralFilter("sf", 2, 3, 4, 4)
        layer.params["b"] = np.array([0.5, -1.0, 2.0])
        x = np.random.default_rng(1).standard_normal((2, 4, 4, 2))
        out = layer.forward(x)
        np.testing.assert_allclose(out, np.broadcast_to(layer.params["b"], out.shape), atol=1e-12)

    def test_convolution_theorem_8x8(self):
        """Filter = rfft2(h) acts as circular convolution with h (loop oracle)."""
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 8, 8, 1))
        h = rng.standard_normal((8, 8))
        layer = spectral.SpectralFilter("sf", 1, 1, 8, 8)
        filt = fft.rfft2(h)
        layer.params["w_real"] = filt.real[None, None]
        layer.params["w_imag"] = filt.imag[None, None]
        out = layer.forward(x)[0, :, :, 0]
        expected = circular_convolve2d(x[0, :, :, 0], h)
        assert np.max(np.abs(out - expected)) < 1e-8

    def test_convolution_theorem_compact_kernel_16x16(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 16, 16, 1))
        h = np.zeros((16, 16))
        h[:3, :3] = rng.standard_normal((3, 3))
        layer = spectral.SpectralFilter("sf", 1, 1, 16, 16)
        filt = fft.rfft2(h)
        layer.params["w_real"] = filt.real[None, None]
        layer.params["w_imag"] = filt.imag[None, None]
        out = layer.forward(x)[0, :, :, 0]
        expected = circular_convolve2d(x[0, :, :, 0], h)
        assert np.max(np.abs(out - expected)) < 1e-8

    def test_multichannel_sums_over_inputs(self):
        """Cin=2 output equals the sum of the two single-channel responses."""
        rng = np.random.default_rng(4)
        layer = make_layer(2, 3, 6, 6, seed=10)
        x = rng.standard_normal((2, 6, 6, 2))
        out = layer.forward(x)
        partial = np.zeros_like(out)
        for c in range(2):
            single = spectral.SpectralFilter("one", 1, 3, 6, 6)
            single.params["w_real"] = layer.params["w_real"][c : c + 1]
            single.params["w_imag"] = layer.params["w_imag"][c : c + 1]
            partial += single.forward(x[:, :, :, c : c + 1])
        np.testing.assert_allclose(out, partial, atol=1e-10)

    def test_linearity_in_input(self):
        layer = make_layer(2, 2, 5, 7, seed=11)
        rng = np.random.default_rng(5)
        x1 = rng.standard_normal((2, 5, 7, 2))
        x2 = rng.standard_normal((2, 5, 7, 2))
        lhs = layer.forward(1.7 * x1 - 0.3 * x2)
        rhs = 1.7 * layer.forward(x1) - 0.3 * layer.forward(x2) - 0.7 * layer.params["b"]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_resolution_mismatch_cites_bound_size(self):
        layer = spectral.SpectralFilter("sf", 1, 1, 8, 8)
        with pytest.raises(ShapeError, match="8x8"):
            layer.forward(np.zeros((1, 16, 16, 1)))

    def test_channel_mismatch_rejected(self):
        layer = spectral.SpectralFilter("sf", 2, 1, 4, 4)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 4, 4, 3)))


class TestBackward:
    def test_finite_difference_all_tensors(self):
        """FD over w_real, w_imag, bias, and input at B=2, H=W=4, Cin=Cout=2."""
        for seed in SEEDS:
            layer = make_layer(2, 2, 4, 4, seed=seed)
            rng = np.random.default_rng(seed + 100)
            x = rng.standard_normal((2, 4, 4, 2))
            out = layer.forward(x)
            g = np.random.default_rng(seed + 200).standard_normal(out.shape)
            dx = layer.backward(g)

            def loss_of_input(xv):
                return float(np.sum(layer.forward(xv) * g))

            err = relative_error(dx, finite_difference(loss_of_input, x))
            assert err < 1e-4, f"input grad rel err {err} (seed {seed})"

            for key in ("w_real", "w_imag", "b"):
                original = layer.params[key]

                def loss_of_param(pv, key=key):
                    layer.params[key] = pv
                    return float(np.sum(layer.forward(x) * g))

                fd = finite_difference(loss_of_param, original.copy())
                layer.params[key] = original
                err = relative_error(layer.grads[key], fd)
                assert err < 1e-4, f"{key} rel err {err} (seed {seed})"

    def test_finite_difference_odd_sizes(self):
        """Non-power-of-two plane exercises the Bluestein path end to end."""
        layer = make_layer(1, 2, 5, 6, seed=3)
        rng = np.random.default_rng(42)
        x = rng.standard_normal((2, 5, 6, 1))
        out = layer.forward(x)
        g = rng.standard_normal(out.shape)
        dx = layer.backward(g)

        def loss(xv):
            return float(np.sum(layer.forward(xv) * g))

        assert relative_error(dx, finite_difference(loss, x)) < 1e-4

    def test_zero_upstream_gives_zero_grads(self):
        layer = make_layer(2, 2, 4, 4, seed=0)
        x = np.random.default_rng(6).standard_normal((2, 4, 4, 2))
        layer.forward(x)
        dx = layer.backward(np.zeros((2, 4, 4, 2)))
        assert np.max(np.abs(dx)) == 0.0
        for key in ("w_real", "w_imag", "b"):
            assert np.max(np.abs(layer.grads[key])) == 0.0

    def test_bias_grad_is_upstream_sum(self):
        layer = make_layer(1, 3, 4, 4, seed=1)
        x = np.random.default_rng(7).standard_normal((2, 4, 4, 1))
        layer.forward(x)
        g = np.random.default_rng(8).standard_normal((2, 4, 4, 3))
        layer.backward(g)
        np.testing.assert_allclose(layer.grads["b"], g.sum(axis=(0, 1, 2)), atol=1e-12)


class TestInit:
    def test_fixed_seed_reproducible(self):
        for scheme in spectral.INIT_SCHEMES:
            a = make_layer(2, 3, 8, 8, seed=5, scheme=scheme)
            b = make_layer(2, 3, 8, 8, seed=5, scheme=scheme)
            np.testing.assert_array_equal(a.params["w_real"], b.params["w_real"])
            np.testing.assert_array_equal(a.params["w_imag"], b.params["w_imag"])

    def test_spatial_equivalent_delta_kernel_is_identity(self):
        kernels = np.zeros((1, 1, 3, 3))
        kernels[0, 0, 0, 0] = 1.0  # delta at the origin
        filt = spectral.filter_from_spatial_kernels(kernels, 6, 6)
        layer = spectral.SpectralFilter("sf", 1, 1, 6, 6)
        layer.params["w_real"] = np.ascontiguousarray(filt.real)
        layer.params["w_imag"] = np.ascontiguousarray(filt.imag)
        x = np.random.default_rng(9).standard_normal((1, 6, 6, 1))
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-10)

    def test_output_variance_near_unit_both_schemes(self):
        """Unit-variance input stays within [0.25, 4] output variance at 16x16."""
        rng = np.random.default_rng(10)
        x = rng.standard_normal((8, 16, 16, 2))
        for scheme in spectral.INIT_SCHEMES:
            layer = make_layer(2, 8, 16, 16, seed=12, scheme=scheme)
            var = float(np.var(layer.forward(x)))
            assert 0.25 <= var <= 4.0, f"{scheme}: variance {var}"

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ConfigError):
            spectral.init_spectral_weights(1, 1, 4, 4, np.random.default_rng(0), scheme="bogus")
        with pytest.raises(ConfigError):
            spectral.SpectralFilter("sf", 1, 1, 4, 4, init_scheme="bogus")
