import dataclasses

import numpy as np
import pytest

from mnx import rng
from mnx.functionals import (
    compute_statistics,
    discrete_bracket,
    error_statistic_zn,
    limit_u_infinity,
    martingale_m1n,
    quadratic_form_un,
    reference_fn,
    remainder_nn,
)
from mnx.harness import ExperimentConfig, run_replications
from mnx.model import preset
from mnx.paths import BlockGaussians, BrownianPath, build_grid, sample_brownian, simulate_diffusion


def _path_from_increments(dw):
    """Single-row Brownian path with R = 1 and the given coarse increments."""
    dw = np.atleast_2d(np.asarray(dw, dtype=float))
    n = dw.shape[1]
    g = build_grid(n, 1)
    cum = np.concatenate([np.zeros((dw.shape[0], 1)), np.cumsum(dw, axis=1)], axis=1)
    blocks = BlockGaussians(dw, np.zeros_like(dw), g.coarse_step)
    ids = tuple(rng.streams(0, range(dw.shape[0])))
    return g, BrownianPath(g, dw, np.zeros_like(dw), cum, ids, blocks)


def _const_spec(c=1.0, s=1.0):
    spec = preset("ou", kappa=0.0, sigma=s)
    k = lambda x: np.zeros(np.shape(x)) + c
    return dataclasses.replace(spec, kernel_weight=k)


class TestQuadraticForm:
    def test_zero_kernel(self):
        g, bp = _path_from_increments([[0.1, -0.2, 0.3, 0.05]])
        spec = preset("wiener-const", level=0.0)
        assert quadratic_form_un(spec, simulate_diffusion(spec, bp, g), g)[0] == 0.0

    def test_plug_in(self):
        g, bp = _path_from_increments([[0.1, -0.2, 0.3, 0.05]])
        spec = preset("wiener-const")
        assert quadratic_form_un(spec, simulate_diffusion(spec, bp, g), g)[0] == pytest.approx(0.1425)

    def test_mean_and_variance(self):
        res = run_replications(ExperimentConfig(n=64, R=1, N=100_000, seed=8, symbols=False))
        u = res.stats["u_n"]
        assert abs(u.mean() - 1) < 3 * u.std(ddof=1) / np.sqrt(u.size)
        z = res.stats["z_n"]
        # Var of a sample variance: (m4 - s^4) / N
        se = np.sqrt((np.mean((z - z.mean()) ** 4) - z.var() ** 2) / z.size)
        assert abs(z.var(ddof=1) - 2) < 3 * se


class TestLimit:
    @pytest.mark.parametrize("c,s,want", [(1.0, 1.0, 1.0), (2.0, 3.0, 18.0)])
    def test_constants(self, c, s, want):
        spec = _const_spec(c, s)
        g = build_grid(4, 3)
        dp = simulate_diffusion(spec, sample_brownian(g, rng.streams(1, range(2))), g)
        np.testing.assert_allclose(limit_u_infinity(spec, dp, g), want, rtol=1e-14)

    def test_left_vs_trapezoid(self):
        spec = preset("gbm")
        g = build_grid(16, 8)
        dp = simulate_diffusion(spec, sample_brownian(g, rng.streams(1, range(10))), g)
        left = limit_u_infinity(spec, dp, g)
        trap = limit_u_infinity(spec, dp, g, rule="trapezoid")
        a = spec.a(dp.x_values)
        bound = 0.5 * g.fine_step * np.abs(a[:, -1] - a[:, 0]) + 1e-15
        assert np.all(np.abs(left - trap) <= bound * (1 + 1e-12))
        with pytest.raises(ValueError):
            limit_u_infinity(spec, dp, g, rule="simpson")


def test_error_statistic():
    assert error_statistic_zn(0.1425, 1.0, 4) == pytest.approx(-1.715)
    assert error_statistic_zn(0.3, 0.3, 16) == 0.0


class TestMartingale:
    def test_plug_in(self):
        g, bp = _path_from_increments([[0.5, -0.5]])
        spec = preset("wiener-const")
        assert martingale_m1n(spec, bp, g)[0] == pytest.approx(-np.sqrt(2) / 2)

    def test_hermite_equals_double_integral(self, sin_paths):
        spec, g, bp = sin_paths
        h = martingale_m1n(spec, bp, g, form="hermite")
        d = martingale_m1n(spec, bp, g, form="double")
        np.testing.assert_allclose(h, d, atol=1e-12)


class TestReference:
    def test_constant_cases(self):
        g, bp = _path_from_increments([[0.3, -0.1, 0.2]])
        assert reference_fn(preset("wiener-const"), bp, g)[0] == 2.0
        spec = dataclasses.replace(preset("ou"), reference=lambda x: np.ones(np.shape(x)))
        dp = simulate_diffusion(spec, bp, g)
        assert reference_fn(spec, dp, g)[0] == 1.0

    def test_bracket_equals_reference(self, sin_paths):
        spec, g, bp = sin_paths
        np.testing.assert_array_equal(discrete_bracket(spec, bp, g), reference_fn(spec, bp, g))
        half = discrete_bracket(spec, bp, g, t=0.5)
        a = spec.a(bp.coarse_values[:, :8])
        np.testing.assert_allclose(half, 2 * np.sum(a * a, axis=1) / 16)

    def test_converges_to_fine_grid_integral(self):
        spec = preset("wiener-sin")
        g = build_grid(256, 8)
        bp = sample_brownian(g, rng.streams(2, range(2000)))
        fn = reference_fn(spec, bp, g)
        a = spec.a(bp.cumulative)
        oracle = 2 * g.fine_step * (np.sum(a * a, axis=1) - 0.5 * (a[:, 0] ** 2 + a[:, -1] ** 2))
        d = fn - oracle
        assert abs(d.mean()) < 3 * d.std(ddof=1) / np.sqrt(d.size) + 1e-3


class TestRemainder:
    def test_vanishes_for_brownian_motion(self):
        spec = preset("wiener-const")
        g = build_grid(8, 4)
        bp = sample_brownian(g, rng.streams(1, range(4)))
        np.testing.assert_array_equal(remainder_nn(spec, bp, bp.blocks, g), 0.0)

    def test_ou_terms(self):
        spec = preset("ou")
        g = build_grid(8, 4)
        bp = sample_brownian(g, rng.streams(1, range(4)))
        dp = simulate_diffusion(spec, bp, g)
        x = dp.frozen_coarse
        want = np.sum(-2 * x * bp.coarse_increments + (x * x - 1) / g.n, axis=1)
        np.testing.assert_allclose(remainder_nn(spec, dp, bp.blocks, g), want, rtol=1e-13)

    def test_missing_handle(self):
        spec = dataclasses.replace(preset("ou"), kernel_weight_d2=None)
        g = build_grid(4, 1)
        bp = sample_brownian(g, rng.streams(1, [0]))
        with pytest.raises(ValueError, match="kernel_weight_d2"):
            remainder_nn(spec, simulate_diffusion(spec, bp, g), bp.blocks, g)


def test_compute_statistics_bundle(sin_paths):
    spec, g, bp = sin_paths
    dp = simulate_diffusion(spec, bp, g)
    s = compute_statistics(spec, dp, g, with_remainder=True)
    assert s.z_n.shape == s.m1n.shape == s.f_n.shape == (20,)
    np.testing.assert_array_equal(s.w_n, 0.0)
    np.testing.assert_allclose(s.studentized, s.m1n / np.sqrt(s.f_n))
