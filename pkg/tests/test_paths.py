import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnx import rng
from mnx.model import preset
from mnx.paths import (
    build_grid,
    euler_maruyama,
    iterated_integrals,
    milstein,
    sample_block_pair,
    sample_brownian,
    simulate_diffusion,
)


class TestGrid:
    def test_four_by_two(self):
        g = build_grid(4, 2)
        assert np.array_equal(g.coarse_times, [0, 0.25, 0.5, 0.75, 1])
        assert g.fine_step == 0.125

    def test_two_by_one(self):
        g = build_grid(2, 1)
        assert np.array_equal(g.coarse_times, [0, 0.5, 1])
        assert g.fine_step == 0.5

    @pytest.mark.parametrize("n,R", [(1, 4), (2, 0), (2.5, 2)])
    def test_rejects(self, n, R):
        with pytest.raises(ValueError):
            build_grid(n, R)


def test_brownian_starts_at_zero_and_is_reproducible():
    g = build_grid(8, 4)
    a = sample_brownian(g, rng.streams(3, range(4)))
    b = sample_brownian(g, rng.streams(3, range(4)))
    assert np.all(a.cumulative[:, 0] == 0)
    assert np.array_equal(a.cumulative, b.cumulative)
    # a row does not depend on which batch it was drawn in
    c = sample_brownian(g, rng.streams(3, [2]))
    assert np.array_equal(c.cumulative[0], a.cumulative[2])


def test_variance_of_w1():
    N = 100_000
    g = build_grid(2, 1)
    w1 = sample_brownian(g, rng.streams(21, range(N))).cumulative[:, -1]
    assert abs(w1.var(ddof=1) - 1) < 3 * np.sqrt(2 / N)


def test_block_pair_covariance():
    N = 100_000
    g = build_grid(4, 1)
    bp = sample_block_pair(g, rng.streams(5, range(N)))
    dw, J = bp.increments.ravel(), bp.areas.ravel()
    target = {"vw": 0.25, "cov": 0.03125, "vJ": 0.25**3 / 3}
    x = {"vw": dw * dw, "cov": dw * J, "vJ": J * J}
    for key, want in target.items():
        se = x[key].std(ddof=1) / np.sqrt(x[key].size)
        assert abs(x[key].mean() - want) < 3 * se, key
    assert abs(J.mean()) < 3 * J.std(ddof=1) / np.sqrt(J.size)
    corr = np.corrcoef(dw, J)[0, 1]
    assert corr == pytest.approx(np.sqrt(3) / 2, abs=5e-3)


@pytest.mark.parametrize("R", [1, 3, 8])
def test_fine_path_is_consistent_with_blocks(R):
    g = build_grid(6, R)
    bp = sample_brownian(g, rng.streams(9, range(5)))
    coupled = sample_block_pair(g, rng.streams(9, range(5)))
    assert np.array_equal(coupled.increments, bp.blocks.increments)
    fine = bp.fine_increments.reshape(5, g.n, R)
    np.testing.assert_allclose(fine.sum(-1), bp.coarse_increments, atol=1e-13)
    # J over a coarse interval from the fine pairs
    k = np.arange(R) * g.fine_step
    area = (bp.fine_areas.reshape(5, g.n, R) + k * fine).sum(-1)
    np.testing.assert_allclose(area, bp.blocks.areas, atol=1e-13)


def test_doubling_R_refines_the_same_path():
    s = rng.streams(4, range(3))
    p1 = sample_brownian(build_grid(8, 16), s)
    p2 = sample_brownian(build_grid(8, 32), s)
    np.testing.assert_allclose(p2.cumulative[:, ::2], p1.cumulative, atol=1e-13)


def test_fine_increment_variance():
    g = build_grid(4, 8)
    bp = sample_brownian(g, rng.streams(12, range(20_000)))
    v = bp.fine_increments.var(axis=0, ddof=1) / g.fine_step
    assert abs(v.mean() - 1) < 0.01


class TestIteratedIntegrals:
    def test_plug_in(self):
        g = build_grid(4, 1)
        i11, i111 = iterated_integrals(np.array([0.3]), g)
        assert i11[0] == pytest.approx(-0.08)
        assert i111[0] == pytest.approx((0.027 - 0.225) / 6)
        i11, i111 = iterated_integrals(np.array([0.0]), g)
        assert (i11[0], i111[0]) == (-0.125, 0.0)

    def test_riemann_ito_oracle(self):
        # left-point sums on a very fine grid converge to the closed forms
        R = 2**14
        g = build_grid(4, R)
        bp = sample_brownian(g, rng.streams(2, range(4)))
        dw = bp.fine_increments[:, :R]
        w = np.concatenate([np.zeros((4, 1)), np.cumsum(dw, axis=1)], axis=1)
        i11_fine = np.cumsum(w[:, :-1] * dw, axis=1)
        i11_left = np.concatenate([np.zeros((4, 1)), i11_fine], axis=1)[:, :-1]
        i111_fine = np.sum(i11_left * dw, axis=1)
        i11, i111 = iterated_integrals(bp, g, j=0)
        tol = 6 * g.coarse_step / np.sqrt(R)
        np.testing.assert_allclose(i11_fine[:, -1], i11, atol=tol)
        np.testing.assert_allclose(i111_fine, i111, atol=tol)

    @settings(max_examples=50)
    @given(st.floats(-3, 3), st.integers(2, 64))
    def test_hermite_identity(self, dw, n):
        g = build_grid(n, 1)
        i11, _ = iterated_integrals(np.array([dw]), g)
        assert (np.sqrt(n) * dw) ** 2 - 1 == pytest.approx(2 * n * i11[0], abs=1e-12 * (1 + n * dw * dw))


class TestSchemes:
    def test_wiener_exact(self):
        g = build_grid(8, 4)
        bp = sample_brownian(g, rng.streams(1, range(3)))
        spec = dataclasses.replace(preset("ou", kappa=0.0), initial=0.7)
        for scheme in (euler_maruyama, milstein):
            dp = scheme(spec, bp, g)
            np.testing.assert_allclose(dp.x_values, 0.7 + bp.cumulative, atol=1e-13)

    def test_frozen(self):
        g = build_grid(8, 4)
        bp = sample_brownian(g, rng.streams(1, range(3)))
        dp = euler_maruyama(preset("gbm", theta=0.0, x0=1.3), bp, g)
        assert np.all(dp.x_values == 1.3)

    @staticmethod
    def _gbm_errors(scheme, Rs, n=8, N=200):
        spec = preset("gbm", theta=0.5)
        s = rng.streams(6, range(N))
        errs = []
        for R in Rs:
            g = build_grid(n, R)
            bp = sample_brownian(g, s)
            dp = simulate_diffusion(spec, bp, g, scheme=scheme)
            exact = np.exp(0.5 * bp.cumulative - 0.125 * g.fine_times)
            errs.append(np.sqrt(np.mean(np.max(np.abs(dp.x_values - exact), axis=1) ** 2)))
        return np.array(errs)

    def test_gbm_euler_rate(self):
        Rs = [8, 16, 32, 64, 128]
        errs = self._gbm_errors("euler", Rs)
        slope = -np.polyfit(np.log(Rs), np.log(errs), 1)[0]
        assert 0.3 <= slope <= 0.7

    def test_gbm_milstein_rate(self):
        Rs = [8, 16, 32, 64, 128]
        errs = self._gbm_errors("milstein", Rs)
        slope = -np.polyfit(np.log(Rs), np.log(errs), 1)[0]
        assert slope >= 0.8

    def test_abort_is_recorded(self):
        spec = dataclasses.replace(
            preset("ou"),
            drift=lambda x: np.asarray(x, dtype=float) ** 3,
            initial=30.0, scan_range=(-1.0, 1.0),
        )
        g = build_grid(4, 4)
        bp = sample_brownian(g, rng.streams(1, range(2)))
        with np.errstate(over="ignore", invalid="ignore"):
            dp = euler_maruyama(spec, bp, g)
        assert dp.aborted.all()
        k = dp.abort_step[0]
        assert np.isnan(dp.x_values[0, k:]).all() and np.isfinite(dp.x_values[0, :k]).all()

    def test_unknown_scheme(self):
        g = build_grid(4, 1)
        with pytest.raises(ValueError):
            simulate_diffusion(preset("ou"), sample_brownian(g, rng.streams(1, [0])), g, scheme="rk4")
