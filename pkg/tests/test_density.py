import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from mnx import rng
from mnx.density import (
    TestFunction,
    build_density_model,
    coefficient_moments,
    delta_kde,
    gaussian_derivatives,
    general_pn_density,
    joint_pn_density,
    kde_bandwidth,
    qn_cdf,
    studentized_qn,
    weak_form_expectation,
    weak_form_terms,
)
from mnx.model import preset
from mnx.paths import build_grid, sample_brownian
from mnx.symbols import ModelDegeneracyError, RandomSymbol, SymbolCoeffs, wiener_coefficients

M1 = np.sqrt(2) / 3


def _store(level=1.0, B=4, n=8, R=2, model="wiener-const", seed=1, **kw):
    g = build_grid(n, R)
    bp = sample_brownian(g, rng.streams(seed, range(B)))
    params = {"level": level} if model == "wiener-const" else kw
    return wiener_coefficients(preset(model, **params), bp, g)


class TestGaussianDerivatives:
    def test_values(self):
        assert gaussian_derivatives(0, 0, 1, 0) == pytest.approx(0.3989423, abs=1e-7)
        assert gaussian_derivatives(0, 0, 1, 1) == 0.0
        assert gaussian_derivatives(1, 0, 1, 2) == pytest.approx(0.0, abs=1e-16)

    @settings(max_examples=50)
    @given(st.floats(-3, 3), st.floats(0.3, 4), st.integers(1, 5))
    def test_fd(self, z, var, k):
        h = 1e-5
        fd = (gaussian_derivatives(z + h, 0.2, var, k - 1) - gaussian_derivatives(z - h, 0.2, var, k - 1)) / (2 * h)
        assert gaussian_derivatives(z, 0.2, var, k) == pytest.approx(fd, abs=1e-5)

    def test_rejects(self):
        with pytest.raises(ValueError):
            gaussian_derivatives(0, 0, 0.0, 0)
        with pytest.raises(ValueError):
            gaussian_derivatives(0, 0, 1.0, 1.5)


class TestMoments:
    def test_unit_constant(self):
        m, se = coefficient_moments(_store())
        assert m[0] == pytest.approx(M1, abs=1e-12)
        assert m[1] == 0 and m[2] == 0
        np.testing.assert_allclose(se, 0.0, atol=1e-15)

    def test_scale_invariance(self):
        m, _ = coefficient_moments(_store(level=2.0))
        assert m[0] == pytest.approx(M1, abs=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            coefficient_moments({"c0": [], "c1": [], "c2": [], "c3": []})
        with pytest.raises(ValueError):
            coefficient_moments({"c0": [2.0], "c1": [1.0], "c2": [0.0], "c3": [0.0]})


class TestStudentizedDensity:
    def test_values(self):
        assert studentized_qn(0.0, 7, [0.3, -1, 2]) == pytest.approx(norm.pdf(0))
        assert studentized_qn(1.0, 100, [M1, 0, 0]) == pytest.approx(0.219157, abs=1e-6)
        z = np.linspace(-3, 3, 13)
        np.testing.assert_array_equal(studentized_qn(z, 16, [0, 0, 0]), norm.pdf(z))

    def test_cdf_values(self):
        assert qn_cdf(40.0, 5, [1, 1, 1]) == pytest.approx(1.0)
        assert qn_cdf(0.0, 100, [M1, 0, 0]) == pytest.approx(0.518806, abs=1e-6)

    def test_cdf_derivative(self):
        t = np.linspace(-4, 4, 100)
        h = 1e-5
        m = [M1, 0.01, -0.03]
        fd = (qn_cdf(t + h, 16, m) - qn_cdf(t - h, 16, m)) / (2 * h)
        np.testing.assert_allclose(fd, studentized_qn(t, 16, m), atol=1e-8)

    def test_normalized(self):
        total, _ = integrate.quad(lambda z: studentized_qn(z, 16, [M1, 0.02, 0.1]), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_model_wrapper(self):
        dm = build_density_model(_store(), 64)
        assert dm.degenerate and dm.kde_bandwidths == {}
        assert dm.as_json()["m1"] == pytest.approx(M1)
        assert dm.cdf(0.0) == qn_cdf(0.0, 64, dm.moments)


class TestKernelEstimates:
    def test_single_atom(self):
        store = {"c0": np.full(10, 2.0), "c1": np.ones(10), "c2": np.ones(10), "c3": np.ones(10)}
        x = np.linspace(1, 3, 201)
        est = delta_kde(store, 1, x, 0, bandwidth=0.1)
        assert x[np.argmax(est)] == pytest.approx(2.0)
        np.testing.assert_allclose(est, norm.pdf(x, 2.0, 0.1), rtol=1e-12)
        with pytest.raises(ModelDegeneracyError):
            kde_bandwidth(store["c0"])

    def test_integrates_to_mean(self):
        r = np.random.default_rng(1)
        c0 = r.gamma(4.0, 0.5, 500)
        cj = r.normal(size=500)
        store = {"c0": c0, "c1": cj, "c2": cj, "c3": cj}
        x = np.linspace(-5, 15, 20001)
        est = delta_kde(store, 1, x, 0)
        assert integrate.trapezoid(est, x) == pytest.approx(cj.mean(), abs=1e-6)

    def test_gaussian_convolution(self):
        r = np.random.default_rng(0)
        c0 = r.normal(2.0, 0.1, 40_000)
        store = {"c0": c0, "c1": c0, "c2": c0, "c3": c0}
        x = np.linspace(1.85, 2.15, 5)
        h, s2 = 0.05, 0.01
        est = delta_kde(store, 1, x, 0, bandwidth=h)
        # E[c0 K_h(x - c0)] for c0 ~ N(2, s2)
        want = norm.pdf(x, 2, np.sqrt(s2 + h * h)) * (2 * h * h + x * s2) / (s2 + h * h)
        np.testing.assert_allclose(est, want, rtol=0.03)

    def test_derivative_orders(self):
        r = np.random.default_rng(2)
        c0 = r.normal(2.0, 0.2, 300)
        store = {"c0": c0, "c1": np.sin(c0), "c2": c0, "c3": c0}
        x, h = np.linspace(1.5, 2.5, 9), 1e-4
        for k in (1, 2):
            fd = (delta_kde(store, 1, x + h, k - 1, 0.1) - delta_kde(store, 1, x - h, k - 1, 0.1)) / (2 * h)
            np.testing.assert_allclose(delta_kde(store, 1, x, k, 0.1), fd, rtol=1e-5, atol=1e-6)
        with pytest.raises(ValueError):
            delta_kde(store, 1, x, 3)


class TestJointDensity:
    def test_degenerate_needs_bandwidth(self):
        with pytest.raises(ModelDegeneracyError):
            joint_pn_density(0.5, 2.0, 64, _store())

    def test_marginal_matches_studentized(self):
        store = _store()
        n = 64
        x = np.linspace(1.8, 2.2, 4001)
        for z in (-1.3, 0.4, 2.0):
            val, _ = joint_pn_density(z, x, n, store, bandwidths=0.01)
            marginal = integrate.trapezoid(val, x)
            want = studentized_qn(z / np.sqrt(2), n, [M1, 0, 0]) / np.sqrt(2)
            assert marginal == pytest.approx(want, abs=1e-3)

    def test_second_moment(self):
        store = _store()
        z = np.linspace(-9, 9, 361)
        x = np.linspace(1.8, 2.2, 401)
        val, _ = joint_pn_density(z[:, None], x[None, :], 64, store, bandwidths=0.01)
        inner = integrate.trapezoid(val, x, axis=1)
        assert integrate.trapezoid(z * z * inner, z) == pytest.approx(2.0, abs=2e-3)

    def test_reliability_flag(self):
        store = _store(model="wiener-sin", B=400)
        val, ok = joint_pn_density(0.0, np.array([np.median(store.c0), 1e3]), 64, store)
        assert ok[0] and not ok[1]
        assert np.all(np.isfinite(val))

    def test_general_route_agrees(self):
        store = _store(model="wiener-sin", B=3000, n=16, R=4)
        x = np.quantile(store.c0, [0.3, 0.5, 0.7])
        for z in (-1.0, 0.5):
            a, _ = joint_pn_density(z, x, 16, store)
            b = general_pn_density(z, x, 16, store)
            np.testing.assert_allclose(b, a, rtol=0.1, atol=0.01)

    def test_first_order_integrates_to_one(self):
        store = _store(model="wiener-sin", B=300, n=16, R=4)
        z = np.linspace(-12, 12, 121)
        x = np.linspace(store.c0.min() - 5, store.c0.max() + 5, 401)
        first = np.array([general_pn_density(zi, x, np.inf, store) for zi in z])
        total = integrate.trapezoid(integrate.trapezoid(first, x, axis=1), z)
        assert total == pytest.approx(1.0, abs=1e-3)


class TestWeakForm:
    z, x = TestFunction.z, TestFunction.x

    def test_constant(self):
        store = _store(model="wiener-sin", B=20)
        assert weak_form_expectation(TestFunction(1 + 0 * self.z), 16, store) == pytest.approx(1.0, abs=1e-12)

    def test_unit_constant_moments(self):
        store = _store()
        assert weak_form_expectation(TestFunction(self.z**2), 64, store) == pytest.approx(2.0, abs=1e-10)
        assert weak_form_expectation(TestFunction(self.z**3), 64, store) == pytest.approx(1.0, abs=1e-10)

    def test_zero_symbol_collapses(self):
        store = _store(model="wiener-sin", B=20)
        f = TestFunction(np.cos(1) * self.z**4 + sp_sin(self.z) * self.x)
        first, corr = weak_form_terms(f, store, symbol=RandomSymbol())
        assert np.all(corr == 0)
        assert weak_form_expectation(f, 9, store, symbol=RandomSymbol()) == pytest.approx(first.mean())

    def test_handles_match_expression(self):
        store = _store(model="wiener-sin", B=10)
        expr = TestFunction(self.z**3 * self.x)
        needed = {(m, k) for m in range(6) for k in range(3)}
        handles = TestFunction(handles={key: expr.derivative(*key) for key in needed})
        assert weak_form_expectation(handles, 16, store) == weak_form_expectation(expr, 16, store)

    def test_missing_handle(self):
        store = _store(B=3)
        f = TestFunction(handles={(0, 0): lambda z, x: z})
        with pytest.raises(ValueError, match="lacks"):
            weak_form_expectation(f, 16, store)

    def test_studentized_square_has_no_correction(self):
        store = _store(model="wiener-sin", B=50)
        _, corr = weak_form_terms(TestFunction.of_studentized(self.z**2), store)
        np.testing.assert_allclose(corr, 0.0, atol=1e-12)


def sp_sin(e):
    import sympy

    return sympy.sin(e)
