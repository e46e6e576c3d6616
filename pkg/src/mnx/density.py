"""First- and second-order expansion densities and the weak-form evaluator.

Two ways to use a symbol:

* density form: ``p_n(z, x)`` assembled from kernel estimates of
  ``E[c_j delta_x(c_0)]`` and their x-derivatives (for plots);
* weak form: ``E[f(Z, F)]`` with the adjoint moved onto ``f``, so only
  Gauss-Hermite quadrature in ``z`` is needed (for quantitative checks).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sp
from scipy import special
from scipy.stats import norm

from .symbols import ModelDegeneracyError, RandomSymbol, SymbolCoeffs, full_symbol

__all__ = [
    "gaussian_derivatives",
    "DensityModel",
    "coefficient_moments",
    "build_density_model",
    "studentized_qn",
    "qn_cdf",
    "kde_bandwidth",
    "delta_kde",
    "joint_pn_density",
    "general_pn_density",
    "TestFunction",
    "weak_form_terms",
    "weak_form_expectation",
    "gauss_hermite",
]

SQRT2PI = np.sqrt(2.0 * np.pi)


def gaussian_derivatives(z, mean, variance, order):
    """``d^k/dz^k phi(z; mean, variance)`` via probabilists' Hermite polynomials.

    >>> round(float(gaussian_derivatives(0.0, 0.0, 1.0, 0)), 7)
    0.3989423
    """
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("variance must be positive")
    if int(order) != order or order < 0:
        raise ValueError("order must be a non-negative integer")
    sd = np.sqrt(variance)
    y = (np.asarray(z, dtype=float) - mean) / sd
    phi = np.exp(-0.5 * y * y) / (SQRT2PI * sd)
    if order == 0:
        return phi
    return (-1) ** order * sd ** (-order) * special.eval_hermitenorm(int(order), y) * phi


# coefficient moments

def _wiener_arrays(store):
    if isinstance(store, SymbolCoeffs):
        if store.c0 is None:
            raise ValueError("moments m1..m3 are defined for Wiener-case coefficients")
        return store.c0, store.c1, store.c2, store.c3
    return tuple(np.asarray(store[k], dtype=float) for k in ("c0", "c1", "c2", "c3"))


def coefficient_moments(store):
    """Monte Carlo means of ``c0^{-1/2} c1``, ``c0^{-5/2} c2``, ``c0^{-3/2} c3``.

    Returns ``(moments, standard_errors)``, each of length 3.
    """
    c0, c1, c2, c3 = _wiener_arrays(store)
    if c0.size == 0:
        raise ValueError("empty coefficient store")
    if c0.size < 2:
        raise ValueError("need at least two replications for standard errors")
    bad = np.flatnonzero(~(c0 > 0))
    if bad.size:
        raise ModelDegeneracyError("c0 <= 0 in replication %d" % bad[0])
    samples = np.stack([c0**-0.5 * c1, c0**-2.5 * c2, c0**-1.5 * c3])
    means = samples.mean(axis=1)
    ses = samples.std(axis=1, ddof=1) / np.sqrt(c0.size)
    return means, ses


@dataclass
class DensityModel:
    moments: np.ndarray
    standard_errors: np.ndarray
    store: SymbolCoeffs
    n: int
    N: int
    degenerate: bool = False
    kde_bandwidths: dict = field(default_factory=dict)

    def qn(self, z):
        return studentized_qn(z, self.n, self.moments)

    def cdf(self, t):
        return qn_cdf(t, self.n, self.moments)

    def as_json(self):
        m, s = self.moments, self.standard_errors
        return {"m1": float(m[0]), "m2": float(m[1]), "m3": float(m[2]),
                "se1": float(s[0]), "se2": float(s[1]), "se3": float(s[2]), "N": int(self.N)}


def _is_degenerate(values):
    values = np.asarray(values, dtype=float)
    return bool(np.ptp(values) <= 1e-12 * max(1.0, float(np.max(np.abs(values)))))


def build_density_model(store, n):
    moments, ses = coefficient_moments(store)
    degenerate = _is_degenerate(store.c0)
    bw = {}
    if not degenerate:
        bw = {m: kde_bandwidth(store.c0, m) for m in range(3)}
    return DensityModel(moments, ses, store, int(n), len(store.c0), degenerate, bw)


# studentized density

def _moments3(moments):
    m = np.asarray(moments, dtype=float).ravel()
    if m.size != 3:
        raise ValueError("expected three moments (m1, m2, m3)")
    return m


def studentized_qn(z, n, moments):
    """``phi(z) {1 + n^{-1/2} [m1 (z^3 - 3z) + 12 m2 z - 2 m3 z]}``."""
    m1, m2, m3 = _moments3(moments)
    z = np.asarray(z, dtype=float)
    poly = m1 * (z**3 - 3 * z) + (12 * m2 - 2 * m3) * z
    return norm.pdf(z) * (1 + poly / np.sqrt(n))


def qn_cdf(t, n, moments):
    """Closed-form antiderivative of :func:`studentized_qn`."""
    m1, m2, m3 = _moments3(moments)
    t = np.asarray(t, dtype=float)
    phi = norm.pdf(t)
    return norm.cdf(t) + (-m1 * (t * t - 1) * phi - (12 * m2 - 2 * m3) * phi) / np.sqrt(n)


# kernel estimates

def kde_bandwidth(samples, order=0):
    """``1.06 s N^{-1/5}`` for order 0 and ``s N^{-1/(5+2m)}`` for order ``m``."""
    samples = np.asarray(samples, dtype=float)
    s = float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0
    N = samples.size
    if s <= 0:
        raise ModelDegeneracyError("reference sample has zero spread; pass an explicit bandwidth")
    if order == 0:
        return 1.06 * s * N ** (-0.2)
    return s * N ** (-1.0 / (5 + 2 * order))


def _coef_array(store, j):
    if isinstance(j, str):
        return np.asarray(getattr(store, j) if isinstance(store, SymbolCoeffs) else store[j], dtype=float)
    arrays = _wiener_arrays(store)
    return np.asarray(arrays[int(j)], dtype=float)


def _reference_sample(store):
    if isinstance(store, SymbolCoeffs):
        return np.asarray(store.f_inf, dtype=float)
    return np.asarray(store["c0"], dtype=float)


def delta_kde(store, j, x, deriv_order=0, bandwidth=None, chunk=4096):
    """``d^k/dx^k E[c_j delta_x(c_0)]`` by a Gaussian kernel estimate.

    ``j`` indexes ``(c0, c1, c2, c3)`` or names a coefficient attribute.
    """
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1 or 2")
    ref = _reference_sample(store)
    cj = _coef_array(store, j)
    if bandwidth is None:
        bandwidth = kde_bandwidth(ref, deriv_order)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape)
    var = bandwidth * bandwidth
    for lo in range(0, ref.size, chunk):
        r = ref[lo : lo + chunk]
        k = gaussian_derivatives(x[..., None], r, var, deriv_order)
        out += k @ cj[lo : lo + chunk]
    return out / ref.size


def _support_ok(ref, x, h):
    lo, hi = np.quantile(ref, [0.005, 0.995])
    return (x >= lo - h) & (x <= hi + h)


def joint_pn_density(z, x, n, store, bandwidths=None):
    """Wiener-case ``p_n(z, x)`` assembled from kernel estimates.

    Returns ``(value, reliable)``; ``reliable`` is False where ``x`` falls
    outside the bulk of the ``c0`` sample or the sample is degenerate.
    """
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    ref = _reference_sample(store)
    degenerate = _is_degenerate(ref)
    if bandwidths is None:
        if degenerate:
            raise ModelDegeneracyError("degenerate reference law: pass explicit bandwidths")
        bandwidths = {m: kde_bandwidth(ref, m) for m in range(3)}
    elif np.isscalar(bandwidths):
        bandwidths = {m: float(bandwidths) for m in range(3)}
    zz, xx = np.broadcast_arrays(z, x)
    xs = xx.ravel()
    ones = {"c0": ref, "c1": np.ones_like(ref), "c2": ref, "c3": ref}
    g0 = delta_kde(ones, 1, xs, 0, bandwidths[0]).reshape(xx.shape)  # E[delta_x(c0)]
    g1 = delta_kde(store, 1, xs, 0, bandwidths[0]).reshape(xx.shape)
    g2 = delta_kde(store, 2, xs, 2, bandwidths[2]).reshape(xx.shape)
    g3 = delta_kde(store, 3, xs, 1, bandwidths[1]).reshape(xx.shape)
    safe_x = np.where(xx > 0, xx, np.nan)
    phi = gaussian_derivatives(zz, 0.0, safe_x, 0)
    dphi = gaussian_derivatives(zz, 0.0, safe_x, 1)
    p1 = g1 * (zz**3 / safe_x**2 - 3 * zz / safe_x) * phi
    p2 = -16.0 * g2 * dphi
    p3 = 4.0 * g3 * dphi
    value = phi * g0 + (p1 + p2 + p3) / np.sqrt(n)
    reliable = _support_ok(ref, xx, bandwidths[0]) & ~degenerate & (xx > 0)
    return np.nan_to_num(value), reliable


def _zpoly_derivative(z, var, m, zd):
    """``d^m/dz^m [z^zd phi(z; 0, var)]`` for ``zd`` in {0, 1}."""
    if zd == 0:
        return gaussian_derivatives(z, 0.0, var, m)
    if zd == 1:
        out = z * gaussian_derivatives(z, 0.0, var, m)
        if m:
            out = out + m * gaussian_derivatives(z, 0.0, var, m - 1)
        return out
    raise ValueError("z-degree above 1 is not used by the implemented symbols")


def general_pn_density(z, x, n, coeffs, symbol=None, bandwidths=None):
    """``p_n(z, x)`` from any symbol by applying the adjoint termwise:
    ``sum E[coef (-d_z)^m (-d_x)^k {z^zd phi(z; 0, C) delta_x(F)}]``."""
    symbol = full_symbol(coeffs) if symbol is None else symbol
    C = np.asarray(coeffs.c_inf, dtype=float)
    F = np.asarray(coeffs.f_inf, dtype=float)
    if bandwidths is None:
        bandwidths = {m: kde_bandwidth(F, m) for m in range(3)}
    elif np.isscalar(bandwidths):
        bandwidths = {m: float(bandwidths) for m in range(3)}
    z = float(z)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    N = C.size
    first = gaussian_derivatives(z, 0.0, C, 0)
    total = gaussian_derivatives(x[:, None], F, bandwidths[0] ** 2, 0) @ first / N
    corr = np.zeros_like(x)
    for (m, k, zd), coef in symbol:
        kk = sum(k)
        weight = np.broadcast_to(coef, C.shape) * _zpoly_derivative(z, C, m, zd) * (-1) ** m
        kern = gaussian_derivatives(x[:, None], F, bandwidths[kk] ** 2, kk) * (-1) ** kk
        # the x-derivative of K(x - F) w.r.t. x; (-d_x)^k of delta_x
        corr += kern @ weight / N
    return total + corr / np.sqrt(n)


# weak form

@lru_cache(maxsize=None)
def gauss_hermite(nodes=64):
    """Nodes and weights for ``E[g(Y)]``, ``Y ~ N(0, 1)``."""
    y, w = np.polynomial.hermite_e.hermegauss(nodes)
    return y, w / SQRT2PI


class TestFunction:
    """Smooth test function ``f(z, x)`` with mixed partial derivatives.

    Build from a sympy expression in symbols ``z`` and ``x`` (derivatives are
    derived symbolically and cached) or from explicit handles
    ``{(m, k): callable}``.
    """

    __test__ = False  # keep pytest from collecting this class

    z, x = sp.symbols("z x", real=True)

    def __init__(self, expr=None, handles=None, name=None):
        if (expr is None) == (handles is None):
            raise ValueError("give exactly one of expr or handles")
        self.expr = None if expr is None else sp.sympify(expr)
        self.handles = dict(handles or {})
        self.name = name or (str(self.expr) if self.expr is not None else "f")
        self._cache = {}

    @classmethod
    def of_studentized(cls, g, name=None):
        """``f(z, x) = g(z / sqrt(x))`` for a sympy expression ``g`` in ``z``."""
        g = sp.sympify(g)
        return cls(g.subs(cls.z, cls.z / sp.sqrt(cls.x)), name=name or "stud:" + str(g))

    def derivative(self, m, k):
        key = (int(m), int(k))
        if key in self._cache:
            return self._cache[key]
        if self.expr is None:
            if key not in self.handles:
                raise ValueError("test function %s lacks the d_z^%d d_x^%d handle" % (self.name, m, k))
            fn = self.handles[key]
        else:
            d = self.expr
            if m:
                d = sp.diff(d, self.z, m)
            if k:
                d = sp.diff(d, self.x, k)
            raw = sp.lambdify((self.z, self.x), d, "numpy")

            def fn(z, x, _raw=raw):
                z, x = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(x, dtype=float))
                return np.broadcast_to(_raw(z, x), z.shape).astype(float)

        self._cache[key] = fn
        return fn

    def __call__(self, z, x):
        return self.derivative(0, 0)(z, x)


def weak_form_terms(f, coeffs, symbol=None, nodes=64, block=8192):
    """Per-path first-order value and correction (before the ``n^{-1/2}`` factor).

    ``first[i] = int f(z, F_i) phi(z; 0, C_i) dz`` and
    ``corr[i] = sum_terms coef_i int z^zd d_z^m d_x^k f(z, F_i) phi(z; 0, C_i) dz``.
    Paths are processed ``block`` at a time to bound memory.
    """
    symbol = full_symbol(coeffs) if symbol is None else symbol
    C = np.asarray(coeffs.c_inf, dtype=float)
    F = np.asarray(coeffs.f_inf, dtype=float)
    y, w = gauss_hermite(nodes)
    terms = [(m, sum(k), zd, np.broadcast_to(coef, C.shape)) for (m, k, zd), coef in symbol]
    first = np.empty_like(C)
    corr = np.zeros_like(C)
    for lo in range(0, C.size, block):
        sl = slice(lo, lo + block)
        zq = np.sqrt(C[sl])[:, None] * y[None, :]
        Fq = F[sl, None]
        first[sl] = f.derivative(0, 0)(zq, Fq) @ w
        for m, k, zd, coef in terms:
            vals = f.derivative(m, k)(zq, Fq)
            if zd:
                vals = vals * zq**zd
            corr[sl] += coef[sl] * (vals @ w)
    return first, corr


def weak_form_expectation(f, n, coeffs, symbol=None, nodes=64):
    """Second-order approximation of ``E[f(Z, F)]`` without density estimation."""
    first, corr = weak_form_terms(f, coeffs, symbol, nodes)
    return float(np.mean(first) + np.mean(corr) / np.sqrt(n))
