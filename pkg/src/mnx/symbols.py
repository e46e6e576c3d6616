"""Random symbols as sparse polynomial tables in ``(iu, iv)`` and ``z``.

A symbol is ``sum c * z^zd * (iu)^m * (iv)^k`` where each coefficient ``c``
is either a float or an array holding one value per replication. Tables are
keyed by ``(m, k, zd)`` with ``k`` a tuple (multi-degree in ``iv``; length 1
here because the reference variable is scalar).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .malliavin import fine_states, first_flow, second_flow, tail_trapezoid, wiener_tail_integrals

__all__ = [
    "RandomSymbol",
    "SymbolCoeffs",
    "ModelDegeneracyError",
    "poly_mul",
    "wiener_coefficients",
    "full_symbol_wiener",
    "adaptive_symbol_wiener",
    "anticipative_symbol_wiener",
    "diffusion_kh",
    "diffusion_coefficients",
    "adaptive_symbol_diffusion",
    "sigma_ss_diffusion",
    "anticipative_symbol_diffusion",
    "full_symbol_diffusion",
    "full_symbol",
]


class ModelDegeneracyError(ValueError):
    pass


def _key(m, k, zd=0):
    if np.isscalar(k):
        k = (int(k),)
    return (int(m), tuple(int(v) for v in k), int(zd))


class RandomSymbol:
    """Sparse ``(m, k, z_degree) -> coefficient`` table."""

    def __init__(self, terms=None):
        self.terms = {}
        for key, coef in (terms or {}).items():
            key = _key(*key)
            self.terms[key] = self.terms.get(key, 0.0) + coef

    def __repr__(self):
        return "RandomSymbol(%d terms: %s)" % (len(self.terms), sorted(self.terms))

    def __iter__(self):
        return iter(sorted(self.terms.items()))

    def __len__(self):
        return len(self.terms)

    def __add__(self, other):
        out = dict(self.terms)
        for key, coef in other.terms.items():
            out[key] = out.get(key, 0.0) + coef
        return RandomSymbol(out)

    def __neg__(self):
        return RandomSymbol({k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return RandomSymbol({k: c * scalar for k, c in self.terms.items()})

    __rmul__ = __mul__

    def coefficient(self, m, k=0, zd=0):
        return self.terms.get(_key(m, k, zd), 0.0)

    def pruned(self, tol=0.0):
        """Drop terms whose coefficients are identically within ``tol`` of 0."""
        return RandomSymbol({k: c for k, c in self.terms.items() if np.any(np.abs(c) > tol)})

    def evaluate(self, z, u, v):
        """Value at real ``(z, u, v)``; ``v`` may be a scalar or a sequence."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        total = 0.0
        for (m, k, zd), coef in self.terms.items():
            iv = np.prod([(1j * v[i]) ** p for i, p in enumerate(k)])
            total = total + coef * z**zd * (1j * u) ** m * iv
        return total

    def mean(self):
        """Replication average of every coefficient."""
        return RandomSymbol({k: float(np.mean(c)) for k, c in self.terms.items()})

    def select(self, index):
        """Coefficients of replication(s) ``index``."""
        return RandomSymbol(
            {k: (c[index] if np.ndim(c) else c) for k, c in self.terms.items()}
        )

    @property
    def max_degrees(self):
        if not self.terms:
            return (0, 0, 0)
        return (
            max(m for m, _, _ in self.terms),
            max(sum(k) for _, k, _ in self.terms),
            max(zd for _, _, zd in self.terms),
        )

    def to_json(self):
        """List of ``{m, k, z_degree, coefficient}`` records, sorted by key."""
        out = []
        for (m, k, zd), coef in sorted(self.terms.items()):
            c = np.asarray(coef, dtype=float)
            out.append({"m": m, "k": list(k), "z_degree": zd,
                        "coefficient": c.tolist() if c.ndim else float(c)})
        return out

    @classmethod
    def from_json(cls, records):
        terms = {}
        for r in records:
            c = r["coefficient"]
            terms[(r["m"], tuple(r["k"]), r["z_degree"])] = np.asarray(c) if isinstance(c, list) else float(c)
        return cls(terms)


def poly_mul(p, q):
    """Product of integer polynomials in ``(iu, iv)`` given as ``{(m, k): c}``."""
    out = {}
    for (m1, k1), c1 in p.items():
        for (m2, k2), c2 in q.items():
            key = (m1 + m2, k1 + k2)
            out[key] = out.get(key, 0) + c1 * c2
    return {k: c for k, c in out.items() if c != 0}


# -2u^2 + 4iv written as 2(iu)^2 + 4(iv)
_BRACKET = {(2, 0): 2, (0, 1): 4}
_IU = {(1, 0): 1}


def _scaled(poly, coef, zd=0):
    return RandomSymbol({(m, k, zd): c * coef for (m, k), c in poly.items()})


@dataclass
class SymbolCoeffs:
    """Per-path expansion coefficients.

    ``c_inf`` is the conditional variance of the mixed-normal limit and
    ``f_inf`` the limit of the reference variable (both equal ``c0`` in the
    Wiener case). Wiener runs fill ``c0..c3``; diffusion runs fill
    ``ratio`` (the z-linear coefficient), ``kw`` (int k dw), ``hdt``
    (int h dt) and the anticipative table ``bar``.
    """

    c_inf: np.ndarray
    f_inf: np.ndarray
    c0: Optional[np.ndarray] = None
    c1: Optional[np.ndarray] = None
    c2: Optional[np.ndarray] = None
    c3: Optional[np.ndarray] = None
    ratio: Optional[np.ndarray] = None
    kw: Optional[np.ndarray] = None
    hdt: Optional[np.ndarray] = None
    bar: Optional[RandomSymbol] = None
    case: str = "wiener"

    def __len__(self):
        return len(self.c_inf)


def _check_c0(c0):
    bad = np.flatnonzero(~(c0 > 0) | ~np.isfinite(c0))
    if bad.size:
        raise ModelDegeneracyError("c0 <= 0 or non-finite in replication %d" % bad[0])


def wiener_coefficients(spec, path, grid):
    """``c0 = 2 int a^2``, ``c1 = (2/3) int a^3 / int a^2``,
    ``c2 = int a(w_t) (int_t^1 a a')^2 dt``, ``c3 = int a(w_t) int_t^1 (a a'' + a'^2) dt``,
    all by the fine-grid trapezoid rule."""
    x = fine_states(spec, path)
    h = grid.fine_step
    a = spec.a(x)
    t1, t2 = wiener_tail_integrals(spec, path, grid)
    int_a2 = tail_trapezoid(a * a, h)[:, 0].copy()
    int_a3 = tail_trapezoid(a**3, h)[:, 0].copy()
    c0 = 2.0 * int_a2
    _check_c0(c0)
    c1 = (2.0 / 3.0) * int_a3 / int_a2
    c2 = tail_trapezoid(a * t1 * t1, h)[:, 0].copy()
    c3 = tail_trapezoid(a * t2, h)[:, 0].copy()
    return SymbolCoeffs(c_inf=c0, f_inf=c0, c0=c0, c1=c1, c2=c2, c3=c3, case="wiener")


def adaptive_symbol_wiener(coeffs):
    return RandomSymbol({(2, 0, 1): coeffs.c1})


def anticipative_symbol_wiener(coeffs):
    sq = poly_mul(_IU, poly_mul(_BRACKET, _BRACKET))
    lin = poly_mul(_IU, _BRACKET)
    return _scaled(sq, coeffs.c2) + _scaled(lin, coeffs.c3)


def full_symbol_wiener(coeffs):
    """``c1 z (iu)^2 + c2 iu (2(iu)^2 + 4 iv)^2 + c3 iu (2(iu)^2 + 4 iv)``, expanded."""
    out = RandomSymbol({(2, 0, 1): coeffs.c1})
    out = out + _scaled(poly_mul(_IU, poly_mul(_BRACKET, _BRACKET)), coeffs.c2)
    out = out + _scaled(poly_mul(_IU, _BRACKET), coeffs.c3)
    return out


# diffusion case

def diffusion_kh(spec, dpath, grid):
    """``k_t`` and ``h_t`` at every fine node."""
    x = fine_states(spec, dpath)
    c, b, s = spec.kernel_weight(x), spec.drift(x), spec.diffusion(x)
    s1 = spec.sigma_ito1(x)
    c1, c0 = spec.kernel_ito1(x), spec.kernel_ito0(x)
    b1 = spec.drift_ito1(x)
    k = 2 * c * b * s + c * s * s1 - 0.5 * c1 * s * s
    h = c * b * b + c * b1 * s - 0.5 * c0 * s * s - c1 * s * s1
    return k, h


def _ratio(spec, x, h):
    a = spec.a(x)
    return (2.0 / 3.0) * tail_trapezoid(a**3, h)[:, 0] / tail_trapezoid(a * a, h)[:, 0]


def adaptive_symbol_diffusion(spec, dpath, path, grid, k=None, h=None):
    """``(2z/3) int a^3 / int a^2 (iu)^2 + iu (int k dw + int h dt)``; the
    stochastic and time integrals are left-point sums on the fine grid."""
    kw, hdt = _kh_integrals(spec, dpath, path, grid, k, h)
    x = fine_states(spec, dpath)
    return RandomSymbol({(2, 0, 1): _ratio(spec, x, grid.fine_step), (1, 0, 0): kw + hdt})


def _kh_integrals(spec, dpath, path, grid, k=None, h=None):
    if k is None or h is None:
        k, h = diffusion_kh(spec, dpath, grid)
    kw = np.sum(k[:, :-1] * path.fine_increments, axis=-1)
    hdt = grid.fine_step * np.sum(h[:, :-1], axis=-1)
    return kw, hdt


def _ss_integrals(spec, flows, dpath, grid):
    """The four integrals composing ``sigma_{s,s}`` at every fine ``s``.

    ``A1 = int_s^1 alpha' D_sX``, ``B1 = int_s^1 beta' D_sX``,
    ``A2 = int_s^1 (alpha'' (D_sX)^2 + alpha' D_sD_sX)``, ``B2`` likewise.
    Uses the factorized flow so that every ``s`` costs O(1).
    """
    if flows.csum is None:
        raise ValueError("flows need the second-order part (call second_flow)")
    x = fine_states(spec, dpath)
    dt = grid.fine_step
    P, C = flows.prod, flows.csum
    sig, sig1 = flows.sig, flows.sig1
    al1, al2 = spec.alpha_d1(x), spec.alpha_d2(x)
    be1, be2 = spec.reference_d1(x), spec.reference_d2(x)

    def parts(f1, f2):
        t_p = tail_trapezoid(f1 * P, dt)
        t_pp = tail_trapezoid(f2 * P * P, dt)
        t_pc = tail_trapezoid(f1 * P * C, dt)
        first = sig / P * t_p
        # D_sX^2 = sig^2 P_t^2 / P_s^2; D_sD_sX = P_t [sig sig' / P_s + sig^2 / P_s^2 (C_t - C_s)]
        second = (sig / P) ** 2 * t_pp + sig * sig1 / P * t_p + (sig / P) ** 2 * (t_pc - C * t_p)
        return first, second

    A1, A2 = parts(al1, al2)
    B1, B2 = parts(be1, be2)
    return A1, B1, A2, B2


def sigma_ss_diffusion(spec, flows, dpath, grid, s=None):
    """Diagonal symbol ``sigma_{s,s}`` with ``-u^2`` written as ``(iu)^2``.

    ``s`` is a fine index; with ``s=None`` every coefficient is an array over
    fine nodes (last axis).
    """
    A1, B1, A2, B2 = _ss_integrals(spec, flows, dpath, grid)
    if s is not None:
        A1, B1, A2, B2 = (v[:, int(s)] for v in (A1, B1, A2, B2))
    return RandomSymbol({
        (4, 0, 0): A1 * A1,
        (2, 1, 0): 2.0 * A1 * B1,
        (0, 2, 0): B1 * B1,
        (2, 0, 0): A2,
        (0, 1, 0): B2,
    })


def _stride_weights(n_nodes, stride, h):
    """Trapezoid weights on every ``stride``-th fine node (always including 1)."""
    idx = np.arange(0, n_nodes, stride)
    if idx[-1] != n_nodes - 1:
        idx = np.append(idx, n_nodes - 1)
    w = np.zeros(len(idx))
    gaps = np.diff(idx) * h
    w[:-1] += 0.5 * gaps
    w[1:] += 0.5 * gaps
    return idx, w


def anticipative_symbol_diffusion(spec, flows, dpath, grid, s_stride=None):
    """``int_0^1 iu a(X_s) sigma_{s,s} ds`` by the trapezoid rule on every
    ``s_stride``-th fine node (default: the coarse grid)."""
    stride = grid.R if s_stride is None else int(s_stride)
    x = fine_states(spec, dpath)
    ss = sigma_ss_diffusion(spec, flows, dpath, grid)
    idx, w = _stride_weights(x.shape[-1], stride, grid.fine_step)
    a = spec.a(x)[:, idx]
    terms = {}
    for (m, k, zd), coef in ss.terms.items():
        terms[(m + 1, k, zd)] = np.sum(a * coef[:, idx] * w, axis=-1)
    return RandomSymbol(terms)


def diffusion_coefficients(spec, dpath, path, grid, s_stride=None, flows=None):
    """Everything the diffusion-case expansion needs for a batch of paths."""
    x = fine_states(spec, dpath)
    dt = grid.fine_step
    a = spec.a(x)
    c_inf = 2.0 * tail_trapezoid(a * a, dt)[:, 0]
    _check_c0(c_inf)
    f_inf = tail_trapezoid(spec.reference(x), dt)[:, 0].copy()
    kw, hdt = _kh_integrals(spec, dpath, path, grid)
    if flows is None:
        flows = first_flow(spec, dpath, path, grid)
        second_flow(spec, dpath, path, flows, grid)
    bar = anticipative_symbol_diffusion(spec, flows, dpath, grid, s_stride=s_stride)
    return SymbolCoeffs(
        c_inf=c_inf, f_inf=f_inf,
        ratio=_ratio(spec, x, dt), kw=kw, hdt=hdt, bar=bar, case="diffusion",
    )


def full_symbol_diffusion(coeffs):
    adaptive = RandomSymbol({(2, 0, 1): coeffs.ratio, (1, 0, 0): coeffs.kw + coeffs.hdt})
    return adaptive + coeffs.bar


def full_symbol(coeffs):
    """Full symbol for either case."""
    if coeffs.case == "wiener":
        return full_symbol_wiener(coeffs)
    return full_symbol_diffusion(coeffs)
