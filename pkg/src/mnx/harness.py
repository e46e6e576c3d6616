"""Replication sweeps and comparisons against exact and brute-force oracles."""

import math
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import sympy as sp
from scipy import special
from scipy.stats import norm

from . import rng
from .density import TestFunction, coefficient_moments, qn_cdf, weak_form_terms
from .functionals import compute_statistics
from .model import ModelSpec, preset
from .paths import build_grid, sample_brownian, simulate_diffusion
from .symbols import RandomSymbol, SymbolCoeffs, diffusion_coefficients, wiener_coefficients

__all__ = [
    "ExperimentConfig",
    "MCResult",
    "RunFailure",
    "run_replications",
    "chisq_oracle_cdf",
    "convergence_study",
    "analytic_cdf_study",
    "expansion_residual",
    "studentize_reduction",
    "reduction_constants",
    "F_FAMILY",
    "T_GRID",
    "ABORT_LIMIT",
]

ABORT_LIMIT = 1e-3
T_GRID = np.linspace(-4.0, 4.0, 81)

_z = TestFunction.z
F_FAMILY = {"z": _z, "z2": _z**2, "z3": _z**3, "sinz": sp.sin(_z)}


class RunFailure(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    """What one sweep simulates. ``model`` names a preset and ``params``
    overrides its parameters; ``spec`` may instead carry a ready ModelSpec
    (which then runs on threads, since arbitrary handles may not pickle)."""

    model: str = "wiener-const"
    params: dict = field(default_factory=dict)
    n: int = 64
    R: int = 32
    N: int = 1000
    seed: int = 1
    scheme: str = "milstein"
    symbols: bool = True
    remainder: bool = False
    s_stride: Optional[int] = None
    chunk: Optional[int] = None
    threads: int = 1
    spec: Optional[ModelSpec] = None

    def model_spec(self):
        return self.spec if self.spec is not None else preset(self.model, **self.params)

    def chunk_size(self):
        if self.chunk:
            return int(self.chunk)
        return int(max(1, min(1024, 2**21 // (self.n * self.R))))


@dataclass
class MCResult:
    """Per-replication statistics of a sweep, in replication order."""

    config: ExperimentConfig
    stats: dict
    coeffs: Optional[SymbolCoeffs]
    indices: np.ndarray
    aborted: int
    runtime: float = 0.0

    @property
    def N(self):
        return int(self.indices.size)

    @property
    def seed(self):
        return self.config.seed

    def estimate(self, values):
        values = np.asarray(values, dtype=float)
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))

    @property
    def studentized(self):
        return self.stats["m1n"] / np.sqrt(self.stats["f_n"])

    def row_meta(self):
        c = self.config
        return {"seed": c.seed, "n": c.n, "R": c.R, "N": self.N, "model": c.model}


def _chunk_job(cfg, lo, hi):
    """Simulate replications ``lo..hi-1``; pure function of its arguments."""
    spec = cfg.model_spec()
    grid = build_grid(cfg.n, cfg.R)
    streams = rng.streams(cfg.seed, range(lo, hi))
    bp = sample_brownian(grid, streams)
    dp = simulate_diffusion(spec, bp, grid, scheme=cfg.scheme)
    ok = ~dp.aborted
    stats = compute_statistics(spec, dp, grid, with_remainder=cfg.remainder)
    out = {"z_n": stats.z_n, "m1n": stats.m1n, "f_n": stats.f_n, "u_n": stats.u_n, "u_inf": stats.u_inf}
    if stats.n_n is not None:
        out["n_n"] = stats.n_n
    coeffs = None
    if cfg.symbols and ok.all():
        if spec.case == "wiener":
            coeffs = wiener_coefficients(spec, dp, grid)
        else:
            coeffs = diffusion_coefficients(spec, dp, bp, grid, s_stride=cfg.s_stride)
    elif cfg.symbols:
        raise RunFailure("aborted replications inside a symbol run")
    out = {k: v[ok] for k, v in out.items()}
    return out, coeffs, np.arange(lo, hi)[ok], int((~ok).sum())


def _merge_coeffs(parts):
    parts = [p for p in parts if p is not None]
    if not parts:
        return None
    first = parts[0]
    kwargs = {}
    for name in ("c_inf", "f_inf", "c0", "c1", "c2", "c3", "ratio", "kw", "hdt"):
        vals = [getattr(p, name) for p in parts]
        kwargs[name] = None if vals[0] is None else np.concatenate(vals)
    bar = None
    if first.bar is not None:
        bar = RandomSymbol({k: np.concatenate([p.bar.terms[k] for p in parts]) for k in first.bar.terms})
    return SymbolCoeffs(bar=bar, case=first.case, **kwargs)


def _run_chunks(cfg, bounds):
    threads = max(1, int(cfg.threads))
    if threads == 1 or len(bounds) == 1:
        return [_chunk_job(cfg, lo, hi) for lo, hi in bounds]
    if cfg.spec is None:
        pool = ProcessPoolExecutor(max_workers=threads)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
    with pool:
        futures = [pool.submit(_chunk_job, cfg, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]


def run_replications(cfg):
    """Simulate ``cfg.N`` replications and collect statistics and coefficients.

    Chunk boundaries depend only on ``(n, R)`` and results are merged in
    replication order, so the output is independent of the worker count.
    """
    if cfg.N < 2:
        raise ValueError("need N >= 2 replications")
    t0 = time.perf_counter()
    size = cfg.chunk_size()
    bounds = [(lo, min(cfg.N, lo + size)) for lo in range(0, cfg.N, size)]
    parts = _run_chunks(cfg, bounds)
    stats = {k: np.concatenate([p[0][k] for p in parts]) for k in parts[0][0]}
    aborted = sum(p[3] for p in parts)
    if aborted > ABORT_LIMIT * cfg.N:
        raise RunFailure("%d of %d replications aborted (limit %.1f%%)" % (aborted, cfg.N, 100 * ABORT_LIMIT))
    return MCResult(cfg, stats, _merge_coeffs([p[1] for p in parts]),
                    np.concatenate([p[2] for p in parts]), aborted, time.perf_counter() - t0)


# exact oracle for the constant case

def chisq_oracle_cdf(t, n):
    """CDF of ``(chi2_n - n) / sqrt(2n)``: ``P(n/2, (n + t sqrt(2n)) / 2)``.

    >>> float(chisq_oracle_cdf(-1.0, 2))
    0.0
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.asarray(t, dtype=float)
    arg = 0.5 * (n + t * math.sqrt(2.0 * n))
    return np.where(arg > 0, special.gammainc(0.5 * n, np.maximum(arg, 0.0)), 0.0)


def _constant_moments(level=1.0):
    """Moments for constant ``a``; path-independent, computed from two paths."""
    cfg = ExperimentConfig(model="wiener-const", params={"level": level}, n=2, R=1, N=2, seed=0)
    return coefficient_moments(run_replications(cfg).coeffs)[0]


def analytic_cdf_study(n_list, t_grid=T_GRID, moments=None):
    """Sup-norm CDF errors against the chi-square oracle for ``a = 1``.

    Returns rows with ``order`` 1 (normal CDF) and 2 (second-order CDF).
    """
    moments = _constant_moments() if moments is None else moments
    rows = []
    for n in n_list:
        oracle = chisq_oracle_cdf(t_grid, n)
        e1 = float(np.max(np.abs(norm.cdf(t_grid) - oracle)))
        e2 = float(np.max(np.abs(qn_cdf(t_grid, n, moments) - oracle)))
        rows.append({"n": n, "f": "cdf", "order": 1, "error": e1, "se": 0.0})
        rows.append({"n": n, "f": "cdf", "order": 2, "error": e2, "se": 0.0})
    return rows


def loglog_slope(n_list, errors):
    """Least-squares slope of ``log error`` against ``log n``."""
    return float(np.polyfit(np.log(n_list), np.log(errors), 1)[0])


def convergence_study(cfg, n_list, family=None, fine_nodes=None):
    """Monte Carlo error table for the studentized statistic.

    For each ``n`` and test function ``g``, compares ``E_MC[g(F_n^{-1/2} M_1^n)]``
    with the first-order value ``E g(N(0,1))`` and the second-order weak-form
    prediction computed from coefficients on the same paths. Errors carry a
    standard error from the per-path differences. ``fine_nodes`` fixes
    ``n R`` across ``n`` (``R = fine_nodes // n``).
    """
    family = F_FAMILY if family is None else family
    rows = []
    for n in n_list:
        R = cfg.R if fine_nodes is None else max(1, fine_nodes // n)
        res = run_replications(replace(cfg, n=n, R=R, symbols=True))
        T = res.studentized
        for name, g in family.items():
            f = TestFunction.of_studentized(g, name=name)
            gT = np.asarray(TestFunction(g).derivative(0, 0)(T, np.ones_like(T)))
            first, corr = weak_form_terms(f, res.coeffs)
            second = first + corr / math.sqrt(n)
            for order, pred in ((1, first), (2, second)):
                diff = gT - pred
                est, se = res.estimate(diff)
                rows.append({
                    "n": n, "R": R, "N": res.N, "f": name, "order": order,
                    "mc": float(gT.mean()), "prediction": float(pred.mean()),
                    "error": abs(est), "signed_error": est, "se": se,
                    "scaled_error": abs(est) * math.sqrt(n), "scaled_se": se * math.sqrt(n),
                })
    return rows


def expansion_residual(cfg, n_list, R_list=None):
    """``sqrt(n) RMS(Z_n - M_1^n - N_n / sqrt(n))`` per ``(n, R)`` with a
    delta-method standard error."""
    rows = []
    for n in n_list:
        for R in (R_list or [cfg.R]):
            res = run_replications(replace(cfg, n=n, R=R, symbols=False, remainder=True))
            s = res.stats
            r = math.sqrt(n) * (s["z_n"] - s["m1n"] - s["n_n"] / math.sqrt(n))
            ms = float(np.mean(r * r))
            rms = math.sqrt(ms)
            se = float(np.std(r * r, ddof=1) / math.sqrt(r.size)) / (2 * rms) if rms > 0 else 0.0
            rows.append({"n": n, "R": R, "N": res.N, "rms": rms, "se": se, "mean": float(r.mean())})
    return rows


# studentization algebra

_y, _s, _x, _zz = sp.symbols("y s x z", positive=True)


def _p_table(beta):
    """``{nu: P_{beta,nu}(y, s)}`` where ``(-d_x)^beta g(z/sqrt(x)) =
    sum_nu P_{beta,nu}(z/sqrt(x), 1/sqrt(x)) g^(nu)(z/sqrt(x))``."""
    u = _zz / sp.sqrt(_x)
    du = sp.diff(u, _x)
    coefs = {0: sp.Integer(1)}
    for _ in range(beta):
        new = {}
        for nu, c in coefs.items():
            new[nu] = new.get(nu, 0) - sp.diff(c, _x)
            new[nu + 1] = new.get(nu + 1, 0) - c * du
        coefs = new
    out = {}
    for nu in range(beta + 1):
        c = coefs.get(nu, sp.Integer(0))
        c = sp.expand(sp.simplify(c.subs(_zz, _y * sp.sqrt(_x)).subs(_x, _s**-2)))
        out[nu] = c
    return out


def studentize_reduction(alpha, beta, nu):
    """``Q_{alpha,beta,nu}(y, x) = x^alpha P_{beta,nu}(y, x)`` as a sympy expression.

    The second argument stands for ``1/sqrt(C0)``. ``alpha`` may be an integer
    or a sympy symbol.
    """
    if not (0 <= beta <= 2 and 0 <= nu <= beta):
        raise ValueError("supported indices: beta <= 2, nu <= beta")
    p = _p_table(beta)[nu]
    y, x = sp.symbols("y x", positive=True)
    return sp.expand(x**alpha * p.subs({_y: y, _s: x}, simultaneous=True))


def _reduce_operator(alpha, beta):
    """``int g(z/sqrt x) d_z^alpha d_x^beta {E[D delta_x(C0)] phi(z;0,x)}`` as
    ``{q: R(y)}`` meaning ``int g(y) R(y) phi(y) E[C0^{-q/2} D] dy``."""
    phi = sp.exp(-_y**2 / 2) / sp.sqrt(2 * sp.pi)
    out = {}
    for nu, p in _p_table(beta).items():
        if p == 0:
            continue
        Q = sp.Poly(sp.expand(_s**alpha * p), _s)
        for (q,), coeff in Q.terms():
            inner = sp.diff(phi, _y, alpha) * coeff
            term = (-1) ** nu * sp.diff(inner, _y, nu)
            out[q] = sp.expand(out.get(q, 0) + sp.simplify(term / phi))
    return out


def _operator_terms(poly):
    """Adjoint of a symbol part: ``(iu)^m (iv)^k`` becomes ``(-d_z)^m (-d_x)^k``."""
    return {(m, k): c * (-1) ** (m + k) for (m, k), c in poly.items()}


def reduction_constants():
    """Exact polynomials multiplying ``E[C0^{-1/2} C1]``, ``E[C0^{-5/2} C2]`` and
    ``E[C0^{-3/2} C3]`` in the studentized density, derived from the symbol
    terms through the Q-table. Returns ``{"m1": R1, "m2": R2, "m3": R3}`` with
    the labels checked (each term must produce a single moment power).
    """
    from .symbols import _BRACKET, _IU, poly_mul

    def collect(poly):
        total = {}
        for (m, k), c in _operator_terms(poly).items():
            for q, r in _reduce_operator(m, k).items():
                total[q] = sp.expand(total.get(q, 0) + c * r)
        return {q: r for q, r in total.items() if r != 0}

    c2 = collect(poly_mul(_IU, poly_mul(_BRACKET, _BRACKET)))
    c3 = collect(poly_mul(_IU, _BRACKET))
    # z (iu)^2 acting on phi(z;0,x): z phi = -x d_z phi, so the term is
    # -d_z^3 {E[C0 C1 delta] phi}: alpha = 3 with D = C0 C1
    c1 = {q - 2: -r for q, r in _reduce_operator(3, 0).items()}
    for label, d, want in (("m1", c1, 1), ("m2", c2, 5), ("m3", c3, 3)):
        if set(d) != {want}:
            raise AssertionError("%s reduced to moment powers %s, expected {%d}" % (label, sorted(d), want))
    return {"m1": c1[1], "m2": c2[5], "m3": c3[3]}


def heat_identity_check():
    """Symbolic check that the symbol form of the C2/C3 corrections equals the
    compact display ``-16 G'' d_z phi`` and ``4 G' d_z phi``."""
    G = sp.Function("G")(_x)
    phi = sp.exp(-_zz**2 / (2 * _x)) / sp.sqrt(2 * sp.pi * _x)
    f = G * phi
    op = lambda e: 2 * sp.diff(e, _zz, 2) - 4 * sp.diff(e, _x)
    p2 = -sp.diff(op(op(f)), _zz)
    p3 = -sp.diff(op(f), _zz)
    ok2 = sp.simplify(p2 - (-16 * sp.diff(G, _x, 2) * sp.diff(phi, _zz))) == 0
    ok3 = sp.simplify(p3 - (4 * sp.diff(G, _x) * sp.diff(phi, _zz))) == 0
    return bool(ok2 and ok3)
