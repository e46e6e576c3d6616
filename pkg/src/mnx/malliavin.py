"""Malliavin derivative flows of the simulated diffusion.

The discretized first-variation equation is linear, so along one path

    D_s X_t = sigma(X_s) P_t / P_s,    P_k = prod_{i<k} g_i,

where ``g_i`` is the one-step multiplier of the scheme (``1 + b' dt + sigma' dw``
for Euler, plus the Milstein correction). The second flow is linear with a
source term and reduces to cumulative sums as well:

    D_r D_s X_t = P_t [ Z_s / P_s + sigma(X_r) sigma(X_s) / (P_r P_s) (C_t - C_s) ],
    C_k = sum_{i<k} P_i^2 q_i / P_{i+1},

with ``Z_s = sigma'(X_s) D_r X_s`` the seed and ``q_i`` the source multiplier.
Storing ``P`` and ``C`` (O(nR) per path) is enough to produce any entry,
row or diagonal slice, so the full (nR)^2 matrix is only built on request.
"""

from dataclasses import dataclass

import numpy as np

from .paths import BrownianPath, DiffusionPath

__all__ = [
    "DerivativeFlow",
    "first_flow",
    "second_flow",
    "diagonal_second",
    "wiener_tail_integrals",
    "tail_trapezoid",
    "fine_states",
    "FULL_MATRIX_LIMIT",
]

FULL_MATRIX_LIMIT = 4096


def tail_trapezoid(values, h):
    """``T[k] = int_{t_k}^1 f dt`` by the trapezoid rule, for every fine node.

    ``values`` has shape ``(B, K+1)``; the result has the same shape with
    ``T[:, K] = 0``.
    """
    values = np.asarray(values, dtype=float)
    pieces = 0.5 * h * (values[..., :-1] + values[..., 1:])
    out = np.zeros_like(values)
    out[..., :-1] = np.cumsum(pieces[..., ::-1], axis=-1)[..., ::-1]
    return out


def fine_states(spec, path):
    """X at every fine node, from a diffusion path or (Wiener case) a Brownian one."""
    if isinstance(path, DiffusionPath):
        return path.x_values
    if isinstance(path, BrownianPath):
        if spec.case != "wiener":
            raise ValueError("a bare Brownian path only determines X in the Wiener case")
        return float(spec.initial) + path.cumulative
    raise TypeError("expected a path object, got %s" % type(path).__name__)


@dataclass
class DerivativeFlow:
    """Factorized first and second Malliavin derivative flows of a batch.

    ``prod`` is ``P`` and ``csum`` is ``C`` from the module docstring; ``sig``
    and ``sig1`` are sigma and sigma' along the path.
    """

    grid: object
    prod: np.ndarray
    sig: np.ndarray
    sig1: np.ndarray
    csum: np.ndarray = None
    scheme: str = "euler"

    @property
    def n_nodes(self):
        return self.prod.shape[-1]

    def first(self, s):
        """``D_s X_t`` for every fine ``t`` (zero where ``t < s``); ``s`` is a
        fine index. Shape ``(B, nR+1)``."""
        s = int(s)
        out = self.sig[:, s : s + 1] * self.prod / self.prod[:, s : s + 1]
        out[:, :s] = 0.0
        return out

    def first_matrix(self):
        """Full lower-triangular array ``D[b, s, t]``; small grids only."""
        K = self.n_nodes - 1
        if K > FULL_MATRIX_LIMIT:
            raise MemoryError("full first-flow matrix needs nR <= %d (got %d)" % (FULL_MATRIX_LIMIT, K))
        ratio = self.prod[:, None, :] / self.prod[:, :, None]
        mat = self.sig[:, :, None] * ratio
        mat *= np.tri(K + 1, K + 1, 0).T[None]
        return mat

    def _need_second(self):
        if self.csum is None:
            raise ValueError("second-order flow not computed; call second_flow first")

    def second(self, r, s):
        """``D_r D_s X_t`` for ``r <= s`` (fine indices), all ``t``."""
        self._need_second()
        r, s = int(r), int(s)
        if r > s:
            raise ValueError("second flow is defined here for r <= s only")
        P, C = self.prod, self.csum
        d_r_at_s = self.sig[:, r] * P[:, s] / P[:, r]
        seed = self.sig1[:, s] * d_r_at_s
        src = self.sig[:, r] * self.sig[:, s] / (P[:, r] * P[:, s])
        out = P * (seed / P[:, s])[:, None] + P * src[:, None] * (C - C[:, s : s + 1])
        out[:, :s] = 0.0
        return out

    def diagonal(self, s):
        """``D_s D_s X_t``, seeded with ``sigma'(X_s) sigma(X_s)``."""
        return self.second(s, s)


def _multipliers(spec, x, dw, dt, scheme):
    """One-step multipliers ``g`` (first flow) and source factors ``q``."""
    xl = x[:, :-1]
    g = 1.0 + spec.drift_d1(xl) * dt + spec.diffusion_d1(xl) * dw
    if scheme == "milstein":
        s, s1, s2 = spec.diffusion(xl), spec.diffusion_d1(xl), spec.diffusion_d2(xl)
        g = g + 0.5 * (s * s2 + s1 * s1) * (dw * dw - dt)
    return g


def _source(spec, x, dw, dt, scheme):
    xl = x[:, :-1]
    q = spec.drift_d2(xl) * dt + spec.diffusion_d2(xl) * dw
    if scheme == "milstein":
        if spec.diffusion_d3 is None:
            raise ValueError("the Milstein second flow needs the diffusion_d3 handle")
        s, s1, s2 = spec.diffusion(xl), spec.diffusion_d1(xl), spec.diffusion_d2(xl)
        q = q + 0.5 * (s * spec.diffusion_d3(xl) + 3.0 * s1 * s2) * (dw * dw - dt)
    return q


def _scheme_of(dpath, scheme):
    if scheme is not None:
        return scheme
    return getattr(dpath, "scheme", "euler")


def first_flow(spec, dpath, path, grid, scheme=None):
    """First-derivative flow ``D_s X_t`` for all fine ``s, t``, in factorized form.

    ``scheme`` defaults to the scheme that produced ``dpath``.
    """
    scheme = _scheme_of(dpath, scheme)
    x = fine_states(spec, dpath)
    dw = path.fine_increments
    g = _multipliers(spec, x, dw, grid.fine_step, scheme)
    P = np.ones_like(x)
    np.cumprod(g, axis=-1, out=P[:, 1:])
    if not np.all(np.isfinite(P)) or np.any(P == 0):
        raise FloatingPointError("first-flow multipliers vanished or overflowed")
    return DerivativeFlow(grid, P, spec.diffusion(x), spec.diffusion_d1(x), None, scheme)


def second_flow(spec, dpath, path, first, grid, pairs=None):
    """Add the second-order flow to ``first`` and, if ``pairs`` of fine
    indices ``(r, s)`` with ``r <= s`` are given, return ``D_r D_s X`` rows
    for them as an array of shape ``(len(pairs), B, nR+1)``.
    """
    x = fine_states(spec, dpath)
    dw = path.fine_increments
    q = _source(spec, x, dw, grid.fine_step, first.scheme)
    P = first.prod
    C = np.zeros_like(P)
    np.cumsum(P[:, :-1] ** 2 * q / P[:, 1:], axis=-1, out=C[:, 1:])
    first.csum = C
    if pairs is None:
        return first
    return np.stack([first.second(r, s) for r, s in pairs])


def diagonal_second(flow, s):
    return flow.diagonal(s)


def wiener_tail_integrals(spec, path, grid, t=None):
    """``(int_t^1 a a'(w) dv, int_t^1 (a a'' + a'^2)(w) dv)`` by the fine-grid
    trapezoid rule.

    With ``t=None`` both tails are returned at every fine node, shape
    ``(B, nR+1)``; otherwise ``t`` is snapped to the fine grid.
    """
    if spec.case != "wiener":
        raise ValueError("tail integrals in this form apply to the Wiener case")
    x = fine_states(spec, path)
    a, a1, a2 = spec.a(x), spec.a_d1(x), spec.a_d2(x)
    h = grid.fine_step
    t1 = tail_trapezoid(a * a1, h)
    t2 = tail_trapezoid(a * a2 + a1 * a1, h)
    if t is None:
        return t1, t2
    k = int(round(float(t) * grid.n_fine))
    if not 0 <= k <= grid.n_fine:
        raise ValueError("t must lie in [0, 1]")
    return t1[:, k], t2[:, k]
