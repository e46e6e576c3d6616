"""Per-path statistics: the quadratic form, its limit, the normalized error,
the leading martingale, the reference variable and the second-order remainder.

Inputs are batched paths from :mod:`mnx.paths`; every function returns one
value per row.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .paths import BrownianPath, DiffusionPath, iterated_integrals

__all__ = [
    "StatisticSample",
    "quadratic_form_un",
    "limit_u_infinity",
    "error_statistic_zn",
    "martingale_m1n",
    "reference_fn",
    "remainder_nn",
    "discrete_bracket",
    "compute_statistics",
]


@dataclass
class StatisticSample:
    """One row per replication. ``w_n`` is the zero drift-of-martingale part,
    kept only so that ``z_n = m1n + w_n + n_n / sqrt(n) + o`` reads naturally."""

    z_n: np.ndarray
    m1n: np.ndarray
    f_n: np.ndarray
    u_n: np.ndarray
    u_inf: np.ndarray
    n_n: Optional[np.ndarray] = None

    @property
    def w_n(self):
        return np.zeros_like(self.z_n)

    @property
    def studentized(self):
        return self.m1n / np.sqrt(self.f_n)


def _frozen_and_dw(spec, path):
    """Left-point states X_{t_{j-1}} and coarse Brownian increments."""
    if isinstance(path, DiffusionPath):
        return path.frozen_coarse, path.driver.coarse_increments
    if isinstance(path, BrownianPath):
        if spec.case != "wiener":
            raise ValueError("a bare Brownian path only determines X in the Wiener case")
        x0 = float(spec.initial) if not hasattr(spec.initial, "sample") else 0.0
        return x0 + path.coarse_values[:, :-1], path.coarse_increments
    raise TypeError("expected a BrownianPath or DiffusionPath, got %s" % type(path).__name__)


def quadratic_form_un(spec, dpath, grid):
    """``sum_j c(X_{t_{j-1}}) (Delta_j X)^2`` over coarse intervals.

    >>> import numpy as np
    >>> from mnx.model import preset
    >>> from mnx.paths import build_grid
    >>> class P:  # minimal stand-in for a path
    ...     frozen_coarse = np.zeros((1, 4))
    ...     coarse_increments = np.array([[0.1, -0.2, 0.3, 0.05]])
    >>> round(float(quadratic_form_un(preset("wiener-const"), P(), build_grid(4, 1))[0]), 12)
    0.1425
    """
    x = dpath.frozen_coarse
    dx = dpath.coarse_increments
    return np.sum(spec.kernel_weight(x) * dx * dx, axis=-1)


def limit_u_infinity(spec, dpath, grid, rule="left"):
    """Fine-grid quadrature of ``int_0^1 c(X) sigma(X)^2 dt``.

    ``rule="left"`` is the left Riemann sum; ``rule="trapezoid"`` is offered
    for cross-checks.
    """
    a = spec.a(dpath.x_values)
    h = grid.fine_step
    if rule == "left":
        return h * np.sum(a[:, :-1], axis=-1)
    if rule == "trapezoid":
        return h * (np.sum(a, axis=-1) - 0.5 * (a[:, 0] + a[:, -1]))
    raise ValueError("rule must be 'left' or 'trapezoid'")


def error_statistic_zn(u_n, u_inf, n):
    return np.sqrt(n) * (np.asarray(u_n) - np.asarray(u_inf))


def martingale_m1n(spec, path, grid, form="hermite"):
    """Leading martingale at t = 1.

    ``form="hermite"`` evaluates ``n^{-1/2} sum a_j ((sqrt(n) dw_j)^2 - 1)``;
    ``form="double"`` evaluates ``sqrt(n) sum 2 a_j I11_j`` from the iterated
    integrals. Both agree to rounding.
    """
    x, dw = _frozen_and_dw(spec, path)
    n = grid.n
    a = spec.a(x)
    if form == "hermite":
        return np.sum(a * (n * dw * dw - 1.0), axis=-1) / np.sqrt(n)
    if form == "double":
        i11, _ = iterated_integrals(dw, grid)
        return np.sqrt(n) * np.sum(2.0 * a * i11, axis=-1)
    raise ValueError("form must be 'hermite' or 'double'")


def reference_fn(spec, path, grid):
    """``F_n``: ``(2/n) sum a^2`` in the Wiener case, ``(1/n) sum beta`` otherwise."""
    x, _ = _frozen_and_dw(spec, path)
    if spec.case == "wiener":
        return 2.0 * np.mean(spec.a(x) ** 2, axis=-1)
    return np.mean(spec.reference(x), axis=-1)


def discrete_bracket(spec, path, grid, t=1.0):
    """``(2/n) sum_{j: t_j <= t} a(X_{t_{j-1}})^2``."""
    x, _ = _frozen_and_dw(spec, path)
    j_max = int(np.floor(t * grid.n + 1e-9))
    a = spec.a(x[..., :j_max])
    return 2.0 * np.sum(a * a, axis=-1) / grid.n


def remainder_nn(spec, path, blocks, grid):
    """Second-order remainder ``N_n`` with the vanishing term dropped.

    Interval integrals come from the exact block pair ``(dw_j, J_j)``:
    the triple integral is ``I111``, ``int (t - t_{j-1}) dw`` is ``J_j`` and
    ``int int dw ds`` is ``dt dw_j - J_j``.
    """
    needed = ("drift_d1", "drift_d2", "diffusion_d1", "diffusion_d2", "kernel_weight_d1", "kernel_weight_d2")
    missing = [h for h in needed if getattr(spec, h, None) is None]
    if missing:
        raise ValueError("remainder_nn needs derivative handles: %s" % ", ".join(missing))
    x, _ = _frozen_and_dw(spec, path)
    n = grid.n
    dt = grid.coarse_step
    dw, J = blocks.increments, blocks.areas
    _, i111 = iterated_integrals(dw, grid)

    c, b, s = spec.kernel_weight(x), spec.drift(x), spec.diffusion(x)
    s1 = spec.sigma_ito1(x)
    c1, c0 = spec.kernel_ito1(x), spec.kernel_ito0(x)
    b1 = spec.drift_ito1(x)

    css1 = c * s * s1
    terms = (
        6.0 * n * css1 * i111
        + 2.0 * c * b * s * dw
        + 2.0 * n * css1 * J
        + (c * b * b + c * s * b1) / n
        - n * c1 * s * s * (dt * dw - J)
        - 0.5 * c0 * s * s / n
        - c1 * s * s1 / n
    )
    return np.sum(terms, axis=-1)


def compute_statistics(spec, dpath, grid, with_remainder=False, u_inf_rule="left"):
    """All per-path statistics of a batch of diffusion paths."""
    u_n = quadratic_form_un(spec, dpath, grid)
    u_inf = limit_u_infinity(spec, dpath, grid, rule=u_inf_rule)
    n_n = remainder_nn(spec, dpath, dpath.driver.blocks, grid) if with_remainder else None
    return StatisticSample(
        z_n=error_statistic_zn(u_n, u_inf, grid.n),
        m1n=martingale_m1n(spec, dpath, grid),
        f_n=reference_fn(spec, dpath, grid),
        u_n=u_n,
        u_inf=u_inf,
        n_n=n_n,
    )
