"""Brownian and diffusion paths on a coarse/fine grid.

Every array carries a leading replication axis, so a batch of ``B`` paths
shares one vectorized time loop.

Brownian paths are built hierarchically from pairs ``(dw, J)`` where
``J = int (s - t_start) dw_s`` over each step. The first ``2n`` normals of a
stream give the coarse pairs; further normals refine each pair into ``R``
fine pairs by exact Gaussian conditioning. When ``R`` is a power of two the
refinement is dyadic, so the path at ``(n, 2R)`` refines the path at
``(n, R)`` rather than resampling it.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import rng

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "DiffusionPath",
    "BlockGaussians",
    "build_grid",
    "sample_brownian",
    "sample_block_pair",
    "euler_maruyama",
    "milstein",
    "simulate_diffusion",
    "iterated_integrals",
    "SCHEMES",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform coarse grid ``t_j = j/n`` with ``R`` fine steps per interval."""

    n: int
    R: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n must be an integer >= 2, got %r" % (self.n,))
        if int(self.R) != self.R or self.R < 1:
            raise ValueError("R must be an integer >= 1, got %r" % (self.R,))

    @property
    def coarse_times(self):
        return np.arange(self.n + 1) / self.n

    @property
    def fine_times(self):
        return np.arange(self.n * self.R + 1) / (self.n * self.R)

    @property
    def fine_step(self):
        return 1.0 / (self.n * self.R)

    @property
    def coarse_step(self):
        return 1.0 / self.n

    @property
    def n_fine(self):
        return self.n * self.R

    @property
    def r_n(self):
        return self.n ** -0.5


def build_grid(n, R=32):
    """Coarse/fine grid.

    >>> build_grid(4, 2).fine_step
    0.125
    """
    return TimeGrid(n, R)


@dataclass
class BlockGaussians:
    """Coarse-interval pairs ``(dw_j, J_j)``; arrays of shape ``(B, n)``."""

    increments: np.ndarray
    areas: np.ndarray
    step: float


@dataclass
class BrownianPath:
    grid: TimeGrid
    fine_increments: np.ndarray
    fine_areas: np.ndarray
    cumulative: np.ndarray
    seed_id: tuple
    blocks: BlockGaussians

    @property
    def batch(self):
        return self.fine_increments.shape[0]

    @property
    def coarse_increments(self):
        return self.blocks.increments

    @property
    def coarse_values(self):
        return self.cumulative[:, :: self.grid.R]


@dataclass
class DiffusionPath:
    grid: TimeGrid
    x_values: np.ndarray
    driver: BrownianPath
    abort_step: np.ndarray
    scheme: str

    @property
    def coarse_values(self):
        return self.x_values[:, :: self.grid.R]

    @property
    def frozen_coarse(self):
        return self.coarse_values[:, :-1]

    @property
    def coarse_increments(self):
        return np.diff(self.coarse_values, axis=1)

    @property
    def aborted(self):
        return self.abort_step >= 0


# Gaussian pair machinery, in standardized coordinates dw = sqrt(h) a,
# J = h**1.5 b, where (a, b) has covariance [[1, 1/2], [1/2, 1/3]].

_L = np.array([[1.0, 0.0], [0.5, 12 ** -0.5]])


def _pairs(xi):
    """Map standard normals ``(..., 2)`` to standardized pairs ``(a, b)``."""
    return xi @ _L.T


@lru_cache(maxsize=None)
def _split_operator(R):
    """Conditioning operator for splitting one standardized pair into ``R``.

    Unconditional sub-pairs ``(a_k, b_k)`` are i.i.d.; the parent pair is
    recovered by ``sum a_k = sqrt(R) a`` and ``sum (b_k + k a_k) = R**1.5 b``.
    Returns ``(A, K)`` with ``y_cond = y + K (target - A y)``.
    """
    S1 = _L @ _L.T
    S = np.kron(np.eye(R), S1)
    A = np.zeros((2, 2 * R))
    A[0, 0::2] = 1.0
    A[1, 0::2] = np.arange(R)
    A[1, 1::2] = 1.0
    K = S @ A.T @ np.linalg.inv(A @ S @ A.T)
    return A, K


def _split(a, b, R, xi):
    """Refine standardized pairs ``a, b`` of shape ``(B, m)`` into ``(B, m*R)``.

    ``xi`` holds ``2*m*R`` normals per row.
    """
    B, m = a.shape
    A, K = _split_operator(R)
    y = _pairs(xi.reshape(B, m, R, 2)).reshape(B, m, 2 * R)
    target = np.stack([np.sqrt(R) * a, R**1.5 * b], axis=-1)
    y = y + (target - y @ A.T) @ K.T
    y = y.reshape(B, m * R, 2)
    # children come out standardized in their own step h/R
    return y[..., 0], y[..., 1]


def _levels(R):
    """Split factors applied in sequence: dyadic when R is a power of two."""
    if R == 1:
        return []
    if R & (R - 1) == 0:
        return [2] * (R.bit_length() - 1)
    return [R]


def _normal_count(n, R):
    count, m = 2 * n, n
    for f in _levels(R):
        count += 2 * m * f
        m *= f
    return count


def _as_list(stream):
    if isinstance(stream, rng.Stream):
        return [stream]
    return list(stream)


def sample_block_pair(grid, stream):
    """Coarse pairs ``(dw_j, J_j)`` from the first ``2n`` normals of each stream.

    These are exactly the coarse increments of :func:`sample_brownian` on the
    same streams (coupled mode).
    """
    streams = _as_list(stream)
    xi = rng.normals(streams, 2 * grid.n)
    ab = _pairs(xi.reshape(len(streams), grid.n, 2))
    h = grid.coarse_step
    return BlockGaussians(np.sqrt(h) * ab[..., 0], h**1.5 * ab[..., 1], h)


def sample_brownian(grid, stream):
    """Brownian paths on the fine grid, one row per stream."""
    streams = _as_list(stream)
    B, n = len(streams), grid.n
    xi = rng.normals(streams, _normal_count(n, grid.R))
    ab = _pairs(xi[:, : 2 * n].reshape(B, n, 2))
    a, b = ab[..., 0], ab[..., 1]
    h = grid.coarse_step
    blocks = BlockGaussians(np.sqrt(h) * a, h**1.5 * b, h)
    pos, m = 2 * n, n
    for f in _levels(grid.R):
        a, b = _split(a, b, f, xi[:, pos : pos + 2 * m * f])
        pos += 2 * m * f
        m *= f
    hf = grid.fine_step
    inc = np.sqrt(hf) * a
    cumulative = np.zeros((B, grid.n_fine + 1))
    np.cumsum(inc, axis=1, out=cumulative[:, 1:])
    return BrownianPath(grid, inc, hf**1.5 * b, cumulative, tuple(streams), blocks)


def iterated_integrals(path, grid, j=None):
    """Exact ``(I11, I111)`` on coarse interval ``j`` (0-based; all when None).

    Computed from the coarse increment via ``I11 = (dw^2 - dt)/2`` and
    ``I111 = (dw^3 - 3 dt dw)/6``. ``path`` may also be a plain array of
    coarse increments.
    """
    dw = path.coarse_increments if hasattr(path, "coarse_increments") else np.asarray(path)
    if j is not None:
        dw = dw[..., j]
    dt = grid.coarse_step
    return 0.5 * (dw * dw - dt), (dw**3 - 3 * dt * dw) / 6.0


def _run_scheme(spec, path, grid, x0, step_fn, scheme):
    B, nf = path.fine_increments.shape
    x = np.empty((B, nf + 1))
    x[:, 0] = x0
    abort = np.full(B, -1, dtype=np.int64)
    dt = grid.fine_step
    cur = x[:, 0].copy()
    for k in range(nf):
        cur = step_fn(cur, path.fine_increments[:, k], dt)
        bad = ~np.isfinite(cur)
        if bad.any():
            fresh = bad & (abort < 0)
            abort[fresh] = k + 1
            cur = np.where(bad, np.nan, cur)
        x[:, k + 1] = cur
    return DiffusionPath(grid, x, path, abort, scheme)


def _initial(spec, path, x0):
    if x0 is not None:
        return np.broadcast_to(np.asarray(x0, dtype=float), (path.batch,)).copy()
    return spec.initial_values(path.seed_id)


def euler_maruyama(spec, path, grid, x0=None):
    """Explicit Euler scheme ``X += b dt + sigma dw`` on the fine grid.

    Non-finite states abort the replication; ``abort_step`` records the
    first offending fine index and the rest of the row is NaN.
    """
    x0 = _initial(spec, path, x0)
    if spec.case == "wiener":
        x = x0[:, None] + path.cumulative
        return DiffusionPath(grid, x, path, np.full(path.batch, -1, dtype=np.int64), "euler")

    def step(x, dw, dt):
        return x + spec.drift(x) * dt + spec.diffusion(x) * dw

    return _run_scheme(spec, path, grid, x0, step, "euler")


def milstein(spec, path, grid, x0=None):
    """Milstein scheme with a trapezoidal (Heun) drift.

    ``X += (b(X) + b(X_pred)) dt/2 + sigma dw + sigma sigma' (dw^2 - dt)/2``,
    with ``X_pred`` the Euler predictor. The trapezoidal drift removes the
    O(dt) bias of the frozen drift, which otherwise shows up in statistics
    scaled by ``n``.
    """
    x0 = _initial(spec, path, x0)
    if spec.case == "wiener":
        x = x0[:, None] + path.cumulative
        return DiffusionPath(grid, x, path, np.full(path.batch, -1, dtype=np.int64), "milstein")

    def step(x, dw, dt):
        b0 = spec.drift(x)
        s = spec.diffusion(x)
        pred = x + b0 * dt + s * dw
        return x + 0.5 * (b0 + spec.drift(pred)) * dt + s * dw + 0.5 * s * spec.diffusion_d1(x) * (dw * dw - dt)

    return _run_scheme(spec, path, grid, x0, step, "milstein")


SCHEMES = {"euler": euler_maruyama, "milstein": milstein}


def simulate_diffusion(spec, path, grid, scheme="milstein", x0=None):
    try:
        fn = SCHEMES[scheme]
    except KeyError:
        raise ValueError("unknown scheme %r (known: %s)" % (scheme, ", ".join(SCHEMES)))
    return fn(spec, path, grid, x0=x0)
