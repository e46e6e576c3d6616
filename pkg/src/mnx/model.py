"""Model specification: coefficient functions of the diffusion
``dX = b(X) dt + sigma(X) dw``, the kernel weight ``c`` of the quadratic form
and the reference function ``beta``, each with analytic derivatives.

All handles must accept numpy arrays and act elementwise.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ModelError",
    "InitialLaw",
    "ModelSpec",
    "ValidationReport",
    "validate_model",
    "fd_check_derivatives",
    "preset",
    "PRESETS",
]

FD_STEP = 1e-5
FD_TOL = 1e-5


class ModelError(ValueError):
    """Raised for models that cannot be evaluated or are degenerate."""


def _const(value):
    value = float(value)

    def f(x):
        return np.zeros(np.shape(x)) + value

    return f


@dataclass(frozen=True)
class InitialLaw:
    """Random initial condition with a declared compact support.

    ``sampler(generator, size)`` must return ``size`` draws inside ``support``.
    """

    sampler: Callable
    support: tuple

    def sample(self, generator, size):
        x = np.asarray(self.sampler(generator, size), dtype=float)
        lo, hi = self.support
        if np.any((x < lo) | (x > hi)):
            raise ModelError("initial sampler left its declared support %r" % (self.support,))
        return x


@dataclass(frozen=True)
class ModelSpec:
    """Coefficient functions and their first two derivatives.

    ``case`` is ``"wiener"`` when the model is the pure Wiener quadratic form
    (b = 0, sigma = 1, so a = c and X = X0 + w) and ``"diffusion"`` otherwise.
    ``hormander_asserted`` records the user's claim that the Lie-bracket
    nondegeneracy condition holds; it is never checked numerically.
    """

    drift: Callable
    drift_d1: Callable
    drift_d2: Callable
    diffusion: Callable
    diffusion_d1: Callable
    diffusion_d2: Callable
    kernel_weight: Callable
    kernel_weight_d1: Callable
    kernel_weight_d2: Callable
    reference: Callable
    reference_d1: Callable
    reference_d2: Callable
    initial: object = 0.0
    scan_range: Optional[tuple] = None
    diffusion_d3: Optional[Callable] = None
    case: str = "diffusion"
    name: str = "custom"
    params: dict = field(default_factory=dict)
    hormander_asserted: bool = False

    def __post_init__(self):
        if self.case not in ("wiener", "diffusion"):
            raise ModelError("case must be 'wiener' or 'diffusion', got %r" % self.case)
        if self.scan_range is None:
            if isinstance(self.initial, InitialLaw):
                lo, hi = self.initial.support
            else:
                lo = hi = float(self.initial)
            object.__setattr__(self, "scan_range", (lo - 5.0, hi + 5.0))
        lo, hi = self.scan_range
        if not lo < hi:
            raise ModelError("scan_range must be an increasing interval")

    # a = c sigma^2 and alpha = a^2, with derivatives

    def a(self, x):
        return self.kernel_weight(x) * self.diffusion(x) ** 2

    def a_d1(self, x):
        s = self.diffusion(x)
        return self.kernel_weight_d1(x) * s**2 + 2 * self.kernel_weight(x) * s * self.diffusion_d1(x)

    def a_d2(self, x):
        s, s1, s2 = self.diffusion(x), self.diffusion_d1(x), self.diffusion_d2(x)
        c, c1, c2 = self.kernel_weight(x), self.kernel_weight_d1(x), self.kernel_weight_d2(x)
        return c2 * s**2 + 4 * c1 * s * s1 + 2 * c * (s1**2 + s * s2)

    def alpha(self, x):
        return self.a(x) ** 2

    def alpha_d1(self, x):
        return 2 * self.a(x) * self.a_d1(x)

    def alpha_d2(self, x):
        return 2 * (self.a_d1(x) ** 2 + self.a(x) * self.a_d2(x))

    # Ito coefficients f[1] = f' sigma and f[0] = f' b + f'' sigma^2 / 2

    def _ito1(self, d1, x):
        return d1(x) * self.diffusion(x)

    def _ito0(self, d1, d2, x):
        return d1(x) * self.drift(x) + 0.5 * d2(x) * self.diffusion(x) ** 2

    def sigma_ito1(self, x):
        return self._ito1(self.diffusion_d1, x)

    def sigma_ito0(self, x):
        return self._ito0(self.diffusion_d1, self.diffusion_d2, x)

    def kernel_ito1(self, x):
        return self._ito1(self.kernel_weight_d1, x)

    def kernel_ito0(self, x):
        return self._ito0(self.kernel_weight_d1, self.kernel_weight_d2, x)

    def drift_ito1(self, x):
        return self._ito1(self.drift_d1, x)

    def drift_ito0(self, x):
        return self._ito0(self.drift_d1, self.drift_d2, x)

    def initial_values(self, stream_list):
        """X0 for each stream (point mass or a draw from the side stream)."""
        if isinstance(self.initial, InitialLaw):
            return np.array([self.initial.sample(st.generator(sub=1), 1)[0] for st in stream_list])
        return np.full(len(stream_list), float(self.initial))

    def derivative_pairs(self):
        """``(name, f, f')`` for every supplied derivative handle."""
        pairs = [
            ("drift_d1", self.drift, self.drift_d1),
            ("drift_d2", self.drift_d1, self.drift_d2),
            ("diffusion_d1", self.diffusion, self.diffusion_d1),
            ("diffusion_d2", self.diffusion_d1, self.diffusion_d2),
            ("kernel_weight_d1", self.kernel_weight, self.kernel_weight_d1),
            ("kernel_weight_d2", self.kernel_weight_d1, self.kernel_weight_d2),
            ("reference_d1", self.reference, self.reference_d1),
            ("reference_d2", self.reference_d1, self.reference_d2),
        ]
        if self.diffusion_d3 is not None:
            pairs.append(("diffusion_d3", self.diffusion_d2, self.diffusion_d3))
        return pairs


@dataclass
class ValidationReport:
    passed: bool
    min_abs_a: float
    worst_derivative: str
    worst_derivative_error: float
    derivative_errors: dict
    a_sign_constant: bool
    hormander_asserted: bool
    messages: list

    def as_dict(self):
        return {
            "passed": self.passed,
            "min_abs_a": self.min_abs_a,
            "worst_derivative": self.worst_derivative,
            "worst_derivative_error": self.worst_derivative_error,
            "derivative_errors": dict(self.derivative_errors),
            "a_sign_constant": self.a_sign_constant,
            "hormander_asserted": self.hormander_asserted,
            "messages": list(self.messages),
        }


def fd_check_derivatives(spec, points, step=FD_STEP):
    """Max over ``points`` of ``|f'(x) - central difference| / (1 + |f'(x)|)``
    for every derivative handle of ``spec``.
    """
    x = np.asarray(points, dtype=float)
    errors = {}
    for name, f, df in spec.derivative_pairs():
        fd = (f(x + step) - f(x - step)) / (2 * step)
        d = df(x)
        errors[name] = float(np.max(np.abs(d - fd) / (1 + np.abs(d))))
    return errors


def validate_model(spec, n_scan=1001, n_fd=10):
    """Numerical guards: finite coefficients, ``min |a| > 0`` over the scan
    range and derivative handles consistent with finite differences.

    Raises ModelError with the offending x when a coefficient is not finite.
    """
    lo, hi = spec.scan_range
    xs = np.linspace(lo, hi, n_scan)
    handles = [("drift", spec.drift), ("diffusion", spec.diffusion), ("kernel_weight", spec.kernel_weight),
               ("reference", spec.reference)]
    handles += [(name, df) for name, _, df in spec.derivative_pairs()]
    for name, f in handles:
        vals = np.asarray(f(xs), dtype=float)
        bad = ~np.isfinite(vals)
        if bad.any():
            raise ModelError("%s is not finite at x = %r" % (name, float(xs[np.argmax(bad)])))
    a = spec.a(xs)
    if not np.all(np.isfinite(a)):
        raise ModelError("a(x) is not finite at x = %r" % float(xs[np.argmax(~np.isfinite(a))]))
    min_abs_a = float(np.min(np.abs(a)))
    errors = fd_check_derivatives(spec, np.linspace(lo, hi, n_fd))
    worst = max(errors, key=errors.get)
    messages = []
    ok_a = min_abs_a > 0
    if not ok_a:
        messages.append("a(x) vanishes on the scan range (min |a| = %g)" % min_abs_a)
    ok_fd = errors[worst] <= FD_TOL
    if not ok_fd:
        messages.append("%s disagrees with finite differences (%.3g)" % (worst, errors[worst]))
    if not spec.hormander_asserted:
        messages.append("Hormander-type nondegeneracy not asserted (not checked numerically)")
    return ValidationReport(
        passed=bool(ok_a and ok_fd),
        min_abs_a=min_abs_a,
        worst_derivative=worst,
        worst_derivative_error=errors[worst],
        derivative_errors=errors,
        a_sign_constant=bool(np.all(a > 0) or np.all(a < 0)),
        hormander_asserted=spec.hormander_asserted,
        messages=messages,
    )


# presets

def _reference_handles(kind, spec_a):
    if kind == "variance":
        # beta = 2 a^2, so F is the conditional asymptotic variance
        return (
            lambda x: 2 * spec_a[0](x) ** 2,
            lambda x: 4 * spec_a[0](x) * spec_a[1](x),
            lambda x: 4 * (spec_a[1](x) ** 2 + spec_a[0](x) * spec_a[2](x)),
        )
    if kind == "square":
        return (lambda x: np.asarray(x, dtype=float) ** 2, lambda x: 2 * np.asarray(x, dtype=float),
                _const(2.0))
    if kind == "identity":
        return (lambda x: np.asarray(x, dtype=float) + 0.0, _const(1.0), _const(0.0))
    raise ModelError("unknown reference kind %r" % kind)


def _wiener(name, c, c1, c2, x0, reference, params):
    zero = _const(0.0)
    one = _const(1.0)
    beta = _reference_handles(reference, (c, c1, c2))
    return ModelSpec(
        drift=zero, drift_d1=zero, drift_d2=zero,
        diffusion=one, diffusion_d1=zero, diffusion_d2=zero, diffusion_d3=zero,
        kernel_weight=c, kernel_weight_d1=c1, kernel_weight_d2=c2,
        reference=beta[0], reference_d1=beta[1], reference_d2=beta[2],
        initial=float(x0), case="wiener", name=name, params=params, hormander_asserted=True,
    )


def _wiener_const(level=1.0, x0=0.0, reference="variance"):
    return _wiener("wiener-const", _const(level), _const(0.0), _const(0.0), x0, reference,
                   {"level": level, "x0": x0, "reference": reference})


def _wiener_sin(base=2.0, amp=1.0, x0=0.0, reference="variance"):
    c = lambda x: base + amp * np.sin(x)
    c1 = lambda x: amp * np.cos(x)
    c2 = lambda x: -amp * np.sin(x)
    return _wiener("wiener-sin", c, c1, c2, x0, reference,
                   {"base": base, "amp": amp, "x0": x0, "reference": reference})


def _gbm(theta=0.5, x0=1.0, reference="variance"):
    zero = _const(0.0)
    one = _const(1.0)
    sig = lambda x: theta * np.asarray(x, dtype=float)
    a = (lambda x: theta**2 * np.asarray(x, dtype=float) ** 2,
         lambda x: 2 * theta**2 * np.asarray(x, dtype=float),
         _const(2 * theta**2))
    beta = _reference_handles(reference, a)
    return ModelSpec(
        drift=zero, drift_d1=zero, drift_d2=zero,
        diffusion=sig, diffusion_d1=_const(theta), diffusion_d2=zero, diffusion_d3=zero,
        kernel_weight=one, kernel_weight_d1=zero, kernel_weight_d2=zero,
        reference=beta[0], reference_d1=beta[1], reference_d2=beta[2],
        initial=float(x0), scan_range=(0.1 * x0, 10.0 * x0), case="diffusion", name="gbm",
        params={"theta": theta, "x0": x0, "reference": reference},
    )


def _ou(kappa=1.0, sigma=1.0, x0=0.0, reference="square"):
    zero = _const(0.0)
    a = (_const(sigma**2), zero, zero)
    beta = _reference_handles(reference, a)
    return ModelSpec(
        drift=lambda x: -kappa * np.asarray(x, dtype=float), drift_d1=_const(-kappa), drift_d2=zero,
        diffusion=_const(sigma), diffusion_d1=zero, diffusion_d2=zero, diffusion_d3=zero,
        kernel_weight=_const(1.0), kernel_weight_d1=zero, kernel_weight_d2=zero,
        reference=beta[0], reference_d1=beta[1], reference_d2=beta[2],
        initial=float(x0), case="diffusion", name="ou",
        params={"kappa": kappa, "sigma": sigma, "x0": x0, "reference": reference},
    )


PRESETS = {
    "wiener-const": _wiener_const,
    "wiener-sin": _wiener_sin,
    "gbm": _gbm,
    "ou": _ou,
}


def preset(name, **overrides):
    """Build a named preset model, applying parameter overrides.

    >>> float(preset("ou", kappa=2.0).drift(1.0))
    -2.0
    """
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ModelError("unknown model preset %r (known: %s)" % (name, ", ".join(PRESETS)))
    import inspect

    allowed = set(inspect.signature(factory).parameters)
    unknown = set(overrides) - allowed
    if unknown:
        raise ModelError("unknown parameter(s) for %s: %s" % (name, ", ".join(sorted(unknown))))
    return factory(**overrides)
