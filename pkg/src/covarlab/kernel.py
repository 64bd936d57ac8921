"""Kernel functions, their increment kernels and singularity-aware integrals.

All kernels are of power-exponential type, ``g(x) = x**delta * exp(-lam*x)``
for ``x > 0`` and ``g(x) = 0`` otherwise. The exponential kernel is the
``delta = 0`` member and is kept as its own class because it is the
semimartingale baseline.

Integrals over ``(0, inf)`` are evaluated on graded panels
``[0, s0], [s0, 2 s0], [2 s0, 4 s0], ...`` where ``s0`` is the natural small
scale of the integrand (usually the lag). The first panel absorbs the
``s**p`` endpoint singularity through the substitution ``s = s0 * u**q``
with ``q = 1/(1+p)``. Beyond the tail horizon ``b + max(50/lam, 50)`` the
remainder is bounded analytically via the mean value theorem and added to
the reported error estimate.
"""

import math
import re
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DomainError, PreconditionError, QuadratureError

RTOL = 1e-8
_PANEL_RTOL = 1e-11
_PANEL_LIMIT = 200


@dataclass(frozen=True)
class _PowerExpKernel:
    """Shared machinery for ``x**delta * exp(-lam*x)``."""

    @property
    def index(self):
        """Power-law index of the kernel at zero."""
        return self.delta

    def scalar(self, x):
        """Evaluate at a single float (fast path used by quadrature)."""
        if x <= 0.0:
            return 0.0
        if self.delta == 0.0:
            return math.exp(-self.lam * x)
        return x ** self.delta * math.exp(-self.lam * x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        out[pos] = xp ** self.delta * np.exp(-self.lam * xp)
        return out if out.ndim else float(out)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        out[pos] = xp ** self.delta * np.exp(-self.lam * xp) * (self.delta / xp - self.lam)
        return out if out.ndim else float(out)

    @property
    def value_at_zero(self):
        """g(0+): 1 for the exponential kernel, 0 for delta > 0, inf for delta < 0."""
        if self.delta < 0:
            return math.inf
        return 1.0 if self.delta == 0 else 0.0

    @property
    def decreasing(self):
        return self.delta <= 0

    def tail_horizon(self):
        return self.b + max(50.0 / self.lam, 50.0)

    def l2_norm_sq(self):
        """Closed form of the squared L2 norm (used as a cross-check, not internally)."""
        a = 2 * self.delta + 1
        return special.gamma(a) / (2 * self.lam) ** a

    def sq_tail(self, x):
        """Closed form of the integral of g**2 over ``(x, inf)``."""
        a = 2 * self.delta + 1
        return special.gamma(a) * special.gammaincc(a, 2 * self.lam * x) / (2 * self.lam) ** a

    def deriv_sq_tail(self, x):
        """Upper bound on the integral of (g')**2 over ``(x, inf)``, valid for ``x >= b``."""
        return (abs(self.delta) / x + self.lam) ** 2 * self.sq_tail(x)

    def integral(self, lo, hi):
        """Integral of g over ``[lo, hi]`` by graded quadrature, ``0 <= lo < hi``."""
        if lo > 0:
            value, _ = _panel_quad(self.scalar, lo, hi)
            return value
        value, _ = graded_integral(self.scalar, hi, hi, min(self.delta, 0.0))
        return value

    def sq_integral(self, x):
        """Integral of g**2 over ``[0, x]`` by graded quadrature."""
        value, _ = graded_integral(lambda s: self.scalar(s) ** 2, x, x, min(2 * self.delta, 0.0))
        return value

    def cell_average(self, lo, hi):
        """Mean value of g over ``[lo, hi]``."""
        return self.integral(lo, hi) / (hi - lo)


@dataclass(frozen=True)
class GammaKernel(_PowerExpKernel):
    """Gamma kernel ``x**delta * exp(-lam*x)``.

    Parameters
    ----------
    delta : float
        Scaling parameter. Values in (-1/2, 0) or (0, 1/2) give
        non-semimartingale legs; construction accepts any ``delta > -1`` so
        that assumption audits can flag out-of-range requests.
    lam : float
        Exponential decay rate, ``lam > 0``.
    b : float, optional
        Threshold beyond which ``(g')**2`` is non-increasing. Defaults to 1
        for ``delta <= 0`` and to the inflection point ``(delta + sqrt(delta))/lam``
        rounded up to two decimals for ``delta > 0``.
    """

    delta: float
    lam: float
    b: float = field(default=None)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.delta > -1:
            raise ValueError(f"delta must exceed -1 for a locally integrable kernel, got {self.delta}")
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "lam", float(self.lam))
        if self.b is None:
            b = 1.0
            if self.delta > 0:
                b = math.ceil(self.inflection_point() * 100.0) / 100.0
            object.__setattr__(self, "b", b)
        elif self.b <= 0:
            raise ValueError("b must be positive")
        elif self.delta > 0 and self.b < self.inflection_point():
            raise ValueError("b must lie beyond the inflection point when delta > 0")

    def inflection_point(self):
        """Largest root of g'' (only meaningful for delta > 0)."""
        if self.delta <= 0:
            return 0.0
        return (self.delta + math.sqrt(self.delta)) / self.lam

    def spec(self):
        return f"gamma(delta={self.delta!r},lambda={self.lam!r})"


@dataclass(frozen=True)
class ExpKernel(_PowerExpKernel):
    """Exponential kernel ``exp(-lam*x)``, the semimartingale baseline."""

    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "lam", float(self.lam))

    delta = 0.0
    b = 1.0

    def spec(self):
        return f"exp(lambda={self.lam!r})"


@dataclass(frozen=True)
class KernelPair:
    """The two leg kernels ``(g1, g2)``."""

    k1: _PowerExpKernel
    k2: _PowerExpKernel

    def __getitem__(self, leg):
        if leg == 1:
            return self.k1
        if leg == 2:
            return self.k2
        raise IndexError(f"leg must be 1 or 2, got {leg}")

    @property
    def delta_sum(self):
        return self.k1.index + self.k2.index

    @property
    def lam_min(self):
        return min(self.k1.lam, self.k2.lam)

    def swapped(self):
        return KernelPair(self.k2, self.k1)

    def tail_horizon(self):
        return max(self.k1.tail_horizon(), self.k2.tail_horizon())


@dataclass(frozen=True)
class RVFit:
    """Log-log fit of a function sampled on probes decreasing to zero."""

    exponent: float
    slowly_varying_samples: tuple
    r_squared: float
    probes: tuple

    def to_dict(self):
        return {
            "exponent": self.exponent,
            "r_squared": self.r_squared,
            "probes": list(self.probes),
            "slowly_varying_samples": list(self.slowly_varying_samples),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["exponent"], tuple(d["slowly_varying_samples"]), d["r_squared"], tuple(d["probes"]))


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def _panel_quad(f, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=_PANEL_RTOL, limit=_PANEL_LIMIT)
    return value, err


def graded_integral(f, upper, scale, singular_exponent=0.0, rtol=RTOL):
    """Integrate ``f`` over ``[0, upper]`` on dyadically graded panels.

    Parameters
    ----------
    f : callable
        Scalar integrand, may behave like ``s**singular_exponent`` at 0.
    upper : float
        Finite upper limit.
    scale : float
        Width of the first panel.
    singular_exponent : float
        Leading power of ``f`` at zero; values in (-1, 0) trigger the
        regularising substitution on the first panel.

    Returns
    -------
    value, error : float
    """
    if upper <= 0:
        return 0.0, 0.0
    first = min(scale, upper)
    p = singular_exponent
    if p < 0:
        if p <= -1:
            raise QuadratureError(f"non-integrable singularity s**{p} at 0")
        q = 1.0 / (1.0 + p)

        def g(u):
            if u <= 0.0:
                return 0.0
            return f(first * u ** q) * first * q * u ** (q - 1.0)

        v0, e0 = _panel_quad(g, 0.0, 1.0)
    else:
        v0, e0 = _panel_quad(f, 0.0, first)
    values, errors = [v0], [e0]
    lo = first
    while lo < upper:
        hi = min(2.0 * lo, upper)
        v, e = _panel_quad(f, lo, hi)
        values.append(v)
        errors.append(e)
        lo = hi
    value = math.fsum(values)
    err = math.fsum(errors)
    scale_abs = math.fsum(abs(v) for v in values)
    if not (err <= rtol * scale_abs or err <= 1e-300):
        raise QuadratureError("graded quadrature did not converge", value, err)
    return value, err


def _finish(value, err, full_output):
    if not math.isfinite(value):
        raise QuadratureError("non-finite quadrature value", value, err)
    if err > RTOL * abs(value) and err > 1e-15:
        raise QuadratureError("error estimate exceeds tolerance", value, err)
    return (value, err) if full_output else value


# ---------------------------------------------------------------------------
# kernel operations
# ---------------------------------------------------------------------------

def eval_kernel(kernel, x):
    """Kernel value at ``x`` (0 for ``x <= 0``)."""
    return kernel(x)


def increment_kernel(kernel, delta_n, s):
    """Increment kernel: ``g(s)`` on ``(0, delta_n]``, ``g(s) - g(s - delta_n)`` beyond, 0 for ``s <= 0``."""
    if not delta_n > 0:
        raise PreconditionError("delta_n must be positive")
    s = np.asarray(s, dtype=float)
    out = np.where(s > delta_n, kernel(s) - kernel(s - delta_n), kernel(s))
    return out if out.ndim else float(out)


def check_decreasing(kernel, n_samples=512):
    """Sample the kernel on a log grid and report whether it is non-increasing."""
    x = np.logspace(-8, math.log10(kernel.tail_horizon()), n_samples)
    vals = kernel(x)
    return bool(np.all(np.diff(vals) <= 1e-15 * np.abs(vals[:-1])))


def squared_increment_integral(kernel, delta_n, upper=math.inf, full_output=False):
    """Integral of ``(g(s + delta_n) - g(s))**2`` over ``[0, upper]``.

    With ``upper = inf`` the integral is truncated at the tail horizon and
    the analytic remainder bound ``delta_n**2 * int (g')**2`` is added to the
    error estimate.
    """
    if delta_n < 0:
        raise PreconditionError("delta_n must be nonnegative")
    if not upper > 0:
        raise PreconditionError("upper must be positive")
    if delta_n == 0:
        return (0.0, 0.0) if full_output else 0.0
    g = kernel.scalar

    def f(s):
        d = g(s + delta_n) - g(s)
        return d * d

    p = 2 * min(kernel.index, 0.0)
    tail = 0.0
    if math.isinf(upper):
        upper = kernel.tail_horizon()
        tail = delta_n ** 2 * kernel.deriv_sq_tail(upper)
    value, err = graded_integral(f, upper, delta_n, p)
    return _finish(value, err + tail, full_output)


def scaling_factor(pair, delta_n, full_output=False, require_monotone=True):
    """Scaling factor ``c(delta_n)``: the L2 inner product of the two increment kernels.

    Parameters
    ----------
    pair : KernelPair
    delta_n : float
        Lag, must be nonnegative.
    full_output : bool
        Return ``(value, error_estimate)`` instead of the value.
    require_monotone : bool
        Raise :class:`PreconditionError` if either kernel fails the sampled
        monotonicity check. The integral itself is well defined without it.
    """
    if delta_n < 0:
        raise PreconditionError("delta_n must be nonnegative")
    if require_monotone:
        for leg, k in ((1, pair.k1), (2, pair.k2)):
            if not check_decreasing(k):
                raise PreconditionError(f"kernel of leg {leg} ({k.spec()}) is not decreasing")
    if delta_n == 0:
        return (0.0, 0.0) if full_output else 0.0
    g1, g2 = pair.k1.scalar, pair.k2.scalar
    d1, d2 = min(pair.k1.index, 0.0), min(pair.k2.index, 0.0)

    def near(s):
        return g1(s) * g2(s)

    def far(s):
        return (g1(s + delta_n) - g1(s)) * (g2(s + delta_n) - g2(s))

    v1, e1 = graded_integral(near, delta_n, delta_n, pair.k1.index + pair.k2.index if pair.delta_sum < 0 else 0.0)
    horizon = pair.tail_horizon()
    v2, e2 = graded_integral(far, horizon, delta_n, d1 + d2)
    tail = delta_n ** 2 * math.sqrt(pair.k1.deriv_sq_tail(horizon) * pair.k2.deriv_sq_tail(horizon))
    return _finish(v1 + v2, e1 + e2 + tail, full_output)


def _cross_integral(gi, gj, horizon, scale, p):
    def f(x):
        return gi.scalar(x) * gj.scalar(x)

    v, e = graded_integral(f, horizon, scale, p)
    return v, e + math.sqrt(gi.sq_tail(horizon) * gj.sq_tail(horizon))


def variogram(pair, rho_const, t, legs=(1, 2), full_output=False):
    """Cross variogram ``E[(G^(j)_t - G^(i)_0)**2]`` for constant correlation.

    Evaluated as ``C_ij + 2 rho_ij int_0^inf (g_j(x) - g_j(x+t)) g_i(x) dx``
    to avoid cancellation at small ``t``; ``C_ii = 0`` and ``rho_ii = 1``.
    """
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    i, j = legs
    gi, gj = pair[i], pair[j]
    rho = 1.0 if i == j else float(rho_const)
    horizon = max(gi.tail_horizon(), gj.tail_horizon())
    total, err = 0.0, 0.0
    if i != j:
        ni, ei = _cross_integral(gi, gi, horizon, 1.0, 2 * min(gi.index, 0.0))
        nj, ej = _cross_integral(gj, gj, horizon, 1.0, 2 * min(gj.index, 0.0))
        cij, ec = _cross_integral(gi, gj, horizon, 1.0, min(gi.index, 0.0) + min(gj.index, 0.0))
        total = ni + nj - 2 * rho * cij
        err = ei + ej + 2 * abs(rho) * ec
    if t > 0 and rho != 0:
        v, e = variogram_shift(pair, t, legs, full_output=True)
        total += 2 * rho * v
        err += 2 * abs(rho) * e
    if full_output:
        return total, err
    return total


def variogram_shift(pair, t, legs=(1, 2), full_output=False):
    """The ``t``-dependent part ``int_0^inf (g_j(x) - g_j(x+t)) g_i(x) dx`` of the variogram.

    Computed directly, so derivatives in ``t`` do not suffer from
    cancellation against the constant ``C_ij``.
    """
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    i, j = legs
    gi, gj = pair[i], pair[j]
    if t == 0:
        return (0.0, 0.0) if full_output else 0.0
    horizon = max(gi.tail_horizon(), gj.tail_horizon())
    a, b = gi.scalar, gj.scalar

    def f(x):
        return (b(x) - b(x + t)) * a(x)

    v, e = graded_integral(f, horizon, t, min(gi.index, 0.0) + min(gj.index, 0.0))
    e += t * math.sqrt(gj.deriv_sq_tail(horizon) * gi.sq_tail(horizon))
    return (v, e) if full_output else v


# ---------------------------------------------------------------------------
# regular variation diagnostics
# ---------------------------------------------------------------------------

def default_probes(start=1e-2, ratio=0.5, count=12):
    """Geometric probe grid decreasing toward zero."""
    return start * ratio ** np.arange(count)


def rv_index_fit(x, fx):
    """Least-squares power-law index of ``f`` at zero from samples.

    Parameters
    ----------
    x : array_like
        At least four strictly decreasing positive probe points.
    fx : array_like
        Positive function values at the probes.

    Returns
    -------
    RVFit
        Slope of ``log f`` against ``log x``, the ratio samples
        ``f(x) / x**slope`` (the slowly varying part) and the r-squared.
    """
    x = np.asarray(x, dtype=float)
    fx = np.asarray(fx, dtype=float)
    if x.shape != fx.shape or x.ndim != 1:
        raise ValueError("x and f(x) must be 1-d arrays of equal length")
    if x.size < 4:
        raise ValueError("need at least 4 probe points")
    if np.any(x <= 0):
        raise DomainError("probe points must be positive")
    if np.any(np.diff(x) >= 0):
        raise ValueError("probe points must be strictly decreasing")
    if np.any(~(fx > 0)):
        raise DomainError("function values must be positive for a log-log fit")
    lx, lf = np.log(x), np.log(fx)
    slope, intercept = np.polyfit(lx, lf, 1)
    resid = lf - (slope * lx + intercept)
    ss_res = float(np.dot(resid, resid))
    centred = lf - lf.mean()
    ss_tot = float(np.dot(centred, centred))
    if ss_tot <= 1e-28 * max(1.0, float(np.dot(lf, lf))):
        # constant f up to rounding
        r2 = 1.0
        slope = 0.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    ratios = fx / x ** slope
    return RVFit(float(slope), tuple(float(r) for r in ratios), float(r2), tuple(float(v) for v in x))


def fit_function(func, probes=None):
    """Evaluate ``func`` on probes and fit its index of regular variation."""
    probes = default_probes() if probes is None else np.asarray(probes, dtype=float)
    return rv_index_fit(probes, [func(p) for p in probes])


# ---------------------------------------------------------------------------
# spec strings
# ---------------------------------------------------------------------------

_SPEC_RE = re.compile(r"^\s*([a-z]+)\s*\((.*)\)\s*$", re.IGNORECASE)


def parse_call(text):
    """Split ``name(key=value, ...)`` into a lower-case name and a float dict."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse {text!r}: expected name(key=value,...)")
    name = m.group(1).lower()
    params = {}
    body = m.group(2).strip()
    if body:
        for item in body.split(","):
            if "=" not in item:
                raise ValueError(f"cannot parse parameter {item.strip()!r} in {text!r}")
            key, value = item.split("=", 1)
            key = key.strip().lower()
            if key in params:
                raise ValueError(f"duplicate parameter {key!r} in {text!r}")
            try:
                params[key] = float(value)
            except ValueError:
                raise ValueError(f"parameter {key!r} in {text!r} is not a number") from None
    return name, params


def _take(params, required, text):
    missing = [k for k in required if k not in params]
    extra = [k for k in params if k not in required]
    if missing:
        raise ValueError(f"{text!r}: missing parameter(s) {', '.join(missing)}")
    if extra:
        raise ValueError(f"{text!r}: unknown parameter(s) {', '.join(extra)}")
    return [params[k] for k in required]


def parse_kernel(text):
    """Parse ``gamma(delta=<f>,lambda=<f>)`` or ``exp(lambda=<f>)``."""
    name, params = parse_call(text)
    if name == "gamma":
        delta, lam = _take(params, ("delta", "lambda"), text)
        return GammaKernel(delta, lam)
    if name == "exp":
        (lam,) = _take(params, ("lambda",), text)
        return ExpKernel(lam)
    raise ValueError(f"unknown kernel family {name!r} in {text!r}")
