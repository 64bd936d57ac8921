"""Correlation and volatility path generators on the fine simulation grid."""

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .kernel import parse_call, _take

# seed lanes; the master seed is mixed with (n, replication, lane) through
# numpy's SeedSequence spawn keys
LANE_DRIVER_1 = 0
LANE_DRIVER_TILDE = 1
LANE_CORRELATION = 2
LANE_VOL_1 = 3
LANE_VOL_2 = 4


def lane_rng(seed, lane, replication=0, n=0):
    """Independent generator for one seed lane.

    The stream is a pure function of ``(seed, n, replication, lane)``.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(n), int(replication), int(lane)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class FineGrid:
    """Uniform grid of cells over ``[t_start, t_end]``; cell ``k`` starts at ``t_start + k*cell_width``.

    ``n_past_cells`` cells precede time 0, and every ``kappa``-th cell
    boundary from there on is a coarse observation time.
    """

    t_start: float
    t_end: float
    n_cells: int
    cell_width: float
    kappa: int = 1
    n_past_cells: int = 0

    def __post_init__(self):
        if self.n_cells <= 0 or not self.cell_width > 0:
            raise ValueError("grid needs a positive number of cells of positive width")
        span = self.t_end - self.t_start
        if abs(self.n_cells * self.cell_width - span) > 1e-9 * max(1.0, abs(span)):
            raise ValueError("n_cells * cell_width must equal t_end - t_start")

    @classmethod
    def for_observation(cls, n, T, kappa, M):
        """Grid for ``floor(n*T)`` coarse steps of width ``1/n`` with a past of at least ``M``."""
        n_obs = int(math.floor(n * T + 1e-9))
        n_past = max(1, int(math.ceil(M * n - 1e-9)))
        h = 1.0 / (n * kappa)
        n_cells = (n_past + n_obs) * kappa
        return cls(-n_past / n, n_obs / n, n_cells, h, kappa, n_past * kappa)

    @property
    def times(self):
        """Left endpoints of all cells."""
        return self.t_start + self.cell_width * np.arange(self.n_cells)


@dataclass(frozen=True)
class ConstantCorrelation:
    rho: float
    holder_alpha: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("constant correlation must lie in [-1, 1]")

    def spec(self):
        return f"const(rho={self.rho!r})"


@dataclass(frozen=True)
class JacobiCorrelation:
    """Driftless Jacobi diffusion ``d rho = sqrt((1 - rho)(1 + rho)) dW*`` pinned to ``init`` at time 0.

    Forward of 0 the path is the Euler scheme started at ``init``. The past
    ``[-M, 0)`` is an independent Euler run backward in time from ``init``, so
    a long truncation horizon does not drive the observed stretch to +-1.
    """

    init: float
    holder_alpha: float = 0.5

    def __post_init__(self):
        if not -1.0 < self.init < 1.0:
            raise ValueError("Jacobi initial value must lie in (-1, 1)")

    def spec(self):
        return f"jacobi(init={self.init!r})"


@dataclass(frozen=True)
class SinusoidCorrelation:
    a: float
    omega: float
    holder_alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("sinusoid amplitude must lie in [0, 1]")

    def spec(self):
        return f"sin(a={self.a!r},omega={self.omega!r})"


@dataclass(frozen=True)
class ConstantVolatility:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("volatility must be positive")

    def spec(self):
        return f"const(sigma={self.sigma!r})"


@dataclass(frozen=True)
class ExpOUVolatility:
    """``sigma = exp(U)`` with ``dU = kappa (m - U) dt + xi dB``, ``U`` started at ``m``."""

    kappa: float
    xi: float
    m: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("mean reversion kappa must be positive")
        if self.xi < 0:
            raise ValueError("vol-of-vol xi must be nonnegative")

    def spec(self):
        return f"expou(kappa={self.kappa!r},xi={self.xi!r},m={self.m!r})"


@dataclass
class PathBundle:
    """Per-cell correlation and volatility values used by one replication."""

    rho: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    grid: FineGrid


def sample_correlation_path(model, grid, rng):
    """Correlation value for every cell of ``grid`` (left-endpoint convention)."""
    n = grid.n_cells
    if isinstance(model, ConstantCorrelation):
        return np.full(n, float(model.rho))
    if isinstance(model, SinusoidCorrelation):
        return model.a * np.sin(model.omega * grid.times)
    if isinstance(model, JacobiCorrelation):
        k0 = grid.n_past_cells
        sqrt_h = math.sqrt(grid.cell_width)
        xi = rng.standard_normal(n + 1)
        future = _accel.jacobi_euler(model.init, sqrt_h, xi[k0 + 1 :])
        # values at -h, -2h, ..., -k0 h, reversed into cell order
        past = _accel.jacobi_euler(model.init, sqrt_h, xi[: k0 + 1])[1:][::-1]
        return np.concatenate([past, future])
    raise TypeError(f"unsupported correlation model {model!r}")


def sample_volatility_path(model, grid, rng):
    """Strictly positive volatility value for every cell of ``grid``."""
    n = grid.n_cells
    if isinstance(model, ConstantVolatility):
        return np.full(n, float(model.sigma))
    if isinstance(model, ExpOUVolatility):
        h = grid.cell_width
        z = rng.standard_normal(n)
        u = _accel.ou_euler(model.m, 1.0 - model.kappa * h, model.kappa * model.m * h, model.xi * math.sqrt(h), z)
        return np.exp(u)
    raise TypeError(f"unsupported volatility model {model!r}")


def empirical_holder_exponent(path, grid):
    """Slope of ``log max|x[k+l] - x[k]|`` against ``log(l*h)`` over dyadic lags ``l``.

    Returns ``inf`` for a constant path.
    """
    x = np.asarray(path, dtype=float)
    if x.size < 64:
        raise ValueError("need at least 64 cells")
    lags = []
    l = 1
    while l <= x.size // 4:
        lags.append(l)
        l *= 2
    moduli = np.array([np.max(np.abs(x[lag:] - x[:-lag])) for lag in lags])
    if np.all(moduli == 0):
        return math.inf
    keep = moduli > 0
    if keep.sum() < 2:
        return math.inf
    lh = np.log(np.array(lags, dtype=float)[keep] * grid.cell_width)
    slope, _ = np.polyfit(lh, np.log(moduli[keep]), 1)
    return float(slope)


def parse_correlation(text):
    """Parse ``const(rho=)``, ``jacobi(init=)`` or ``sin(a=,omega=)``."""
    name, params = parse_call(text)
    if name == "const":
        (rho,) = _take(params, ("rho",), text)
        return ConstantCorrelation(rho)
    if name == "jacobi":
        (init,) = _take(params, ("init",), text)
        return JacobiCorrelation(init)
    if name == "sin":
        a, omega = _take(params, ("a", "omega"), text)
        return SinusoidCorrelation(a, omega)
    raise ValueError(f"unknown correlation model {name!r} in {text!r}")


def parse_volatility(text):
    """Parse ``const(sigma=)`` or ``expou(kappa=,xi=,m=)``."""
    name, params = parse_call(text)
    if name == "const":
        (sigma,) = _take(params, ("sigma",), text)
        return ConstantVolatility(sigma)
    if name == "expou":
        kappa, xi, m = _take(params, ("kappa", "xi", "m"), text)
        return ExpOUVolatility(kappa, xi, m)
    raise ValueError(f"unknown volatility model {name!r} in {text!r}")
