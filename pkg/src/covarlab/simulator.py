"""Simulation of coarse increments of bivariate moving-average and BSS processes.

The driving Brownian measures are discretised on a fine grid of cell width
``h = 1/(n*kappa)`` reaching back to ``-M``. The value at a coarse time is a
causal sum over cells,

    Y(t_i) = sum_k w[lag(t_i, k)] * sigma_k * dW_k,

with cell-effective weights ``w[m] = g((m + 1/2) h)`` for ``m >= 1`` and
``w[0]`` equal to the average of ``g`` over the cell adjacent to the
evaluation time (the kernel may be singular there).

Two evaluation routes share the weight table: direct lag summation (numba
kernel, small grids) and an FFT circular convolution whose length is chosen
so that no wrapped term reaches the observation window (large grids).
"""

import functools
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.fft
import scipy.linalg

from . import _accel
from .errors import ConfigurationError, NumericalFailure
from .kernel import KernelPair
from .paths import (
    LANE_CORRELATION,
    LANE_DRIVER_1,
    LANE_DRIVER_TILDE,
    LANE_VOL_1,
    LANE_VOL_2,
    ConstantCorrelation,
    ConstantVolatility,
    FineGrid,
    PathBundle,
    lane_rng,
    sample_correlation_path,
    sample_volatility_path,
)

# bytes per fine cell held live during one replication (drivers, paths,
# FFT buffers); used for the pre-allocation budget check
BYTES_PER_CELL = 112
DEFAULT_MEMORY_BUDGET = 2 * 1024 ** 3
EXACT_MAX_STEPS = 512
# direct summation is used while (outputs * lags) stays below this many
# multiply-adds per leg
_DIRECT_MAX_WORK = 4.0e7


def memory_budget():
    return int(os.environ.get("COVARLAB_MEMORY_BUDGET", DEFAULT_MEMORY_BUDGET))


@dataclass(frozen=True)
class SimulationConfig:
    """Grid sizes, model bindings and seed for one simulation.

    ``M=None`` selects the default truncation horizon ``max(10, 50/lam_min)``.
    ``method`` picks the convolution route: ``"auto"``, ``"direct"`` or ``"fft"``.
    """

    n: int
    kernels: KernelPair
    correlation: object
    T: float = 1.0
    kappa: int = 16
    M: Optional[float] = None
    seed: int = 0
    volatility: Optional[Tuple[object, object]] = None
    method: str = "auto"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"n must be an integer >= 2, got {self.n}")
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ConfigurationError(f"kappa must be an integer >= 1, got {self.kappa}")
        if not self.T > 0:
            raise ConfigurationError(f"T must be positive, got {self.T}")
        if self.M is None:
            object.__setattr__(self, "M", max(10.0, 50.0 / self.kernels.lam_min))
        if not self.M > 0:
            raise ConfigurationError(f"M must be positive, got {self.M}")
        if self.method not in ("auto", "direct", "fft"):
            raise ConfigurationError(f"unknown convolution method {self.method!r}")
        if self.volatility is not None and len(self.volatility) != 2:
            raise ConfigurationError("volatility must be a pair of models")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "kappa", int(self.kappa))

    @property
    def delta_n(self):
        return 1.0 / self.n

    @property
    def n_obs(self):
        return int(math.floor(self.n * self.T + 1e-9))

    def grid(self):
        return FineGrid.for_observation(self.n, self.T, self.kappa, self.M)

    def with_n(self, n):
        return replace(self, n=n)


@dataclass
class IncrementSeries:
    """Coarse increments of both legs, with the paths that produced them."""

    dy1: np.ndarray
    dy2: np.ndarray
    delta_n: float
    bundle: Optional[PathBundle] = None
    config: Optional[SimulationConfig] = field(default=None, repr=False)

    def __post_init__(self):
        self.dy1 = np.asarray(self.dy1, dtype=float)
        self.dy2 = np.asarray(self.dy2, dtype=float)
        if self.dy1.shape != self.dy2.shape or self.dy1.ndim != 1:
            raise ValueError("increment arrays must be 1-d and of equal length")
        if not (np.all(np.isfinite(self.dy1)) and np.all(np.isfinite(self.dy2))):
            raise NumericalFailure("non-finite increments")

    def __len__(self):
        return self.dy1.shape[0]

    @property
    def t_grid(self):
        return self.delta_n * np.arange(len(self) + 1)


def truncation_bound(config):
    """Upper bound, per leg, on the increment variance lost by starting at ``-M``.

    The dropped part of the increment kernel lives on lags beyond ``M``,
    where ``|g(s) - g(s - h)|**2 <= h * int_{s-h}^s g'**2``. Integrating gives
    ``delta_n**2 * int_{M - delta_n}^inf g'**2``, bounded in closed form by the
    kernel. Infinite when the past is shorter than one step.
    """
    d = config.delta_n
    if config.M <= d:
        return (math.inf, math.inf)
    return tuple(d * d * float(config.kernels[leg].deriv_sq_tail(config.M - d)) for leg in (1, 2))


def check_budget(config):
    """Reject configurations whose fine grid would not fit the memory budget."""
    grid = config.grid()
    need = grid.n_cells * BYTES_PER_CELL
    budget = memory_budget()
    if need > budget:
        raise ConfigurationError(
            f"fine grid of {grid.n_cells} cells needs ~{need / 2**20:.0f} MiB, budget is {budget / 2**20:.0f} MiB"
        )
    return grid


@functools.lru_cache(maxsize=32)
def cell_weights(kernel, cell_width, n_cells):
    """Weight of the cell at lag index ``m`` (cell spans lags ``[m h, (m+1) h]``)."""
    w = kernel((np.arange(n_cells) + 0.5) * cell_width)
    w[0] = kernel.cell_average(0.0, cell_width)
    w.setflags(write=False)
    return w


@functools.lru_cache(maxsize=8)
def _weights_spectrum(kernel, cell_width, n_cells, fft_len):
    return scipy.fft.rfft(cell_weights(kernel, cell_width, n_cells), fft_len)


def _positions(grid, n_obs):
    # Y(t_i) = (w * x)[j_i - 1] with j_i = n_past + i*kappa the first cell at or after t_i
    return grid.n_past_cells - 1 + grid.kappa * np.arange(n_obs + 1)


def _use_direct(config, grid):
    if config.method != "auto":
        return config.method == "direct"
    return (config.n_obs + 1) * grid.n_cells <= _DIRECT_MAX_WORK


def _convolve(config, grid, kernel, x, positions):
    w = cell_weights(kernel, grid.cell_width, grid.n_cells)
    if _use_direct(config, grid):
        return _accel.lag_sum(w, x, positions)
    n = grid.n_cells
    fft_len = scipy.fft.next_fast_len(2 * n - 1 - int(positions[0]), real=True)
    spec = _weights_spectrum(kernel, grid.cell_width, n, fft_len)
    y = scipy.fft.irfft(scipy.fft.rfft(x, fft_len) * spec, fft_len)
    return y[positions]


def _drivers(config, grid, replication):
    h = grid.cell_width
    n = grid.n_cells
    key = dict(replication=replication, n=config.n)
    dw1 = lane_rng(config.seed, LANE_DRIVER_1, **key).standard_normal(n)
    dw1 *= math.sqrt(h)
    dwt = lane_rng(config.seed, LANE_DRIVER_TILDE, **key).standard_normal(n)
    dwt *= math.sqrt(h)
    rho = sample_correlation_path(config.correlation, grid, lane_rng(config.seed, LANE_CORRELATION, **key))
    dw2 = _accel.mix_drivers(rho, dw1, dwt)
    return rho, dw1, dw2


def _simulate(config, replication, with_vol):
    grid = check_budget(config)
    rho, dw1, dw2 = _drivers(config, grid, replication)
    n = grid.n_cells
    if with_vol:
        key = dict(replication=replication, n=config.n)
        v1, v2 = config.volatility
        s1 = sample_volatility_path(v1, grid, lane_rng(config.seed, LANE_VOL_1, **key))
        s2 = sample_volatility_path(v2, grid, lane_rng(config.seed, LANE_VOL_2, **key))
        x1, x2 = s1 * dw1, s2 * dw2
    else:
        s1 = s2 = np.broadcast_to(1.0, (n,))
        x1, x2 = dw1, dw2
    pos = _positions(grid, config.n_obs)
    y1 = _convolve(config, grid, config.kernels.k1, x1, pos)
    y2 = _convolve(config, grid, config.kernels.k2, x2, pos)
    bundle = PathBundle(rho=rho, sigma1=s1, sigma2=s2, grid=grid)
    return IncrementSeries(np.diff(y1), np.diff(y2), config.delta_n, bundle, config)


def _unit_volatility(config):
    if config.volatility is None:
        return True
    return all(isinstance(v, ConstantVolatility) and v.sigma == 1.0 for v in config.volatility)


def simulate_ma_increments(config, replication=0):
    """Coarse increments of the bivariate moving-average process.

    Parameters
    ----------
    config : SimulationConfig
        Volatility must be absent or constant 1.
    replication : int
        Replication index; mixed into every seed lane.
    """
    if not _unit_volatility(config):
        raise ConfigurationError("moving-average simulation requires unit volatility; use simulate_bss_increments")
    return _simulate(config, replication, with_vol=False)


def simulate_bss_increments(config, replication=0):
    """Coarse increments of the bivariate Brownian semistationary process."""
    if config.volatility is None:
        raise ConfigurationError("BSS simulation needs a pair of volatility models")
    return _simulate(config, replication, with_vol=True)


def simulate_increments(config, replication=0):
    """Dispatch to the MA or BSS simulator depending on the volatility binding."""
    if config.volatility is None:
        return simulate_ma_increments(config, replication)
    return simulate_bss_increments(config, replication)


def discrete_increment_covariance(config, a, b, k):
    """Covariance ``E[dY^a_i dY^b_{i+k}]`` implied by the discretised simulator (constant correlation).

    Deterministic; useful to separate discretisation bias from Monte Carlo noise.
    """
    if not isinstance(config.correlation, ConstantCorrelation):
        raise ConfigurationError("implied covariance needs constant correlation")
    grid = config.grid()
    kap = grid.kappa
    phi = {}
    for leg in {a, b}:
        w = cell_weights(config.kernels[leg], grid.cell_width, grid.n_cells)
        f = w.copy()
        f[kap:] -= w[:-kap]
        phi[leg] = f
    rho = 1.0 if a == b else config.correlation.rho
    fa, fb = phi[a], phi[b]
    shift = k * kap
    if shift >= 0:
        return rho * grid.cell_width * float(np.dot(fa[: fa.size - shift], fb[shift:]))
    return rho * grid.cell_width * float(np.dot(fa[-shift:], fb[: fb.size + shift]))


# ---------------------------------------------------------------------------
# exact Gaussian route (constant correlation, dense covariance)
# ---------------------------------------------------------------------------

def _check_exact(config):
    if not isinstance(config.correlation, ConstantCorrelation):
        raise ConfigurationError("exact simulation requires constant correlation")
    if not _unit_volatility(config):
        raise ConfigurationError("exact simulation requires unit volatility")
    if config.n_obs > EXACT_MAX_STEPS:
        raise ConfigurationError(f"exact simulation limited to n*T <= {EXACT_MAX_STEPS}")


def exact_covariance(config):
    """Covariance matrix of the stacked vector ``(dY1_1..dY1_N, dY2_1..dY2_N)``."""
    _check_exact(config)
    from .oracles import increment_covariance_matrix

    return increment_covariance_matrix(config.kernels, config.n, config.n_obs, config.correlation.rho)


@functools.lru_cache(maxsize=8)
def _exact_factor(kernels, n, n_obs, rho):
    from .oracles import increment_covariance_matrix

    cov = increment_covariance_matrix(kernels, n, n_obs, rho)
    scale = float(np.mean(np.diag(cov)))
    for jitter in (0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8):
        try:
            return scipy.linalg.cholesky(cov + jitter * scale * np.eye(cov.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericalFailure("covariance not positive semidefinite beyond jitter budget", float(np.linalg.eigvalsh(cov)[0]))


def exact_gaussian_draws(config, size, replication=0):
    """``size`` exact draws of the increment vector, shape ``(size, 2, N)``."""
    _check_exact(config)
    chol = _exact_factor(config.kernels, config.n, config.n_obs, float(config.correlation.rho))
    rng = lane_rng(config.seed, LANE_DRIVER_1, replication=replication, n=config.n)
    z = rng.standard_normal((size, chol.shape[0]))
    return (z @ chol.T).reshape(size, 2, config.n_obs)


def exact_gaussian_increments(config, replication=0):
    """One exact draw of the increments for constant correlation (no fine grid involved)."""
    x = exact_gaussian_draws(config, 1, replication)[0]
    return IncrementSeries(x[0], x[1], config.delta_n, None, config)
