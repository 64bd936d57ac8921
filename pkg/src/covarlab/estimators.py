"""Realised covariation, its scaled variant, realised variance and the limit paths they estimate."""

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import ContractError, UndefinedLimitError

TARGET_KINDS = ("integrated_correlation", "integrated_vol_correlation", "qc_limit")


@dataclass
class PartialSumPath:
    """Partial sums on the coarse grid, ``values[0] = 0``."""

    values: np.ndarray
    t_grid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.values.shape != self.t_grid.shape:
            raise ContractError("values and t_grid differ in length")

    def __len__(self):
        return self.values.shape[0]


@dataclass
class TargetPath:
    """A limit path on the coarse grid, tagged with its kind."""

    values: np.ndarray
    t_grid: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        self.values = np.asarray(self.values, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.values.shape != self.t_grid.shape:
            raise ContractError("values and t_grid differ in length")


def _legs(series, dy2):
    if dy2 is None:
        return np.asarray(series.dy1, dtype=float), np.asarray(series.dy2, dtype=float), series.delta_n
    return np.asarray(series, dtype=float), np.asarray(dy2, dtype=float), None


def _partial_sums(summands, delta_n):
    values = np.empty(summands.shape[0] + 1)
    values[0] = 0.0
    values[1:] = _accel.compensated_cumsum(summands)
    step = 1.0 if delta_n is None else delta_n
    return PartialSumPath(values, step * np.arange(values.shape[0]))


def realised_covariation(series, dy2=None, *, delta_n=None):
    """Partial sums of ``dy1[j] * dy2[j]``.

    Accepts either an ``IncrementSeries`` or two arrays. With plain arrays
    and no ``delta_n`` the time grid is the index ``0, 1, 2, ...``.

    Examples
    --------
    >>> realised_covariation([1, 2, -1], [1, 0.5, 2]).values.tolist()
    [0.0, 1.0, 2.0, 0.0]
    """
    dy1, dy2, dn = _legs(series, dy2)
    if dy1.shape != dy2.shape or dy1.ndim != 1:
        raise ContractError(f"increment arrays must be 1-d of equal length, got {dy1.shape} and {dy2.shape}")
    return _partial_sums(dy1 * dy2, dn if delta_n is None else delta_n)


def scaled_realised_covariation(series, c_value, dy2=None, *, delta_n=None):
    """Realised covariation times ``delta_n / c_value``.

    ``c_value`` is the scaling factor at the coarse step. It must be positive.
    """
    c_value = float(c_value)
    if not c_value > 0 or not math.isfinite(c_value):
        raise ContractError(f"scaling factor must be positive and finite, got {c_value}")
    rc = realised_covariation(series, dy2, delta_n=delta_n)
    dn = delta_n if delta_n is not None else getattr(series, "delta_n", None)
    if dn is None:
        raise ContractError("delta_n is needed to scale plain arrays")
    return PartialSumPath(rc.values * (dn / c_value), rc.t_grid)


def realised_variance(increments, *, delta_n=None):
    """Partial sums of squared increments (a nondecreasing path)."""
    x = np.asarray(increments, dtype=float)
    if x.ndim != 1:
        raise ContractError("increments must be 1-d")
    return _partial_sums(x * x, delta_n)


def polarisation_gap(dy1, dy2):
    """Pointwise ``|RC - (RV(dy1+dy2) - RV(dy1) - RV(dy2))/2|`` with a rounding budget.

    Returns
    -------
    gap : ndarray
        Absolute discrepancy on the grid.
    bound : ndarray
        ``8 * eps`` times the accumulated magnitude of every summand involved.
    """
    dy1 = np.asarray(dy1, dtype=float)
    dy2 = np.asarray(dy2, dtype=float)
    s = dy1 + dy2
    rc = realised_covariation(dy1, dy2).values
    rv_s = realised_variance(s).values
    rv_1 = realised_variance(dy1).values
    rv_2 = realised_variance(dy2).values
    gap = np.abs(rc - 0.5 * (rv_s - rv_1 - rv_2))
    mass = np.concatenate([[0.0], np.cumsum(s * s + dy1 * dy1 + dy2 * dy2)])
    return gap, 8.0 * np.finfo(float).eps * mass


def g0_product(pair):
    """Limit of ``g1(x) * g2(x)`` as ``x -> 0+``.

    For power-exponential kernels the product behaves like ``x**(delta1 + delta2)``,
    so the limit is 0, 1 or divergent according to the sign of the index sum.
    """
    d = pair.delta_sum
    if d > 0:
        return 0.0
    if d == 0:
        return 1.0
    raise UndefinedLimitError(
        f"g1(0+) g2(0+) diverges (delta sum {d:g} < 0); the unscaled limit does not exist, use the scaled estimator"
    )


def integrated_target(bundle, kind, pair=None):
    """Limit path on the coarse grid from the per-cell paths of one replication.

    Left-endpoint Riemann sums over the fine cells covering ``[0, t_i]``.

    Parameters
    ----------
    bundle : PathBundle
    kind : {"integrated_correlation", "integrated_vol_correlation", "qc_limit"}
    pair : KernelPair, optional
        Needed for ``qc_limit``.
    """
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {kind!r}")
    grid = bundle.grid
    start, kap = grid.n_past_cells, grid.kappa
    n_obs = (grid.n_cells - start) // kap
    if start + n_obs * kap != grid.n_cells or n_obs < 1:
        raise ContractError("bundle does not cover a whole number of coarse steps on [0, T]")
    rho = np.asarray(bundle.rho[start:], dtype=float)
    if kind == "integrated_vol_correlation":
        s1 = np.asarray(bundle.sigma1[start:], dtype=float)
        s2 = np.asarray(bundle.sigma2[start:], dtype=float)
        integrand = s1 * s2 * rho
    else:
        integrand = rho
    scale = 1.0
    if kind == "qc_limit":
        if pair is None:
            raise ContractError("qc_limit needs the kernel pair")
        scale = g0_product(pair)
    cum = np.empty(n_obs + 1)
    cum[0] = 0.0
    cum[1:] = _accel.compensated_cumsum(integrand)[kap - 1 :: kap]
    values = scale * grid.cell_width * cum
    if scale == 0.0:
        values = np.zeros(n_obs + 1)
    dn = grid.cell_width * kap
    return TargetPath(values, dn * np.arange(n_obs + 1), kind)


def sup_error(estimate, target):
    """Largest absolute gap between two paths on a shared grid."""
    a = np.asarray(estimate.values, dtype=float)
    b = np.asarray(target.values, dtype=float)
    if a.shape != b.shape:
        raise ContractError(f"grid mismatch: {a.shape} vs {b.shape}")
    ta, tb = getattr(estimate, "t_grid", None), getattr(target, "t_grid", None)
    if ta is not None and tb is not None and not np.allclose(ta, tb, rtol=1e-12, atol=1e-12):
        raise ContractError("estimate and target live on different time grids")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))
