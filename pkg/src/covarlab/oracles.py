"""Analytic ground truths used to check the simulator and the estimators.

Includes the four-factor Wick formula for Gaussian stochastic integrals,
the lag-k covariances of coarse increments for constant correlation and
their normalised decay.
"""

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import PreconditionError
from .kernel import KernelPair, graded_integral, scaling_factor, variogram


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant function: ``values[k]`` on ``[breakpoints[k], breakpoints[k+1])``, 0 elsewhere."""

    breakpoints: tuple
    values: tuple

    def __init__(self, breakpoints, values):
        bp = tuple(float(b) for b in breakpoints)
        vals = tuple(float(v) for v in values)
        if len(bp) != len(vals) + 1:
            raise ValueError("need exactly one more breakpoint than values")
        if any(b1 >= b2 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value, lo, hi):
        return cls((lo, hi), (value,))

    def on(self, edges):
        """Values on each cell of a refinement ``edges`` of the breakpoints."""
        edges = np.asarray(edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        bp = np.asarray(self.breakpoints)
        idx = np.searchsorted(bp, mids, side="right") - 1
        inside = (idx >= 0) & (idx < len(self.values))
        out = np.zeros(mids.shape)
        out[inside] = np.asarray(self.values)[idx[inside]]
        return out


def _refinement(*steps):
    return np.unique(np.concatenate([np.asarray(s.breakpoints) for s in steps]))


def inner(f, g):
    """Exact L2 inner product of two step functions."""
    edges = _refinement(f, g)
    return math.fsum(f.on(edges) * g.on(edges) * np.diff(edges))


def wick_fourth_moment(h1, h2, h3, h4):
    """``E[I(h1) I(h2) I(h3) I(h4)]`` for Wiener integrals of deterministic step functions."""
    edges = _refinement(h1, h2, h3, h4)
    w = np.diff(edges)
    v = [h.on(edges) for h in (h1, h2, h3, h4)]

    def ip(a, b):
        return math.fsum(v[a] * v[b] * w)

    return ip(0, 2) * ip(1, 3) + ip(0, 1) * ip(2, 3) + ip(0, 3) * ip(1, 2)


def second_moment_product(h1, h2, k):
    """``E[(I(h1) I(h2 k))**2]`` for a deterministic (conditioned-on) bounded weight ``k``."""
    edges = _refinement(h1, h2, k)
    w = np.diff(edges)
    a, b, kk = h1.on(edges), h2.on(edges), k.on(edges)
    return math.fsum(a * a * w) * math.fsum(b * b * kk * kk * w) + 2.0 * math.fsum(a * b * kk * w) ** 2


@functools.lru_cache(maxsize=8192)
def _raw_increment_covariance(ka, kb, n, k):
    # int_0^inf phi^a(v) phi^b(v + k*Delta) dv for k >= 1
    d = 1.0 / n
    ga, gb = ka.scalar, kb.scalar
    da, db = min(ka.index, 0.0), min(kb.index, 0.0)

    def near(s):
        return ga(s) * (gb(k * d + s) - gb((k - 1) * d + s))

    def far(s):
        return (ga(d + s) - ga(s)) * (gb((k + 1) * d + s) - gb(k * d + s))

    v1, _ = graded_integral(near, d, d, da + (db if k == 1 else 0.0))
    horizon = max(ka.tail_horizon(), kb.tail_horizon())
    v2, _ = graded_integral(far, horizon, d, da)
    return v1 + v2


def increment_covariance(pair, a, b, n, k, rho_const=1.0):
    """``E[dG^a_1 dG^b_{1+k}]`` for coarse step ``1/n``, times ``rho_ab`` (1 on the diagonal).

    Negative lags use ``r_ab(-k) = r_ba(k)``.
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    rho = 1.0 if a == b else float(rho_const)
    if rho == 0.0:
        return 0.0
    if k < 0:
        a, b, k = b, a, -k
    ka, kb = pair[a], pair[b]
    if k == 0:
        return rho * scaling_factor(KernelPair(ka, kb), 1.0 / n, require_monotone=False)
    return rho * _raw_increment_covariance(ka, kb, int(n), int(k))


def increment_covariance_matrix(pair, n, n_obs, rho_const):
    """Dense covariance of ``(dY1_1..dY1_N, dY2_1..dY2_N)`` for constant correlation."""
    lags = range(n_obs)
    r = {
        (a, b): np.array([increment_covariance(pair, a, b, n, k, rho_const) for k in lags])
        for a, b in ((1, 1), (2, 2), (1, 2), (2, 1))
    }
    s11 = scipy.linalg.toeplitz(r[1, 1])
    s22 = scipy.linalg.toeplitz(r[2, 2])
    # s12[i, j] = E[dY1_i dY2_j] = r12(j - i) above the diagonal, r21(i - j) below
    s12 = scipy.linalg.toeplitz(r[2, 1], r[1, 2])
    return np.block([[s11, s12], [s12.T, s22]])


def tau_n(kernel, n):
    """Root mean square of one coarse increment, ``sqrt(variogram(1/n))``."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    return math.sqrt(variogram(KernelPair(kernel, kernel), 1.0, 1.0 / n, legs=(1, 1)))


def covariance_decay(pair, a, b, n, lags):
    """Fit ``|r_ab(k)| / (tau_a tau_b) ~ C k**beta`` over ``lags``.

    Returns
    -------
    dict
        ``exponent`` (beta), ``constant`` (C) and the normalised samples.
    """
    lags = np.asarray(lags, dtype=float)
    norm = tau_n(pair[a], n) * tau_n(pair[b], n)
    vals = np.array([abs(increment_covariance(pair, a, b, n, int(k))) / norm for k in lags])
    slope, intercept = np.polyfit(np.log(lags), np.log(vals), 1)
    return {"exponent": float(slope), "constant": float(math.exp(intercept)), "samples": vals.tolist()}


def product_covariance(pair, n, k, rho_const):
    """``Cov(dY1_i dY2_i, dY1_j dY2_j)`` for ``j = i + k``, constant correlation, via Wick pairing."""
    r11 = increment_covariance(pair, 1, 1, n, k)
    r22 = increment_covariance(pair, 2, 2, n, k)
    r12 = increment_covariance(pair, 1, 2, n, k, rho_const)
    r21 = increment_covariance(pair, 2, 1, n, k, rho_const)
    return r11 * r22 + r12 * r21


def permutations_agree(h, rtol=1e-12):
    """True if the Wick moment is the same for every ordering of the four arguments."""
    ref = wick_fourth_moment(*h)
    return all(
        math.isclose(wick_fourth_moment(*p), ref, rel_tol=rtol, abs_tol=1e-300)
        for p in itertools.permutations(h)
    )
