"""Shared test utilities."""

import math

import numpy as np

from covarlab.oracles import StepFunction
from covarlab.simulator import cell_weights


def increment_steps(config, i, leg):
    """Integrand of the simulator's ``dy{leg}[i]`` against a single Brownian motion.

    The two drivers ``W1`` and ``W~`` are laid end to end: cells of ``W1`` on
    ``[0, L)`` and cells of ``W~`` on ``[L, 2L)``. Constant correlation and
    unit volatility only.
    """
    grid = config.grid()
    h, nc, kap = grid.cell_width, grid.n_cells, grid.kappa
    w = cell_weights(config.kernels[leg], h, nc)
    f = w.copy()
    f[kap:] -= w[:-kap]
    pos = grid.n_past_cells - 1 + kap * (i + 1)
    vals = np.zeros(nc)
    vals[: pos + 1] = f[pos::-1]
    rho = config.correlation.rho
    if leg == 1:
        full = np.concatenate([vals, np.zeros(nc)])
    else:
        full = np.concatenate([rho * vals, math.sqrt(1 - rho * rho) * vals])
    return StepFunction(h * np.arange(2 * nc + 1), full)
