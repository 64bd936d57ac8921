"""Hot loops, compiled with numba when available.

Every kernel exists twice: a numba ``@njit`` version and a pure
numpy/python fallback. Set ``COVARLAB_DISABLE_NUMBA=1`` to force the
fallback path (useful for debugging and for the backend benchmark).
Kernels are single-threaded; parallelism lives one level up, across
replications.
"""

import os

import numpy as np
from scipy.signal import lfilter

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("COVARLAB_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def backend():
    """Name of the active backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# pure python / numpy reference implementations
# ---------------------------------------------------------------------------

def _jacobi_euler_py(rho0, sqrt_h, xi):
    out = np.empty(xi.shape[0])
    r = rho0
    for k in range(xi.shape[0]):
        out[k] = r
        r = r + np.sqrt(max(0.0, 1.0 - r * r)) * sqrt_h * xi[k]
        if r > 1.0:
            r = 1.0
        elif r < -1.0:
            r = -1.0
    return out


def _ou_euler_np(u0, phi, drift, scale, z):
    # u[k+1] = phi*u[k] + drift + scale*z[k], u[0] = u0
    out = np.empty(z.shape[0])
    out[0] = u0
    if z.shape[0] > 1:
        drive = drift + scale * z[:-1]
        out[1:] = lfilter([1.0], [1.0, -phi], drive, zi=[phi * u0])[0]
    return out


def _lag_sum_np(w, x, positions):
    out = np.empty(positions.shape[0])
    for r, p in enumerate(positions):
        out[r] = np.dot(w[: p + 1], x[p::-1])
    return out


def _mix_drivers_np(rho, dw1, dwt):
    return rho * dw1 + np.sqrt(np.maximum(0.0, 1.0 - rho * rho)) * dwt


def _compensated_cumsum_py(x):
    out = np.empty(x.shape[0])
    s = 0.0
    c = 0.0
    for k in range(x.shape[0]):
        v = x[k]
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
        out[k] = s + c
    return out


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True, nogil=True)
    def _jacobi_euler_nb(rho0, sqrt_h, xi):
        out = np.empty(xi.shape[0])
        r = rho0
        for k in range(xi.shape[0]):
            out[k] = r
            r = r + np.sqrt(max(0.0, 1.0 - r * r)) * sqrt_h * xi[k]
            if r > 1.0:
                r = 1.0
            elif r < -1.0:
                r = -1.0
        return out

    @njit(cache=True, nogil=True)
    def _ou_euler_nb(u0, phi, drift, scale, z):
        out = np.empty(z.shape[0])
        u = u0
        for k in range(z.shape[0]):
            out[k] = u
            u = phi * u + drift + scale * z[k]
        return out

    @njit(cache=True, nogil=True)
    def _lag_sum_nb(w, x, positions):
        out = np.empty(positions.shape[0])
        for r in range(positions.shape[0]):
            p = positions[r]
            acc = 0.0
            for m in range(p + 1):
                acc += w[m] * x[p - m]
            out[r] = acc
        return out

    @njit(cache=True, nogil=True)
    def _mix_drivers_nb(rho, dw1, dwt):
        out = np.empty(dw1.shape[0])
        for k in range(dw1.shape[0]):
            r = rho[k]
            out[k] = r * dw1[k] + np.sqrt(max(0.0, 1.0 - r * r)) * dwt[k]
        return out

    @njit(cache=True, nogil=True)
    def _compensated_cumsum_nb(x):
        out = np.empty(x.shape[0])
        s = 0.0
        c = 0.0
        for k in range(x.shape[0]):
            v = x[k]
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
            out[k] = s + c
        return out


def jacobi_euler(rho0, sqrt_h, xi):
    """Clamped Euler scheme for d rho = sqrt(1 - rho^2) dW, one value per cell."""
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    if USE_NUMBA:
        return _jacobi_euler_nb(float(rho0), float(sqrt_h), xi)
    return _jacobi_euler_py(float(rho0), float(sqrt_h), xi)


def ou_euler(u0, phi, drift, scale, z):
    """Linear recursion ``u[k+1] = phi*u[k] + drift + scale*z[k]`` with ``u[0] = u0``."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    if USE_NUMBA:
        return _ou_euler_nb(float(u0), float(phi), float(drift), float(scale), z)
    return _ou_euler_np(float(u0), float(phi), float(drift), float(scale), z)


def lag_sum(w, x, positions):
    """``out[r] = sum_{m <= p_r} w[m] * x[p_r - m]`` for each requested position."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    positions = np.ascontiguousarray(positions, dtype=np.int64)
    if positions.size and (positions.min() < 0 or positions.max() >= min(w.shape[0], x.shape[0])):
        raise IndexError("lag_sum positions must lie inside both the weight and the input arrays")
    if USE_NUMBA:
        return _lag_sum_nb(w, x, positions)
    return _lag_sum_np(w, x, positions)


def compensated_cumsum(x):
    """Prefix sums with Neumaier compensation."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if USE_NUMBA:
        return _compensated_cumsum_nb(x)
    return _compensated_cumsum_py(x)


def mix_drivers(rho, dw1, dwt):
    """Correlated second driver ``rho*dw1 + sqrt(1 - rho^2)*dwt`` cell by cell."""
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    dw1 = np.ascontiguousarray(dw1, dtype=np.float64)
    dwt = np.ascontiguousarray(dwt, dtype=np.float64)
    if USE_NUMBA:
        return _mix_drivers_nb(rho, dw1, dwt)
    return _mix_drivers_np(rho, dw1, dwt)
