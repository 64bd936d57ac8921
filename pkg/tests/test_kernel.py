import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covarlab.errors import DomainError, PreconditionError
from covarlab.kernel import (
    ExpKernel,
    GammaKernel,
    KernelPair,
    RVFit,
    check_decreasing,
    default_probes,
    eval_kernel,
    fit_function,
    increment_kernel,
    parse_kernel,
    rv_index_fit,
    scaling_factor,
    squared_increment_integral,
    variogram,
)

# reference values from 30-digit tanh-sinh quadrature (mpmath), frozen
MP = {
    "sq_inc_gamma-0.2_1e-3_b1": 0.0033220099099519653,
    "sq_inc_gamma-0.2_1e-3_inf": 0.0033220875920562255,
    "sq_inc_gamma0.3_1e-2_inf": 0.0001415738124897736,
    "c_gamma-0.2_1e-3": 0.029717175153787442,
    "c_gamma-0.3_-0.1_1e-2": 0.11514017695652972,
    "c_gamma0.25_1e-2": 0.0008113653372839837,
    "vario_gamma-0.2_ii_0.01": 0.11824107234575544,
    "vario_gamma-0.2_exp_rho0.5_0.1": 0.87745887833865032,
}

exp1 = ExpKernel(1.0)
EXP_PAIR = KernelPair(exp1, exp1)


def gpair(d1, d2=None, lam=1.0):
    d2 = d1 if d2 is None else d2
    return KernelPair(GammaKernel(d1, lam), GammaKernel(d2, lam))


# --- eval and increment kernel -------------------------------------------------

def test_eval_examples():
    assert eval_kernel(GammaKernel(0.2, 1.0), 1.0) == pytest.approx(0.3678794, abs=1e-7)
    assert eval_kernel(ExpKernel(2.0), 0.5) == pytest.approx(math.exp(-1.0), rel=1e-15)
    for k in (GammaKernel(-0.3, 1.0), GammaKernel(0.3, 2.0), exp1):
        assert eval_kernel(k, -0.5) == 0.0


def test_eval_at_zero_is_zero_by_support_convention():
    assert GammaKernel(-0.2, 1.0)(0.0) == 0.0
    assert GammaKernel(-0.2, 1.0).scalar(0.0) == 0.0


@given(
    delta=st.floats(-0.49, 0.49).filter(lambda d: abs(d) > 1e-3),
    lam=st.floats(0.1, 5.0),
    x=st.floats(-50.0, 50.0),
)
def test_support_and_positivity(delta, lam, x):
    k = GammaKernel(delta, lam)
    v = k(x)
    if x <= 0:
        assert v == 0.0
    elif v > 0:
        assert v == pytest.approx(x ** delta * math.exp(-lam * x), rel=1e-12)


@given(
    delta=st.floats(-0.45, 0.45),
    dn=st.floats(1e-4, 0.5),
    s=st.floats(-2.0, 5.0),
)
def test_increment_kernel_branches(delta, dn, s):
    k = GammaKernel(delta, 1.0) if abs(delta) > 1e-6 else exp1
    v = increment_kernel(k, dn, s)
    if s <= 0:
        assert v == 0.0
    elif s <= dn:
        assert v == k(s)
    else:
        assert v == k(s) - k(s - dn)


def test_increment_kernel_examples():
    assert increment_kernel(exp1, 0.1, 0.05) == pytest.approx(0.951229, abs=1e-6)
    assert increment_kernel(exp1, 0.1, 0.2) == pytest.approx(-0.086107, abs=1e-6)
    assert increment_kernel(exp1, 0.1, -1.0) == 0.0
    with pytest.raises(PreconditionError):
        increment_kernel(exp1, 0.0, 1.0)


# --- kernel metadata ------------------------------------------------------------

def test_b_beyond_inflection_for_positive_delta():
    for delta in (0.1, 0.25, 0.3, 0.45):
        k = GammaKernel(delta, 1.0)
        assert k.b >= k.inflection_point()
        x = np.linspace(k.b, k.b + 20, 2001)
        d2 = k.derivative(x) ** 2
        assert np.all(np.diff(d2) <= 1e-15)
    assert GammaKernel(-0.2, 1.0).b == 1.0
    with pytest.raises(ValueError):
        GammaKernel(0.3, 1.0, b=0.1)


@pytest.mark.parametrize("delta", [-0.45, -0.3, 0.3])
def test_square_integrable_norm_converges(delta):
    from covarlab.kernel import graded_integral

    k = GammaKernel(delta, 1.0)
    full = k.l2_norm_sq()
    gaps = []
    for eps, X in ((1e-2, 5.0), (1e-4, 20.0), (1e-8, 60.0)):
        head = k.sq_integral(eps)
        body, _ = graded_integral(lambda s: k.scalar(s) ** 2, X, 1.0, min(2 * delta, 0.0))
        gaps.append(full - (body - head))
    assert gaps[0] > gaps[1] > gaps[2] >= -1e-12
    # what is left is the mass below eps plus the tail beyond X
    a = 2 * delta + 1
    assert gaps[2] <= 1e-8 ** a / a + k.sq_tail(60.0) + 1e-12


@pytest.mark.parametrize("delta,expected", [(-0.2, True), (-0.45, True), (0.3, False), (0.2, False)])
def test_check_decreasing(delta, expected):
    assert check_decreasing(GammaKernel(delta, 1.0)) is expected
    assert check_decreasing(exp1)


@pytest.mark.parametrize("bad", [dict(delta=0.2, lam=0.0), dict(delta=-1.0, lam=1.0), dict(delta=0.2, lam=-1.0)])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        GammaKernel(**bad)


# --- squared increment integral ---------------------------------------------------

def test_squared_increment_exp_closed_form():
    # int_0^inf e^{-2s} (e^{-d} - 1)^2 ds
    d = 0.1
    assert squared_increment_integral(exp1, d) == pytest.approx((1 - math.exp(-d)) ** 2 / 2, rel=1e-10)


@pytest.mark.parametrize(
    "kernel,dn,upper,key",
    [
        (GammaKernel(-0.2, 1.0), 1e-3, 1.0, "sq_inc_gamma-0.2_1e-3_b1"),
        (GammaKernel(-0.2, 1.0), 1e-3, math.inf, "sq_inc_gamma-0.2_1e-3_inf"),
        (GammaKernel(0.3, 1.0), 1e-2, math.inf, "sq_inc_gamma0.3_1e-2_inf"),
    ],
)
def test_squared_increment_against_mpmath(kernel, dn, upper, key):
    value, err = squared_increment_integral(kernel, dn, upper, full_output=True)
    assert value == pytest.approx(MP[key], rel=1e-8)
    assert err <= 1e-8 * value


def test_squared_increment_zero_step():
    assert squared_increment_integral(GammaKernel(-0.2, 1.0), 0.0) == 0.0


@pytest.mark.parametrize("delta", [-0.3, -0.2])
def test_squared_increment_exponent(delta):
    k = GammaKernel(delta, 1.0)
    probes = np.geomspace(1e-2, 1e-4, 12)
    fit = fit_function(lambda x: squared_increment_integral(k, x, k.b), probes)
    assert fit.exponent == pytest.approx(2 * delta + 1, abs=0.05)


@pytest.mark.xfail(
    strict=True,
    reason="for delta > 0 the slowly varying part of the [0, b] integral has not settled by 1e-4; "
    "the local slope only reaches 2*delta+1 near 1e-7 (see test_squared_increment_local_slope_converges)",
)
@pytest.mark.parametrize("delta", [0.2, 0.3])
def test_squared_increment_exponent_positive_delta(delta):
    k = GammaKernel(delta, 1.0)
    probes = np.geomspace(1e-2, 1e-4, 12)
    fit = fit_function(lambda x: squared_increment_integral(k, x, k.b), probes)
    assert fit.exponent == pytest.approx(2 * delta + 1, abs=0.05)


@pytest.mark.parametrize("delta", [0.2, 0.3])
def test_squared_increment_local_slope_converges(delta):
    k = GammaKernel(delta, 1.0)
    xs = [1e-2, 1e-4, 1e-6, 1e-8]
    vals = [squared_increment_integral(k, x, k.b) for x in xs]
    slopes = [math.log(vals[i + 1] / vals[i]) / math.log(xs[i + 1] / xs[i]) for i in range(3)]
    gaps = [abs(s - (2 * delta + 1)) for s in slopes]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.01


@pytest.mark.parametrize("dn", [1e-2, 1e-3])
def test_tail_bound_mean_value_theorem(dn):
    k = GammaKernel(0.3, 1.0)
    b = k.b
    head = squared_increment_integral(k, dn, b)
    whole = squared_increment_integral(k, dn)
    # int_b^inf (g')^2 by quadrature, independent of the closed-form bound
    from covarlab.kernel import graded_integral

    dsq, _ = graded_integral(lambda s: float(k.derivative(s + b)) ** 2, 200.0, 1.0)
    assert whole - head <= dn ** 2 * dsq * (1 + 1e-8)


# --- scaling factor ----------------------------------------------------------------

def test_scaling_factor_exp_closed_form():
    assert scaling_factor(EXP_PAIR, 0.1) == pytest.approx(1 - math.exp(-0.1), rel=1e-8)
    assert scaling_factor(EXP_PAIR, 0.1) == pytest.approx(0.0951626, abs=1e-7)


@pytest.mark.parametrize(
    "pair,dn,key,monotone",
    [
        (gpair(-0.2), 1e-3, "c_gamma-0.2_1e-3", True),
        (gpair(-0.3, -0.1), 1e-2, "c_gamma-0.3_-0.1_1e-2", True),
        (gpair(0.25), 1e-2, "c_gamma0.25_1e-2", False),
    ],
)
def test_scaling_factor_against_mpmath(pair, dn, key, monotone):
    value, err = scaling_factor(pair, dn, full_output=True, require_monotone=monotone)
    assert value == pytest.approx(MP[key], rel=1e-8)
    assert err <= 1e-8 * value


@pytest.mark.parametrize("d1,d2", [(-0.2, -0.2), (-0.3, -0.1), (-0.45, -0.05), (-0.1, -0.1)])
def test_scaling_factor_exponent(d1, d2):
    pair = gpair(d1, d2)
    fit = fit_function(lambda x: scaling_factor(pair, x), np.geomspace(1e-2, 1e-4, 12))
    assert fit.exponent == pytest.approx(d1 + d2 + 1, abs=0.05)
    assert fit.r_squared > 0.999


def test_scaling_factor_symmetric_in_legs():
    pair = gpair(-0.3, -0.1)
    assert scaling_factor(pair, 0.01) == pytest.approx(scaling_factor(pair.swapped(), 0.01), rel=1e-12)


def test_scaling_factor_positive_increasing():
    for pair in (EXP_PAIR, gpair(-0.2), gpair(-0.4, -0.1)):
        xs = np.geomspace(1e-5, 0.5, 15)
        cs = [scaling_factor(pair, x) for x in xs]
        assert all(c > 0 for c in cs)
        assert all(b > a for a, b in zip(cs, cs[1:]))
        assert scaling_factor(pair, 0.0) == 0.0


def test_scaling_factor_requires_monotone_pair():
    with pytest.raises(PreconditionError):
        scaling_factor(gpair(0.3), 0.01)
    assert scaling_factor(gpair(0.3), 0.01, require_monotone=False) > 0


# --- variogram ------------------------------------------------------------------------

def test_variogram_exp_closed_form():
    assert variogram(EXP_PAIR, 0.5, 1.0) == pytest.approx(1 - 0.5 * math.exp(-1.0), rel=1e-10)
    assert variogram(EXP_PAIR, 0.5, 1.0) == pytest.approx(0.8160603, abs=1e-7)


def test_variogram_same_leg_at_zero():
    assert variogram(gpair(-0.2), 0.3, 0.0, legs=(1, 1)) == 0.0


def test_variogram_against_mpmath():
    g = GammaKernel(-0.2, 1.0)
    assert variogram(KernelPair(g, g), 1.0, 0.01, legs=(1, 1)) == pytest.approx(MP["vario_gamma-0.2_ii_0.01"], rel=1e-8)
    mixed = KernelPair(g, exp1)
    assert variogram(mixed, 0.5, 0.1) == pytest.approx(MP["vario_gamma-0.2_exp_rho0.5_0.1"], rel=1e-8)


def test_variogram_equals_twice_squared_increment_integral():
    # same leg: E[(G_t - G_0)^2] = int_0^inf phi_t^2
    g = GammaKernel(-0.3, 1.0)
    for t in (1e-3, 0.05):
        assert variogram(KernelPair(g, g), 1.0, t, legs=(1, 1)) == pytest.approx(
            scaling_factor(KernelPair(g, g), t), rel=1e-8
        )


@pytest.mark.parametrize("delta", [-0.2, -0.35])
def test_variogram_exponent(delta):
    pair = gpair(delta)
    fit = fit_function(lambda t: variogram(pair, 1.0, t, legs=(1, 1)), np.geomspace(1e-2, 1e-4, 12))
    assert fit.exponent == pytest.approx(2 * delta + 1, abs=0.05)


# --- regular-variation fit ---------------------------------------------------------------

def test_rv_fit_exact_power_law():
    x = np.array([1e-2, 1e-3, 1e-4, 1e-5])
    fit = rv_index_fit(x, x ** 0.6)
    assert fit.exponent == pytest.approx(0.6, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(fit.slowly_varying_samples, 1.0)


def test_rv_fit_slowly_varying_factor():
    errs = []
    for start in (1e-1, 1e-3, 1e-5):
        x = default_probes(start)
        errs.append(abs(rv_index_fit(x, x ** 0.6 * (1 + x)).exponent - 0.6))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_rv_fit_constant():
    fit = rv_index_fit(default_probes(), np.full(12, 3.0))
    assert fit.exponent == 0.0
    assert 0.0 <= fit.r_squared <= 1.0


def test_rv_fit_rejects_bad_input():
    x = default_probes()
    with pytest.raises(DomainError):
        rv_index_fit(x, -x)
    with pytest.raises(ValueError):
        rv_index_fit(x[:3], x[:3])
    with pytest.raises(ValueError):
        rv_index_fit(x[::-1], x[::-1])


@settings(max_examples=50)
@given(beta=st.floats(-2.0, 3.0), c=st.floats(0.01, 100.0))
def test_rv_fit_recovers_exponent(beta, c):
    x = default_probes()
    fit = rv_index_fit(x, c * x ** beta)
    assert fit.exponent == pytest.approx(beta, abs=1e-9)
    assert 0.0 <= fit.r_squared <= 1.0


def test_rvfit_roundtrip():
    fit = rv_index_fit(default_probes(), default_probes() ** 0.4)
    assert RVFit.from_dict(fit.to_dict()) == fit


def test_default_probes():
    p = default_probes()
    assert p.size == 12 and p[0] == 1e-2
    assert np.allclose(p[1:] / p[:-1], 0.5)


# --- spec strings --------------------------------------------------------------------------

def test_parse_kernel():
    assert parse_kernel("gamma(delta=-0.2,lambda=1)") == GammaKernel(-0.2, 1.0)
    assert parse_kernel(" GAMMA( delta = 0.3 , LAMBDA = 2 ) ") == GammaKernel(0.3, 2.0)
    assert parse_kernel("exp(lambda=2)") == ExpKernel(2.0)
    for bad in ("gamma(delta=0.2)", "exp()", "exp(lambda=1,delta=0)", "beta(a=1)", "gamma delta=1", "exp(lambda=x)"):
        with pytest.raises(ValueError):
            parse_kernel(bad)


def test_spec_roundtrip():
    for k in (GammaKernel(-0.2, 1.5), ExpKernel(0.7)):
        assert parse_kernel(k.spec()) == k
