"""Monte Carlo convergence studies, assumption audits and report files."""

import concurrent.futures
import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import estimators
from .errors import ConfigurationError, CovarlabError, HypothesisViolation, UndefinedLimitError
from .kernel import (
    KernelPair,
    RVFit,
    check_decreasing,
    default_probes,
    fit_function,
    scaling_factor,
    squared_increment_integral,
    variogram,
    variogram_shift,
)
from .paths import LANE_CORRELATION, ConstantCorrelation, FineGrid, empirical_holder_exponent, lane_rng, sample_correlation_path
from .simulator import (
    BYTES_PER_CELL,
    _unit_volatility,
    check_budget,
    memory_budget,
    simulate_increments,
    truncation_bound,
)

THEOREMS = ("T31", "T32", "T34")
TOLERANCE_FLOOR = 0.02
CSV_COLUMNS = ("theorem", "n", "delta_n", "c_delta_n", "mean_sup_error", "rmse_endpoint", "std_error", "slope", "pass")
# cells in the pilot correlation path used for the Hölder estimate
_PILOT_CELLS = 1 << 14
# lattice for the second-derivative ratio: y ranges over (x, x**b)
CROSS_TERM_B = 0.5
CROSS_TERM_X = (1e-2, 1e-3, 1e-4)


def _finite_or_none(x):
    return float(x) if x is not None and math.isfinite(x) else None


def _none_to_inf(x):
    return math.inf if x is None else float(x)


# ---------------------------------------------------------------------------
# assumption audit
# ---------------------------------------------------------------------------

@dataclass
class AssumptionAudit:
    """Numerically checkable hypotheses of one theorem for one configuration.

    ``flags`` only holds predicates that can be decided from the
    configuration. Asymptotic quantities (regular-variation indices, limit
    ratios, the Hölder exponent) are reported as estimates.
    """

    theorem: str
    rv_fits: Dict[str, Optional[RVFit]]
    monotonicity_ok: bool
    holder_estimate: float
    delta_sum: float
    flags: Dict[str, bool]
    estimates: Dict[str, Any] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def theorem_hypotheses_ok(self):
        return all(self.flags.values())

    @property
    def failures(self):
        return [name for name, ok in self.flags.items() if not ok]

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "rv_fits": {k: (None if v is None else v.to_dict()) for k, v in self.rv_fits.items()},
            "monotonicity_ok": self.monotonicity_ok,
            "holder_estimate": _finite_or_none(self.holder_estimate),
            "delta_sum": self.delta_sum,
            "flags": dict(self.flags),
            "theorem_hypotheses_ok": self.theorem_hypotheses_ok,
            "estimates": dict(self.estimates),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            theorem=d["theorem"],
            rv_fits={k: (None if v is None else RVFit.from_dict(v)) for k, v in d["rv_fits"].items()},
            monotonicity_ok=bool(d["monotonicity_ok"]),
            holder_estimate=_none_to_inf(d["holder_estimate"]),
            delta_sum=float(d["delta_sum"]),
            flags={k: bool(v) for k, v in d["flags"].items()},
            estimates=dict(d.get("estimates", {})),
            notes=list(d.get("notes", [])),
        )


def _safe_fit(name, func, probes, notes):
    try:
        return fit_function(func, probes)
    except (CovarlabError, ValueError) as exc:
        notes.append(f"{name}: {exc}")
        return None


def _pilot_holder(config):
    model = config.correlation
    if isinstance(model, ConstantCorrelation):
        return math.inf
    grid = FineGrid(0.0, config.T, _PILOT_CELLS, config.T / _PILOT_CELLS)
    # n=0 never names a real simulation, so this lane is disjoint from every study
    path = sample_correlation_path(model, grid, lane_rng(config.seed, LANE_CORRELATION, replication=0, n=0))
    return empirical_holder_exponent(path, grid)


def _second_diff(fn, y, h=0.05):
    d = h * y
    return (fn(y + d) - 2.0 * fn(y) + fn(y - d)) / (d * d)


def cross_term_ratios(pair, xs=CROSS_TERM_X, b=CROSS_TERM_B, points=4):
    """``sup_y |L2^(i,j)(y) / L0~^(i,j)(x)|`` over ``y`` in ``(x, x**b)`` for each ``x``.

    ``L2`` comes from a central second difference of the variogram's
    ``t``-dependent part, ``L0~`` from the diagonal variograms. A bounded
    sequence as ``x`` shrinks is consistent with the limsup condition; the
    numbers are estimates only.

    Returns
    -------
    dict
        Keys ``"11"``, ``"22"``, ``"12"``, each a list aligned with ``xs``.
    """
    d = {1: pair.k1.index, 2: pair.k2.index}

    def l0(i, x):
        # R^(i,i)(x) = 2 * shift(x) = x**(2 d_i + 1) L0^(i,i)(x)
        return 2.0 * variogram_shift(pair, x, (i, i)) / x ** (2 * d[i] + 1)

    out = {}
    for i, j in ((1, 1), (2, 2), (1, 2)):
        row = []
        for x in xs:
            scale = math.sqrt(l0(i, x) * l0(j, x))
            ys = np.geomspace(x, x ** b, points + 2)[1:-1]
            # (1/2) R'' = shift'' since R = C + 2 rho shift; rho divides out
            vals = [
                abs(_second_diff(lambda t: variogram_shift(pair, t, (i, j)), y)) / y ** (d[i] + d[j] - 1)
                for y in ys
            ]
            row.append(float(max(vals) / scale))
        out[f"{i}{j}"] = row
    return out


def audit_assumptions(config, theorem, probes=None):
    """Check the hypotheses of ``theorem`` for ``config`` without simulating the processes.

    Never raises on a failed hypothesis; failures show up in ``flags``.
    """
    if theorem not in THEOREMS:
        raise ValueError(f"theorem must be one of {THEOREMS}, got {theorem!r}")
    pair = config.kernels
    probes = default_probes() if probes is None else np.asarray(probes, dtype=float)
    notes = []
    fits = {}
    for leg in (1, 2):
        k = pair[leg]
        fits[f"square_integral_{leg}"] = _safe_fit(
            f"square_integral_{leg}", lambda x, k=k: k.sq_integral(x), probes, notes
        )
        fits[f"squared_increment_{leg}"] = _safe_fit(
            f"squared_increment_{leg}", lambda x, k=k: squared_increment_integral(k, x, k.b), probes, notes
        )
        same = KernelPair(k, k)
        fits[f"variogram_{leg}{leg}"] = _safe_fit(
            f"variogram_{leg}{leg}", lambda x, p=same: variogram(p, 1.0, x, legs=(1, 1)), probes, notes
        )
    fits["scaling_factor"] = _safe_fit(
        "scaling_factor", lambda x: scaling_factor(pair, x, require_monotone=False), probes, notes
    )

    estimates = {}
    x0 = float(probes[-1])
    try:
        c0 = scaling_factor(pair, x0, require_monotone=False)
        r11 = variogram(KernelPair(pair.k1, pair.k1), 1.0, x0, legs=(1, 1))
        r22 = variogram(KernelPair(pair.k2, pair.k2), 1.0, x0, legs=(1, 1))
        # L4 / sqrt(L0^11 L0^22) at the smallest probe
        estimates["scaling_ratio_H"] = c0 / math.sqrt(r11 * r22)
    except (CovarlabError, ValueError) as exc:
        notes.append(f"scaling_ratio_H: {exc}")
        estimates["scaling_ratio_H"] = None
    f1, f2 = fits["squared_increment_1"], fits["squared_increment_2"]
    if f1 is not None and f2 is not None:
        # L2^(1) L2^(2) at the smallest probe with the nominal indices
        l2 = [
            squared_increment_integral(k, x0, k.b) / x0 ** (2 * k.index + 1) for k in (pair.k1, pair.k2)
        ]
        estimates["l2_product"] = l2[0] * l2[1]

    try:
        estimates["cross_term_sup"] = cross_term_ratios(pair)
        estimates["cross_term_x"] = list(CROSS_TERM_X)
    except (CovarlabError, ValueError, ZeroDivisionError) as exc:
        notes.append(f"cross_term_sup: {exc}")
        estimates["cross_term_sup"] = None

    monotone = check_decreasing(pair.k1) and check_decreasing(pair.k2)
    d1, d2 = pair.k1.index, pair.k2.index
    dsum = d1 + d2
    flags = {
        "delta_range": -0.5 < d1 < 0.5 and -0.5 < d2 < 0.5,
        "delta_sum_range": -1.0 < dsum < 1.0,
        "increments_fit": f1 is not None and f2 is not None,
    }
    if theorem == "T31":
        flags["delta_sum_nonnegative"] = dsum >= 0
        try:
            estimates["g0_product"] = estimators.g0_product(pair)
            flags["g0_product_finite"] = True
        except UndefinedLimitError:
            estimates["g0_product"] = None
            flags["g0_product_finite"] = False
    else:
        flags["monotone_kernels"] = monotone
    if theorem == "T34":
        flags["volatility_present"] = config.volatility is not None
    else:
        flags["unit_volatility"] = _unit_volatility(config)

    return AssumptionAudit(
        theorem=theorem,
        rv_fits=fits,
        monotonicity_ok=monotone,
        holder_estimate=_pilot_holder(config),
        delta_sum=dsum,
        flags=flags,
        estimates=estimates,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudySpec:
    """One convergence study.

    ``tolerance=None`` calibrates the threshold from the study itself:
    ``max(3 * SE, tolerance_floor)`` at the largest ``n``.
    """

    theorem: str
    n_list: tuple
    replications: int
    base_config: Any
    tolerance: Optional[float] = None
    master_seed: int = 0
    force: bool = False
    tolerance_floor: float = TOLERANCE_FLOOR

    def __post_init__(self):
        if self.theorem not in THEOREMS:
            raise ConfigurationError(f"theorem must be one of {THEOREMS}, got {self.theorem!r}")
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list:
            raise ConfigurationError("n_list is empty")
        if any(a >= b for a, b in zip(n_list, n_list[1:])):
            raise ConfigurationError(f"n_list must be strictly increasing, got {list(n_list)}")
        object.__setattr__(self, "n_list", n_list)
        if int(self.replications) != self.replications or self.replications < 10:
            raise ConfigurationError(f"replications must be an integer >= 10, got {self.replications}")
        if self.tolerance is not None and not self.tolerance > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.theorem == "T34" and self.base_config.volatility is None:
            raise ConfigurationError("T34 studies need volatility models")


@dataclass
class PerNRecord:
    n: int
    delta_n: float
    c_delta_n: Optional[float]
    mean_sup_error: float
    rmse_endpoint_error: float
    std_error: float
    mean_endpoint_error: float
    replications: int


@dataclass
class ConvergenceReport:
    theorem: str
    per_n: List[PerNRecord]
    fitted_slope: Optional[float]
    passed: bool
    tolerance: float
    hypothesis_violating: bool
    audit: AssumptionAudit
    setup: Dict[str, Any] = field(default_factory=dict)

    @property
    def pass_(self):
        return self.passed

    def to_dict(self):
        return {
            "theorem": self.theorem,
            "setup": self.setup,
            "per_n": [asdict(r) for r in self.per_n],
            "fitted_slope": self.fitted_slope,
            "pass": self.passed,
            "tolerance": self.tolerance,
            "hypothesis_violating": self.hypothesis_violating,
            "audit": self.audit.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            theorem=d["theorem"],
            per_n=[PerNRecord(**r) for r in d["per_n"]],
            fitted_slope=d["fitted_slope"],
            passed=bool(d["pass"]),
            tolerance=float(d["tolerance"]),
            hypothesis_violating=bool(d["hypothesis_violating"]),
            audit=AssumptionAudit.from_dict(d["audit"]),
            setup=d.get("setup", {}),
        )


def worker_count(requested=None):
    """Thread count: explicit request, else ``COVARLAB_THREADS``, else the CPU count."""
    if requested is None:
        env = os.environ.get("COVARLAB_THREADS")
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(requested))


def _target_kind(theorem):
    return {"T31": "qc_limit", "T32": "integrated_correlation", "T34": "integrated_vol_correlation"}[theorem]


def _one_replication(theorem, config, c_value, replication):
    series = simulate_increments(config, replication)
    if theorem == "T31":
        est = estimators.realised_covariation(series)
    else:
        est = estimators.scaled_realised_covariation(series, c_value)
    target = estimators.integrated_target(series.bundle, _target_kind(theorem), config.kernels)
    return estimators.sup_error(est, target), float(est.values[-1] - target.values[-1])


def _describe(config):
    out = {
        "kernels": [config.kernels.k1.spec(), config.kernels.k2.spec()],
        "correlation": config.correlation.spec(),
        "T": config.T,
        "kappa": config.kappa,
        "M": config.M,
        "truncation_bound": [b if math.isfinite(b) else None for b in truncation_bound(config)],
    }
    if config.volatility is not None:
        out["volatility"] = [v.spec() for v in config.volatility]
    return out


def _monotone_within_se(means, ses):
    for k in range(len(means) - 1):
        if means[k + 1] - means[k] > math.hypot(ses[k], ses[k + 1]):
            return False
    return True


def run_study(spec, threads=None):
    """Run ``spec`` and return its :class:`ConvergenceReport`.

    Raises
    ------
    HypothesisViolation
        When the audit fails and ``spec.force`` is false.
    CovarlabError
        Simulation or quadrature failures propagate with the records
        finished so far attached as ``partial_report``.
    """
    base = spec.base_config
    if base.seed != spec.master_seed:
        base = replace(base, seed=int(spec.master_seed))
    audit = audit_assumptions(base, spec.theorem)
    violating = not audit.theorem_hypotheses_ok
    if violating and not spec.force:
        raise HypothesisViolation(audit.failures, audit)
    if spec.theorem == "T31":
        estimators.g0_product(base.kernels)

    records = []
    n_threads = worker_count(threads)
    try:
        _run_all_n(spec, base, n_threads, records)
    except CovarlabError as exc:
        # keep what finished so callers can inspect it
        exc.partial_report = _build_report(spec, base, records, audit, violating, complete=False)
        raise
    return _build_report(spec, base, records, audit, violating)


def _run_all_n(spec, base, n_threads, records):
    for n in spec.n_list:
        config = base.with_n(n)
        grid = check_budget(config)
        c_value = None
        if spec.theorem != "T31":
            c_value = scaling_factor(config.kernels, config.delta_n, require_monotone=False)
        # keep the live replications inside the memory budget
        cap = max(1, memory_budget() // max(1, grid.n_cells * BYTES_PER_CELL))
        workers = min(n_threads, cap, spec.replications)
        reps = range(spec.replications)
        if workers == 1:
            results = [_one_replication(spec.theorem, config, c_value, r) for r in reps]
        else:
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda r: _one_replication(spec.theorem, config, c_value, r), reps))
        sup = [r[0] for r in results]
        end = [r[1] for r in results]
        R = len(sup)
        mean = math.fsum(sup) / R
        var = math.fsum((s - mean) ** 2 for s in sup) / (R - 1)
        records.append(
            PerNRecord(
                n=n,
                delta_n=config.delta_n,
                c_delta_n=c_value,
                mean_sup_error=mean,
                rmse_endpoint_error=math.sqrt(math.fsum(e * e for e in end) / R),
                std_error=math.sqrt(var / R),
                mean_endpoint_error=math.fsum(end) / R,
                replications=R,
            )
        )


def _build_report(spec, base, records, audit, violating, complete=True):
    means = [r.mean_sup_error for r in records]
    ses = [r.std_error for r in records]
    slope = None
    if len(records) >= 2 and all(m > 0 for m in means):
        slope = float(np.polyfit(np.log([r.n for r in records]), np.log(means), 1)[0])
    if spec.tolerance is not None:
        tol = float(spec.tolerance)
    elif records:
        tol = max(3.0 * ses[-1], spec.tolerance_floor)
    else:
        tol = spec.tolerance_floor
    passed = complete and means[-1] <= tol and _monotone_within_se(means, ses)
    setup = {
        "n_list": list(spec.n_list),
        "replications": spec.replications,
        "master_seed": int(spec.master_seed),
        "tolerance_requested": spec.tolerance,
        "tolerance_floor": spec.tolerance_floor,
        "config": _describe(base),
        "complete": complete,
    }
    return ConvergenceReport(
        theorem=spec.theorem,
        per_n=records,
        fitted_slope=slope,
        passed=passed,
        tolerance=tol,
        hypothesis_violating=violating,
        audit=audit,
        setup=setup,
    )


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _cell(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.per_n:
        w.writerow(
            [
                _cell(x)
                for x in (
                    report.theorem,
                    r.n,
                    r.delta_n,
                    r.c_delta_n,
                    r.mean_sup_error,
                    r.rmse_endpoint_error,
                    r.std_error,
                    report.fitted_slope,
                    report.passed,
                )
            ]
        )
    return buf.getvalue()


def report_json(report):
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_report(report, path, format=None):
    """Write ``report`` as CSV or JSON; the extension picks the format unless ``format`` is given."""
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    format = format.lower()
    if format not in ("csv", "json"):
        raise ValueError(f"unknown report format {format!r}")
    text = report_csv(report) if format == "csv" else report_json(report)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report: {exc.strerror}", str(path)) from exc
    return path


def load_report(path):
    """Read a JSON report back into a :class:`ConvergenceReport`."""
    with open(path, encoding="utf-8") as fh:
        return ConvergenceReport.from_dict(json.load(fh))
