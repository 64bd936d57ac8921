"""Command-line entry point: ``covarlab simulate|converge|scaling|audit``.

Configs are line-based ``key = value`` files with ``[section]`` headers and
an optional top-level ``seed``. Parsing is strict: unknown sections and keys
are errors, reported with their line number.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, CovarlabError, HypothesisViolation, UndefinedLimitError
from .experiments import THEOREMS, StudySpec, audit_assumptions, emit_report, report_csv, report_json, run_study
from .kernel import KernelPair, default_probes, parse_kernel, scaling_factor
from .paths import parse_correlation, parse_volatility
from .simulator import SimulationConfig, simulate_increments

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_HYPOTHESIS = 4


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _int_list(text):
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ValueError("expected a comma-separated list of integers")
    return [_int(t) for t in items]


def _opt_float(text):
    return None if text.strip().lower() in ("auto", "none", "") else float(text)


def _theorem(text):
    t = text.strip().upper()
    if t not in THEOREMS:
        raise ValueError(f"theorem must be one of {', '.join(THEOREMS)}")
    return t


def _format(text):
    f = text.strip().lower()
    if f not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    return f


# section -> key -> (converter, help)
SCHEMA = {
    "": {"seed": (_int, "master seed (integer)")},
    "kernels": {
        "leg1": (parse_kernel, "kernel of leg 1: gamma(delta=,lambda=) or exp(lambda=)"),
        "leg2": (parse_kernel, "kernel of leg 2 (defaults to leg1)"),
    },
    "correlation": {
        "model": (parse_correlation, "const(rho=), jacobi(init=) or sin(a=,omega=)"),
    },
    "volatility": {
        "leg1": (parse_volatility, "const(sigma=) or expou(kappa=,xi=,m=)"),
        "leg2": (parse_volatility, "volatility of leg 2 (defaults to leg1)"),
    },
    "grid": {
        "n": (_int, "coarse steps per unit time"),
        "T": (float, "horizon (default 1)"),
        "kappa": (_int, "fine cells per coarse step (default 16)"),
        "M": (_opt_float, "truncation horizon into the past (default auto = max(10, 50/lambda_min))"),
    },
    "study": {
        "theorem": (_theorem, "T31, T32 or T34"),
        "n_list": (_int_list, "comma-separated increasing n values"),
        "replications": (_int, "replications per n (>= 10)"),
        "tolerance": (_opt_float, "acceptance threshold at the largest n (default auto = max(3 SE, floor))"),
        "tolerance_floor": (float, "floor of the automatic tolerance (default 0.02)"),
    },
    "output": {
        "path": (str, "output file (default stdout)"),
        "format": (_format, "csv or json (default from extension)"),
    },
}


def schema_help():
    lines = ["config keys:"]
    for section, keys in SCHEMA.items():
        for key, (_, text) in keys.items():
            name = f"{section}.{key}" if section else key
            lines.append(f"  {name:<24} {text}")
    return "\n".join(lines)


@dataclass
class CliConfig:
    """Parsed and type-checked config values, keyed by section."""

    values: dict = field(default_factory=dict)
    source: str = "<config>"

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def has_section(self, section):
        return section in self.values


def _convert(section, key, raw, where):
    keys = SCHEMA.get(section)
    if keys is None:
        raise ConfigurationError(f"{where}: unknown section [{section}]")
    spec = keys.get(key)
    if spec is None:
        name = f"{section}.{key}" if section else key
        raise ConfigurationError(f"{where}: unknown key {name!r}")
    try:
        return spec[0](raw)
    except (ValueError, TypeError) as exc:
        name = f"{section}.{key}" if section else key
        raise ConfigurationError(f"{where}: bad value for {name}: {exc}") from None


def parse_config(text, source="<config>"):
    """Parse config text into a :class:`CliConfig`."""
    cfg = CliConfig(source=source)
    section = ""
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        where = f"{source}:{lineno}"
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigurationError(f"{where}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in SCHEMA or not section:
                raise ConfigurationError(f"{where}: unknown section [{section}]")
            cfg.values.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"{where}: expected 'key = value', got {stripped!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if (section, key) in seen:
            raise ConfigurationError(f"{where}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        cfg.values.setdefault(section, {})[key] = _convert(section, key, raw, where)
    return cfg


def apply_override(cfg, assignment):
    """Apply one ``section.key=value`` (or ``seed=value``) override."""
    if "=" not in assignment:
        raise ConfigurationError(f"--set {assignment!r}: expected section.key=value")
    name, raw = (s.strip() for s in assignment.split("=", 1))
    section, _, key = name.rpartition(".")
    cfg.values.setdefault(section, {})[key] = _convert(section, key, raw, f"--set {name}")


def load_config(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {args.config}: {exc.strerror}") from None
    cfg = parse_config(text, args.config)
    for assignment in args.set or ():
        apply_override(cfg, assignment)
    if getattr(args, "seed", None) is not None:
        cfg.values.setdefault("", {})["seed"] = args.seed
    return cfg


def _require(cfg, section, key=None):
    if not cfg.has_section(section):
        raise ConfigurationError(f"{cfg.source}: missing section [{section}]")
    if key is not None and cfg.get(section, key) is None:
        raise ConfigurationError(f"{cfg.source}: missing key {section}.{key}")
    return cfg.get(section, key) if key else None


def simulation_config(cfg, n=None):
    """Build a :class:`SimulationConfig` from the parsed sections."""
    k1 = _require(cfg, "kernels", "leg1")
    k2 = cfg.get("kernels", "leg2", k1)
    corr = _require(cfg, "correlation", "model")
    vol = None
    if cfg.has_section("volatility"):
        v1 = _require(cfg, "volatility", "leg1")
        vol = (v1, cfg.get("volatility", "leg2", v1))
    if n is None:
        n = cfg.get("grid", "n")
        if n is None:
            study_n = cfg.get("study", "n_list")
            if not study_n:
                raise ConfigurationError(f"{cfg.source}: missing key grid.n")
            n = study_n[0]
    return SimulationConfig(
        n=n,
        kernels=KernelPair(k1, k2),
        correlation=corr,
        T=cfg.get("grid", "T", 1.0),
        kappa=cfg.get("grid", "kappa", 16),
        M=cfg.get("grid", "M"),
        seed=cfg.get("", "seed", 0),
        volatility=vol,
    )


def _open_output(cfg, override=None):
    path = override or cfg.get("output", "path")
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def cmd_simulate(args):
    cfg = load_config(args)
    config = simulation_config(cfg)
    series = simulate_increments(config, args.replication)
    out, close = _open_output(cfg, args.output)
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("i", "t_i", "dy1", "dy2"))
        for i in range(len(series)):
            w.writerow((i + 1, repr((i + 1) * config.delta_n), repr(float(series.dy1[i])), repr(float(series.dy2[i]))))
    finally:
        if close:
            out.close()
    return EXIT_OK


def study_spec(cfg, force=False):
    theorem = _require(cfg, "study", "theorem")
    n_list = _require(cfg, "study", "n_list")
    base = simulation_config(cfg, n=n_list[0])
    return StudySpec(
        theorem=theorem,
        n_list=tuple(n_list),
        replications=cfg.get("study", "replications", 100),
        base_config=base,
        tolerance=cfg.get("study", "tolerance"),
        master_seed=cfg.get("", "seed", 0),
        force=force,
        tolerance_floor=cfg.get("study", "tolerance_floor", 0.02),
    )


def _print_per_n(report):
    for r in report.per_n:
        c = "" if r.c_delta_n is None else f" c={r.c_delta_n:.6g}"
        print(
            f"n={r.n} delta_n={r.delta_n:.6g}{c} mean_sup_error={r.mean_sup_error:.6g} "
            f"rmse_endpoint={r.rmse_endpoint_error:.6g} se={r.std_error:.3g}",
            file=sys.stderr,
        )


def cmd_converge(args):
    cfg = load_config(args)
    spec = study_spec(cfg, force=args.force)
    try:
        report = run_study(spec, threads=args.threads)
    except CovarlabError as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None:
            print("partial results before the failure:", file=sys.stderr)
            _print_per_n(partial)
        raise
    path = args.output or cfg.get("output", "path")
    fmt = cfg.get("output", "format")
    _print_per_n(report)
    if path is None or path == "-":
        sys.stdout.write(report_json(report) if fmt == "json" else report_csv(report))
    else:
        emit_report(report, path, fmt)
    flag = " (hypothesis-violating)" if report.hypothesis_violating else ""
    print(("PASS" if report.passed else "FAIL") + f" tolerance={report.tolerance:.6g}{flag}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _delta_list(text):
    if text is None:
        return [float(x) for x in default_probes()]
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise ConfigurationError("empty delta list")
    try:
        deltas = [float(t) for t in items]
    except ValueError as exc:
        raise ConfigurationError(f"bad delta list: {exc}") from None
    if any(not d > 0 for d in deltas):
        raise ConfigurationError("deltas must be positive")
    return sorted(set(deltas), reverse=True)


def cmd_scaling(args):
    try:
        k1 = parse_kernel(args.kernel1)
        k2 = parse_kernel(args.kernel2) if args.kernel2 else k1
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    deltas = _delta_list(args.deltas)
    pair = KernelPair(k1, k2)
    cs = [scaling_factor(pair, d, require_monotone=False) for d in deltas]
    out, close = _open_output(CliConfig(), args.output)
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("delta_n", "c", "local_slope"))
        for k, (d, c) in enumerate(zip(deltas, cs)):
            slope = "" if k == 0 else repr(math.log(c / cs[k - 1]) / math.log(d / deltas[k - 1]))
            w.writerow((repr(d), repr(c), slope))
    finally:
        if close:
            out.close()
    target = k1.index + k2.index + 1
    if len(deltas) >= 2:
        exponent = float(np.polyfit(np.log(deltas), np.log(cs), 1)[0])
        print(f"fitted exponent {exponent:.6f} vs delta1+delta2+1 = {target:.6f}")
    else:
        print(f"fitted exponent n/a (one delta) vs delta1+delta2+1 = {target:.6f}")
    return EXIT_OK


def cmd_audit(args):
    cfg = load_config(args)
    theorem = args.theorem or _require(cfg, "study", "theorem")
    config = simulation_config(cfg)
    audit = audit_assumptions(config, theorem)
    json.dump(audit.to_dict(), sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="covarlab",
        description="Simulate bivariate moving-average / BSS processes and study realised covariation.",
        epilog=schema_help() + "\n\nexit codes: 0 ok, 1 study FAIL, 2 config error, 3 numerical failure, 4 hypothesis gate",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int, help="override the master seed")
        return p

    epilog = schema_help()
    fmt = argparse.RawDescriptionHelpFormatter
    p = with_config(sub.add_parser("simulate", help="write one replication of increments as CSV", epilog=epilog, formatter_class=fmt))
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("-o", "--output", help="output CSV (default output.path or stdout)")
    p.set_defaults(func=cmd_simulate)

    p = with_config(sub.add_parser("converge", help="run a convergence study", epilog=epilog, formatter_class=fmt))
    p.add_argument("--force", action="store_true", help="run even if the assumption audit fails")
    p.add_argument("--threads", type=int, help="worker threads (default COVARLAB_THREADS or CPU count)")
    p.add_argument("-o", "--output", help="report path; .json selects JSON")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("scaling", help="tabulate the scaling factor c(delta)")
    p.add_argument("kernel1", help="kernel spec, e.g. 'gamma(delta=-0.2,lambda=1)'")
    p.add_argument("kernel2", nargs="?", help="second kernel (default: same as the first)")
    p.add_argument("--deltas", help="comma-separated step sizes (default: 12 halvings from 1e-2)")
    p.add_argument("-o", "--output", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_scaling)

    p = with_config(sub.add_parser("audit", help="print the assumption audit as JSON", epilog=epilog, formatter_class=fmt))
    p.add_argument("--theorem", type=_theorem, help="theorem to audit (default study.theorem)")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HypothesisViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except UndefinedLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CovarlabError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
