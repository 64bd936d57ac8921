import csv
import io
import json
import subprocess
import sys

import pytest

from covarlab import cli
from covarlab.errors import ConfigurationError

BASE = """\
seed = 3
[kernels]
leg1 = exp(lambda=1)
[correlation]
model = const(rho=0.5)
[grid]
n = 32
kappa = 4
M = 1
[study]
theorem = T32
n_list = 32, 128
replications = 10
"""


@pytest.fixture
def config(tmp_path):
    def write(text=BASE, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    return write


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# --- parser ------------------------------------------------------------------------

def test_parse_config_values():
    cfg = cli.parse_config(BASE)
    assert cfg.get("", "seed") == 3
    assert cfg.get("grid", "n") == 32
    assert cfg.get("study", "n_list") == [32, 128]
    assert cfg.get("grid", "M") == 1.0


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[kernels]\nleg3 = exp(lambda=1)\n", "unknown key"),
        ("[nowhere]\n", "unknown section"),
        ("[grid]\nn 32\n", "expected 'key = value'"),
        ("[grid]\nn = 3.5\n", "bad value for grid.n"),
        ("[grid]\nn = 4\nn = 8\n", "duplicate key"),
        ("[grid\n", "malformed section"),
    ],
)
def test_parse_config_diagnostics(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment) as info:
        cli.parse_config(text, "x.cfg")
    assert "x.cfg:" in str(info.value)


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        cli.main(["converge", "--help"])
    out = capsys.readouterr().out
    for section, keys in cli.SCHEMA.items():
        for key in keys:
            assert (f"{section}.{key}" if section else key) in out


# --- simulate ----------------------------------------------------------------------

def test_simulate_is_deterministic(config, capsys):
    path = config()
    code, out1, _ = run(["simulate", path], capsys)
    _, out2, _ = run(["simulate", path], capsys)
    assert code == 0 and out1 == out2
    rows = list(csv.reader(io.StringIO(out1)))
    assert rows[0] == ["i", "t_i", "dy1", "dy2"]
    assert len(rows) == 1 + 32
    _, out3, _ = run(["simulate", path, "--seed", "4"], capsys)
    assert out3 != out1


def test_simulate_to_file_and_override(config, tmp_path, capsys):
    target = tmp_path / "series.csv"
    code, _, _ = run(["simulate", config(), "--set", "grid.n=16", "-o", str(target)], capsys)
    assert code == 0
    assert len(target.read_text().splitlines()) == 1 + 16


def test_missing_section_is_config_error(config, capsys):
    code, _, err = run(["simulate", config("[kernels]\nleg1 = exp(lambda=1)\n[grid]\nn = 8\n")], capsys)
    assert code == cli.EXIT_CONFIG
    assert "missing section [correlation]" in err


def test_missing_file_is_config_error(tmp_path, capsys):
    code, _, err = run(["simulate", str(tmp_path / "nope.cfg")], capsys)
    assert code == cli.EXIT_CONFIG and "cannot read config" in err


# --- converge ----------------------------------------------------------------------

def test_converge_pass_and_outputs(config, tmp_path, capsys):
    target = tmp_path / "r.json"
    argv = ["converge", config(), "-o", str(target), "--threads", "1", "--set", "study.tolerance=1.0"]
    code, _, err = run(argv, capsys)
    assert code == cli.EXIT_OK
    assert "PASS" in err and "n=128" in err
    report = json.loads(target.read_text())
    assert [r["n"] for r in report["per_n"]] == [32, 128]


def test_converge_threads_do_not_change_output(config, capsys):
    path = config()
    _, one, _ = run(["converge", path, "--threads", "1"], capsys)
    _, three, _ = run(["converge", path, "--threads", "3"], capsys)
    assert one == three
    assert one.splitlines()[0] == "theorem,n,delta_n,c_delta_n,mean_sup_error,rmse_endpoint,std_error,slope,pass"


def test_converge_fail_exit_code(config, capsys):
    code, _, err = run(["converge", config(), "--set", "study.tolerance=1e-9"], capsys)
    assert code == cli.EXIT_FAIL and "FAIL" in err


def test_converge_hypothesis_violation_and_force(config, capsys):
    text = BASE.replace("exp(lambda=1)", "gamma(delta=0.3,lambda=1)")
    path = config(text)
    code, _, err = run(["converge", path], capsys)
    assert code == cli.EXIT_HYPOTHESIS and "monotone_kernels" in err
    code, _, err = run(["converge", path, "--force"], capsys)
    assert code in (cli.EXIT_OK, cli.EXIT_FAIL)
    assert "hypothesis-violating" in err


def test_converge_undefined_limit(config, capsys):
    text = BASE.replace("exp(lambda=1)", "gamma(delta=-0.2,lambda=1)").replace("T32", "T31")
    code, _, _ = run(["converge", config(text), "--force"], capsys)
    assert code == cli.EXIT_HYPOTHESIS


def test_converge_budget_failure_reports_partial(config, capsys, monkeypatch):
    monkeypatch.setenv("COVARLAB_MEMORY_BUDGET", "100000")
    code, _, err = run(["converge", config(), "--set", "study.n_list=32,4096"], capsys)
    assert code == cli.EXIT_CONFIG
    assert "partial results" in err and "n=32" in err


# --- scaling and audit -------------------------------------------------------------

def test_scaling_reports_exponent(capsys):
    code, out, _ = run(["scaling", "gamma(delta=-0.2,lambda=1)"], capsys)
    assert code == 0
    line = [l for l in out.splitlines() if l.startswith("fitted exponent")][0]
    fitted = float(line.split()[2])
    assert fitted == pytest.approx(0.6, abs=0.05)
    assert "delta1+delta2+1 = 0.6" in line


def test_scaling_exp_closed_form(capsys):
    code, out, _ = run(["scaling", "exp(lambda=1)", "--deltas", "0.1"], capsys)
    assert code == 0
    assert "0.0951625819" in out  # 1 - e^{-0.1}


def test_scaling_bad_input(capsys):
    assert run(["scaling", "exp(lambda=1)", "--deltas", ""], capsys)[0] == cli.EXIT_CONFIG
    assert run(["scaling", "exp(lambda=1)", "--deltas", "0.1,-1"], capsys)[0] == cli.EXIT_CONFIG
    assert run(["scaling", "weird(x=1)"], capsys)[0] == cli.EXIT_CONFIG


def test_audit_json(config, capsys):
    code, out, _ = run(["audit", config(), "--theorem", "T31"], capsys)
    assert code == 0
    audit = json.loads(out)
    assert audit["theorem"] == "T31"
    assert audit["estimates"]["g0_product"] == 1.0


def test_console_entry_point(config):
    proc = subprocess.run(
        [sys.executable, "-m", "covarlab.cli", "simulate", config(), "--set", "grid.n=8"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "i,t_i,dy1,dy2"
