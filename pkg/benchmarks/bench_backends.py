"""Compare the numba and pure-numpy backends on the hot loops.

Each backend runs in its own interpreter (the flag is read at import time):

    python3 benchmarks/bench_backends.py            # both backends, summary table
    python3 benchmarks/bench_backends.py --cells 2000000

The child processes save their outputs and the table reports the largest
relative difference between backends. It is exactly 0 for the elementwise
loops; ``lag_sum`` differs at rounding level because ``np.dot`` sums in a
blocked order.
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

CHILD = r"""
import json, os, sys, time
import numpy as np
from covarlab import _accel
from covarlab.kernel import ExpKernel, GammaKernel, KernelPair
from covarlab.paths import JacobiCorrelation, ExpOUVolatility
from covarlab.simulator import SimulationConfig, simulate_increments

cells, repeats, outdir = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3]
rng = np.random.default_rng(0)
xi = rng.standard_normal(cells)
w = 1.0 / np.sqrt(np.arange(1, cells + 1))
positions = np.arange(0, cells, max(1, cells // 64))

cases = {
    "jacobi_euler": lambda: _accel.jacobi_euler(0.3, 1e-3, xi),
    "ou_euler": lambda: _accel.ou_euler(0.0, 0.999, 0.0, 0.03, xi),
    "mix_drivers": lambda: _accel.mix_drivers(np.tanh(xi), xi, xi[::-1].copy()),
    "compensated_cumsum": lambda: _accel.compensated_cumsum(xi),
    "lag_sum": lambda: _accel.lag_sum(w, xi, positions),
}
g = GammaKernel(-0.2, 1.0)
cfg = SimulationConfig(256, KernelPair(g, g), JacobiCorrelation(0.3), kappa=16, M=10,
                       volatility=(ExpOUVolatility(1.0, 0.3, 0.0),) * 2, method="direct")
cases["simulate_bss_direct_n256"] = lambda: np.concatenate([(s := simulate_increments(cfg, 0)).dy1, s.dy2])

out = {"backend": _accel.backend(), "results": {}}
for name, fn in cases.items():
    res = fn()  # warm-up (compilation for numba)
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t)
    np.save(os.path.join(outdir, name + ".npy"), res)
    out["results"][name] = {"seconds": best}
print(json.dumps(out))
"""


def run_backend(disable_numba, cells, repeats, outdir):
    env = dict(os.environ)
    env["COVARLAB_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    proc = subprocess.run(
        [sys.executable, "-c", CHILD, str(cells), str(repeats), outdir],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--cells", type=int, default=1_000_000, help="array length for the loop kernels")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--json", action="store_true", help="print raw JSON instead of a table")
    args = parser.parse_args(argv)

    t0 = time.perf_counter()
    tmp = tempfile.mkdtemp(prefix="covarlab-bench-")
    dirs = {b: os.path.join(tmp, b) for b in ("numba", "numpy")}
    for d in dirs.values():
        os.mkdir(d)
    fast = run_backend(False, args.cells, args.repeats, dirs["numba"])
    slow = run_backend(True, args.cells, args.repeats, dirs["numpy"])
    if args.json:
        print(json.dumps({"numba": fast, "numpy": slow}, indent=2))
        return 0
    print(f"{'kernel':<28}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max rel diff':>14}")
    for name, r in fast["results"].items():
        s = slow["results"][name]
        a = np.load(os.path.join(dirs["numba"], name + ".npy"))
        b = np.load(os.path.join(dirs["numpy"], name + ".npy"))
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))
        print(f"{name:<28}{r['seconds']:>12.4f}{s['seconds']:>12.4f}{s['seconds'] / r['seconds']:>10.1f}{diff:>14.2e}")
    print(f"(backends: {fast['backend']} vs {slow['backend']}, wall {time.perf_counter() - t0:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
