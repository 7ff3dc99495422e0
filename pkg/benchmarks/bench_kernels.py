"""Compare the numba kernels with their pure-Python fallback.

Each backend runs in its own interpreter because ``MADM_DISABLE_NUMBA`` is
read at import time.  Usage::

    python benchmarks/bench_kernels.py            # both backends, table
    python benchmarks/bench_kernels.py --events 20000
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads(horizon):
    import numpy as np

    from madm import levy, simulate
    from madm.process import ChainSpec
    from madm.kernels import dual_absorption_kernel

    spec = ChainSpec(6, 0.5, 0.4, 0.6)
    lspec = levy.LevySpec(3, 1.0, 2.0)

    def gillespie():
        tr = simulate.gillespie_run(spec, [1] * 6, horizon, seed=11)
        return len(tr)

    def levy_run():
        tr = levy.levy_simulate(lspec, [0.5] * 3, 1e-6, horizon / 10, seed=11)
        return len(tr)

    def dual():
        start = np.array([0, 1, 0, 1, 0, 0, 0, 0], dtype=np.int64)
        dual_absorption_kernel(start, int(horizon * 10), 11)
        return int(horizon * 10)

    return {"gillespie": gillespie, "levy": levy_run, "dual_walkers": dual}


def _child(horizon, repeats):
    from madm._jit import NUMBA_ENABLED

    out = {"numba": NUMBA_ENABLED}
    for name, fn in _workloads(horizon).items():
        fn()  # warm-up (includes compilation)
        best, units = float("inf"), 0
        for _ in range(repeats):
            t0 = time.perf_counter()
            units = fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = {"seconds": best, "units": units}
    print(json.dumps(out))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=200.0, help="simulated time per Gillespie run")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.child:
        _child(args.horizon, args.repeats)
        return 0
    results = {}
    for label, disable in (("numba", "0"), ("python", "1")):
        env = dict(os.environ, MADM_DISABLE_NUMBA=disable)
        cmd = [sys.executable, __file__, "--child", "--horizon", str(args.horizon), "--repeats", str(args.repeats)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[label] = json.loads(proc.stdout.strip().splitlines()[-1])
    print(f"{'workload':<14}{'units':>10}{'numba [s]':>12}{'python [s]':>12}{'speedup':>10}")
    for name in ("gillespie", "levy", "dual_walkers"):
        a, b = results["numba"][name], results["python"][name]
        if a["units"] != b["units"]:
            print(f"warning: {name} backends disagree ({a['units']} vs {b['units']} units)")
        print(f"{name:<14}{a['units']:>10}{a['seconds']:>12.4f}{b['seconds']:>12.4f}{b['seconds'] / a['seconds']:>10.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
