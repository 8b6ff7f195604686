#!/usr/bin/env python3
"""Compare the compiled and pure-python kernel backends.

Times the two hot kernels in isolation and a full consensus run end to end,
and verifies that results are bit-identical either way.  The full-run rows
spawn subprocesses because the backend is chosen at import time.

Usage: python benchmarks/compare_backends.py [--runs 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from cobsim._kernels import load_backend

FULL_RUN = """
import json, time
from cobsim import kernel_backend, scenario
cfg = scenario.ScenarioConfig.from_dict({
    "mode": "simulate", "n": 100, "byzantine_fraction": 0.3, "adversary": "equivocate",
    "committee": 40, "m": 20, "observation_plan": "mixed", "seed": 0,
})
t0 = time.perf_counter()
digests = []
for seed in range(%(runs)d):
    r = scenario.run_simulate(cfg, seed)
    digests.append(r.trace.digest())
dt = time.perf_counter() - t0
print(json.dumps({"backend": kernel_backend, "seconds": dt, "digests": digests}))
"""


def bench_kernels(backend, reps=200):
    rng = np.random.default_rng(1)
    hops = rng.integers(0, 6, 200).astype(np.int32)
    deliveries = rng.uniform(0, 2, (60, 200))
    deadlines = rng.uniform(1.0, 1.5, 200)
    senders = np.sort(rng.integers(0, 50, 60)).astype(np.int32)
    payloads = rng.integers(0, 4, (60, 20)).astype(np.int32)

    t0 = time.perf_counter()
    for k in range(reps):
        backend.delivery_times(float(k), hops, k * 977, 0.02, 0.1, 1.0)
    t_delivery = (time.perf_counter() - t0) / reps

    t0 = time.perf_counter()
    for _ in range(reps):
        backend.tally_votes(deliveries, deadlines, senders, payloads, 4)
    t_tally = (time.perf_counter() - t0) / reps
    return t_delivery, t_tally


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=5, help="full consensus runs per backend")
    args = ap.parse_args()

    print(f"{'kernel':<28}{'python':>12}{'cython':>12}{'speedup':>10}")
    try:
        cy = load_backend("cython")
    except ImportError:
        print("compiled backend not built; run `pip install -e . --no-build-isolation`")
        return 1
    py = load_backend("python")
    (pd, pt), (cd, ct) = bench_kernels(py), bench_kernels(cy)
    print(f"{'delivery_times (200 dests)':<28}{pd * 1e6:>10.1f}us{cd * 1e6:>10.1f}us{pd / cd:>9.1f}x")
    print(f"{'tally_votes (60x200x20x4)':<28}{pt * 1e6:>10.1f}us{ct * 1e6:>10.1f}us{pt / ct:>9.1f}x")

    rows = {}
    for name, flag in (("python", "1"), ("cython", "0")):
        env = dict(os.environ, COBSIM_PURE_PYTHON=flag)
        proc = subprocess.run([sys.executable, "-c", FULL_RUN % {"runs": args.runs}],
                              capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(proc.stderr)
            return 1
        rows[name] = json.loads(proc.stdout)
        assert rows[name]["backend"] == name
    same = rows["python"]["digests"] == rows["cython"]["digests"]
    ps, cs = rows["python"]["seconds"], rows["cython"]["seconds"]
    print(f"{'full consensus run x' + str(args.runs):<28}{ps:>11.2f}s{cs:>11.2f}s{ps / cs:>9.1f}x")
    print(f"trace digests identical across backends: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    sys.exit(main())
