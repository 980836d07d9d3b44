"""Time the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the switch is read at import
time. Usage: python benchmarks/bench_kernels.py [--n 4000] [--trials 20000]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from mdpcfl._accel import backend_name
from mdpcfl import kernels
from mdpcfl.mdpc_code import peg_construct, erasure_patterns

n, r, dc, trials, t_tot = map(int, sys.argv[1:6])
out = {"backend": backend_name()}
# warm-up so numba compilation (or cache loading) is not timed
h_small = peg_construct(60, 30, 6, seed=0)
kernels.peel_failures(*h_small.adjacency, erasure_patterns(60, 10, 10, 0))

t0 = time.perf_counter()
h = peg_construct(n, r, dc, seed=0)
out["peg_s"] = time.perf_counter() - t0
pats = erasure_patterns(n, t_tot, trials, seed=1)
t0 = time.perf_counter()
fails = kernels.peel_failures(*h.adjacency, pats)
out["peel_s"] = time.perf_counter() - t0
out["peel_trials_per_s"] = trials / out["peel_s"]
out["failures"] = int(fails.sum())
out["h_digest"] = int(np.bitwise_xor.reduce(np.concatenate(h.rows) * 2654435761 % (1 << 31)))
print(json.dumps(out))
"""


def run(flag: str, args) -> dict:
    env = dict(os.environ, MDPCFL_DISABLE_NUMBA=flag)
    cmd = [sys.executable, "-c", WORKER, str(args.n), str(args.n - args.k), str(args.check_degree), str(args.trials), str(args.t_tot)]
    res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--k", type=int, default=2000)
    p.add_argument("--check-degree", type=int, default=90)
    p.add_argument("--t-tot", type=int, default=256)
    p.add_argument("--trials", type=int, default=20000)
    args = p.parse_args(argv)
    rows = [run("0", args), run("1", args)]
    for r in rows:
        print(f"{r['backend']:>6}: PEG {r['peg_s']:8.2f} s   peeling {r['peel_trials_per_s']:10.0f} trials/s   failures {r['failures']}")
    fast, slow = rows
    print(f"speed-up: PEG x{slow['peg_s'] / fast['peg_s']:.1f}, peeling x{slow['peel_s'] / fast['peel_s']:.1f}")
    print("identical outputs:", fast["h_digest"] == slow["h_digest"] and fast["failures"] == slow["failures"])


if __name__ == "__main__":
    main()
