#!/usr/bin/env python3
"""Run the 1D noise sweeps over several seeds and print per-seed and mean rates.

    python3 scripts/run_sweeps.py elliptic_1d --seeds 0 1 2 --out out/sweeps
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from potinv import experiments as ex

def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("problem", choices=sorted(ex.PROBLEMS))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="write results.csv per seed under this directory")
    args = p.parse_args(argv)

    rates = []
    for seed in args.seeds:
        cfg = ex.ExperimentConfig(problem=args.problem, seed=seed, jobs=args.jobs)
        start = time.perf_counter()
        res = ex.run_experiment(cfg)
        print(f"seed {seed} ({time.perf_counter() - start:.1f}s)")
        for r in res.records:
            print(f"  eps={r.epsilon:.3e} delta={r.delta:.3e} e_q={r.e_q:.4e} e_u={r.e_u:.4e} iters={r.iterations}")
        print("  rates: " + ", ".join(f"{k}={v:.3f}" for k, v in res.rates.items()))
        rates.append(res.rates)
        if args.out:
            ex.write_outputs(cfg, res, Path(args.out) / f"seed{seed}")
    print("mean rates: " + ", ".join(f"{k}={np.mean([r[k] for r in rates]):.3f}" for k in rates[0]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
