#!/usr/bin/env python3
"""Reduced-resolution 2D reconstructions from the shipped configs."""

import sys
from pathlib import Path

from potinv import experiments as ex

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

if __name__ == "__main__":
    names = sys.argv[1:] or ["elliptic_2d", "parabolic_2d"]
    for name in names:
        cfg = ex.load_config(CONFIGS / f"{name}.cfg")
        res = ex.run_experiment(cfg)
        print(name)
        for r in res.records:
            print(f"  eps={r.epsilon:.2e} e_q={r.e_q:.4e} e_u={r.e_u:.4e} iters={r.iterations}")
        ex.write_outputs(cfg, res, Path("out") / name)
