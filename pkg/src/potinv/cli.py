"""Command line driver.

    python3 -m potinv run CONFIG [--out DIR] [--seed N] [--jobs K]
    python3 -m potinv forward CONFIG
    python3 -m potinv gradcheck CONFIG
    python3 -m potinv stability CONFIG
    python3 -m potinv green C1 A B

Exit status is 0 on success, 1 when any run (or check) fails and 2 on a bad config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis, experiments
from .experiments import ConfigError, ExperimentConfig
from .fem import interpolate, norm_l2
from .forward import solve_elliptic, solve_parabolic
from .inverse import default_q0, gradient_check
from .mesh import build_mesh

GRADCHECK_TOL = 1e-5


def _load(args) -> ExperimentConfig:
    path = args.config_path or args.config
    if path is None:
        raise ConfigError("no config file given")
    try:
        return experiments.load_config(path, seed=args.seed, jobs=args.jobs, output_dir=args.out)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _working_mesh(cfg: ExperimentConfig):
    return build_mesh(cfg.setup.dim, max(2, int(round(1.0 / cfg.h_init))))


def cmd_run(cfg: ExperimentConfig) -> int:
    result = experiments.run_experiment(cfg)
    out = experiments.write_outputs(cfg, result)
    print(f"{'epsilon':>10} {'delta':>10} {'alpha':>9} {'n':>5} {'e_q':>10} {'e_u':>10} {'iters':>5}")
    for r in result.records:
        if r.ok:
            print(f"{r.epsilon:10.3e} {r.delta:10.3e} {r.alpha:9.2e} {round(1 / r.h):5d} "
                  f"{r.e_q:10.3e} {r.e_u:10.3e} {r.iterations:5d}")
        else:
            print(f"{r.epsilon:10.3e} failed: {r.error}")
    print("rates: " + ", ".join(f"{k}={v:.3f}" for k, v in result.rates.items()))
    print(f"wrote {out / 'results.csv'}")
    return 1 if result.failed else 0


def cmd_forward(cfg: ExperimentConfig) -> int:
    setup = cfg.setup
    mesh = _working_mesh(cfg)
    q = interpolate(mesh, setup.q_true)
    if setup.parabolic:
        N = max(1, int(round(cfg.T / cfg.tau_init)))
        traj = solve_parabolic(mesh, q, setup.f, setup.u0, cfg.T, N)
        u, C = traj.states[-1], analysis.check_positivity(mesh, traj.states[1:], 2.0)
        print(f"n={mesh.n} N={N} tau={traj.tau:.3e}")
    else:
        u = solve_elliptic(mesh, q, setup.f).values
        C = analysis.check_positivity(mesh, u, 2.0)
        print(f"n={mesh.n}")
    print(f"||u||_L2={norm_l2(mesh, u):.6e} max|u|={np.abs(u).max():.6e} positivity C(beta=2)={C:.6e}")
    path = _out_dir(cfg) / "forward.dat"
    with open(path, "w") as fh:
        for x, v in zip(mesh.nodes, u):
            fh.write(" ".join(format(c, ".17g") for c in x) + f" {v:.17g}\n")
    print(f"wrote {path}")
    return 0


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    obs = experiments._observation(cfg, 0)
    coupling = experiments.resolve_coupling(cfg, obs.delta)
    problem, _ = experiments.build_problem(cfg, coupling, obs)
    q = default_q0(problem.mesh, cfg.q0_value, cfg.c0, cfg.c1)
    errs = gradient_check(problem, q, directions=10, seed=cfg.seed)
    for k, e in enumerate(errs):
        print(f"direction {k}: relative error {e:.3e}")
    ok = bool(np.all(errs <= GRADCHECK_TOL))
    print(f"max {errs.max():.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def cmd_stability(cfg: ExperimentConfig) -> int:
    mesh = _working_mesh(cfg)
    reports = analysis.sample_stability(mesh, cfg.setup.f, cfg.pairs, cfg.seed, cfg.c0, cfg.c1)
    ratios = np.array([r.ratio for r in reports])
    path = _out_dir(cfg) / "stability.csv"
    with open(path, "w") as fh:
        fh.write("lhs,rhs,ratio\n")
        for r in reports:
            fh.write(f"{r.lhs:.17g},{r.rhs:.17g},{r.ratio:.17g}\n")
    med = float(np.median(ratios))
    ok = bool(np.all(np.isfinite(ratios)) and ratios.max() <= 10 * med)
    print(f"pairs={len(reports)} min={ratios.min():.4e} median={med:.4e} max={ratios.max():.4e}")
    print(f"wrote {path}")
    return 0 if ok else 1


def cmd_green(c1: float, a: float, b: float) -> int:
    C = analysis.green_lower_bound_constant(c1, a, b)
    t = np.linspace(a, b, 173)
    X, Y = np.meshgrid(t, t, indexing="ij")
    dist = np.minimum(X - a, b - X)
    sel = np.abs(X - Y) <= 0.5 * dist
    holds = bool(np.all(analysis.green_1d(X[sel], Y[sel], c1, a, b) >= C * np.abs(X[sel] - Y[sel])))
    mid = 0.5 * (a + b)
    print(f"G(mid, mid) = {analysis.green_1d(mid, mid, c1, a, b):.12e}")
    print(f"lower bound constant C = {C:.12e}; holds on a 173x173 grid: {holds}")
    return 0 if holds else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="potinv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "forward", "gradcheck", "stability"):
        p = sub.add_parser(verb)
        p.add_argument("config_path", nargs="?", help="config file (key = value lines)")
        p.add_argument("--config", help="config file, alternative to the positional argument")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
    g = sub.add_parser("green")
    g.add_argument("c1", type=float)
    g.add_argument("a", type=float)
    g.add_argument("b", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "green":
            return cmd_green(args.c1, args.a, args.b)
        cfg = _load(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return {"run": cmd_run, "forward": cmd_forward, "gradcheck": cmd_gradcheck,
            "stability": cmd_stability}[args.verb](cfg)


if __name__ == "__main__":
    sys.exit(main())
