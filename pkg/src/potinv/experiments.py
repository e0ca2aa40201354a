"""Noise-level sweeps: presets, parameter coupling, metrics and CSV/plot output."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .fem import interpolate
from .forward import TimeWindow, solve_parabolic
from .inverse import (
    CGOptions, TikhonovProblem, default_q0, make_observation_elliptic,
    make_observation_parabolic, reconstruct,
)
from .mesh import build_mesh, interior_region


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# test problems

@dataclass(frozen=True)
class ProblemSetup:
    name: str
    dim: int
    q_true: object
    f: object = 1.0
    u0: object = None
    T0: float = 0.0
    T: float = 0.01

    @property
    def parabolic(self) -> bool:
        return self.u0 is not None


def _q_ell_1d(x):
    return 1.0 + x * (1.0 - x) * np.sin(2 * np.pi * x)


def _q_ell_2d(x, y):
    return 1.0 + y * (1.0 - y) * np.sin(np.pi * x)


def _q_par_1d(x):
    return 1.0 + np.sin(2 * np.pi * x) / 2


def _u0_par_1d(x):
    return np.sin(np.pi * x)


def _q_par_2d(x, y):
    return 1.0 + np.sin(np.pi * x) * np.sin(np.pi * y) / 2


def _u0_par_2d(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


PROBLEMS = {
    "elliptic_1d": ProblemSetup("elliptic_1d", 1, _q_ell_1d),
    "elliptic_2d": ProblemSetup("elliptic_2d", 2, _q_ell_2d),
    "parabolic_1d": ProblemSetup("parabolic_1d", 1, _q_par_1d, u0=_u0_par_1d),
    "parabolic_2d": ProblemSetup("parabolic_2d", 2, _q_par_2d, u0=_u0_par_2d),
}

# (alpha, h, tau) used at the largest noise level, plus data mesh sizes
_ANCHORS = {
    "elliptic_1d": dict(alpha_init=2e-7, h_init=2e-2, n_data=4096),
    "elliptic_2d": dict(alpha_init=1e-6, h_init=1e-1, n_data=128),
    "parabolic_1d": dict(alpha_init=1e-8, h_init=2e-2, tau_init=1e-3, n_data=2048, N_data=4096),
    "parabolic_2d": dict(alpha_init=1e-6, h_init=1e-1, tau_init=1e-3, n_data=64, N_data=256),
}


_EPSILONS = {
    "elliptic_1d": (2e-2, 5e-3, 1.25e-3, 3.13e-4, 7.81e-5, 1.95e-5),
    "elliptic_2d": (2e-2, 5e-3, 1.25e-3, 3.13e-4, 7.81e-5, 1.95e-5),
    "parabolic_1d": (1e-2, 2.5e-3, 6.25e-4, 1.56e-4, 3.91e-5),
    "parabolic_2d": (1e-2, 2.5e-3, 6.25e-4, 1.56e-4, 3.91e-5),
}


# --------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    problem: str = "elliptic_1d"
    epsilons: Optional[list] = None  # defaults to the standard noise levels of the problem
    # coupling alpha = alpha0 delta^2, 1/n = h0 sqrt(delta), tau = tau0 delta;
    # constants left unset are anchored so the largest noise level uses the *_init values
    alpha0: Optional[float] = None
    h0: Optional[float] = None
    tau0: Optional[float] = None
    alpha_init: Optional[float] = None
    h_init: Optional[float] = None
    tau_init: Optional[float] = None
    c0: float = 0.4
    c1: float = 2.0
    seed: int = 0
    q0_value: float = 1.0
    output_dir: str = "out"
    n_data: Optional[int] = None
    N_data: Optional[int] = None
    T0: Optional[float] = None
    T: Optional[float] = None
    margin: float = 0.1
    max_iters: int = 200
    grad_tol: Optional[float] = 0.0
    rel_grad_tol: float = 1e-6
    alpha_min: float = 1e-12
    n_max: int = 512
    timing: bool = False
    jobs: int = 1
    pairs: int = 200

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(PROBLEMS)}")
        for key, value in _ANCHORS[self.problem].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        setup = PROBLEMS[self.problem]
        if self.T0 is None:
            self.T0 = setup.T0
        if self.T is None:
            self.T = setup.T
        if self.epsilons is None:
            self.epsilons = list(_EPSILONS[self.problem])
        self.epsilons = [float(e) for e in self.epsilons]
        if not self.epsilons:
            raise ConfigError("epsilons must not be empty")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ConfigError("epsilons must be strictly decreasing")
        if any(e < 0 for e in self.epsilons):
            raise ConfigError("epsilons must be nonnegative")
        for key in ("alpha0", "h0", "tau0", "alpha_init", "h_init", "tau_init"):
            v = getattr(self, key)
            if v is not None and not v > 0:
                raise ConfigError(f"{key} must be positive")
        if not 0 <= self.c0 < self.c1:
            raise ConfigError("need 0 <= c0 < c1")

    @property
    def setup(self) -> ProblemSetup:
        return PROBLEMS[self.problem]


def _parse_value(raw: str, annotation: str):
    raw = raw.strip()
    if "list" in annotation:
        return [float(v) for v in raw.replace(",", " ").split()]
    if raw.lower() in ("none", ""):
        return None
    if "bool" in annotation:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in annotation:
        return int(raw)
    if "float" in annotation:
        return float(raw)
    return raw


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    fields = {f.name: str(f.type) for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(raw, fields[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), **overrides)


def format_config(cfg: ExperimentConfig) -> str:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ", ".join(format(x, ".17g") for x in v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# coupling

@dataclass(frozen=True)
class Coupling:
    alpha0: float
    h0: float
    tau0: Optional[float]


def resolve_coupling(cfg: ExperimentConfig, delta_max: float) -> Coupling:
    """Fill unset coupling constants from the anchors at the largest noise level."""
    def anchored(const, init, power):
        if const is not None:
            return const
        if delta_max <= 0:
            return None
        return init / delta_max**power

    tau0 = anchored(cfg.tau0, cfg.tau_init, 1.0) if cfg.setup.parabolic else None
    return Coupling(
        anchored(cfg.alpha0, cfg.alpha_init, 2.0),
        anchored(cfg.h0, cfg.h_init, 0.5),
        tau0,
    )


def coupled_parameters(cfg: ExperimentConfig, coupling: Coupling, delta: float):
    """``(alpha, n, N)`` for one noise level; ``N`` is None for elliptic problems."""
    n_cap = max(2, cfg.n_data // 2)
    if delta <= 0 or coupling.alpha0 is None:
        alpha, n = cfg.alpha_min, min(cfg.n_max, n_cap)
        N = cfg.N_data // 2 if cfg.setup.parabolic else None
        return alpha, n, N
    alpha = coupling.alpha0 * delta**2
    n = int(min(max(round(1.0 / (coupling.h0 * math.sqrt(delta))), 2), n_cap))
    N = None
    if cfg.setup.parabolic:
        N = snap_steps(cfg.T / (coupling.tau0 * delta), cfg.N_data, cfg.T0, cfg.T)
    return alpha, n, N


def snap_steps(target: float, N_data: int, T0: float, T: float) -> int:
    """Step count nearest ``target`` (in log scale) that divides ``N_data`` and keeps T0 on grid."""
    best = None
    for N in range(1, N_data + 1):
        if N_data % N:
            continue
        k = T0 * N / T
        if abs(k - round(k)) > 1e-9:
            continue
        score = abs(math.log(N / max(target, 1e-300)))
        if best is None or score < best[0] - 1e-12:
            best = (score, N)
    if best is None:
        raise ConfigError(f"no step count divides N_data={N_data} with T0 on the grid")
    return best[1]


# --------------------------------------------------------------------------
# sweep

CSV_FIELDS = ("epsilon", "delta", "alpha", "h", "tau", "e_q", "e_q_interior", "e_u",
              "iterations", "wall_time")


@dataclass
class RunRecord:
    epsilon: float
    delta: float = math.nan
    alpha: float = math.nan
    h: float = math.nan
    tau: float = math.nan
    e_q: float = math.nan
    e_q_interior: float = math.nan
    e_u: float = math.nan
    iterations: int = 0
    wall_time: float = 0.0
    error: Optional[str] = None
    stop_reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepResult:
    records: list
    rates: dict
    coupling: Coupling
    reconstructions: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(not r.ok for r in self.records)


def _seed_for(cfg: ExperimentConfig, index: int):
    # independent stream per (seed, noise index)
    return [int(cfg.seed), int(index)]


def _observation(cfg: ExperimentConfig, index: int):
    setup = cfg.setup
    mesh = build_mesh(setup.dim, cfg.n_data)
    q = interpolate(mesh, setup.q_true)
    eps = cfg.epsilons[index]
    if setup.parabolic:
        window = TimeWindow(cfg.T0, cfg.T, cfg.N_data)
        return make_observation_parabolic(mesh, q, setup.f, setup.u0, window, eps, _seed_for(cfg, index))
    return make_observation_elliptic(mesh, q, setup.f, eps, _seed_for(cfg, index))


def _cg_options(cfg: ExperimentConfig) -> CGOptions:
    return CGOptions(max_iters=cfg.max_iters, grad_tol=cfg.grad_tol, rel_grad_tol=cfg.rel_grad_tol)


def build_problem(cfg: ExperimentConfig, coupling: Coupling, obs):
    """Coupled discrete problem for one observation; returns ``(problem, N)``."""
    setup = cfg.setup
    alpha, n, N = coupled_parameters(cfg, coupling, obs.delta)
    mesh = build_mesh(setup.dim, n)
    window = TimeWindow(cfg.T0, cfg.T, N) if setup.parabolic else None
    problem = TikhonovProblem(
        mesh, obs.on_grid(mesh, N), alpha, setup.f, cfg.c0, cfg.c1, setup.u0, window
    )
    return problem, N


def run_single(cfg: ExperimentConfig, index: int, coupling: Coupling, obs=None):
    """One reconstruction at noise index ``index``; returns ``(record, (mesh, q_star))``."""
    setup = cfg.setup
    rec = RunRecord(cfg.epsilons[index])
    start = time.perf_counter()
    try:
        obs = _observation(cfg, index) if obs is None else obs
        rec.delta = obs.delta
        problem, N = build_problem(cfg, coupling, obs)
        mesh, window = problem.mesh, problem.window
        rec.alpha, rec.h = problem.alpha, 1.0 / mesh.n
        if window is not None:
            rec.tau = window.tau
        q0 = default_q0(mesh, cfg.q0_value, cfg.c0, cfg.c1)
        result = reconstruct(problem, q0, _cg_options(cfg))
        q_star = result.q_star
        rec.iterations, rec.stop_reason = result.iterations, result.stop_reason
        rec.e_q = analysis.error_q(mesh, setup.q_true, q_star)
        rec.e_q_interior = analysis.error_q(
            mesh, setup.q_true, q_star, interior_region(mesh, cfg.margin)
        )
        if setup.parabolic:
            ref = analysis.reference_trajectory(mesh, setup.q_true, setup.f, setup.u0, cfg.T, N)
            traj = solve_parabolic(mesh, q_star, setup.f, setup.u0, cfg.T, N)
            rec.e_u = analysis.error_u_parabolic(ref, traj, window)
        else:
            ref = analysis.reference_state_elliptic(mesh, setup.q_true, setup.f)
            rec.e_u = analysis.error_u_elliptic(mesh, ref, problem.states(q_star))
        recon = (mesh, q_star)
    except Exception as exc:  # a failed run is recorded and the sweep goes on
        rec.error = f"{type(exc).__name__}: {exc}"
        recon = None
    if cfg.timing:
        rec.wall_time = time.perf_counter() - start
    return rec, recon


def _run_index(args):
    cfg, index, coupling = args
    return run_single(cfg, index, coupling)


def fit_rates(records) -> dict:
    """Rates of ``e_q``, ``e_q_interior`` and ``e_u`` against ``delta`` over usable records."""
    rates = {}
    for key in ("e_q", "e_q_interior", "e_u"):
        pts = [(r.delta, getattr(r, key)) for r in records
               if r.ok and r.delta > 0 and getattr(r, key) > 0]
        try:
            rates[key] = analysis.fit_rate(pts).slope
        except ValueError:
            rates[key] = math.nan
    return rates


def run_experiment(cfg: ExperimentConfig) -> SweepResult:
    """Run the noise sweep; failures are recorded per run."""
    first_obs = None
    try:
        first_obs = _observation(cfg, 0)
        coupling = resolve_coupling(cfg, first_obs.delta)
    except Exception:
        coupling = resolve_coupling(cfg, 0.0)

    indices = range(len(cfg.epsilons))
    if cfg.jobs > 1 and len(cfg.epsilons) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outputs = list(pool.map(_run_index, [(cfg, i, coupling) for i in indices]))
    else:
        outputs = [run_single(cfg, i, coupling, first_obs if i == 0 else None) for i in indices]
    records = [o[0] for o in outputs]
    return SweepResult(records, fit_rates(records), coupling, [o[1] for o in outputs])


# --------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def format_csv(records, rates: Optional[dict] = None) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_FIELDS) + "\n")
    for r in records:
        buf.write(",".join(_fmt(getattr(r, k)) for k in CSV_FIELDS) + "\n")
    for i, r in enumerate(records):
        if r.error:
            buf.write(f"# error[{i}]={r.error}\n")
    if rates:
        for key in ("e_q", "e_u", "e_q_interior"):
            if key in rates:
                buf.write(f"# rate_{key}={_fmt(rates[key])}\n")
    return buf.getvalue()


def emit_csv(records, rates, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(format_csv(records, rates))
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path):
    """Parse a CSV written by :func:`emit_csv` back into records and rates."""
    lines = Path(path).read_text().splitlines()
    rates, body = {}, []
    for line in lines:
        if line.startswith("# rate_"):
            key, val = line[len("# rate_"):].split("=", 1)
            rates[key] = float(val)
        elif not line.startswith("#"):
            body.append(line)
    records = []
    for row in csv.DictReader(body):
        kw = {k: float(row[k]) for k in CSV_FIELDS if k != "iterations"}
        kw["iterations"] = int(row["iterations"])
        records.append(RunRecord(**kw))
    return records, rates


def emit_plot_data(q_true, q_star, mesh, path) -> None:
    """Write ``<stem>_true.dat`` and ``<stem>_star.dat`` with columns ``x [y] value``."""
    path = Path(path)
    true_vals = interpolate(mesh, q_true).values if callable(q_true) else np.asarray(q_true)
    star_vals = np.asarray(q_star)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        for suffix, vals in (("true", true_vals), ("star", star_vals)):
            with open(path.with_name(f"{path.stem}_{suffix}.dat"), "w") as fh:
                for x, v in zip(mesh.nodes, vals):
                    fh.write(" ".join(_fmt(c) for c in x) + f" {_fmt(v)}\n")
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc


def write_outputs(cfg: ExperimentConfig, result: SweepResult, out_dir=None) -> Path:
    out = Path(out_dir or cfg.output_dir)
    emit_csv(result.records, result.rates, out / "results.csv")
    for i, recon in enumerate(result.reconstructions):
        if recon is not None:
            mesh, q_star = recon
            emit_plot_data(cfg.setup.q_true, q_star.values, mesh, out / f"q_{i:02d}")
    return out
