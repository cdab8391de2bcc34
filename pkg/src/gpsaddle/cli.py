"""Command-line front end: run experiments, tabulate reports, list oracles.

Experiments are described by flat key = value config files ('#' starts a
comment).  Every run writes a fresh timestamped directory containing
trajectory.csv, designs.csv (surrogate runs), and report.txt; reruns with
the same config and seed reproduce trajectory and designs byte for byte.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, fields, replace
from datetime import datetime
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import DivergenceError, InputError, SurrogateUnusableError
from .gad import ActiveLearningConfig, GadConfig, GadResult, GadState, run_agpr_gad, run_reference_gad
from .design import SpsaParams
from .gpr import ObservationKind
from .problems import (
    AnalyticProvider,
    FdJacobianProvider,
    Problem,
    example1_problem,
    example2_problem,
    oracle_critical_points,
)
from .seeding import default_direction, seed_streams

__all__ = ["ExperimentConfig", "parse_config", "run_experiment", "emit_table", "main"]

_PROBLEMS = {"example1": example1_problem, "example2": example2_problem}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings of one run."""

    problem: str
    mode: str
    start: Tuple[float, ...]
    v0: Union[str, Tuple[float, ...]] = "seeded-default"
    dt: float = 0.01
    tol: float = 1e-6
    t_max: int = 20000
    init_offset: float = 0.0
    noise_var: float = 0.0
    sigma_sur: float = 0.2
    N0: int = 20
    N_D: int = 10
    n_paths: int = 20
    horizon_T: float = 0.1
    design_dt: Optional[float] = None
    init_spread: float = 0.5
    mle_budget: int = 150
    mle_budget_update: int = 60
    mle_window: int = 250
    fit_noise: bool = True
    fd_step: Optional[float] = None
    spsa_a: float = 0.05
    spsa_A: float = 100.0
    spsa_alpha_gain: float = 0.602
    spsa_c: float = 1.0
    spsa_gamma: float = 0.101
    spsa_iters: int = 100
    seed: int = 0
    output_dir: str = "runs"


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(","))


def _parse_v0(text: str):
    if text == "seeded-default":
        return text
    return _parse_floats(text)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_optional_float(text: str):
    if text.lower() in ("none", ""):
        return None
    return float(text)


_KEYS = {
    "problem": ("problem", str),
    "mode": ("mode", str),
    "start": ("start", _parse_floats),
    "v0": ("v0", _parse_v0),
    "dt": ("dt", float),
    "tol": ("tol", float),
    "t_max": ("t_max", int),
    "init_offset": ("init_offset", float),
    "noise_var": ("noise_var", float),
    "sigma_sur": ("sigma_sur", float),
    "N0": ("N0", int),
    "N_D": ("N_D", int),
    "n_paths": ("n_paths", int),
    "horizon_T": ("horizon_T", float),
    "design_dt": ("design_dt", _parse_optional_float),
    "init_spread": ("init_spread", float),
    "mle_budget": ("mle_budget", int),
    "mle_budget_update": ("mle_budget_update", int),
    "mle_window": ("mle_window", int),
    "fit_noise": ("fit_noise", _parse_bool),
    "fd_step": ("fd_step", _parse_optional_float),
    "spsa.a": ("spsa_a", float),
    "spsa.A": ("spsa_A", float),
    "spsa.alpha_gain": ("spsa_alpha_gain", float),
    "spsa.c": ("spsa_c", float),
    "spsa.gamma": ("spsa_gamma", float),
    "spsa.iters": ("spsa_iters", int),
    "seed": ("seed", int),
    "output_dir": ("output_dir", str),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key = value text; every problem is reported, not just the first."""
    values = {}
    errors = []
    unknown = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value, got {line!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KEYS:
            unknown.append(key)
            continue
        field_name, conv = _KEYS[key]
        try:
            values[field_name] = conv(val)
        except (ValueError, TypeError):
            errors.append(f"line {lineno}: bad value for {key}: {val!r}")
    if unknown:
        errors.append("unknown keys: " + ", ".join(sorted(unknown)))
    for required in ("problem", "mode", "start"):
        if required not in values:
            errors.append(f"missing required key: {required}")
    if "problem" in values and values["problem"] not in _PROBLEMS:
        errors.append(f"unknown problem: {values['problem']}")
    if "mode" in values and values["mode"] not in ("reference", "agpr"):
        errors.append(f"unknown mode: {values['mode']}")
    if errors:
        raise InputError("config errors: " + "; ".join(errors))
    return ExperimentConfig(**values)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _fmt_vec(vec) -> str:
    return ",".join(_fmt(v) for v in np.asarray(vec, dtype=float))


def _config_lines(cfg: ExperimentConfig):
    lines = []
    for f in fields(cfg):
        key = f.name.replace("spsa_", "spsa.") if f.name.startswith("spsa_") else f.name
        val = getattr(cfg, f.name)
        if val is None:
            text = "none"
        elif isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, tuple):
            text = ",".join(_fmt(v) for v in val)
        elif isinstance(val, float):
            text = _fmt(val)
        else:
            text = str(val)
        lines.append(f"config.{key} = {text}")
    return lines


def _fresh_run_dir(cfg: ExperimentConfig, problem_name: str) -> Path:
    base = Path(cfg.output_dir)
    base.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    candidate = base / f"{problem_name}-{cfg.mode}-{stamp}-seed{cfg.seed}"
    k = 1
    while candidate.exists():
        candidate = base / f"{problem_name}-{cfg.mode}-{stamp}-seed{cfg.seed}-{k}"
        k += 1
    candidate.mkdir()
    return candidate


def _write_trajectory(path: Path, result: GadResult, dim: int):
    cols = ["step"] + [f"x{i + 1}" for i in range(dim)] + [f"v{i + 1}" for i in range(dim)]
    rows = [",".join(cols)]
    for st in result.trajectory:
        rows.append(
            ",".join([str(st.step)] + [_fmt(c) for c in st.x] + [_fmt(c) for c in st.v])
        )
    path.write_text("\n".join(rows) + "\n")


def _write_designs(path: Path, result: GadResult, problem: Problem):
    dim = problem.dim
    if problem.kind is ObservationKind.ENERGY:
        ycols = ["y"]
    else:
        ycols = [f"y{i + 1}" for i in range(dim)]
    cols = ["update"] + [f"x{i + 1}" for i in range(dim)] + ycols
    rows = [",".join(cols)]
    for update_idx, points, labels in result.design_log:
        for pt, lab in zip(points, labels):
            yvals = [lab] if np.ndim(lab) == 0 else list(lab)
            rows.append(
                ",".join([str(update_idx)] + [_fmt(c) for c in pt] + [_fmt(y) for y in yvals])
            )
    path.write_text("\n".join(rows) + "\n")


def run_experiment(cfg: ExperimentConfig):
    """Execute one run and write its artifacts; returns (result, run_dir)."""
    if cfg.problem not in _PROBLEMS:
        raise InputError(f"unknown problem: {cfg.problem}")
    problem = _PROBLEMS[cfg.problem]()
    d = problem.dim
    start_x = np.asarray(cfg.start, dtype=float)
    if start_x.shape != (d,):
        raise InputError(f"start must have dimension {d}")
    if cfg.v0 == "seeded-default":
        v0 = default_direction(d, cfg.seed)
    else:
        v0 = np.asarray(cfg.v0, dtype=float)
        if v0.shape != (d,):
            raise InputError(f"v0 must have dimension {d}")
    gad_cfg = GadConfig(dt=cfg.dt, tol=cfg.tol, t_max=cfg.t_max,
                        init_offset=cfg.init_offset)
    start = GadState(start_x, v0, 0)

    t0 = time.perf_counter()
    if cfg.mode == "reference":
        if cfg.noise_var > 0 or cfg.fd_step is not None:
            if problem.kind is not ObservationKind.FORCE:
                raise InputError(
                    "noisy reference runs need direct force observations"
                )
            noise_rng = np.random.default_rng(seed_streams(cfg.seed)["noise"])
            provider = FdJacobianProvider(problem, cfg.noise_var, noise_rng,
                                          fd_step=cfg.fd_step)
        else:
            provider = AnalyticProvider(problem)
        result = run_reference_gad(provider, start, gad_cfg)
    elif cfg.mode == "agpr":
        al_cfg = ActiveLearningConfig(
            n_init=cfg.N0,
            n_design=cfg.N_D,
            sigma_sur=cfg.sigma_sur,
            n_paths=cfg.n_paths,
            horizon_T=cfg.horizon_T,
            design_dt=cfg.design_dt,
            init_spread=cfg.init_spread,
            noise_var=cfg.noise_var,
            mle_budget=cfg.mle_budget,
            mle_budget_update=cfg.mle_budget_update,
            mle_window=cfg.mle_window,
            fit_noise=cfg.fit_noise,
            spsa=SpsaParams(a=cfg.spsa_a, A=cfg.spsa_A,
                            alpha_gain=cfg.spsa_alpha_gain, c=cfg.spsa_c,
                            gamma=cfg.spsa_gamma, iters=cfg.spsa_iters),
        )
        result = run_agpr_gad(problem, start, gad_cfg, al_cfg, cfg.seed)
    else:
        raise InputError(f"unknown mode: {cfg.mode}")
    wall = time.perf_counter() - t0

    run_dir = _fresh_run_dir(cfg, problem.name)
    _write_trajectory(run_dir / "trajectory.csv", result, d)
    if cfg.mode == "agpr":
        _write_designs(run_dir / "designs.csv", result, problem)
    report = [
        f"problem = {problem.name}",
        f"mode = {cfg.mode}",
        f"converged = {'true' if result.converged else 'false'}",
        f"x_sp = {_fmt_vec(result.x_sp)}",
        f"steps = {len(result.trajectory) - 1}",
        f"cost = {result.cost}",
        f"updates = {result.updates}",
        f"wall_time_s = {wall:.3f}",
    ]
    report.extend(_config_lines(cfg))
    (run_dir / "report.txt").write_text("\n".join(report) + "\n")
    return result, run_dir


def _parse_report(path: Path):
    entries = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or "=" not in line:
            continue
        key, _, val = line.partition("=")
        entries[key.strip()] = val.strip()
    missing = [k for k in ("problem", "mode", "x_sp", "cost", "config.start")
               if k not in entries]
    if missing:
        raise InputError("missing keys: " + ", ".join(missing))
    return entries


def emit_table(reports) -> str:
    """Summary table over report files, grouped by problem.

    Rows from unreadable or incomplete reports are dropped and listed in a
    warning footer instead of aborting the whole table.
    """
    parsed = []
    warnings = []
    for rp in reports:
        path = Path(rp)
        try:
            entries = _parse_report(path)
        except (OSError, InputError) as err:
            warnings.append(f"warning: {path}: {err}")
            continue
        parsed.append(entries)
    parsed.sort(key=lambda e: e["problem"])  # stable: input order within a problem

    def short_vec(text: str) -> str:
        try:
            return "(" + ", ".join(f"{float(t):.4f}" for t in text.split(",")) + ")"
        except ValueError:
            return text

    header = ("problem", "start", "method", "x_sp", "cost")
    rows = [header]
    for e in parsed:
        rows.append((
            e["problem"],
            short_vec(e["config.start"]),
            e["mode"],
            short_vec(e["x_sp"]),
            e["cost"],
        ))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.extend(warnings)
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gpsaddle",
        description="saddle-point search with a GP surrogate over expensive fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--mode", default=None, choices=("reference", "agpr"))

    p_table = sub.add_parser("table", help="summarize one or more report files")
    p_table.add_argument("reports", nargs="+", type=Path)

    p_oracle = sub.add_parser("oracle", help="list a problem's true critical points")
    p_oracle.add_argument("problem", choices=sorted(_PROBLEMS))
    p_oracle.add_argument("--grid", type=int, default=12)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config.read_text())
            overrides = {}
            if args.seed is not None:
                overrides["seed"] = args.seed
            if args.output_dir is not None:
                overrides["output_dir"] = args.output_dir
            if args.mode is not None:
                overrides["mode"] = args.mode
            if overrides:
                cfg = replace(cfg, **overrides)
            result, run_dir = run_experiment(cfg)
            print(run_dir)
            return 0 if result.converged else 2
        if args.command == "table":
            print(emit_table(args.reports))
            return 0
        if args.command == "oracle":
            problem = _PROBLEMS[args.problem]()
            for x, index in oracle_critical_points(problem, args.grid):
                coords = " ".join(f"{c: .8f}" for c in x)
                print(f"{coords}  index={index}")
            return 0
    except (InputError, DivergenceError, SurrogateUnusableError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    parser.error("no command given")
    return 1


if __name__ == "__main__":
    sys.exit(main())
