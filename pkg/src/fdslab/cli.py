"""Command-line surface: deterministic experiment runs emitting CSV/JSON artifacts.

Subcommands
    train           fit the MLP velocity field and write a checkpoint + loss curve
    sample          integrate trajectories (optionally refined, optionally paired)
    verify-theorem  check the residual/divergence identity over sampled states
    map             emit ground-truth and surrogate discrepancy maps + correlation
    ablate          sweep one refinement axis and tabulate final Wasserstein distance

Configuration is resolved in order: built-in defaults, preset (``--preset``),
config file (``--config``, flat ``key=value`` lines), then CLI flags.  Every
config key has a same-named flag.  All data files use 17-significant-digit
floats and contain no timestamps, so identical config + seed reproduces
byte-identical artifacts.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    FdslabError,
    IntegrationError,
    RefinementError,
    SingularityError,
    TheoremDomainError,
    TrainingError,
)
from .metrics import GridSpec, discrepancy_map, map_spearman, wasserstein, wd_over_time
from .mlp import MlpField, TrainConfig, train
from .oracle import OracleField
from .sampler import FdsConfig, run_pipeline, uniform_grid
from .schedules import SigmaSchedule, make_schedule
from .targets import EmpiricalTarget, parse_target, sample_path_points

__all__ = ["main"]

OUTPUT_ROOT_ENV = "FDSLAB_OUTPUT_ROOT"

DEFAULTS = {
    "target": "checkerboard",
    "schedule": "linear",
    "solver": "euler",
    "steps": None,          # per-command default (train: 20000, sample: 20)
    "n": 512,
    "seed": 0,
    "k": 100_000,           # empirical-target size for oracle construction
    "target-seed": 0,       # seed for drawing the empirical target points
    "batch": 512,
    "lr": 1e-3,
    "checkpoint": None,
    "field": None,          # "oracle" | "mlp" (mlp needs a checkpoint)
    "paired": False,
    "fds.m": 1,
    "fds.n": 1,
    "fds.sigma-kind": "cosine",
    "fds.sigma-max": 0.0,
    "fds.t-trunc": 0.5,
    "fds.div": "exact",
    "t-grid": None,         # verify-theorem: comma list; default linspace
    "points": 1000,
    "tol": 1e-6,
    "t": 0.6,
    "grid.lo": -2.0,
    "grid.hi": 2.0,
    "grid.res": 64,
    "min-spearman": None,
    "axis": None,
    "values": None,
    "seeds": 5,
    "out": None,
}

# One-command experiment recipes.
PRESETS = {
    # 2-D toy pipeline: checkerboard, Euler with 20 steps, one refinement
    # candidate/iteration at a fixed perturbation scale of 0.3 over the whole
    # time range.
    "toy": {
        "target": "checkerboard", "solver": "euler", "steps": 20, "n": 512,
        "fds.m": 1, "fds.n": 1, "fds.sigma-kind": "constant",
        "fds.sigma-max": 0.3, "fds.t-trunc": 1.0, "fds.div": "exact",
    },
    # Identity verification over a 256-point empirical target.
    "theorem-check": {
        "target": "checkerboard", "k": 256, "points": 1000, "tol": 1e-6,
    },
    # Discrepancy-map comparison at t = 0.6 on a 64x64 grid.
    "map": {
        "target": "checkerboard", "t": 0.6,
        "grid.lo": -2.0, "grid.hi": 2.0, "grid.res": 64,
    },
    # Truncation-time sweep under the toy sampling configuration.
    "ablate-schedule": {
        "target": "checkerboard", "solver": "euler", "steps": 20, "n": 512,
        "fds.m": 1, "fds.n": 1, "fds.sigma-kind": "constant",
        "fds.sigma-max": 0.3, "fds.div": "exact",
        "axis": "t_trunc", "values": "0,0.25,0.5,0.75,1.0",
    },
    # Candidate-count sweep under the toy sampling configuration.
    "ablate-search": {
        "target": "checkerboard", "solver": "euler", "steps": 20, "n": 512,
        "fds.n": 1, "fds.sigma-kind": "constant",
        "fds.sigma-max": 0.3, "fds.t-trunc": 1.0, "fds.div": "exact",
        "axis": "m", "values": "0,1,2,8",
    },
}

# Accepted config-file spellings for keys whose canonical name differs.
KEY_ALIASES = {
    "sigma.kind": "fds.sigma-kind",
    "sigma.max": "fds.sigma-max",
    "t_trunc": "fds.t-trunc",
}

_INT_KEYS = {"steps", "n", "seed", "k", "target-seed", "batch", "fds.m", "fds.n",
             "points", "grid.res", "seeds"}
_FLOAT_KEYS = {"lr", "fds.sigma-max", "fds.t-trunc", "tol", "t", "grid.lo",
               "grid.hi", "min-spearman"}
_BOOL_KEYS = {"paired"}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _coerce(key: str, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key in _BOOL_KEYS:
            return value.lower() in ("1", "true", "yes")
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from exc
    return value


def _read_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            key = KEY_ALIASES.get(key, key)
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        cfg.update(PRESETS[preset])
    config_path = getattr(args, "config", None)
    if config_path is not None:
        cfg.update(_read_config_file(config_path))
    for key in DEFAULTS:
        attr = key.replace(".", "__").replace("-", "_")
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            cfg[key] = _coerce(key, value)
    return cfg


def _ensure_dir(path: str) -> str:
    """Create the final path component; its parent must already exist."""
    path = os.path.normpath(path)
    if os.path.isdir(path):
        return path
    parent = os.path.dirname(path) or "."
    if not os.path.isdir(parent):
        raise ConfigError(f"output directory parent does not exist: {parent}")
    os.mkdir(path)
    return path


def _output_dir(cfg: dict, command: str) -> str:
    if cfg["out"] is not None:
        return _ensure_dir(cfg["out"])
    root = os.environ.get(OUTPUT_ROOT_ENV, "fdslab-out")
    _ensure_dir(root)
    return _ensure_dir(os.path.join(root, command))


def _write_csv(path: str, header: list, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def _write_json(path: str, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _snapshot(cfg: dict) -> dict:
    # The output location is where artifacts land, not part of the experiment;
    # leaving it out keeps re-runs byte-identical regardless of destination.
    return {k: v for k, v in sorted(cfg.items()) if v is not None and k != "out"}


def _parse_fds(cfg: dict) -> FdsConfig:
    div = cfg["fds.div"]
    if div == "exact":
        method, probes = "exact", 1
    elif div.startswith("hutch:"):
        method = "hutch"
        try:
            probes = int(div.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad probe count in fds.div={div!r}") from exc
    else:
        raise ConfigError(f"fds.div must be 'exact' or 'hutch:<probes>', got {div!r}")
    return FdsConfig(
        m=cfg["fds.m"], n=cfg["fds.n"],
        sigma=SigmaSchedule(kind=cfg["fds.sigma-kind"], sigma_max=cfg["fds.sigma-max"]),
        t_trunc=cfg["fds.t-trunc"], divergence=method, probes=probes,
    )


def _build_field(cfg: dict, schedule, target):
    """Field selection: explicit oracle, else checkpoint-backed MLP."""
    if cfg["field"] == "oracle":
        empirical = EmpiricalTarget.from_spec(target, n=cfg["k"], seed=cfg["target-seed"])
        return OracleField(empirical, schedule)
    if cfg["checkpoint"] is None:
        raise ConfigError("need --checkpoint (or --field oracle)")
    if not os.path.exists(cfg["checkpoint"]):
        raise ConfigError(f"checkpoint not found: {cfg['checkpoint']}")
    field = MlpField.load(cfg["checkpoint"])
    if field.dim != target.dim:
        raise ConfigError(
            f"checkpoint dimension {field.dim} does not match target dimension {target.dim}")
    return field


# -- subcommands -------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    out = _output_dir(cfg, "train")
    target = parse_target(cfg["target"])
    schedule = make_schedule(cfg["schedule"])
    steps = cfg["steps"] if cfg["steps"] is not None else 20_000
    train_cfg = TrainConfig(target=target, schedule=schedule, steps=steps,
                            batch=cfg["batch"], learning_rate=cfg["lr"],
                            seed=cfg["seed"])
    field, curve = train(train_cfg)
    field.save(os.path.join(out, "checkpoint.json"))
    _write_csv(os.path.join(out, "curve.csv"), ["step", "loss"],
               [(step, float(loss)) for step, loss in curve])
    _write_json(os.path.join(out, "config.json"), _snapshot(cfg))
    print(f"trained {steps} steps; final loss {curve[-1][1]:.6f}; artifacts in {out}")
    return 0


def _run_one(field, cfg: dict, fds: FdsConfig):
    grid = uniform_grid(cfg["steps"] if cfg["steps"] is not None else 20)
    return run_pipeline(field, cfg["solver"], grid, fds, cfg["n"], cfg["seed"],
                        config_snapshot=_snapshot(cfg))


def _write_run(out: str, prefix: str, run) -> None:
    d = run.final.shape[1]
    coords = [f"x{i}" for i in range(d)]
    _write_csv(os.path.join(out, f"{prefix}final.csv"), coords,
               [tuple(map(float, row)) for row in run.final])
    rows = []
    for k in range(len(run.states_pre)):
        t_k = float(run.grid[k])
        for i in range(run.states_pre.shape[1]):
            rows.append((k, t_k, i, "pre") + tuple(map(float, run.states_pre[k, i])))
            rows.append((k, t_k, i, "post") + tuple(map(float, run.states_post[k, i])))
    _write_csv(os.path.join(out, f"{prefix}states.csv"),
               ["step", "t", "sample", "stage"] + coords, rows)
    rows = []
    for k, table in enumerate(run.divergences):
        if table is None:
            continue
        t_k = float(run.grid[k])
        for it in range(table.shape[0]):
            for ci in range(table.shape[1]):
                for i in range(table.shape[2]):
                    rows.append((k, t_k, it, ci, i, float(table[it, ci, i])))
    _write_csv(os.path.join(out, f"{prefix}divergence.csv"),
               ["step", "t", "iteration", "candidate", "sample", "divergence"], rows)
    _write_json(os.path.join(out, f"{prefix}run.json"), {
        "solver": run.solver,
        "seed": run.seed,
        "steps": len(run.grid) - 1,
        "n": int(run.final.shape[0]),
        "nfe_velocity": run.nfe_velocity,
        "nfe_refine": run.nfe_refine,
        "nfe_total": run.nfe_total,
        "heun_fallback_steps": list(run.heun_fallback_steps),
        "config": run.config,
    })


def cmd_sample(cfg: dict) -> int:
    out = _output_dir(cfg, "sample")
    target = parse_target(cfg["target"])
    schedule = make_schedule(cfg["schedule"])
    field = _build_field(cfg, schedule, target)
    fds = _parse_fds(cfg)

    if cfg["paired"]:
        base = _run_one(field, cfg, FdsConfig.disabled())
        refined = _run_one(field, cfg, fds)
        _write_run(out, "baseline_", base)
        _write_run(out, "fds_", refined)
        times = [float(t) for t in base.grid]
        wd_base = dict(wd_over_time(base, target, schedule, times, seed=cfg["seed"] + 90_000))
        wd_fds = dict(wd_over_time(refined, target, schedule, times, seed=cfg["seed"] + 90_000))
        _write_csv(os.path.join(out, "wd.csv"), ["t", "wd_baseline", "wd_fds"],
                   [(t, wd_base[t], wd_fds[t]) for t in times])
        print(f"paired run: final WD baseline {wd_base[1.0]:.4f}, "
              f"fds {wd_fds[1.0]:.4f}; artifacts in {out}")
    else:
        run = _run_one(field, cfg, fds)
        _write_run(out, "", run)
        print(f"sampled {cfg['n']} trajectories ({run.nfe_total} field evals); "
              f"artifacts in {out}")
    _write_json(os.path.join(out, "config.json"), _snapshot(cfg))
    return 0


def cmd_verify_theorem(cfg: dict) -> int:
    out = _output_dir(cfg, "verify-theorem")
    target = parse_target(cfg["target"])
    schedule = make_schedule(cfg["schedule"])
    empirical = EmpiricalTarget.from_spec(target, n=cfg["k"], seed=cfg["target-seed"])
    oracle = OracleField(empirical, schedule)

    if cfg["t-grid"] is not None:
        try:
            t_grid = [float(v) for v in str(cfg["t-grid"]).split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad t-grid {cfg['t-grid']!r}") from exc
    else:
        t_grid = list(np.linspace(0.05, 0.95, 10))
    for t in t_grid:
        alpha, _, _, _ = schedule.eval(t)
        if alpha == 0.0 or t >= 1.0:
            raise TheoremDomainError(
                f"t={t} is outside the identity's domain (needs alpha_t != 0 and beta_t != 0)")

    per_t = max(1, -(-cfg["points"] // len(t_grid)))
    d = empirical.dim
    rows = []
    max_rel = 0.0
    for i, t in enumerate(t_grid):
        x = sample_path_points(schedule, target, per_t, t, cfg["seed"] + i)
        lhs, rhs, div = oracle.discrepancy_batch(x, t)
        rel = np.abs(lhs - rhs) / np.maximum(lhs, 1e-12)
        max_rel = max(max_rel, float(rel.max()))
        for j in range(per_t):
            rows.append(tuple(map(float, x[j])) +
                        (float(t), float(lhs[j]), float(rhs[j]), float(div[j]), float(rel[j])))
    header = [f"x{i}" for i in range(d)] + ["t", "lhs", "rhs", "divergence", "rel_error"]
    _write_csv(os.path.join(out, "report.csv"), header, rows)
    passed = max_rel <= cfg["tol"]
    _write_json(os.path.join(out, "summary.json"), {
        "points": len(rows), "k": int(len(empirical.points)),
        "max_rel_error": max_rel, "tol": cfg["tol"], "passed": bool(passed),
    })
    _write_json(os.path.join(out, "config.json"), _snapshot(cfg))
    print(f"max relative error {max_rel:.3e} over {len(rows)} states "
          f"(tol {cfg['tol']:g}): {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 4


def _write_map(path: str, dmap) -> None:
    g = dmap.grid
    with open(path, "w") as fh:
        fh.write(f"# lo={_fmt(g.lo)} hi={_fmt(g.hi)} resolution={g.resolution} "
                 f"t={_fmt(dmap.t)} mode={dmap.mode}\n")
        for row in dmap.values:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def cmd_map(cfg: dict) -> int:
    out = _output_dir(cfg, "map")
    target = parse_target(cfg["target"])
    schedule = make_schedule(cfg["schedule"])
    empirical = EmpiricalTarget.from_spec(target, n=cfg["k"], seed=cfg["target-seed"])
    oracle = OracleField(empirical, schedule)
    surrogate_src = oracle if cfg["checkpoint"] is None else _build_field(cfg, schedule, target)

    grid = GridSpec(lo=cfg["grid.lo"], hi=cfg["grid.hi"], resolution=cfg["grid.res"])
    gt = discrepancy_map(oracle, grid, cfg["t"], "gt")
    sur = discrepancy_map(surrogate_src, grid, cfg["t"], "surrogate", schedule=schedule)
    rho = map_spearman(gt, sur)

    _write_map(os.path.join(out, "gt.csv"), gt)
    _write_map(os.path.join(out, "surrogate.csv"), sur)
    _write_json(os.path.join(out, "correlation.json"), {
        "spearman": rho, "t": cfg["t"], "resolution": grid.resolution,
        "surrogate_source": "oracle" if cfg["checkpoint"] is None else cfg["checkpoint"],
    })
    _write_json(os.path.join(out, "config.json"), _snapshot(cfg))
    print(f"spearman(gt, surrogate) = {rho:.4f} at t={cfg['t']}")
    if cfg["min-spearman"] is not None and rho < cfg["min-spearman"]:
        print(f"below required minimum {cfg['min-spearman']}", file=sys.stderr)
        return 4
    return 0


_ABLATE_AXES = {
    "t_trunc": ("fds.t-trunc", float),
    "sigma-kind": ("fds.sigma-kind", str),
    "n": ("fds.n", int),
    "m": ("fds.m", int),
}


def cmd_ablate(cfg: dict) -> int:
    out = _output_dir(cfg, "ablate")
    if cfg["axis"] not in _ABLATE_AXES:
        raise ConfigError(
            f"axis must be one of {sorted(_ABLATE_AXES)}, got {cfg['axis']!r}")
    if cfg["values"] is None:
        raise ConfigError("ablate needs --values (comma-separated settings)")
    key, cast = _ABLATE_AXES[cfg["axis"]]
    try:
        values = [cast(v) for v in str(cfg["values"]).split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad values list {cfg['values']!r}") from exc

    target = parse_target(cfg["target"])
    schedule = make_schedule(cfg["schedule"])
    field = _build_field(cfg, schedule, target)

    rows = []
    for value in values:
        sweep_cfg = dict(cfg)
        sweep_cfg[key] = value
        fds = _parse_fds(sweep_cfg)
        wds, nfe = [], 0
        for s in range(cfg["seeds"]):
            run_cfg = dict(sweep_cfg)
            run_cfg["seed"] = cfg["seed"] + s
            run = _run_one(field, run_cfg, fds)
            ref = sample_path_points(schedule, target, cfg["n"], 1.0,
                                     cfg["seed"] + s + 90_000)
            wds.append(wasserstein(run.final, ref).value)
            nfe = run.nfe_total
        wds = np.asarray(wds)
        stderr = float(wds.std(ddof=1) / np.sqrt(len(wds))) if len(wds) > 1 else 0.0
        rows.append((str(value), float(wds.mean()), stderr, nfe))
        print(f"{cfg['axis']}={value}: WD {wds.mean():.4f} +/- {stderr:.4f}, NFE {nfe}")
    _write_csv(os.path.join(out, "sweep.csv"),
               ["setting", "wd_mean", "wd_stderr", "nfe"], rows)
    _write_json(os.path.join(out, "config.json"), _snapshot(cfg))
    return 0


# -- argument parsing --------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named experiment recipe")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--target", help="checkerboard | gmm | single:<coords> | file:<path>")
    parser.add_argument("--schedule", help="interpolant schedule (linear)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (parent must exist)")


def _add_sampling(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--solver", choices=["euler", "heun"])
    parser.add_argument("--steps", type=int)
    parser.add_argument("--n", type=int, help="number of samples")
    parser.add_argument("--checkpoint", help="MLP checkpoint path")
    parser.add_argument("--field", choices=["oracle", "mlp"], help="field source")
    parser.add_argument("--k", type=int, help="empirical-target size for the oracle field")
    parser.add_argument("--target-seed", dest="target_seed", type=int)
    parser.add_argument("--fds.m", dest="fds__m", type=int)
    parser.add_argument("--fds.n", dest="fds__n", type=int)
    parser.add_argument("--fds.sigma-max", dest="fds__sigma_max", type=float)
    parser.add_argument("--fds.sigma-kind", dest="fds__sigma_kind",
                        choices=["cosine", "linear", "concave", "constant"])
    parser.add_argument("--fds.t-trunc", dest="fds__t_trunc", type=float)
    parser.add_argument("--fds.div", dest="fds__div", help="exact | hutch:<probes>")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdslab",
        description="Flow-matching laboratory: training, refined sampling, "
                    "identity verification, discrepancy maps, ablations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the MLP velocity field")
    _add_common(p)
    p.add_argument("--steps", type=int, help="optimizer steps (default 20000)")
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="integrate trajectories, optionally with refinement")
    _add_common(p)
    _add_sampling(p)
    p.add_argument("--paired", action="store_true",
                   help="run baseline and refined pipelines from a shared prior")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify-theorem", help="residual/divergence identity report")
    _add_common(p)
    p.add_argument("--k", type=int, help="empirical-target size")
    p.add_argument("--target-seed", dest="target_seed", type=int)
    p.add_argument("--t-grid", dest="t_grid", help="comma-separated times")
    p.add_argument("--points", type=int, help="total states to test")
    p.add_argument("--tol", type=float, help="max allowed relative error")
    p.set_defaults(func=cmd_verify_theorem)

    p = sub.add_parser("map", help="ground-truth vs surrogate discrepancy maps")
    _add_common(p)
    p.add_argument("--checkpoint", help="MLP checkpoint for the surrogate map")
    p.add_argument("--field", choices=["oracle", "mlp"])
    p.add_argument("--k", type=int)
    p.add_argument("--target-seed", dest="target_seed", type=int)
    p.add_argument("--t", type=float, help="map time")
    p.add_argument("--grid.lo", dest="grid__lo", type=float)
    p.add_argument("--grid.hi", dest="grid__hi", type=float)
    p.add_argument("--grid.res", dest="grid__res", type=int)
    p.add_argument("--min-spearman", dest="min_spearman", type=float,
                   help="fail (exit 4) when correlation is below this")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("ablate", help="sweep one refinement axis")
    _add_common(p)
    _add_sampling(p)
    p.add_argument("--axis", choices=sorted(_ABLATE_AXES))
    p.add_argument("--values", help="comma-separated axis settings")
    p.add_argument("--seeds", type=int, help="seeds per setting")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return args.func(cfg)
    except (ConfigError, DomainError, TheoremDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, IntegrationError, RefinementError, SingularityError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FdslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
