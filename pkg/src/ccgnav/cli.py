"""Command-line front end: validate, run, sweep, and coverage-test scenarios.

Configurations are TOML (or JSON) files mapping directly onto
:class:`ccgnav.sim.ScenarioConfig`. Outputs are a per-substep trajectory in
CSV and/or JSON plus a metrics summary; exit codes distinguish validation
failures (2) and runtime aborts (3) from unsafe-but-completed runs (1).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import CcgNavError, ConfigError
from .estimator import BasisSpec, EstimatorWindow, ellipsoid_contains, fit, push_measurement
from .numerics import RngState, gaussian_sample
from .sim import ScenarioConfig, make_obstacle_truth, run_scenario

log = logging.getLogger("ccgnav")


def load_config(path) -> ScenarioConfig:
    """Parse a TOML or JSON scenario file into a validated config."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_bytes()
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    else:
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            data = tomllib.loads(text.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return ScenarioConfig.from_dict(data)


def _write_outputs(log_obj, out_dir: Path, fmt: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt in ("csv", "both"):
        log_obj.to_csv(out_dir / "trajectory.csv")
    if fmt in ("json", "both"):
        log_obj.to_json(out_dir / "trajectory.json")
    metrics = dict(log_obj.metrics_dict())
    metrics["config_hash"] = log_obj.config_hash()
    metrics["seed"] = log_obj.config.seed
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2, default=float)
    return metrics


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.validate()
    except CcgNavError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        traj = run_scenario(cfg)
    except CcgNavError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    metrics = _write_outputs(traj, Path(args.out), args.format)
    print(json.dumps(metrics, sort_keys=True, default=float))
    safe = metrics["violations"] == 0 and metrics["fallback_steps"] == 0
    return 0 if safe else 1


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except CcgNavError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {args.config} (order {cfg.order}, horizon {cfg.horizon} s)")
    return 0


def _sweep_one(payload):
    cfg_dict, out_dir, fmt = payload
    cfg = ScenarioConfig.from_dict(cfg_dict)
    traj = run_scenario(cfg)
    return _write_outputs(traj, Path(out_dir), fmt)


def _set_by_path(data: dict, dotted: str, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown sweep key {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown sweep key {dotted!r}")
    node[keys[-1]] = value


def _parse_param(spec: str):
    if "=" not in spec:
        raise ConfigError("sweep --param must look like key=v1,v2,...")
    key, _, values = spec.partition("=")
    parsed = []
    for tok in values.split(","):
        tok = tok.strip()
        try:
            parsed.append(json.loads(tok))
        except json.JSONDecodeError:
            parsed.append(tok)
    return key.strip(), parsed


def cmd_sweep(args) -> int:
    try:
        cfg = load_config(args.config)
        key, values = _parse_param(args.param)
    except CcgNavError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    jobs = []
    out_root = Path(args.out)
    for value in values:
        for run in range(args.runs):
            d = cfg.to_dict()
            _set_by_path(d, key, value)
            d["seed"] = cfg.seed + run
            ScenarioConfig.from_dict(d)  # validate before fanning out
            run_dir = out_root / f"{key.replace('.', '_')}_{value}" / f"run_{run}"
            jobs.append((d, str(run_dir), args.format))
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(_sweep_one, jobs))
        else:
            results = [_sweep_one(j) for j in jobs]
    except CcgNavError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    summary = {
        "param": key,
        "values": values,
        "runs": args.runs,
        "results": [
            {"job": str(Path(j[1])), "metrics": r} for j, r in zip(jobs, results)
        ],
    }
    out_root.mkdir(parents=True, exist_ok=True)
    with open(out_root / "sweep_summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2, default=float)
    print(f"sweep complete: {len(jobs)} runs under {out_root}")
    return 0


def coverage_test(cfg: ScenarioConfig, runs: int):
    """Empirical confidence-ellipsoid coverage over independent windows.

    Requires a cubic-polynomial obstacle so the fitted model class contains
    the truth exactly. Returns (freq, lo, hi, degenerate) where [lo, hi] is
    a 99% normal-approximation binomial interval.
    """
    if cfg.obstacle.kind != "cubic_polynomial":
        raise ConfigError(
            "coverage-test needs obstacle.kind = 'cubic_polynomial' so the "
            "basis represents the truth exactly"
        )
    truth = make_obstacle_truth(cfg.obstacle)
    if cfg.sigma == 0.0:
        return 1.0, 1.0, 1.0, True
    rng = RngState(cfg.seed)
    basis = BasisSpec(degree=cfg.basis_degree)
    cov = cfg.sigma**2 * np.eye(2)
    hits = 0
    for _ in range(runs):
        w = EstimatorWindow(capacity=cfg.N)
        for i in range(cfg.N):
            t = i * cfg.T_s
            y = truth.position(t) + gaussian_sample(rng, np.zeros(2), cov)
            w = push_measurement(w, t, y, cov)
        est = fit(w, basis)
        if ellipsoid_contains(est, cfg.alpha, truth.position((cfg.N - 1) * cfg.T_s)):
            hits += 1
    freq = hits / runs
    half = 2.576 * np.sqrt(max(freq * (1.0 - freq), 1e-12) / runs)
    return freq, freq - half, freq + half, False


def cmd_coverage(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    except CcgNavError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        freq, lo, hi, degenerate = coverage_test(cfg, args.runs)
    except CcgNavError as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 3
    target = 1.0 - cfg.alpha
    if degenerate:
        print("degenerate: zero measurement noise; the fit is exact and the "
              "ellipsoid collapses (frequency 1.0 by local representability)")
        return 0
    print(f"coverage: {freq:.4f} over {args.runs} windows "
          f"(99% CI [{lo:.4f}, {hi:.4f}], target {target:.4f})")
    ok = abs(freq - target) <= cfg.coverage_band
    print("PASS" if ok else "FAIL",
          f"|freq - target| = {abs(freq - target):.4f} vs band {cfg.coverage_band}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccgnav",
        description="Probabilistically safe navigation scenarios: estimator, "
                    "unsafe-set flow, barrier filter, closed-loop simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write outputs")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--format", choices=["csv", "json", "both"], default="both")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate a config")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)

    p_sweep = sub.add_parser("sweep", help="fan out runs over a parameter list")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True,
                         help="dotted key and comma list, e.g. 'gamma=10,100'")
    p_sweep.add_argument("--runs", type=int, default=1)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--format", choices=["csv", "json", "both"], default="csv")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cov = sub.add_parser("coverage-test",
                           help="empirical confidence-ellipsoid coverage")
    p_cov.add_argument("--config", required=True)
    p_cov.add_argument("--runs", type=int, default=2000)
    p_cov.add_argument("--seed", type=int, default=None)
    p_cov.set_defaults(func=cmd_coverage)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CCGNAV_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
