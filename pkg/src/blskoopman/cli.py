"""Command-line experiment harness.

Subcommands cover the full pipeline: ``collect`` snapshot datasets,
``train`` predictors, ``bench-vdp`` the three-way prediction comparison,
``mpc-dsrv`` the depth-control closed loop, and ``predict`` single-rollout
dumps.  Every command takes --config/--seed/--out plus ergonomic flags, and
writes its resolved configuration next to its outputs so any result can be
regenerated bit-for-bit.

Exit codes: 0 success; 1 finished with warnings (growth budget exhausted,
QP convergence below threshold); 2 configuration error; 3 I/O error;
4 numerical divergence.

Angles are degrees at this surface (--rudder-limit) and radians internally.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, ExperimentConfig, default_config
from .data import collect_snapshots, export_csv, load_dataset, save_dataset
from .koopman import (
    LocalLinearizationPredictor,
    RangeSpec,
    benchmark_prediction,
    fit_edmd,
    load_predictor,
    local_baseline_nominal,
    save_predictor,
    train_grown,
)
from .lifting import ThinPlateRbfLifting
from .mpc import MpcConfig, run_receding_horizon, select_outputs
from .numerics import FactorizationFailed, IntegrationDiverged, rk4_rollout
from .systems import SquareWave, make_plant

_PLANT_CLASS_KEYS = {"VanDerPol": "vdp", "Dsrv": "dsrv"}

EXIT_OK = 0
EXIT_WARN = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_ENV = "BLSKOOPMAN_OUT"


def _out_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _resolve_config(args) -> ExperimentConfig:
    plant = getattr(args, "plant", None)
    if plant is None and args.config:
        peek = cfgmod.parse_kv_text(Path(args.config).read_text(encoding="utf-8"))
        plant = peek.get("plant", "vdp")
    cfg = default_config(plant or "vdp")
    if args.config:
        cfgmod.load_config_file(cfg, args.config)
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfgmod.apply_kv(cfg, overrides)
    if getattr(args, "plant", None):
        cfg.plant = args.plant
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "config.txt").write_text(cfgmod.format_kv(cfgmod.config_to_kv(cfg)), encoding="utf-8")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plant_from_config(cfg: ExperimentConfig):
    return make_plant(cfg.plant, variant=cfg.plant_variant, params=cfg.plant_params or None)


def cmd_collect(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "collect")
    _echo_config(cfg, out)
    plant = _plant_from_config(cfg)
    ds = collect_snapshots(
        plant,
        n_traj=cfg.dataset_n_traj,
        n_steps=cfg.dataset_n_steps,
        dt=cfg.dataset_dt,
        init_box=cfgmod.parse_box(cfg.dataset_init_box, plant.state_dim),
        input_box=cfgmod.parse_box(cfg.dataset_input_box, plant.input_dim),
        seed=cfg.seed,
        input_mode=cfg.dataset_input_mode,
    )
    save_dataset(ds, out / "dataset.bin")
    if args.csv:
        export_csv(ds, out / "dataset.csv")
    _write_json(out / "dataset.json", {
        "n_samples": ds.n_samples,
        "n_state": ds.n_state,
        "n_input": ds.n_input,
        "dt": ds.dt,
        **ds.meta,
    })
    print(f"collected {ds.n_samples} snapshots ({ds.meta['discards']} discarded trajectories) "
          f"-> {out / 'dataset.bin'}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    if args.plant is None:
        args.plant = _PLANT_CLASS_KEYS.get(ds.meta.get("plant"))
    cfg = _resolve_config(args)
    out = _out_dir(args, "train")
    _echo_config(cfg, out)
    if args.baseline == "edmd-tps":
        lifter = ThinPlateRbfLifting(
            n_centers=cfg.lifter_n_centers,
            center_box=cfgmod.parse_box(cfg.dataset_init_box, ds.n_state),
            random_state=cfg.seed,
        )
        pred = fit_edmd(ds, lifter, alpha=cfg.train_ridge)
        history = []
        reached_budget = False
    else:
        result = train_grown(
            ds,
            init_n_feature=cfg.lifter_n_feature,
            init_n_enhance=cfg.lifter_n_enhance,
            tolerance=cfg.train_tolerance,
            grow_feature=cfg.train_grow_feature,
            grow_enhance=cfg.train_grow_enhance,
            max_lift_dim=cfg.train_max_lift_dim,
            alpha=cfg.train_ridge,
            activation=cfg.lifter_activation,
            scale=cfg.lifter_scale,
            seed=cfg.seed,
        )
        pred = result.predictor
        history = [vars(s) for s in result.history]
        reached_budget = result.reached_budget
    save_predictor(pred, out / "predictor.bin")
    _write_json(out / "training.json", {
        "lift_dim": pred.lift_dim_,
        "one_step_mse": pred.one_step_mse_,
        "training_residual": pred.training_residual_,
        "ridge": cfg.train_ridge,
        "growth_trace": history,
        "reached_budget": reached_budget,
    })
    print(f"trained predictor (lift dim {pred.lift_dim_}, one-step mse "
          f"{pred.one_step_mse_:.3e}) -> {out / 'predictor.bin'}")
    if reached_budget:
        print("warning: growth budget exhausted before reaching the error tolerance",
              file=sys.stderr)
        return EXIT_WARN
    return EXIT_OK


def cmd_bench_vdp(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "bench-vdp")
    _echo_config(cfg, out)
    plant = _plant_from_config(cfg)
    dt = cfg.dataset_dt
    wanted = [m.strip() for m in args.methods.split(",")]
    methods = {}
    for name in wanted:
        if name == "bls":
            if not args.bls:
                raise ConfigError("--bls PREDICTOR is required for the bls method")
            methods["bls"] = load_predictor(args.bls)
        elif name == "edmd":
            if not args.edmd:
                raise ConfigError("--edmd PREDICTOR is required for the edmd method")
            methods["edmd"] = load_predictor(args.edmd)
        elif name == "local":
            methods["local"] = lambda r: LocalLinearizationPredictor(
                plant, dt, nominal=local_baseline_nominal(r.half_width)
            )
        else:
            raise ConfigError(f"unknown method {name!r} (expected bls, edmd, local)")
    ranges = [RangeSpec(h, hor) for h, hor in cfgmod.parse_ranges(cfg.bench_ranges)]
    signal = SquareWave(cfg.bench_input_period, cfg.bench_input_amplitude)
    report = benchmark_prediction(
        plant, methods, ranges, signal,
        n_runs=cfg.bench_runs, dt=dt, seed=cfg.seed, workers=cfg.bench_workers,
    )
    report.to_table_csv(out / "rmse_table.csv")
    report.to_per_run_csv(out / "per_run.csv")
    report.to_json(out / "summary.json")
    for i, ex in enumerate(report.examples):
        _write_example_csv(out / f"trajectory_range{i}.csv", plant, ex)
    print((out / "rmse_table.csv").read_text(), end="")
    return EXIT_OK


def _write_example_csv(path: Path, plant, ex: dict) -> None:
    names = plant.state_names
    methods = [m for m, traj in ex["methods"].items() if traj is not None]
    cols = ["t", "u"] + [f"true_{n}" for n in names]
    for m in methods:
        cols += [f"{m}_{n}" for n in names]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(ex["t"])):
            row = [ex["t"][k], ex["inputs"][k, 0], *ex["truth"][k]]
            for m in methods:
                row.extend(ex["methods"][m][k])
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_mpc_dsrv(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "mpc-dsrv")
    plant = _plant_from_config(cfg)
    pred = load_predictor(args.predictor)
    if args.depth is not None:
        ref = cfgmod.parse_vector(cfg.mpc_reference)
        ref[-1] = args.depth
        cfg.mpc_reference = ",".join(repr(float(v)) for v in ref)
    if args.rudder_limit is not None:
        lim = float(np.deg2rad(args.rudder_limit))
        cfg.mpc_u_min = repr(-lim)
        cfg.mpc_u_max = repr(lim)
    if args.x0 is not None:
        cfg.mpc_x0 = args.x0
    if args.duration is not None:
        cfg.mpc_duration = args.duration
    if args.horizon is not None:
        cfg.mpc_horizon = args.horizon
    _echo_config(cfg, out)
    outputs = cfgmod.parse_outputs(cfg.mpc_outputs, plant.state_names)
    q_vec = cfgmod.parse_vector(cfg.mpc_q)
    r_vec = cfgmod.parse_vector(cfg.mpc_r)
    mpc_cfg = MpcConfig(
        horizon=cfg.mpc_horizon,
        Q=np.diag(q_vec) if q_vec.ndim == 1 else q_vec,
        R=np.diag(r_vec),
        u_min=cfgmod.parse_vector(cfg.mpc_u_min, pred.n_input_),
        u_max=cfgmod.parse_vector(cfg.mpc_u_max, pred.n_input_),
        output_selector=select_outputs(pred, outputs),
        reference=cfgmod.parse_vector(cfg.mpc_reference, len(outputs)),
        control_period=cfg.mpc_control_period,
        qp_tol=cfg.mpc_qp_tol,
        qp_max_iter=cfg.mpc_qp_max_iter,
        cost_scaling=cfg.mpc_cost_scaling,
        y_min=cfgmod.parse_vector(cfg.mpc_y_min, len(outputs)) if cfg.mpc_y_min else None,
        y_max=cfgmod.parse_vector(cfg.mpc_y_max, len(outputs)) if cfg.mpc_y_max else None,
        y_penalty=cfg.mpc_y_penalty,
    )
    x0 = cfgmod.parse_vector(cfg.mpc_x0, plant.state_dim)
    log = run_receding_horizon(plant, pred, mpc_cfg, x0, cfg.mpc_duration, seed=cfg.seed)
    log.to_csv(out / "closed_loop.csv")
    summary = log.summary()
    target = cfgmod.parse_vector(cfg.mpc_reference)[-1]
    depth_idx = outputs[-1]
    depth = log.states[:, depth_idx]
    inside = np.abs(depth - target) <= 1.0
    settle = None
    for k in range(log.n_steps):
        if inside[k:].all():
            settle = k * cfg.mpc_control_period
            break
    summary.update({
        "target_depth": float(target),
        "final_depth": float(depth[-1]) if log.n_steps else None,
        "final_depth_error": float(abs(depth[-1] - target)) if log.n_steps else None,
        "settling_time_1m": settle,
        "max_abs_rudder": float(np.abs(log.inputs).max()) if log.n_steps else None,
    })
    _write_json(out / "summary.json", summary)
    print(f"closed loop: final depth {summary['final_depth']:.3f} m "
          f"(target {target:g}), settled at {settle} s -> {out / 'closed_loop.csv'}")
    if log.aborted:
        print("error: plant diverged mid-run; log is partial", file=sys.stderr)
        return EXIT_NUMERIC
    rate = summary["qp_convergence_rate"]
    if rate < 0.99:
        print(f"warning: QP convergence rate {rate:.3f} below 0.99", file=sys.stderr)
        return EXIT_WARN
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "predict")
    _echo_config(cfg, out)
    plant = _plant_from_config(cfg)
    pred = load_predictor(args.predictor)
    dt = cfg.dataset_dt
    steps = args.steps if args.steps is not None else round(args.horizon / dt)
    spec = args.input
    if spec == "zero":
        U = np.zeros((steps, pred.n_input_))
    elif spec.startswith("const:"):
        U = np.full((steps, pred.n_input_), float(spec.split(":", 1)[1]))
    elif spec.startswith("square:"):
        period, amp = (float(v) for v in spec.split(":", 1)[1].split(","))
        wave = SquareWave(period, amp)
        U = np.array([[wave(k * dt)] * pred.n_input_ for k in range(steps)])
    else:
        raise ConfigError(f"unknown input spec {spec!r} (zero | const:V | square:PERIOD,AMP)")
    x0 = cfgmod.parse_vector(args.x0, plant.state_dim)
    truth = rk4_rollout(plant.rhs, x0, U, dt)
    try:
        guess = pred.predict(x0, U)
    except IntegrationDiverged as exc:
        print(f"error: predictor rollout diverged at step {exc.where:g}", file=sys.stderr)
        return EXIT_NUMERIC
    names = plant.state_names
    with open(out / "rollout.csv", "w", encoding="utf-8") as fh:
        cols = ["t", "u"] + [f"true_{n}" for n in names] + [f"pred_{n}" for n in names]
        fh.write(",".join(cols) + "\n")
        for k in range(steps):
            row = [(k + 1) * dt, U[k, 0], *truth[k], *guess[k]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    err = 100.0 * np.linalg.norm(guess - truth) / np.linalg.norm(truth)
    print(f"rollout of {steps} steps: normalised error {err:.2f}% -> {out / 'rollout.csv'}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key-value configuration file")
    p.add_argument("--seed", type=int, default=None, help="experiment seed")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./runs)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blskoopman",
        description="Lifted linear predictors and condensed-QP MPC experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="simulate a plant and store snapshot pairs")
    _add_common(p)
    p.add_argument("--plant", choices=["vdp", "dsrv"], default=None)
    p.add_argument("--n-traj", type=int, dest="n_traj")
    p.add_argument("--n-steps", type=int, dest="n_steps")
    p.add_argument("--dt", type=float)
    p.add_argument("--csv", action="store_true", help="also export the dataset as CSV")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit a predictor on a stored dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="dataset file from 'collect'")
    p.add_argument("--plant", choices=["vdp", "dsrv"], default=None,
                   help="selects per-plant defaults (lifter sizes, scale)")
    p.add_argument("--baseline", choices=["edmd-tps"], default=None,
                   help="fit the radial-basis baseline instead of the random-feature lifter")
    p.add_argument("--centers", type=int, default=None, help="baseline center count")
    p.add_argument("--n-feature", type=int, dest="n_feature")
    p.add_argument("--n-enhance", type=int, dest="n_enhance")
    p.add_argument("--scale", type=float)
    p.add_argument("--ridge", type=float)
    p.add_argument("--tolerance", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench-vdp", help="multi-method prediction RMSE comparison")
    _add_common(p)
    p.add_argument("--bls", help="trained random-feature predictor file")
    p.add_argument("--edmd", help="trained radial-basis baseline predictor file")
    p.add_argument("--methods", default="bls,edmd,local",
                   help="comma list from {bls, edmd, local}")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_bench_vdp, plant=None)

    p = sub.add_parser("mpc-dsrv", help="depth-control receding-horizon run")
    _add_common(p)
    p.add_argument("--predictor", required=True, help="trained predictor file")
    p.add_argument("--depth", type=float, default=None, help="target depth in metres")
    p.add_argument("--rudder-limit", type=float, default=None,
                   help="symmetric rudder bound in DEGREES")
    p.add_argument("--x0", default=None, help="initial state, comma separated")
    p.add_argument("--duration", type=float, default=None, help="simulation length in seconds")
    p.add_argument("--horizon", type=int, default=None, help="prediction steps per QP")
    p.set_defaults(func=cmd_mpc_dsrv, plant="dsrv")

    p = sub.add_parser("predict", help="dump one open-loop rollout against the truth")
    _add_common(p)
    p.add_argument("--predictor", required=True)
    p.add_argument("--plant", choices=["vdp", "dsrv"], default=None)
    p.add_argument("--x0", required=True,
                   help="initial state, comma separated (use --x0=-0.4,0.2 when "
                        "the first value is negative)")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--horizon", type=float, default=3.0, help="seconds (if --steps omitted)")
    p.add_argument("--input", default="square:0.3,1", help="zero | const:V | square:PERIOD,AMP")
    p.set_defaults(func=cmd_predict)

    return parser


_FLAG_TO_KEY = {
    "n_traj": "dataset.n_traj",
    "n_steps": "dataset.n_steps",
    "dt": "dataset.dt",
    "n_feature": "lifter.n_feature",
    "n_enhance": "lifter.n_enhance",
    "scale": "lifter.scale",
    "ridge": "train.ridge",
    "tolerance": "train.tolerance",
    "centers": "lifter.n_centers",
    "runs": "bench.runs",
    "workers": "bench.workers",
}


def _flags_to_sets(args) -> None:
    """Fold ergonomic flags into the generic --set override list."""
    sets = list(args.set or [])
    for attr, key in _FLAG_TO_KEY.items():
        value = getattr(args, attr, None)
        if value is not None:
            sets.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    args.set = sets


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _flags_to_sets(args)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IntegrationDiverged, FactorizationFailed, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
