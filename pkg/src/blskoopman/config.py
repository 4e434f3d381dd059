"""Flat key-value experiment configuration.

Config files are plain text, one ``section.key = value`` per line with ``#``
comments.  Every run echoes its fully resolved configuration, so any output
is regenerable from the echo plus the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import numpy as np


class ConfigError(ValueError):
    """Malformed configuration file, key or value."""


RUDDER_30_DEG = float(np.deg2rad(30.0))

_SECTIONS = ("plant", "dataset", "lifter", "train", "bench", "mpc")


@dataclass
class ExperimentConfig:
    """One flat record of every knob an experiment can turn.

    Compound values (boxes, vectors, index lists) are kept as strings in the
    file syntax and parsed on use; see the parse_* helpers.
    """

    plant: str = "vdp"
    seed: int = 0
    plant_variant: str = "default"
    plant_params: dict = field(default_factory=dict)

    dataset_n_traj: int = 500
    dataset_n_steps: int = 300
    dataset_dt: float = 0.01
    dataset_init_box: str = "-1:1;-1:1"
    dataset_input_box: str = "-1:1"
    dataset_input_mode: str = "per-step"

    lifter_kind: str = "bls"
    lifter_n_feature: int = 600
    lifter_n_enhance: int = 400
    lifter_activation: str = "tps"
    lifter_scale: float = 1.0
    lifter_n_centers: int = 100

    train_ridge: float = 1e-6
    train_tolerance: float = 1e-4
    train_grow_feature: int = 100
    train_grow_enhance: int = 100
    train_max_lift_dim: int = 4000

    bench_runs: int = 50
    bench_ranges: str = "1:3;0.5:1;0.8:3"
    bench_input_period: float = 0.3
    bench_input_amplitude: float = 1.0
    bench_workers: int = 1

    mpc_horizon: int = 20
    mpc_q: str = "10,50"
    mpc_r: str = "0.1"
    mpc_outputs: str = "w,z"
    mpc_reference: str = "0,50"
    mpc_u_min: str = repr(-RUDDER_30_DEG)
    mpc_u_max: str = repr(RUDDER_30_DEG)
    mpc_control_period: float = 0.01
    mpc_duration: float = 300.0
    mpc_x0: str = "0.2,0,0,0.1,0"
    mpc_qp_tol: float = 1e-8
    mpc_qp_max_iter: int = 500
    mpc_cost_scaling: str = "consistent"
    mpc_y_min: str = ""
    mpc_y_max: str = ""
    mpc_y_penalty: float = 0.0


def default_config(plant: str) -> ExperimentConfig:
    """Per-plant defaults: the benchmark protocols at their stated sizes."""
    if plant == "vdp":
        return ExperimentConfig(plant="vdp")
    if plant == "dsrv":
        return ExperimentConfig(
            plant="dsrv",
            dataset_init_box="-0.8:0.8;-0.8:0.8;0:1300;0:60;-0.45:0.45",
            dataset_input_box=f"{-RUDDER_30_DEG!r}:{RUDDER_30_DEG!r}",
            lifter_n_feature=700,
            lifter_n_enhance=400,
            lifter_scale=0.003,
        )
    raise ConfigError(f"unknown plant {plant!r} (expected 'vdp' or 'dsrv')")


def _key_for_field(name: str) -> str:
    for section in _SECTIONS:
        prefix = section + "_"
        if name.startswith(prefix):
            return f"{section}.{name[len(prefix):]}"
    return name


_FIELD_BY_KEY = {
    _key_for_field(f.name): f.name for f in fields(ExperimentConfig) if f.name != "plant_params"
}


def parse_kv_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def format_kv(mapping: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())


def config_to_kv(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        if f.name == "plant_params":
            continue
        value = getattr(cfg, f.name)
        out[_key_for_field(f.name)] = repr(value) if isinstance(value, float) else str(value)
    for name, value in sorted(cfg.plant_params.items()):
        out[f"plant.param.{name}"] = repr(float(value))
    return out


def apply_kv(cfg: ExperimentConfig, mapping: dict) -> ExperimentConfig:
    """Overlay string key-value pairs onto a config, with type coercion."""
    for key, value in mapping.items():
        if key.startswith("plant.param."):
            name = key[len("plant.param."):]
            try:
                cfg.plant_params[name] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from exc
            continue
        try:
            name = _FIELD_BY_KEY[key]
        except KeyError:
            raise ConfigError(f"unknown configuration key {key!r}") from None
        kind = ExperimentConfig.__dataclass_fields__[name].type
        try:
            if kind == "int":
                setattr(cfg, name, int(value))
            elif kind == "float":
                setattr(cfg, name, float(value))
            else:
                setattr(cfg, name, str(value))
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from exc
    return cfg


def load_config_file(cfg: ExperimentConfig, path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return apply_kv(cfg, parse_kv_text(fh.read()))


def parse_box(spec: str, dim: int | None = None) -> np.ndarray:
    """Parse 'lo:hi;lo:hi;...' into an (n, 2) box array."""
    rows = []
    for part in spec.split(";"):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"box entry {part!r} is not 'lo:hi'")
        try:
            rows.append((float(pieces[0]), float(pieces[1])))
        except ValueError as exc:
            raise ConfigError(f"box entry {part!r} has a non-numeric bound") from exc
    box = np.asarray(rows, dtype=np.float64)
    if dim is not None and box.shape[0] != dim:
        raise ConfigError(f"box {spec!r} has {box.shape[0]} dimensions, expected {dim}")
    if np.any(box[:, 0] > box[:, 1]):
        raise ConfigError(f"box {spec!r} is not well ordered")
    return box


def parse_vector(spec: str, dim: int | None = None) -> np.ndarray:
    try:
        vec = np.asarray([float(v) for v in spec.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"vector {spec!r} has a non-numeric entry") from exc
    if dim is not None and vec.size != dim:
        raise ConfigError(f"vector {spec!r} has {vec.size} entries, expected {dim}")
    return vec


def parse_ranges(spec: str):
    """Parse 'half:horizon;half:horizon;...' benchmark range rows."""
    out = []
    for part in spec.split(";"):
        pieces = part.split(":")
        if len(pieces) != 2:
            raise ConfigError(f"range entry {part!r} is not 'half_width:horizon'")
        out.append((float(pieces[0]), float(pieces[1])))
    return out


def parse_outputs(spec: str, state_names) -> list:
    """Output selection by state name or integer index."""
    names = list(state_names)
    out = []
    for part in spec.split(","):
        part = part.strip()
        if part in names:
            out.append(names.index(part))
        else:
            try:
                out.append(int(part))
            except ValueError:
                raise ConfigError(
                    f"output {part!r} is neither a state name {names} nor an index"
                ) from None
    return out
