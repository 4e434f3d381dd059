"""Snapshot-pair collection from simulated plants and dataset persistence.

A snapshot dataset holds aligned (state, successor, input) triples collected
with a fixed-step RK4 integrator.  Files use a small self-describing binary
container (JSON header + raw little-endian float blocks + SHA-256 checksum)
shared by the lifter and predictor persistence helpers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import IntegrationDiverged, rk4_step, rng_stream

_MAGIC = b"BLSKBLOB"
_VERSION = 1

INPUT_MODES = ("per-step", "per-trajectory")


class BlobFormatError(ValueError):
    """File is not a readable container of the expected kind/version."""


def write_blob(path, kind: str, meta: dict, arrays: dict) -> None:
    """Write named arrays plus a JSON metadata header to ``path``.

    Arrays are stored contiguously as little-endian blocks; a SHA-256 of the
    payload guards against truncation and corruption.  Round-trips are
    bit-exact.
    """
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape)})
        payload += le.tobytes()
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries}).encode("utf-8")
    digest = hashlib.sha256(bytes(payload)).digest()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(digest)


def read_blob(path, kind: str | None = None):
    """Read a container written by write_blob; returns (meta, arrays)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(_MAGIC) + 6 or raw[: len(_MAGIC)] != _MAGIC:
        raise BlobFormatError(f"{path}: not a recognised container (bad magic)")
    version, hlen = struct.unpack_from("<HI", raw, len(_MAGIC))
    if version != _VERSION:
        raise BlobFormatError(f"{path}: unsupported container version {version}")
    off = len(_MAGIC) + 6
    if len(raw) < off + hlen + 32:
        raise BlobFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BlobFormatError(f"{path}: corrupted header ({exc})") from exc
    if kind is not None and header.get("kind") != kind:
        raise BlobFormatError(
            f"{path}: container holds {header.get('kind')!r}, expected {kind!r}"
        )
    off += hlen
    payload = raw[off:-32]
    if hashlib.sha256(payload).digest() != raw[-32:]:
        raise BlobFormatError(f"{path}: checksum failure")
    arrays = {}
    pos = 0
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        if pos + nbytes > len(payload):
            raise BlobFormatError(f"{path}: truncated payload at array {entry['name']!r}")
        block = np.frombuffer(payload, dtype=dtype, count=count, offset=pos)
        arrays[entry["name"]] = block.reshape(entry["shape"]).astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(payload):
        raise BlobFormatError(f"{path}: payload has {len(payload) - pos} trailing bytes")
    return header["meta"], arrays


def as_box(box, dim: int) -> np.ndarray:
    """Normalise a sampling box to shape (dim, 2) with lo <= hi per row.

    Accepts an (dim, 2) array of per-dimension (lo, hi) pairs, a (lo, hi)
    pair broadcast over all dimensions, or a scalar half-width a meaning
    [-a, a] in every dimension.
    """
    arr = np.asarray(box, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.tile([-arr, arr], (dim, 1))
    elif arr.shape == (2,):
        arr = np.tile(arr, (dim, 1))
    if arr.shape != (dim, 2):
        raise ValueError(f"box must have shape ({dim}, 2), got {arr.shape}")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError("box is not well ordered (lo > hi)")
    return arr


def _draw(rng: np.random.Generator, box: np.ndarray) -> np.ndarray:
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random(box.shape[0])


@dataclass
class SnapshotDataset:
    """Aligned snapshot triples: states X, one-step successors Y, inputs U.

    Arrays are stored one sample per row: X and Y are (N, n), U is (N, l).
    Each row of Y is one RK4 step of the generating plant from the matching
    rows of X and U with step ``dt``.
    """

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=np.float64))
        if self.X.shape != self.Y.shape:
            raise ValueError("X and Y must share a shape")
        if self.U.shape[0] != self.X.shape[0]:
            raise ValueError("U must have one row per snapshot")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_state(self) -> int:
        return self.X.shape[1]

    @property
    def n_input(self) -> int:
        return self.U.shape[1]


def collect_snapshots(
    plant,
    n_traj: int,
    n_steps: int,
    dt: float,
    init_box,
    input_box,
    seed: int = 0,
    input_mode: str = "per-step",
    max_retries: int = 100,
) -> SnapshotDataset:
    """Simulate seeded random trajectories and collect snapshot pairs.

    Each trajectory draws its initial state uniformly from ``init_box`` and,
    in the default "per-step" mode, redraws the input uniformly from
    ``input_box`` at every step ("per-trajectory" holds one draw constant).
    Pairs are consecutive steps within a trajectory; trajectories never pair
    across their boundary.  A trajectory that diverges (non-finite state) is
    discarded and redrawn from a fresh substream; the discard count is
    recorded in ``meta``.

    Every trajectory uses an RNG substream derived from (seed, trajectory
    index), so results are independent of evaluation order and bit-identical
    across runs.
    """
    if n_traj < 1 or n_steps < 1:
        raise ValueError("n_traj and n_steps must be >= 1")
    if input_mode not in INPUT_MODES:
        raise ValueError(f"input_mode must be one of {INPUT_MODES}")
    init_box = as_box(init_box, plant.state_dim)
    input_box = as_box(input_box, plant.input_dim)
    n, l = plant.state_dim, plant.input_dim
    N = n_traj * n_steps
    X = np.empty((N, n))
    Y = np.empty((N, n))
    U = np.empty((N, l))
    discards = 0
    for ti in range(n_traj):
        for attempt in range(max_retries):
            rng = rng_stream(seed, ti, attempt)
            x = _draw(rng, init_box)
            u_const = _draw(rng, input_box) if input_mode == "per-trajectory" else None
            xs = np.empty((n_steps, n))
            ys = np.empty((n_steps, n))
            us = np.empty((n_steps, l))
            try:
                for k in range(n_steps):
                    u = u_const if u_const is not None else _draw(rng, input_box)
                    y = rk4_step(plant.rhs, x, u, k * dt, dt)
                    xs[k] = x
                    ys[k] = y
                    us[k] = u
                    x = y
            except IntegrationDiverged:
                discards += 1
                continue
            break
        else:
            raise IntegrationDiverged(
                0.0,
                message=f"trajectory {ti} diverged {max_retries} times in a row; "
                "shrink the sampling boxes or the step size",
            )
        sl = slice(ti * n_steps, (ti + 1) * n_steps)
        X[sl] = xs
        Y[sl] = ys
        U[sl] = us
    meta = {
        "plant": type(plant).__name__,
        "seed": int(seed),
        "n_traj": int(n_traj),
        "n_steps": int(n_steps),
        "input_mode": input_mode,
        "init_box": init_box.tolist(),
        "input_box": input_box.tolist(),
        "discards": int(discards),
    }
    return SnapshotDataset(X, Y, U, dt, meta)


def save_dataset(ds: SnapshotDataset, path) -> None:
    """Persist a dataset; the round-trip through load_dataset is bit-exact."""
    write_blob(path, "dataset", {"dt": ds.dt, **ds.meta}, {"X": ds.X, "Y": ds.Y, "U": ds.U})


def load_dataset(path) -> SnapshotDataset:
    meta, arrays = read_blob(path, "dataset")
    dt = float(meta.pop("dt"))
    for key in ("X", "Y", "U"):
        if key not in arrays:
            raise BlobFormatError(f"{path}: dataset file is missing array {key!r}")
    return SnapshotDataset(arrays["X"], arrays["Y"], arrays["U"], dt, meta)


def export_csv(ds: SnapshotDataset, path) -> None:
    """Dump the dataset as CSV, one row per snapshot: x..., y..., u...."""
    n, l = ds.n_state, ds.n_input
    cols = (
        [f"x{i}" for i in range(n)]
        + [f"y{i}" for i in range(n)]
        + [f"u{i}" for i in range(l)]
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(ds.n_samples):
            row = np.concatenate([ds.X[k], ds.Y[k], ds.U[k]])
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
