"""Matrix, image, config and log formats."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .network import Activation, DynamicsConfig, NetworkConfig, NetworkState

__all__ = [
    "FormatError",
    "read_csv_matrix",
    "write_csv_matrix",
    "read_pgm",
    "write_pgm",
    "RunLogRecord",
    "append_runlog",
    "read_runlog",
    "RunConfig",
    "parse_config",
    "save_state",
    "load_state",
]


class FormatError(ValueError):
    """Malformed input file."""


# ----------------------------------------------------------------------------
# CSV matrices: one row per channel


def write_csv_matrix(matrix, path, header: bool = False) -> None:
    A = np.array(matrix, dtype=float, ndmin=2)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(f"c{j}" for j in range(A.shape[1])) + "\n")
        for row in A:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv_matrix(path, header: bool = False) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric cell") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} columns, found {len(values)}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data")
    return np.array(rows, dtype=float)


# ----------------------------------------------------------------------------
# Binary PGM (P5, maxval 255)


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into a ``uint8`` array (rows, cols)."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5)")
    try:
        tokens, offset = _pgm_tokens(data[2:], 3)
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = data[2 + offset : 2 + offset + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(image, path) -> None:
    """Write a 2-D array as binary PGM.

    ``uint8`` input is written verbatim. Anything else is mapped affinely so
    its minimum becomes 0 and its maximum 255 (a constant image becomes 0).
    """
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if img.dtype != np.uint8:
        f = img.astype(float)
        lo, hi = float(f.min()), float(f.max())
        scaled = np.zeros_like(f) if hi == lo else (f - lo) * (255.0 / (hi - lo))
        img = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


# ----------------------------------------------------------------------------
# Run logs


@dataclass
class RunLogRecord:
    t: int
    mean_sir_db: Optional[float]
    D: list
    max_preactivation: float
    excitation: list
    inhibition: list
    iterations: float

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        d = {k: clean(v) for k, v in asdict(self).items()}
        return json.dumps(d, separators=(",", ":"))


def append_runlog(record: RunLogRecord, path) -> None:
    """Append one JSON line, flushed before returning."""
    with open(path, "a") as fh:
        fh.write(record.to_json() + "\n")
        fh.flush()


def read_runlog(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ----------------------------------------------------------------------------
# Run configuration

_NETWORK_KEYS = {"gamma_sq", "eta", "beta", "init_seed", "d_floor", "upsilon_floor"}
_ACTIVATION_KEYS = {"activation", "sparse_T", "sparse_lambda"}
_DYNAMICS_KEYS = {"step", "tol", "max_iters", "u_init"}


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    output_dir: Optional[str] = None
    dim: Optional[int] = None
    inputs: Sequence[str] = ()
    source_seed: int = 0
    mixing_seed: int = 1
    samples: int = 200_000
    epochs: int = 1
    eval_window: int = 2000
    checkpoint_interval: int = 1000

    def validate(self) -> "RunConfig":
        if self.output_dir is None:
            raise ValueError("output_dir is required")
        for name in ("samples", "epochs", "eval_window", "checkpoint_interval"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.dim is not None and (int(self.dim) != self.dim or self.dim < 1):
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        for p in self.inputs:
            if not os.access(p, os.R_OK):
                raise ValueError(f"input {p} is not readable")
        return self


def _flatten(doc: dict) -> dict:
    flat = {}
    for k, v in doc.items():
        if k in ("network", "dynamics") and isinstance(v, dict):
            flat.update(_flatten(v))
        else:
            flat[k] = v
    return flat


def parse_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Build a validated :class:`RunConfig` from a JSON file plus overrides.

    The file may be flat or group keys under ``"network"`` / ``"dynamics"``.
    Override values that are ``None`` are ignored; the rest win over the
    file. Unknown keys are rejected.
    """
    doc: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text()
        if text.strip():
            loaded = json.loads(text)
            if not isinstance(loaded, dict):
                raise ValueError("config must be a JSON object")
            doc = _flatten(loaded)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v

    run_keys = {f.name for f in fields(RunConfig)} - {"network"}
    unknown = set(doc) - run_keys - _NETWORK_KEYS - _ACTIVATION_KEYS - _DYNAMICS_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    kind = doc.get("activation", "clip")
    if kind == "sparse":
        activation = Activation("sparse", float(doc.get("sparse_T", 1.0)), float(doc.get("sparse_lambda", 0.0)))
    else:
        activation = Activation(kind)
    dynamics = DynamicsConfig(**{k: doc[k] for k in _DYNAMICS_KEYS if k in doc})
    network = NetworkConfig(
        activation=activation,
        dynamics=dynamics,
        **{k: doc[k] for k in _NETWORK_KEYS if k in doc},
    )
    run = RunConfig(network=network, **{k: doc[k] for k in run_keys if k in doc})
    if isinstance(run.inputs, str):
        run = replace(run, inputs=[run.inputs])
    return run.validate()


# ----------------------------------------------------------------------------
# Network checkpoints: a directory of CSV matrices


def save_state(state: NetworkState, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_csv_matrix(state.W, directory / "W.csv")
    write_csv_matrix(state.M, directory / "M.csv")
    write_csv_matrix(state.D[None, :], directory / "D.csv")
    write_csv_matrix([[state.t]], directory / "t.csv")


def load_state(directory) -> NetworkState:
    directory = Path(directory)
    W = read_csv_matrix(directory / "W.csv")
    M = read_csv_matrix(directory / "M.csv")
    D = read_csv_matrix(directory / "D.csv")[0]
    t = int(read_csv_matrix(directory / "t.csv")[0, 0])
    return NetworkState(W, M, D, t)
