"""Binary checkpoint format: named parameters with shape headers, little-endian
float64 payloads, trainability flags, optimizer state, step counter, and a
JSON config snapshot. Round-trips are bit-exact."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

MAGIC = b"SGMTCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed checkpoint file or parameter-name mismatch on load."""


@dataclass
class ParamRecord:
    trainable: bool
    data: np.ndarray


@dataclass
class OptimRecord:
    step: int
    m: np.ndarray
    v: np.ndarray


@dataclass
class Checkpoint:
    step: int
    config: Dict
    params: Dict[str, ParamRecord]
    optim: Dict[str, OptimRecord] = field(default_factory=dict)

    def param_bytes(self, name: str) -> bytes:
        return self.params[name].data.astype("<f8").tobytes()


def _write_name(fh, name: str) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_name(fh) -> str:
    (n,) = struct.unpack("<H", fh.read(2))
    return fh.read(n).decode("utf-8")


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh) -> np.ndarray:
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
    return data.astype(np.float64)


def save_checkpoint(path, checkpoint: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", checkpoint.step))
        cfg = json.dumps(checkpoint.config, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(checkpoint.params)))
        for name in sorted(checkpoint.params):
            record = checkpoint.params[name]
            _write_name(fh, name)
            fh.write(struct.pack("<B", 1 if record.trainable else 0))
            _write_array(fh, record.data)
        fh.write(struct.pack("<I", len(checkpoint.optim)))
        for name in sorted(checkpoint.optim):
            entry = checkpoint.optim[name]
            _write_name(fh, name)
            fh.write(struct.pack("<Q", entry.step))
            _write_array(fh, entry.m)
            _write_array(fh, entry.v)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (step,) = struct.unpack("<Q", fh.read(8))
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(cfg_len).decode("utf-8"))
        (n_params,) = struct.unpack("<I", fh.read(4))
        params: Dict[str, ParamRecord] = {}
        for _ in range(n_params):
            name = _read_name(fh)
            (flags,) = struct.unpack("<B", fh.read(1))
            params[name] = ParamRecord(trainable=bool(flags & 1), data=_read_array(fh))
        (n_optim,) = struct.unpack("<I", fh.read(4))
        optim: Dict[str, OptimRecord] = {}
        for _ in range(n_optim):
            name = _read_name(fh)
            (ostep,) = struct.unpack("<Q", fh.read(8))
            m = _read_array(fh)
            v = _read_array(fh)
            optim[name] = OptimRecord(step=ostep, m=m, v=v)
    return Checkpoint(step=step, config=config, params=params, optim=optim)


def snapshot_model(model, step: int, config: Dict, optim_state: Optional[Dict] = None) -> Checkpoint:
    params = {
        name: ParamRecord(trainable=p.requires_grad, data=p.data.copy())
        for name, p in model.named_parameters()
    }
    return Checkpoint(step=step, config=dict(config), params=params, optim=dict(optim_state or {}))


def restore_model(model, checkpoint: Checkpoint) -> None:
    """Copy parameter values and trainability flags into an existing model."""
    current = dict(model.named_parameters())
    if set(current) != set(checkpoint.params):
        missing = set(current) ^ set(checkpoint.params)
        raise CheckpointError(f"parameter names disagree on: {sorted(missing)[:5]}")
    for name, param in current.items():
        record = checkpoint.params[name]
        if param.data.shape != record.data.shape:
            raise CheckpointError(
                f"{name}: shape {record.data.shape} in file, model has {param.data.shape}"
            )
        param.data[...] = record.data
        param.requires_grad = record.trainable
