"""Single-file binary checkpoints.

Layout: 8-byte magic, u32 version, u32 header length, JSON header (model
config hash plus name/shape manifests for parameters, buffers, and optimizer
state), then the raw little-endian float64 arrays in manifest order. Loading
into a model with a different architecture hash raises ConfigError. Writes
go through a temp file + rename so a crash never leaves a torn checkpoint.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import ConfigError

MAGIC = b"PSEGCKPT"
VERSION = 1


def _write_arrays(fh, arrays):
    for a in arrays:
        fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def save_checkpoint(path: str, model, optimizer=None, extra: dict | None = None) -> None:
    params = model.parameters()
    buffers = model.buffers()
    header = {
        "config_hash": model.spec.config_hash(),
        "params": [{"name": k, "shape": list(np.shape(v.data))} for k, v in params.items()],
        "buffers": [{"name": k, "shape": list(np.shape(v))} for k, v in buffers.items()],
        "optimizer": None,
        "extra": extra or {},
    }
    if optimizer is not None:
        header["optimizer"] = {"t": optimizer.t}
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        _write_arrays(fh, (np.atleast_1d(p.data) for p in params.values()))
        _write_arrays(fh, (np.atleast_1d(b) for b in buffers.values()))
        if optimizer is not None:
            _write_arrays(fh, (np.atleast_1d(optimizer.m[k]) for k in params))
            _write_arrays(fh, (np.atleast_1d(optimizer.v[k]) for k in params))
    os.replace(tmp, path)


def _read_array(fh, shape):
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise ConfigError("checkpoint truncated")
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(shape) if shape else arr.reshape(())


def load_checkpoint(path: str, model, optimizer=None) -> dict:
    """Restore parameters (and optionally optimizer state); returns the extras."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        want = model.spec.config_hash()
        found = header["config_hash"]
        if found != want:
            raise ConfigError(f"checkpoint built for a different model: "
                              f"expected hash {want}, found {found}")
        params = model.parameters()
        for entry in header["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params:
                raise ConfigError(f"checkpoint has unknown parameter {name!r}")
            arr = _read_array(fh, shape)
            params[name].data = np.array(arr, dtype=np.float64)
        buffers = {}
        for entry in header["buffers"]:
            buffers[entry["name"]] = _read_array(fh, tuple(entry["shape"]))
        model.set_buffers(buffers)
        if optimizer is not None:
            if header["optimizer"] is None:
                raise ConfigError("checkpoint carries no optimizer state")
            state = {"t": header["optimizer"]["t"], "m": {}, "v": {}}
            shapes = {e["name"]: tuple(e["shape"]) for e in header["params"]}
            for k in params:
                state["m"][k] = _read_array(fh, shapes[k])
            for k in params:
                state["v"][k] = _read_array(fh, shapes[k])
            optimizer.load_state(state)
    return header.get("extra", {})
