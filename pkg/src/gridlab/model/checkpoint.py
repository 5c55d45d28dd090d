"""Versioned, byte-stable model checkpoints.

Layout: magic ``GZCK``, uint32 version, uint32 header length, a UTF-8 JSON
header (config echo, parameter names and shapes, normalization statistics,
step counter, caller extras), then every parameter as little-endian float32
in header order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .network import GridZeroModel, ModelConfig

MAGIC = b"GZCK"
VERSION = 1


def to_bytes(model, extra=None):
    names = sorted(model.params)
    header = {
        "config": model.config.to_dict(),
        "step": int(model.step),
        "params": [[k, list(model.params[k].shape)] for k in names],
        "obs_mean": [float(x) for x in model.obs_mean],
        "obs_m2": [float(x) for x in model.obs_m2],
        "obs_count": int(model.obs_count),
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes() for k in names)
    return MAGIC + struct.pack("<II", VERSION, len(head)) + head + body


def from_bytes(data):
    if data[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    version, n_head = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + n_head].decode("utf-8"))
    offset = 12 + n_head
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        params[name] = arr.reshape(shape).astype(np.float32)
        offset += 4 * count
    if offset != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    model = GridZeroModel(ModelConfig(**header["config"]), params, np.float32)
    model.obs_mean = np.array(header["obs_mean"], dtype=float)
    model.obs_m2 = np.array(header["obs_m2"], dtype=float)
    model.obs_count = header["obs_count"]
    model.step = header["step"]
    return model, header["extra"]


def save_checkpoint(model, path, extra=None):
    Path(path).write_bytes(to_bytes(model, extra))


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())
