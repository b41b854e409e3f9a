"""Checkpoint files: canonical-JSON header plus a named NDT1 tensor table.

Layout (little-endian)::

    b"MOEK" | u32 version | u64 header length | header JSON (UTF-8)
    u64 tensor count | repeated: u32 name length, UTF-8 name, NDT1 tensor

The header holds ``{"config": ..., "meta": ...}``. Batch-norm running
statistics are stored as ``<layer>.running_mean``, ``<layer>.running_var`` and
``<layer>.initialized`` tensors; any extra tensors (optimizer moments) ride
along under their own names.
"""
import json
import struct

import numpy as np

from ..errors import FormatError
from ..ndtensor.serialize import read_tensor, write_tensor
from .model import MoeConfig, MoeModel

MAGIC = b"MOEK"
VERSION = 1


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def model_state(model):
    state = {}
    for name, p in model.parameters().items():
        state[name] = p.data
    for name, bn in model.bn_states().items():
        state[name + ".running_mean"] = bn.running_mean
        state[name + ".running_var"] = bn.running_var
        state[name + ".initialized"] = np.array([1.0 if bn.initialized else 0.0])
    return state


def load_state(model, state):
    params = model.parameters()
    for name, p in params.items():
        if name not in state:
            raise FormatError(f"checkpoint is missing parameter {name!r}")
        if state[name].shape != p.shape:
            raise FormatError(f"parameter {name!r}: checkpoint shape {state[name].shape} vs config shape {p.shape}")
        p.data = np.array(state[name], dtype=np.float64)
        p.zero_grad()
    for name, bn in model.bn_states().items():
        try:
            rm = state[name + ".running_mean"]
            rv = state[name + ".running_var"]
            flag = state[name + ".initialized"]
        except KeyError as exc:
            raise FormatError(f"checkpoint is missing batch-norm statistics for {name!r}") from exc
        if rm.shape != bn.running_mean.shape:
            raise FormatError(f"batch-norm {name!r}: statistics shape {rm.shape} vs {bn.running_mean.shape}")
        bn.running_mean = np.array(rm)
        bn.running_var = np.array(rv)
        bn.initialized = bool(flag[0])


def save_checkpoint(path, model, meta=None, extra=None):
    header = canonical_json({"config": model.config.to_dict(), "meta": meta or {}}).encode("utf-8")
    tensors = dict(model_state(model))
    for name, arr in (extra or {}).items():
        if name in tensors:
            raise FormatError(f"extra tensor {name!r} collides with a model tensor")
        tensors[name] = arr
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<Q", len(tensors)))
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            write_tensor(f, arr)


def _read(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def read_checkpoint(path):
    """Return ``(config_dict, meta, tensors)`` without building a model."""
    with open(path, "rb") as f:
        magic = _read(f, 4, "magic")
        if magic != MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        version, hlen = struct.unpack("<IQ", _read(f, 12, "header size"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(_read(f, hlen, "header").decode("utf-8"))
        (count,) = struct.unpack("<Q", _read(f, 8, "tensor count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read(f, 4, "name length"))
            name = _read(f, nlen, "tensor name").decode("utf-8")
            tensors[name] = read_tensor(f)
    return header["config"], header.get("meta", {}), tensors


def load_checkpoint(path):
    """Rebuild the model stored at ``path``; returns ``(model, meta, extra_tensors)``."""
    cfg, meta, tensors = read_checkpoint(path)
    config = MoeConfig.from_dict(cfg)
    model = MoeModel(config)
    load_state(model, tensors)
    known = set(model_state(model))
    extra = {k: v for k, v in tensors.items() if k not in known}
    return model, meta, extra
