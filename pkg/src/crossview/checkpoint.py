"""Checkpoint container: versioned header, JSON index, then raw little-endian blobs.

Layout: ``b"XVCK" | version u32 | index length u64 | index (UTF-8 JSON) | blobs``.
The index lists every blob as ``{name, kind, dtype, shape, offset, nbytes}``
and carries the model spec, run config, epoch, optimizer step and the metrics
recorded so far. Kind ``state`` covers parameters and buffers (running
statistics); ``adam_m``/``adam_v`` hold the optimizer moments. JSON is written
with sorted keys and no timestamps, so identical runs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .optim import OptimState

MAGIC = b"XVCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    model_spec: dict
    state: dict[str, np.ndarray]
    optim: OptimState | None = None
    epoch: int = 0
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    blobs: list[bytes] = []
    entries = []
    offset = 0

    def put(name, kind, arr):
        nonlocal offset
        arr = _le(arr)
        data = arr.tobytes()
        entries.append(
            {"name": name, "kind": kind, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)

    for name, arr in ckpt.state.items():
        put(name, "state", arr)
    optim = None
    if ckpt.optim is not None:
        o = ckpt.optim
        optim = {"beta1": o.beta1, "beta2": o.beta2, "eps": o.eps, "step": o.step}
        for name in o.m:
            put(name, "adam_m", o.m[name])
            put(name, "adam_v", o.v[name])
    index = {
        "model_spec": ckpt.model_spec,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "optimizer": optim,
        "extra": ckpt.extra,
        "entries": entries,
    }
    text = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(text)))
        fh.write(text)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, n = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + n
    try:
        index = json.loads(raw[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt checkpoint index") from exc
    payload = memoryview(raw)[start:]
    state: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for e in index["entries"]:
        lo, hi = e["offset"], e["offset"] + e["nbytes"]
        if hi > len(payload):
            raise FormatError(f"{path}: blob {e['name']} runs past end of file")
        arr = np.frombuffer(payload[lo:hi], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="))
        {"state": state, "adam_m": m, "adam_v": v}[e["kind"]][e["name"]] = arr
    optim = None
    if index["optimizer"] is not None:
        o = index["optimizer"]
        optim = OptimState(o["beta1"], o["beta2"], o["eps"], o["step"], m, v)
    return Checkpoint(index["model_spec"], state, optim, index["epoch"], index["config"], index["extra"])
