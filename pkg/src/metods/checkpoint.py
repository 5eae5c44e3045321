"""Versioned binary checkpoints.

One file holds the agent structure, every parameter tensor, optionally the
optimizer state, bookkeeping counters and the hash of the config that
produced the run.  The byte layout (all integers little-endian):

    bytes 0..7    magic  b"METODSCK"
    u32           format version (currently 1)
    u32           metadata length, followed by that many bytes of UTF-8 JSON
                  (sorted keys) holding: config_hash, agent config fields,
                  counters, adam step
    u32           tensor count, then per tensor in sorted name order:
                      u16 name length + UTF-8 name
                      u8 dtype code (0 = float64, 1 = int64)
                      u8 ndim, then ndim x u64 shape
                      raw little-endian array data

Writing the same state twice yields identical bytes, which the tests rely on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .agent import AgentConfig, AgentParams

MAGIC = b"METODSCK"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


class CheckpointError(RuntimeError):
    """Unreadable, truncated, or wrong-format checkpoint file."""


@dataclass
class CheckpointData:
    params: AgentParams
    opt_m: dict | None
    opt_v: dict | None
    adam_t: int
    counters: dict
    config_hash: str
    version: int


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    # asarray, not ascontiguousarray: the latter silently promotes 0-d arrays
    # to 1-d, and tobytes() below already emits C order for any layout
    arr = np.asarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + arr.astype(_DTYPES[code]).tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str) -> int:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def save_checkpoint(path: Path | str, params: AgentParams, *,
                    opt_state=None, counters: dict | None = None,
                    config_hash: str = "") -> None:
    tensors: dict[str, np.ndarray] = {
        f"param.{k}": np.asarray(v) for k, v in params.tensors.items()
    }
    adam_t = 0
    if opt_state is not None:
        adam_t = int(opt_state.t)
        for k, v in opt_state.m.items():
            tensors[f"adam.m.{k}"] = np.asarray(v)
        for k, v in opt_state.v.items():
            tensors[f"adam.v.{k}"] = np.asarray(v)
    meta = {
        "config_hash": config_hash,
        "agent": asdict(params.config),
        "counters": {k: int(v) for k, v in (counters or {}).items()},
        "adam_t": adam_t,
        "has_opt": opt_state is not None,
    }
    mb = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(mb)), mb,
           struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        out.append(_pack_tensor(name, tensors[name]))
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path: Path | str) -> CheckpointData:
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    if r.take(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = r.u("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(r.take(r.u("<I")).decode("utf-8"))
    count = r.u("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u("<H")).decode("utf-8")
        code = r.u("<B")
        ndim = r.u("<B")
        shape = tuple(r.u("<Q") for _ in range(ndim))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: bad dtype code {code} for {name!r}")
        n = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(n * 8), dtype=_DTYPES[code]).reshape(shape)
        tensors[name] = data.astype(data.dtype.newbyteorder("="))
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes")

    config = AgentConfig(**meta["agent"])
    params = AgentParams(config, {
        k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")
    })
    opt_m = opt_v = None
    if meta.get("has_opt"):
        opt_m = {k[len("adam.m."):]: v for k, v in tensors.items()
                 if k.startswith("adam.m.")}
        opt_v = {k[len("adam.v."):]: v for k, v in tensors.items()
                 if k.startswith("adam.v.")}
    return CheckpointData(params=params, opt_m=opt_m, opt_v=opt_v,
                          adam_t=int(meta.get("adam_t", 0)),
                          counters=dict(meta.get("counters", {})),
                          config_hash=meta.get("config_hash", ""),
                          version=version)


def restore_opt_state(data: CheckpointData):
    """Rebuild an AdamState from loaded checkpoint data (None if absent)."""
    if data.opt_m is None:
        return None
    from .metatrain import AdamState

    return AdamState(m={k: v.copy() for k, v in data.opt_m.items()},
                     v={k: v.copy() for k, v in data.opt_v.items()},
                     t=data.adam_t)
