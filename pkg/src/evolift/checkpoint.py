"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"EVOL" | u32 version
    u32 n | n bytes of UTF-8 JSON metadata (config, epoch, rng state, optimizer step)
    u32 count, then per tensor record:
        u32 key length | UTF-8 key | u32 ndim | ndim x u64 extents | f64 payload

Tensor keys are ``param/<path>`` and ``opt.<m|v|vhat>/<path>``, written in
sorted order so identical state always serialises to identical bytes.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .optim import AMSGradState

MAGIC = b"EVOL"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict
    params: dict  # path -> ndarray
    optimizer: AMSGradState = field(default_factory=AMSGradState)
    epoch: int = 0
    rng_state: dict = None

    def tensors(self):
        out = {f"param/{k}": v for k, v in self.params.items()}
        for name in ("m", "v", "vhat"):
            out.update({f"opt.{name}/{k}": v for k, v in getattr(self.optimizer, name).items()})
        return out


def to_bytes(ckpt):
    meta = {
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "optimizer_step": ckpt.optimizer.step,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    tensors = ckpt.tensors()
    chunks.append(struct.pack("<I", len(tensors)))
    for key in sorted(tensors):
        arr = np.asarray(tensors[key], dtype="<f8", order="C")  # ascontiguousarray would promote 0-d to 1-d
        kb = key.encode("utf-8")
        chunks.append(struct.pack("<I", len(kb)))
        chunks.append(kb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def from_bytes(buf):
    if buf[:4] != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    pos = 4

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, buf, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ContractError(f"unsupported checkpoint version {version}")
    (n,) = take("<I")
    meta = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    (count,) = take("<I")
    params, opt = {}, AMSGradState(step=meta["optimizer_step"])
    for _ in range(count):
        (klen,) = take("<I")
        key = buf[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        kind, path = key.split("/", 1)
        if kind == "param":
            params[path] = arr
        else:
            getattr(opt, kind.split(".", 1)[1])[path] = arr
    if pos != len(buf):
        raise ContractError("trailing bytes after checkpoint records")
    return Checkpoint(meta["config"], params, opt, meta["epoch"], meta["rng_state"])


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
