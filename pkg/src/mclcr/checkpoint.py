"""Binary checkpoint format.

Layout (little-endian)::

    b"MCLR" | u16 version | u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank
                | rank x u64 extents | row-major payload
    u32 CRC32 over all per-tensor records

Tensors are written in sorted name order so serialisation is canonical.
Architecture settings and training bookkeeping travel as ``meta.*`` tensors.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import fields
from pathlib import Path

import numpy as np

from .model import ModelConfig, ModelState, init_model
from .tensor import Tensor

MAGIC = b"MCLR"
VERSION = 1
DTYPE_F32 = 0

_ENUMS = {
    "attention_scale": ("sqrt_d", "sqrt_D"),
    "supcon_denominator": ("negatives", "all"),
    "supcon_reduction": ("sum", "mean"),
}
_BOOKKEEPING = ("epoch", "best_val_loss", "best_val_acc", "lr")


class CheckpointError(ValueError):
    pass


def _meta_tensors(state: ModelState) -> dict[str, np.ndarray]:
    out = {}
    for f in fields(ModelConfig):
        v = getattr(state.config, f.name)
        if f.name in _ENUMS:
            v = _ENUMS[f.name].index(v)
        out[f"meta.config.{f.name}"] = np.atleast_1d(np.asarray(v, dtype=np.float64))
    for name in _BOOKKEEPING:
        out[f"meta.{name}"] = np.atleast_1d(np.asarray(getattr(state, name), dtype=np.float64))
    return out


def _decimal(v: float) -> float:
    # undo the f32 round trip for short decimal settings such as 0.1 or 1e-3
    return float(f"{float(v):.7g}")


def encode_checkpoint(state: ModelState) -> bytes:
    tensors = dict(_meta_tensors(state))
    tensors.update(state.arrays())
    body = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        body += struct.pack("<H", len(raw)) + raw
        body += struct.pack("<BB", DTYPE_F32, arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes()
    header = MAGIC + struct.pack("<HI", VERSION, len(tensors))
    return bytes(header + body + struct.pack("<I", zlib.crc32(body)))


def decode_tensors(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 14:
        raise CheckpointError("truncated checkpoint header")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    pos, end = 10, len(buf) - 4
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            dtype, rank = struct.unpack_from("<BB", buf, pos)
            pos += 2
            if dtype != DTYPE_F32:
                raise CheckpointError(f"tensor {name}: unsupported dtype code {dtype}")
            shape = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
            nbytes = 4 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > end:
                raise CheckpointError(f"truncated checkpoint payload in tensor {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from exc
    if pos != end:
        raise CheckpointError("truncated checkpoint" if pos > end else "trailing bytes after last tensor")
    (crc,) = struct.unpack_from("<I", buf, end)
    if crc != zlib.crc32(buf[10:end]):
        raise CheckpointError("checkpoint CRC32 mismatch")
    return tensors


def decode_checkpoint(buf: bytes) -> ModelState:
    tensors = decode_tensors(buf)
    kw = {}
    for f in fields(ModelConfig):
        key = f"meta.config.{f.name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks {key}")
        v = tensors[key].astype(np.float64)
        if f.name in _ENUMS:
            kw[f.name] = _ENUMS[f.name][int(v[0])]
        elif f.name == "ssrb_taps":
            kw[f.name] = tuple(int(t) for t in v)
        elif f.type in ("bool", bool):
            kw[f.name] = bool(v[0])
        elif f.type in ("int", int, "int | None"):
            kw[f.name] = int(v[0])
        else:
            kw[f.name] = _decimal(v[0])
    config = ModelConfig(**kw)
    template = init_model(config, 0)
    params = {}
    for name, arr in tensors.items():
        if name.startswith("meta."):
            if name[5:] not in _BOOKKEEPING and not name.startswith("meta.config."):
                raise CheckpointError(f"unknown tensor name {name}")
            continue
        if name not in template.params:
            raise CheckpointError(f"unknown tensor name {name}")
        if arr.shape != template.params[name].shape:
            raise CheckpointError(f"tensor {name} has shape {arr.shape}, config implies {template.params[name].shape}")
        params[name] = Tensor(arr.astype(np.float64), requires_grad=True)
    missing = set(template.params) - set(params)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    book = {k: tensors[f"meta.{k}"][0] for k in _BOOKKEEPING}
    # measured scores keep their exact f32 value so a reload re-encodes to the same bytes
    return ModelState(params, config, int(book["epoch"]), float(book["best_val_loss"]),
                      float(book["best_val_acc"]), _decimal(book["lr"]))


def save_checkpoint(state: ModelState, path) -> None:
    Path(path).write_bytes(encode_checkpoint(state))


def load_checkpoint(path) -> ModelState:
    return decode_checkpoint(Path(path).read_bytes())
