"""Binary model checkpoints.

Layout (all integers little-endian)::

    b"SNNC"                magic
    u32 version            currently 1
    u8  kind               0 = single-stream, 1 = multi-stream
    u32 global_resolution, hand_resolution, kernel, hidden, n_classes
    u32 n_blocks, then n_blocks x u32 channel widths
    u32 n_tensors
    per tensor: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims
    raw float32 parameter data for every tensor, in table order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import IoFailure, SignLabError
from .model import KINDS, Model, ModelSpec

MAGIC = b"SNNC"
VERSION = 1


class CheckpointError(SignLabError):
    pass


def encode_checkpoint(model: Model) -> bytes:
    spec = model.spec
    out = bytearray(MAGIC)
    out += struct.pack("<IB", VERSION, KINDS.index(spec.kind))
    out += struct.pack("<5I", spec.global_resolution, spec.hand_resolution, spec.kernel,
                       spec.hidden, spec.n_classes)
    out += struct.pack("<I", len(spec.channels)) + struct.pack(f"<{len(spec.channels)}I", *spec.channels)
    tensors = list(model.named_parameters())
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    for _, arr in tensors:
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def decode_checkpoint(blob: bytes) -> Model:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a signlab checkpoint (bad magic)")
    try:
        pos = 4
        version, kind = struct.unpack_from("<IB", blob, pos)
        pos += 5
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        g, h, k, hidden, n_classes = struct.unpack_from("<5I", blob, pos)
        pos += 20
        (n_blocks,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        channels = struct.unpack_from(f"<{n_blocks}I", blob, pos)
        pos += 4 * n_blocks
        spec = ModelSpec(KINDS[kind], g, h, tuple(channels), k, hidden, n_classes)
        model = Model(spec, seed=0)
        (n_tensors,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        table = []
        for _ in range(n_tensors):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode()
            pos += n
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            table.append((name, shape))
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    params = dict(model.named_parameters())
    if [n for n, _ in table] != list(params):
        raise CheckpointError("tensor table does not match the declared architecture")
    for name, shape in table:
        target = params[name]
        if tuple(shape) != target.shape:
            raise CheckpointError(f"{name}: shape {shape} != expected {target.shape}")
        nbytes = 4 * target.size
        if pos + nbytes > len(blob):
            raise CheckpointError("truncated parameter data")
        target[...] = np.frombuffer(blob, dtype="<f4", count=target.size, offset=pos).reshape(shape)
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError("trailing bytes after parameter data")
    return model


def save_checkpoint(model: Model, path) -> None:
    try:
        Path(path).write_bytes(encode_checkpoint(model))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> Model:
    try:
        return decode_checkpoint(Path(path).read_bytes())
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}") from None
