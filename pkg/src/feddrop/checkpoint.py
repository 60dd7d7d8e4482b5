"""Flat binary checkpoints: trained params plus the initialization snapshot.

Layout (all little-endian):

    bytes 0..3    magic b"FDCK"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..27   arch dims, 5 x uint32: input, model, hidden, blocks, classes
    then          trained params as float64 in declaration order
                  (input_w, input_b, per block w1,b1,w2,b2, output_w, output_b)
    then          the initialization snapshot, same layout

The layout is fully determined by the header, so files are bit-exact
across platforms.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .nn import Architecture, ModelParams, init_params, param_count

MAGIC = b"FDCK"
VERSION = 1
_HEADER = struct.Struct("<4sI5I")


def _payload(params: ModelParams) -> bytes:
    return b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays())


def save_checkpoint(path: str | Path, params: ModelParams, init_snapshot: ModelParams) -> None:
    arch = Architecture.from_params(params)
    if params.shapes() != init_snapshot.shapes():
        raise DataError("params and init snapshot are not congruent")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        arch.input_dim,
        arch.model_dim,
        arch.hidden_dim,
        arch.num_blocks,
        arch.num_classes,
    )
    Path(path).write_bytes(header + _payload(params) + _payload(init_snapshot))


def _read_tree(arch: Architecture, buffer: bytes, offset: int) -> tuple[ModelParams, int]:
    template = init_params(arch, seed=0)
    arrays = []
    for a in template.arrays():
        nbytes = a.size * 8
        chunk = np.frombuffer(buffer, dtype="<f8", count=a.size, offset=offset)
        arrays.append(chunk.reshape(a.shape).astype(np.float64))
        offset += nbytes
    it = iter(arrays)
    rebuilt = template
    rebuilt.input_w = next(it)
    rebuilt.input_b = next(it)
    for block in rebuilt.blocks:
        block.w1 = next(it)
        block.b1 = next(it)
        block.w2 = next(it)
        block.b2 = next(it)
    rebuilt.output_w = next(it)
    rebuilt.output_b = next(it)
    return rebuilt, offset


def load_checkpoint(path: str | Path) -> tuple[ModelParams, ModelParams]:
    """Return (trained params, initialization snapshot)."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint")
    magic, version, i, m, h, n, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    arch = Architecture(input_dim=i, model_dim=m, hidden_dim=h, num_blocks=n, num_classes=c)
    expected = _HEADER.size + 2 * param_count(arch) * 8
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(blob)}")
    params, offset = _read_tree(arch, blob, _HEADER.size)
    snapshot, _ = _read_tree(arch, blob, offset)
    return params, snapshot
