"""Binary checkpoint format.

Layout (all little-endian)::

    b"FSERCKPT"            magic, 8 bytes
    uint16                 format version
    32 bytes               sha256 of the network spec
    uint32                 tensor count
    per tensor:
        uint32             scalar count
        float32[count]     values in flattening order

Tensor names and shapes come from the spec, so a checkpoint can only be read
back against the architecture that wrote it.
"""

import struct

import numpy as np

from .model import NetworkSpec, Parameters, ShapeError, param_shapes

MAGIC = b"FSERCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, spec: NetworkSpec, params: Parameters):
    shapes = param_shapes(spec)
    if list(shapes) != params.names:
        raise ShapeError("parameters do not match the network spec layout")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(spec.digest())
        fh.write(struct.pack("<I", len(shapes)))
        for name in shapes:
            data = np.ascontiguousarray(params[name], dtype="<f4").ravel()
            fh.write(struct.pack("<I", data.size))
            fh.write(data.tobytes())


def load_checkpoint(path, spec: NetworkSpec) -> Parameters:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if raw[10:42] != spec.digest():
        raise CheckpointError(f"{path}: checkpoint was written for a different network spec")
    (count,) = struct.unpack_from("<I", raw, 42)
    shapes = param_shapes(spec)
    if count != len(shapes):
        raise CheckpointError(f"{path}: expected {len(shapes)} tensors, found {count}")
    offset, tensors = 46, {}
    for name, shape in shapes.items():
        (n,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if n != int(np.prod(shape)):
            raise CheckpointError(f"{path}: tensor {name} has {n} values, expected shape {shape}")
        if offset + 4 * n > len(raw):
            raise CheckpointError(f"{path}: truncated at tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=offset).astype(np.float64).reshape(shape)
        offset += 4 * n
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return Parameters(tensors)
