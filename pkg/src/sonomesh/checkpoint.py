"""Named-tensor checkpoint archive with the network spec embedded as a header.

Layout (all integers little-endian):

    magic   8 bytes  b"SNMNET1\\0"
    u32     length of the JSON-encoded spec, followed by that JSON
    u32     number of tensor records
    record  u16 name length, name (utf-8), u8 dtype tag, u8 ndim,
            ndim x u32 dims, raw tensor bytes

Dtype tags: 0 = float32, 1 = int64.  Records cover the full module state
(parameters and buffers) so a restore is bitwise.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np
import torch

from .errors import SpecMismatchError, ValidationError
from .nets import Net, NetSpec, build

MAGIC = b"SNMNET1\0"
_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("int64"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i8")}


def save_checkpoint(net: Net, path) -> None:
    path = os.fspath(path)
    chunks = [MAGIC]
    spec_json = json.dumps(net.spec.to_dict(), sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(spec_json)))
    chunks.append(spec_json)

    records = net.named_tensors()
    chunks.append(struct.pack("<I", len(records)))
    for name, tensor in records:
        arr = tensor.detach().cpu().numpy()
        if arr.dtype not in _DTYPE_TAGS:
            raise ValidationError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if arr.dtype == np.dtype("float32"):
            chunks.append(arr.astype("<f4").tobytes())
        else:
            chunks.append(arr.astype("<i8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path, expected_spec: NetSpec | None = None) -> Net:
    """Rebuild a network from an archive; optionally enforce a spec match."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path} is not a network checkpoint")
    offset = len(MAGIC)

    (spec_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    spec = NetSpec.from_dict(json.loads(data[offset : offset + spec_len].decode("utf-8")))
    offset += spec_len

    if expected_spec is not None and spec != expected_spec:
        diffs = [
            f"{k}: checkpoint={v!r} expected={getattr(expected_spec, k)!r}"
            for k, v in vars(spec).items()
            if getattr(expected_spec, k) != v
        ]
        raise SpecMismatchError("checkpoint spec mismatch: " + "; ".join(diffs))

    (n_records,) = struct.unpack_from("<I", data, offset)
    offset += 4
    state = {}
    for _ in range(n_records):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        tag, ndim = struct.unpack_from("<BB", data, offset)
        offset += 2
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        dtype = _TAG_DTYPES[tag]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        offset += dtype.itemsize * count
        state[name] = torch.from_numpy(arr.copy())

    net = build(spec)
    net.module.load_state_dict(state, strict=True)
    return net
