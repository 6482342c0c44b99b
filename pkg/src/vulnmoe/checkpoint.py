"""Checkpoint container: canonical-JSON manifest plus named little-endian
weight buffers with shape headers. Round-trips bit-exactly."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VMOECKPT"
_DTYPE_CODES = {np.dtype("float64"): b"d", np.dtype("float32"): b"f"}
_CODE_DTYPES = {b"d": np.dtype("<f8"), b"f": np.dtype("<f4")}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save(path, manifest: dict, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    blob = canonical_json(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            code = _DTYPE_CODES.get(arr.dtype)
            if code is None:
                raise TypeError(f"checkpoint tensors must be float32/float64, "
                                f"{name} is {arr.dtype}")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(code)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                      copy=False).tobytes())


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file (bad magic)")
        (manifest_len,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(manifest_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            code = fh.read(1)
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise ValueError(f"unknown dtype code {code!r} for tensor {name}")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise ValueError(f"truncated checkpoint while reading {name}")
            arrays[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(
                dtype.newbyteorder("="), copy=True)
    return manifest, arrays
