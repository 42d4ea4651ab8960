"""Tiny versioned binary container used for on-disk caches and checkpoints.

Layout (all integers little-endian):

    magic      8 bytes
    version    uint32
    meta_len   uint32, followed by meta_len bytes of UTF-8 JSON (sorted keys)
    n_arrays   uint32
    per array: name_len uint32, name bytes,
               dtype_len uint32, dtype string bytes (numpy dtype.str),
               ndim uint32, ndim int64 shape entries,
               raw little-endian array bytes (C order)

Writing the same content twice produces byte-identical files.
"""

import json
import os
import struct

import numpy as np


def write_container(path, magic, version, meta, arrays):
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", version))
        meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            name_b = name.encode()
            dtype_b = arr.dtype.str.encode()
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<I", len(dtype_b)))
            f.write(dtype_b)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            f.write(arr.tobytes())
    os.replace(tmp, path)


def read_container(path, magic, version):
    with open(path, "rb") as f:
        got_magic = f.read(8)
        if got_magic != magic:
            raise ValueError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        (got_version,) = struct.unpack("<I", f.read(4))
        if got_version != version:
            raise ValueError(f"{path}: unsupported format version {got_version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode())
        (n_arrays,) = struct.unpack("<I", f.read(4))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode()
            (dtype_len,) = struct.unpack("<I", f.read(4))
            dtype = np.dtype(f.read(dtype_len).decode())
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}q", f.read(8 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            data = f.read(count * dtype.itemsize)
            arrays[name] = np.frombuffer(data, dtype=dtype).reshape(shape).copy()
    return meta, arrays
