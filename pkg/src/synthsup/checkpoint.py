"""Binary checkpoint container.

Layout, all little-endian:

    magic (5 bytes)            "SSDM1" denoiser / "SSCL1" classifier
    u32   config length        UTF-8 JSON config block
    ...   config bytes
    u32   array count
    per array:
        u16  name length, name bytes (UTF-8)
        u8   ndim
        u32  per-dimension sizes
        f32  data, C order

Arrays are written in the order given (model declaration order) and read
back into an ordered mapping.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC_DENOISER = b"SSDM1"
MAGIC_CLASSIFIER = b"SSCL1"
_MAGICS = (MAGIC_DENOISER, MAGIC_CLASSIFIER)


def save_checkpoint(path, magic: bytes, config: dict, arrays) -> None:
    if magic not in _MAGICS:
        raise ValueError(f"unknown checkpoint magic {magic!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError("checkpoint file is truncated")
    return data


def load_checkpoint(path, expected_magic: bytes):
    """Return (config dict, ordered name -> float32 array mapping)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 5)
        if magic != expected_magic:
            raise ValueError(f"bad checkpoint magic {magic!r}, "
                             f"expected {expected_magic!r}")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = json.loads(_read_exact(fh, config_len).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays = OrderedDict()
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            arrays[name] = data.reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    return config, arrays
