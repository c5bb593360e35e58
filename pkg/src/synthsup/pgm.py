"""Binary portable-graymap (P5) reading and writing.

The P5 container is a plain header followed by raw bytes, so exported
images stay inspectable without any imaging library.  Grayscale in
[0, 1] quantizes to 8 bits on write; reading returns the stored bytes
untouched.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_MAXVAL = 255


def write_pgm(path, image) -> None:
    """Write one grayscale image; floats in [0, 1] quantize to uint8."""
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("image must be a non-empty 2-D array")
    if img.dtype == np.uint8:
        data = img
    elif np.issubdtype(img.dtype, np.floating):
        data = np.rint(np.clip(img, 0.0, 1.0) * _MAXVAL).astype(np.uint8)
    else:
        raise ValueError(f"unsupported image dtype {img.dtype}")
    h, w = data.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{_MAXVAL}\n".encode("ascii"))
        fh.write(data.tobytes())


def _tokens(blob: bytes):
    """Header tokens in order, skipping whitespace and # comments."""
    i = 0
    while i < len(blob):
        if blob[i:i + 1].isspace():
            i += 1
        elif blob[i:i + 1] == b"#":
            i = blob.index(b"\n", i) + 1
        else:
            j = i
            while j < len(blob) and not blob[j:j + 1].isspace():
                j += 1
            yield blob[i:j], j
            i = j


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 file back as a (H, W) uint8 array."""
    blob = Path(path).read_bytes()
    fields, end = [], 0
    for token, pos in _tokens(blob):
        fields.append(token)
        end = pos
        if len(fields) == 4:
            break
    if len(fields) < 4 or fields[0] != b"P5":
        raise ValueError("not a binary P5 graymap")
    w, h, maxval = (int(f) for f in fields[1:])
    if w < 1 or h < 1:
        raise ValueError("invalid graymap dimensions")
    if not 0 < maxval <= _MAXVAL:
        raise ValueError(f"unsupported maxval {maxval}")
    pixels = blob[end + 1:]
    if len(pixels) != w * h:
        raise ValueError(f"expected {w * h} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()
