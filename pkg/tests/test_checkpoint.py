import struct
from collections import OrderedDict

import numpy as np
import pytest

from synthsup.checkpoint import (
    MAGIC_CLASSIFIER,
    MAGIC_DENOISER,
    load_checkpoint,
    save_checkpoint,
)


def _payload():
    return OrderedDict([
        ("layer.weight", np.arange(12, dtype=np.float32).reshape(3, 4)),
        ("layer.bias", np.array([1.5, -2.25, 0.0], dtype=np.float32)),
        ("scalarish", np.float32(7.0) * np.ones((), dtype=np.float32)),
    ])


def test_round_trip_exact(tmp_path):
    path = tmp_path / "m.ckpt"
    config = {"image_size": 32, "kind": "cosine"}
    save_checkpoint(path, MAGIC_DENOISER, config, _payload())
    cfg, arrays = load_checkpoint(path, MAGIC_DENOISER)
    assert cfg == config
    assert list(arrays) == ["layer.weight", "layer.bias", "scalarish"]
    for name, ref in _payload().items():
        np.testing.assert_array_equal(arrays[name], ref)
        assert arrays[name].dtype == np.float32


def test_magic_mismatch_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MAGIC_CLASSIFIER, {}, _payload())
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path, MAGIC_DENOISER)


def test_unknown_magic_rejected_on_save(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "m.ckpt", b"XXXX1", {}, _payload())


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt", MAGIC_DENOISER)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MAGIC_DENOISER, {"a": 1}, _payload())
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path, MAGIC_DENOISER)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MAGIC_DENOISER, {}, _payload())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_checkpoint(path, MAGIC_DENOISER)


def test_layout_is_little_endian(tmp_path):
    # first bytes after the magic are the u32 config length
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, MAGIC_DENOISER, {}, OrderedDict())
    raw = path.read_bytes()
    assert raw[:5] == b"SSDM1"
    (config_len,) = struct.unpack("<I", raw[5:9])
    assert raw[9:9 + config_len] == b"{}"
    (n_arrays,) = struct.unpack("<I", raw[9 + config_len:13 + config_len])
    assert n_arrays == 0
