"""Graymap container checks against hand-written byte fixtures."""

import numpy as np
import pytest

from synthsup.pgm import read_pgm, write_pgm


def test_exact_bytes_for_tiny_fixture(tmp_path):
    img = np.array([[0, 128, 255], [7, 9, 11]], dtype=np.uint8)
    path = tmp_path / "t.pgm"
    write_pgm(path, img)
    assert path.read_bytes() == b"P5\n3 2\n255\n" + bytes([0, 128, 255, 7, 9, 11])


def test_uint8_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, size=(17, 11), dtype=np.uint8)
    path = tmp_path / "r.pgm"
    write_pgm(path, img)
    np.testing.assert_array_equal(read_pgm(path), img)


def test_float_quantization_hand_values(tmp_path):
    img = np.array([[0.0, 1.0], [0.5, 2.0]])
    path = tmp_path / "f.pgm"
    write_pgm(path, img)
    got = read_pgm(path)
    # 0.5 * 255 = 127.5 rounds to the even neighbor; 2.0 clips to 1.0
    np.testing.assert_array_equal(got, [[0, 255], [128, 255]])


def test_reader_skips_comment_lines(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x05\x06")
    np.testing.assert_array_equal(read_pgm(path), [[5, 6]])


def test_reader_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P6\n1 1\n255\n\x00")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_reader_rejects_truncated_pixels(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n2 2\n255\n\x00\x01")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_writer_rejects_bad_inputs(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.int32))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "y.pgm", np.zeros(4))
