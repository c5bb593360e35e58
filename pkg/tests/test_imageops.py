"""Geometry and equalization tests.

The 30x20 -> 32x32 padding case is checked against hand-computed band
geometry: 5 zero columns pad each side of the 20-wide content, which
scale to 5 * 32/30 = 5.33 output columns of zeros on each edge.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from synthsup.imageops import (
    affine_warp,
    equalize_histogram,
    pad_to_square,
    resize_bilinear,
)


class TestPadToSquare:
    def test_tall_input_gets_side_bands(self):
        img = np.ones((30, 20))
        padded = pad_to_square(img)
        assert padded.shape == (30, 30)
        assert np.all(padded[:, :5] == 0)
        assert np.all(padded[:, 25:] == 0)
        np.testing.assert_array_equal(padded[:, 5:25], img)

    def test_resized_bands_match_hand_geometry(self):
        out = resize_bilinear(pad_to_square(np.ones((30, 20))), 32)
        assert out.shape == (32, 32)
        # zero bands span 5.33 output columns per side
        assert np.all(out[:, :5] == 0)
        assert np.all(out[:, 27:] == 0)
        assert np.all(out[1:-1, 7:25] > 0.99)

    def test_square_input_unchanged(self):
        img = np.arange(16, dtype=float).reshape(4, 4)
        np.testing.assert_array_equal(pad_to_square(img), img)

    @settings(max_examples=40, deadline=None)
    @given(h=st.integers(1, 40), w=st.integers(1, 40))
    def test_output_square_and_content_preserved(self, h, w):
        rng = np.random.default_rng(h * 100 + w)
        img = rng.random((h, w))
        padded = pad_to_square(img)
        side = max(h, w)
        assert padded.shape == (side, side)
        assert padded.sum() == pytest.approx(img.sum())

    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            pad_to_square(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            pad_to_square(np.zeros((0, 4)))


class TestResize:
    def test_identity_when_same_size(self):
        img = np.random.default_rng(0).random((16, 16))
        np.testing.assert_allclose(resize_bilinear(img, 16), img, atol=1e-12)

    def test_constant_stays_constant_in_interior(self):
        out = resize_bilinear(np.full((8, 8), 0.6), 32)
        assert np.all(np.abs(out[4:-4, 4:-4] - 0.6) < 1e-9)

    def test_rejects_bad_size(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.ones((4, 4)), 0)


class TestEqualize:
    def test_constant_image_is_identity(self):
        img = np.full((7, 7), 0.42)
        np.testing.assert_array_equal(equalize_histogram(img), img)

    def test_gradient_becomes_near_uniform(self):
        # a linear ramp occupies every level equally; the equalized values
        # should pass a KS test against U[0, 1]
        img = np.linspace(0, 1, 64 * 64).reshape(64, 64)
        eq = equalize_histogram(img)
        assert eq.min() >= 0.0 and eq.max() <= 1.0
        d, p = stats.kstest(eq.ravel(), "uniform")
        assert p > 1e-3, f"KS stat {d}, p {p}"

    def test_output_bounds_and_monotonicity(self):
        rng = np.random.default_rng(3)
        img = rng.random((32, 32)) * 5 - 2
        eq = equalize_histogram(img)
        assert eq.min() == pytest.approx(0.0)
        assert eq.max() == pytest.approx(1.0)
        flat_in = img.ravel()
        flat_out = eq.ravel()
        order = np.argsort(flat_in)
        assert np.all(np.diff(flat_out[order]) >= -1e-12)


class TestAffineWarp:
    def test_identity(self):
        img = np.random.default_rng(1).random((9, 9))
        np.testing.assert_allclose(affine_warp(img, np.eye(2)), img, atol=1e-12)

    def test_translation_moves_content(self):
        img = np.zeros((9, 9))
        img[4, 4] = 1.0
        out = affine_warp(img, np.eye(2), shift=(2, 1))
        assert out[6, 5] == pytest.approx(1.0)
        assert out[4, 4] == pytest.approx(0.0)

    def test_flip_matrix_mirrors(self):
        img = np.zeros((9, 9))
        img[4, 1] = 1.0
        out = affine_warp(img, np.array([[1.0, 0.0], [0.0, -1.0]]))
        assert out[4, 7] == pytest.approx(1.0)

    def test_out_of_frame_is_zero(self):
        out = affine_warp(np.ones((5, 5)), np.eye(2), shift=(4, 0))
        assert np.all(out[:4] == 0)

    def test_rejects_bad_matrix(self):
        with pytest.raises(ValueError):
            affine_warp(np.ones((4, 4)), np.eye(3))
