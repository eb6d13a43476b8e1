"""Box algebra, IoU and the dense grid type."""

import numpy as np
import pytest

from hrcenternet.core.errors import EmptyBoxError, GeometryError, ShapeError
from hrcenternet.core.geometry import (
    BBox,
    clamp_to_image,
    corners_array,
    from_corners,
    iou,
    iou_matrix,
    to_corners,
)
from hrcenternet.core.grid import TensorGrid, round_up


def _random_box(rng, lo=0.0, hi=100.0):
    w, h = rng.uniform(0.5, 30.0, size=2)
    cx, cy = rng.uniform(lo, hi, size=2)
    return BBox(float(cx), float(cy), float(w), float(h))


class TestBBox:
    def test_rejects_non_positive_size(self):
        with pytest.raises(GeometryError):
            BBox(1, 1, 0, 2)
        with pytest.raises(GeometryError):
            BBox(1, 1, 2, -1)

    def test_rejects_non_finite(self):
        with pytest.raises(GeometryError):
            BBox(float("nan"), 1, 2, 2)

    def test_to_corners(self):
        assert to_corners(BBox(2, 3, 2, 4)) == (1, 1, 3, 5)

    def test_corner_roundtrip(self, rng):
        for _ in range(50):
            b = _random_box(rng)
            back = from_corners(*to_corners(b))
            assert back.cx == pytest.approx(b.cx, abs=1e-12)
            assert back.cy == pytest.approx(b.cy, abs=1e-12)
            assert back.w == pytest.approx(b.w, abs=1e-12)
            assert back.h == pytest.approx(b.h, abs=1e-12)

    def test_inverted_corners_rejected(self):
        with pytest.raises(GeometryError):
            from_corners(3, 1, 1, 5)


class TestIoU:
    def test_identical(self):
        b = BBox(5, 5, 4, 4)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(1, 1, 2, 2), BBox(10, 10, 2, 2)) == 0.0

    def test_hand_value(self):
        a = from_corners(0, 0, 2, 2)
        b = from_corners(1, 0, 3, 2)
        assert iou(a, b) == pytest.approx(1 / 3)

    def test_properties_over_random_boxes(self, rng):
        for _ in range(200):
            a, b = _random_box(rng), _random_box(rng)
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == pytest.approx(iou(b, a))
            assert iou(a, a) == pytest.approx(1.0)

    def test_translation_and_scale_invariance(self, rng):
        for _ in range(100):
            a, b = _random_box(rng, 20, 40), _random_box(rng, 20, 40)
            dx, dy = rng.uniform(-50, 50, size=2)
            s = float(rng.uniform(0.1, 10.0))
            base = iou(a, b)
            assert iou(a.translated(dx, dy), b.translated(dx, dy)) == pytest.approx(base, abs=1e-9)
            assert iou(a.scaled(s), b.scaled(s)) == pytest.approx(base, abs=1e-9)

    def test_matrix_matches_pairwise(self, rng):
        a = [_random_box(rng, 0, 30) for _ in range(6)]
        b = [_random_box(rng, 0, 30) for _ in range(4)]
        m = iou_matrix(corners_array(a), corners_array(b))
        expected = np.array([[iou(x, y) for y in b] for x in a])
        np.testing.assert_allclose(m, expected, atol=1e-12)

    def test_matrix_empty(self):
        assert iou_matrix(corners_array([]), corners_array([BBox(1, 1, 1, 1)])).shape == (0, 1)


class TestClamp:
    def test_inside_unchanged(self):
        b = BBox(5, 5, 2, 2)
        assert clamp_to_image(b, 10, 10) is b

    def test_clips_left_edge(self):
        b = from_corners(-2, 0, 4, 4)
        assert clamp_to_image(b, 10, 10).to_corners() == (0, 0, 4, 4)

    def test_fully_outside_is_empty(self):
        with pytest.raises(EmptyBoxError):
            clamp_to_image(from_corners(-10, 0, -2, 4), 10, 10)

    def test_result_within_image(self, rng):
        for _ in range(100):
            b = _random_box(rng, -10, 60)
            try:
                c = clamp_to_image(b, 50, 40)
            except EmptyBoxError:
                continue
            x0, y0, x1, y1 = c.to_corners()
            assert 0 <= x0 < x1 <= 50 and 0 <= y0 < y1 <= 40


class TestTensorGrid:
    def test_write_then_read_every_index(self, rng):
        grid = TensorGrid.zeros(2, 3, 4)
        for c in range(2):
            for y in range(3):
                for x in range(4):
                    v = float(rng.random())
                    assert grid.with_value(c, y, x, v).get(c, y, x) == pytest.approx(v, rel=1e-6)

    def test_flat_is_channel_major(self):
        data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        grid = TensorGrid(data)
        assert grid.flat.size == 24
        assert grid.flat[12] == data[1, 0, 0]

    def test_rejects_bad_rank_and_non_finite(self):
        with pytest.raises(ShapeError):
            TensorGrid(np.zeros((3, 4)))
        with pytest.raises(ShapeError):
            TensorGrid(np.full((1, 2, 2), np.inf))

    def test_is_read_only(self):
        grid = TensorGrid.zeros(1, 2, 2)
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0

    def test_padded_extends_bottom_and_right(self):
        grid = TensorGrid(np.zeros((1, 3, 5)))
        padded = grid.padded(4, 8, 1.0)
        assert padded.shape == (1, 4, 8)
        assert not padded.data[:, :3, :5].any()
        assert (padded.data[:, 3, :] == 1.0).all()
        assert (padded.data[:, :, 5:] == 1.0).all()

    def test_padded_never_shrinks(self):
        grid = TensorGrid.zeros(1, 6, 6)
        assert grid.padded(4, 4, 1.0) is grid
        assert grid.padded(6, 8, 1.0).shape == (1, 6, 8)


@pytest.mark.parametrize("n, multiple, expected", [(100, 32, 128), (128, 32, 128), (150, 4, 152), (1, 4, 4)])
def test_round_up(n, multiple, expected):
    assert round_up(n, multiple) == expected
