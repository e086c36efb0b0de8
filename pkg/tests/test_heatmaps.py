import numpy as np
import pytest

from hallmark.errors import DegenerateHeatmap, InvalidSigma
from hallmark.heatmaps import decode_heatmaps, render_heatmaps
from hallmark.types import HeatmapStack, LandmarkSet


def test_on_grid_landmark_peaks_at_one():
    stack = render_heatmaps(np.array([[3.0, 5.0]]), (8, 8), 1.5)
    assert stack.maps[0, 5, 3] == 1.0
    assert stack.maps[0].max() == 1.0
    assert stack.visible[0]


def test_gaussian_value_oracle():
    # scalar evaluation of the kernel at one off-peak pixel
    sigma = 2.0
    stack = render_heatmaps(np.array([[4.0, 4.0]]), (9, 9), sigma)
    expected = np.exp(-((6 - 4) ** 2 + (3 - 4) ** 2) / (2 * sigma**2))
    assert abs(stack.maps[0, 3, 6] - expected) < 1e-12


def test_off_map_landmark_renders_zero_map():
    stack = render_heatmaps(np.array([[-1.0, 4.0], [4.0, 4.0]]), (8, 8), 1.5)
    assert stack.maps[0].max() == 0.0
    assert not stack.visible[0]
    assert stack.visible[1]


def test_boundary_landmark_is_on_map():
    stack = render_heatmaps(np.array([[7.0, 0.0]]), (8, 8), 1.5)
    assert stack.visible[0]
    assert stack.maps[0, 0, 7] == 1.0


def test_invalid_sigma():
    with pytest.raises(InvalidSigma):
        render_heatmaps(np.array([[1.0, 1.0]]), (8, 8), 0.0)
    with pytest.raises(InvalidSigma):
        render_heatmaps(np.array([[1.0, 1.0]]), (8, 8), -2.0)


def test_decode_recovers_on_grid_points():
    pts = np.array([[3.0, 5.0], [1.0, 1.0], [6.0, 2.0]])
    stack = render_heatmaps(pts, (8, 8), 1.5)
    out = decode_heatmaps(stack)
    assert np.abs(out.landmarks.points - pts).max() <= 0.5
    assert np.all(out.peak_values == 1.0)


def test_decode_quarter_shift_direction():
    # peak at x=3 with a larger right neighbor than left -> shift +0.25
    m = np.zeros((1, 7, 7))
    m[0, 3, 3] = 1.0
    m[0, 3, 4] = 0.6
    m[0, 3, 2] = 0.4
    m[0, 2, 3] = 0.5
    m[0, 4, 3] = 0.5  # vertical tie -> no shift
    out = decode_heatmaps(HeatmapStack(m))
    assert out.landmarks.points[0].tolist() == [3.25, 3.0]


def test_decode_tie_no_shift():
    m = np.zeros((1, 5, 5))
    m[0, 2, 2] = 1.0
    m[0, 2, 1] = 0.5
    m[0, 2, 3] = 0.5
    out = decode_heatmaps(HeatmapStack(m))
    assert out.landmarks.points[0].tolist() == [2.0, 2.0]


def test_decode_corner_peak_no_shift():
    # out-of-range neighbors read as zero; 0 vs positive inner neighbor shifts inward
    m = np.zeros((1, 5, 5))
    m[0, 0, 0] = 1.0
    out = decode_heatmaps(HeatmapStack(m))
    assert out.landmarks.points[0].tolist() == [0.0, 0.0]
    m2 = np.zeros((1, 5, 5))
    m2[0, 0, 0] = 1.0
    m2[0, 0, 1] = 0.3
    out = decode_heatmaps(HeatmapStack(m2))
    assert out.landmarks.points[0].tolist() == [0.25, 0.0]


def test_decode_degenerate_map():
    with pytest.raises(DegenerateHeatmap):
        decode_heatmaps(HeatmapStack(np.full((1, 5, 5), 0.5)))


def test_decode_argmax_tie_smaller_flat_index():
    m = np.zeros((1, 5, 5))
    m[0, 1, 3] = 1.0
    m[0, 3, 1] = 1.0  # larger flat index loses
    out = decode_heatmaps(HeatmapStack(m))
    x, y = out.landmarks.points[0]
    assert (round(y), round(x)) == (1, 3)


def test_render_decode_round_trip_random():
    """Sub-pixel recovery within 0.5 px over random off-grid landmarks."""
    rng = np.random.default_rng(11)
    for _ in range(150):
        pts = rng.uniform(1.0, 62.0, size=(4, 2))
        stack = render_heatmaps(pts, (64, 64), 1.5)
        out = decode_heatmaps(stack)
        assert np.abs(out.landmarks.points - pts).max() <= 0.5


def test_render_accepts_landmark_set():
    lm = LandmarkSet(np.array([[2.0, 2.0]]))
    stack = render_heatmaps(lm, (6, 6), 1.0)
    assert stack.count == 1
