import numpy as np
import pytest

from hallmark.errors import ShapeMismatch
from hallmark.types import (
    FeatureMaps,
    HeatmapStack,
    ImageTensor,
    LandmarkSet,
    from_uint8,
    to_uint8,
)


def test_image_tensor_basics():
    img = ImageTensor(np.zeros((8, 6, 3)), role="HR")
    assert (img.height, img.width, img.channels) == (8, 6, 3)
    assert img.value_range == (0.0, 1.0)


def test_image_tensor_frozen():
    img = ImageTensor(np.zeros((4, 4, 3)), role="LR")
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_image_tensor_rejects_bad_shapes():
    with pytest.raises(ShapeMismatch):
        ImageTensor(np.zeros((4, 4)), role="HR")
    with pytest.raises(ShapeMismatch):
        ImageTensor(np.zeros((4, 4, 2)), role="HR")


def test_image_tensor_rejects_out_of_range():
    with pytest.raises(ShapeMismatch):
        ImageTensor(np.full((4, 4, 3), 1.5), role="HR")
    with pytest.raises(ShapeMismatch):
        ImageTensor(np.full((4, 4, 3), np.nan), role="HR")


def test_image_tensor_role_checked():
    with pytest.raises(ShapeMismatch):
        ImageTensor(np.zeros((4, 4, 3)), role="weird")


def test_uint8_round_trip():
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    img = from_uint8(raw)
    assert to_uint8(img).tolist() == raw.tolist()


def test_from_uint8_grayscale_gets_channel_axis():
    img = from_uint8(np.zeros((5, 7), dtype=np.uint8))
    assert img.data.shape == (5, 7, 1)


def test_landmark_set_interocular():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    lm = LandmarkSet(pts, interocular_indices=(0, 1))
    assert lm.interocular_distance() == 5.0


def test_landmark_set_interocular_requires_indices():
    lm = LandmarkSet(np.array([[1.0, 1.0], [2.0, 2.0]]))
    with pytest.raises(ShapeMismatch):
        lm.interocular_distance()
    coincident = LandmarkSet(np.array([[1.0, 1.0], [1.0, 1.0]]), interocular_indices=(0, 1))
    assert coincident.interocular_distance() == 0.0  # degeneracy is the metric's concern


def test_landmark_set_frozen_and_shape_checked():
    lm = LandmarkSet(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        lm.points[0, 0] = 2.0
    with pytest.raises(ShapeMismatch):
        LandmarkSet(np.zeros((3, 3)))


def test_heatmap_stack_validation():
    stack = HeatmapStack(np.zeros((2, 8, 8)))
    assert stack.count == 2
    assert stack.resolution == (8, 8)
    with pytest.raises(ShapeMismatch):
        HeatmapStack(np.full((2, 8, 8), 2.0))
    with pytest.raises(ShapeMismatch):
        HeatmapStack(np.zeros((8, 8)))


def test_feature_maps_check():
    import torch

    fm = FeatureMaps(pose=torch.zeros(1, 4, 8, 8), sr=torch.zeros(1, 2, 8, 8), stack_index=0)
    fm.check(4, 2, 8)
    with pytest.raises(ShapeMismatch):
        fm.check(8, 2, 8)
