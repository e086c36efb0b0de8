import math

import numpy as np
import pytest

from hallmark.config import Config
from hallmark.data import VideoSequence, save_image
from hallmark.errors import LandmarkOutOfFrame, TooFewFrames
from hallmark.sampling import (
    draw_rotation_scale,
    pair_rng,
    sample_identity_pair,
    sample_image_pair,
    sample_video_pair,
    transform_points,
    warp_image,
)
from hallmark.toyfaces import generate_toy_dataset
from hallmark.types import ImageTensor

CFG = Config(
    num_landmarks=5,
    num_stacks=2,
    pose_channels=64,
    sr_channels=16,
    sr_output_size=128,
    batch_size=4,
)


def test_pair_rng_keyed_streams():
    a = pair_rng(0, 1, 2, 3).uniform()
    b = pair_rng(0, 1, 2, 3).uniform()
    c = pair_rng(0, 1, 2, 4).uniform()
    assert a == b
    assert a != c


def test_draw_rotation_scale_clamped():
    rng = np.random.default_rng(0)
    for _ in range(500):
        angle, scale = draw_rotation_scale(CFG, rng)
        assert -30.0 <= angle <= 30.0
        assert 0.8 <= scale <= 1.2


def test_transform_points_pure_rotation():
    pts = np.array([[1.0, 0.0]])
    out = transform_points(pts, 90.0, 1.0, (0.0, 0.0))
    assert out[0] == pytest.approx([0.0, 1.0], abs=1e-12)


def test_transform_points_scale_about_center():
    pts = np.array([[2.0, 2.0]])
    out = transform_points(pts, 0.0, 2.0, (1.0, 1.0))
    assert out[0] == pytest.approx([3.0, 3.0], abs=1e-12)


def test_warp_image_identity():
    img = ImageTensor(np.random.default_rng(1).uniform(size=(16, 16, 3)), role="HR")
    out = warp_image(img, 0.0, 1.0, (8.0, 8.0))
    assert np.abs(out.data - img.data).max() < 1e-6


def test_warp_image_raster_follows_points():
    """A bright dot moves to where transform_points says it should."""
    rng = np.random.default_rng(2)
    for _ in range(25):
        size = 33
        # background matches the out-of-frame fill so the dot stays the max
        arr = np.full((size, size, 3), 0.5)
        dot = (int(rng.integers(10, 23)), int(rng.integers(10, 23)))
        arr[dot[1], dot[0], :] = 1.0
        img = ImageTensor(arr, role="HR")
        angle = float(rng.uniform(-20, 20))
        scale = float(rng.uniform(0.9, 1.1))
        center = (size / 2.0, size / 2.0)
        warped = warp_image(img, angle, scale, center)
        expect = transform_points(np.array([dot], dtype=np.float64), angle, scale, center)[0]
        got = np.unravel_index(np.argmax(warped.data[:, :, 0]), warped.data[:, :, 0].shape)
        assert math.hypot(got[1] - expect[0], got[0] - expect[1]) <= 1.5


def test_sample_image_pair_contract():
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=0)[0]
    pair = sample_image_pair(face, CFG, pair_rng(0, 0, 0, 0))
    pair.validate(CFG)
    assert pair.labeled
    assert pair.provenance == "image-augmented"
    assert pair.img_j.data.shape == (64, 64, 3)
    assert pair.hr_j.data.shape == (128, 128, 3)
    assert pair.gt_heatmaps_j.maps.shape == (5, 64, 64)
    # the two members are independent draws of the same face
    assert not np.array_equal(pair.img_j.data, pair.img_k.data)


def test_sample_image_pair_deterministic():
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=0)[0]
    a = sample_image_pair(face, CFG, pair_rng(7, 0, 3, 1))
    b = sample_image_pair(face, CFG, pair_rng(7, 0, 3, 1))
    assert np.array_equal(a.img_j.data, b.img_j.data)
    assert np.array_equal(a.gt_heatmaps_k.maps, b.gt_heatmaps_k.maps)


def test_sample_identity_pair_duplicates_view():
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=1)[0]
    pair = sample_identity_pair(face, CFG, pair_rng(0, 1, 0, 0))
    assert np.array_equal(pair.img_j.data, pair.img_k.data)
    assert np.array_equal(pair.gt_heatmaps_j.maps, pair.gt_heatmaps_k.maps)


def test_heatmaps_scaled_to_heatmap_grid():
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=2)[0]
    pair = sample_identity_pair(face, CFG, pair_rng(0, 1, 1, 0))
    from hallmark.heatmaps import decode_heatmaps

    decoded = decode_heatmaps(pair.gt_heatmaps_j).landmarks.points
    # decoded peaks live on the 64-grid; twice that tracks the 128 HR frame
    assert decoded.max() <= 63.0


def test_landmark_out_of_frame_retry_exhaustion():
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=3)[0]
    # push landmarks to the frame edge so augmentation always throws some out
    pts = face.landmarks.points.copy()
    pts[:, 0] = 126.0
    pts[:3, 1] = 2.0
    from hallmark.data import AnnotatedFace
    from hallmark.types import LandmarkSet

    edgy = AnnotatedFace(
        name="edgy",
        landmarks=LandmarkSet(pts, bbox=face.landmarks.bbox, interocular_indices=(0, 1)),
        image=face.image,
    )
    cfg = Config(
        num_landmarks=5,
        sr_output_size=128,
        batch_size=4,
        rotation_sigma_deg=60.0,
        rotation_max_deg=30.0,
        scale_sigma=0.4,
    )
    with pytest.raises(LandmarkOutOfFrame):
        for attempt in range(50):
            sample_image_pair(edgy, cfg, pair_rng(attempt, 0, 0, 0))


def test_sample_video_pair(tmp_path):
    faces = generate_toy_dataset(3, size=140, num_landmarks=5, seed=4)
    clip = tmp_path / "clip"
    clip.mkdir()
    for i, face in enumerate(faces):
        save_image(face.image, clip / f"f{i}.png")
    video = VideoSequence(name="clip", frame_paths=sorted(clip.iterdir()))
    pair = sample_video_pair(video, CFG, pair_rng(0, 3, 0, 0))
    pair.validate(CFG)
    assert not pair.labeled
    assert pair.gt_heatmaps_j is None
    assert pair.provenance == "video-frames"
    assert pair.hr_j.data.shape == (128, 128, 3)


def test_sample_video_pair_two_frames_always_both(tmp_path):
    faces = generate_toy_dataset(2, size=128, num_landmarks=5, seed=5)
    clip = tmp_path / "clip"
    clip.mkdir()
    for i, face in enumerate(faces):
        save_image(face.image, clip / f"f{i}.png")
    video = VideoSequence(name="clip", frame_paths=sorted(clip.iterdir()))
    for s in range(20):
        pair = sample_video_pair(video, CFG, pair_rng(s, 3, 0, 0))
        assert not np.array_equal(pair.hr_j.data, pair.hr_k.data)


def test_sample_video_pair_too_few(tmp_path):
    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=6)[0]
    clip = tmp_path / "clip"
    clip.mkdir()
    save_image(face.image, clip / "f0.png")
    video = VideoSequence(name="clip", frame_paths=sorted(clip.iterdir()))
    with pytest.raises(TooFewFrames):
        sample_video_pair(video, CFG, pair_rng(0, 3, 0, 0))


def test_labeled_pair_requires_heatmaps():
    from hallmark.errors import ShapeMismatch
    from hallmark.sampling import TrainingPair

    face = generate_toy_dataset(1, size=128, num_landmarks=5, seed=7)[0]
    pair = sample_image_pair(face, CFG, pair_rng(0, 0, 0, 0))
    with pytest.raises(ShapeMismatch):
        TrainingPair(
            img_j=pair.img_j,
            img_k=pair.img_k,
            hr_j=pair.hr_j,
            hr_k=pair.hr_k,
            gt_heatmaps_j=None,
            gt_heatmaps_k=None,
            labeled=True,
            provenance="image-augmented",
        )
