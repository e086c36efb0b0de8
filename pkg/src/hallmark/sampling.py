"""Training-pair construction: augmented image pairs and unlabeled video pairs.

An image pair is two independent rotation/scale draws of one annotated face,
so both members share identity but differ in pose; a video pair is two distinct
frames of one clip, carrying no landmark labels. Draws use clamped Gaussians:
angle = clamp(sigma_rot * z, +-rot_max), scale = clamp(1 + sigma_scale * z,
[scale_min, scale_max]) with z standard normal. All randomness flows through an
explicit generator seeded per (seed, phase, step, slot), so the sample stream
never depends on worker layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .config import Config
from .data import AnnotatedFace, VideoSequence, degrade, load_image, resize_image
from .errors import LandmarkOutOfFrame, ShapeMismatch, TooFewFrames
from .heatmaps import render_heatmaps
from .types import HeatmapStack, ImageTensor, LandmarkSet

_MAX_ATTEMPTS = 10
_FILL = 0.5


@dataclass(frozen=True)
class TrainingPair:
    """(condition, target) sample pair for one training step."""

    img_j: ImageTensor
    img_k: ImageTensor
    hr_j: ImageTensor
    hr_k: ImageTensor
    gt_heatmaps_j: HeatmapStack | None
    gt_heatmaps_k: HeatmapStack | None
    labeled: bool
    provenance: str

    def __post_init__(self) -> None:
        if self.labeled and (self.gt_heatmaps_j is None or self.gt_heatmaps_k is None):
            raise ShapeMismatch("labeled pairs must carry ground-truth heatmaps")

    def validate(self, cfg: Config) -> "TrainingPair":
        for img in (self.img_j, self.img_k):
            if (img.height, img.width) != (cfg.input_size, cfg.input_size):
                raise ShapeMismatch(
                    f"LR member is {img.height}x{img.width}, config wants {cfg.input_size}"
                )
        for img in (self.hr_j, self.hr_k):
            if (img.height, img.width) != (cfg.sr_output_size, cfg.sr_output_size):
                raise ShapeMismatch(
                    f"HR member is {img.height}x{img.width}, config wants {cfg.sr_output_size}"
                )
        return self


def pair_rng(seed: int, phase_ordinal: int, step: int, slot: int) -> np.random.Generator:
    """Deterministic per-slot generator; parallel workers cannot reorder draws."""
    return np.random.default_rng(np.random.SeedSequence([seed, phase_ordinal, step, slot]))


def draw_rotation_scale(cfg: Config, rng: np.random.Generator) -> tuple[float, float]:
    angle = float(np.clip(cfg.rotation_sigma_deg * rng.standard_normal(), -cfg.rotation_max_deg, cfg.rotation_max_deg))
    scale = float(np.clip(1.0 + cfg.scale_sigma * rng.standard_normal(), cfg.scale_min, cfg.scale_max))
    return angle, scale


def transform_points(
    points: np.ndarray, angle_deg: float, scale: float, center: tuple[float, float]
) -> np.ndarray:
    """Rotate and scale points about center, matching the image warp."""
    a = math.radians(angle_deg)
    cos_a, sin_a = math.cos(a), math.sin(a)
    c = np.asarray(center, dtype=np.float64)
    rel = points - c
    rot = np.stack(
        (cos_a * rel[:, 0] - sin_a * rel[:, 1], sin_a * rel[:, 0] + cos_a * rel[:, 1]),
        axis=1,
    )
    return c + scale * rot


def warp_image(
    img: ImageTensor, angle_deg: float, scale: float, center: tuple[float, float]
) -> ImageTensor:
    """Apply the same rotate/scale about center to the raster (bilinear)."""
    a = math.radians(angle_deg)
    cos_a, sin_a = math.cos(a), math.sin(a)
    cx, cy = center
    inv = 1.0 / scale
    # PIL's affine coefficients map output pixels back to input positions.
    coeffs = (
        cos_a * inv,
        sin_a * inv,
        cx - (cos_a * cx + sin_a * cy) * inv,
        -sin_a * inv,
        cos_a * inv,
        cy - (-sin_a * cx + cos_a * cy) * inv,
    )
    h, w = img.height, img.width
    channels = []
    for ch in range(img.channels):
        im = Image.fromarray(img.data[:, :, ch].astype(np.float32), mode="F")
        warped = im.transform((w, h), Image.AFFINE, coeffs, resample=Image.BILINEAR, fillcolor=_FILL)
        channels.append(np.asarray(warped, dtype=np.float64))
    return ImageTensor(np.clip(np.stack(channels, axis=2), 0.0, 1.0), role=img.role)


def _augment_member(
    hr: ImageTensor, landmarks: LandmarkSet, cfg: Config, rng: np.random.Generator
) -> tuple[ImageTensor, np.ndarray]:
    """One clamped-Gaussian pose draw; retries when too many landmarks leave."""
    if landmarks.bbox is None:
        raise ShapeMismatch("augmentation needs a bbox to rotate about")
    x0, y0, w, h = landmarks.bbox
    center = (x0 + w / 2.0, y0 + h / 2.0)
    size = hr.width
    for _ in range(_MAX_ATTEMPTS):
        angle, scale = draw_rotation_scale(cfg, rng)
        pts = transform_points(landmarks.points, angle, scale, center)
        outside = ~(
            (pts[:, 0] >= 0.0)
            & (pts[:, 0] <= size - 1)
            & (pts[:, 1] >= 0.0)
            & (pts[:, 1] <= size - 1)
        )
        if outside.mean() > 0.2:
            continue
        return warp_image(hr, angle, scale, center), pts
    raise LandmarkOutOfFrame(
        f"more than 20% of landmarks left the crop in {_MAX_ATTEMPTS} attempts"
    )


def _member_heatmaps(points: np.ndarray, cfg: Config) -> HeatmapStack:
    factor = cfg.heatmap_size / cfg.sr_output_size
    return render_heatmaps(points * factor, (cfg.heatmap_size, cfg.heatmap_size), cfg.heatmap_sigma)


def sample_image_pair(item: AnnotatedFace, cfg: Config, rng: np.random.Generator) -> TrainingPair:
    """Two independent augmented views of one annotated face, fully labeled."""
    hr, landmarks = item.load_hr(cfg.sr_output_size)
    hr_j, pts_j = _augment_member(hr, landmarks, cfg, rng)
    hr_k, pts_k = _augment_member(hr, landmarks, cfg, rng)
    return TrainingPair(
        img_j=degrade(hr_j, cfg),
        img_k=degrade(hr_k, cfg),
        hr_j=hr_j,
        hr_k=hr_k,
        gt_heatmaps_j=_member_heatmaps(pts_j, cfg),
        gt_heatmaps_k=_member_heatmaps(pts_k, cfg),
        labeled=True,
        provenance="image-augmented",
    ).validate(cfg)


def sample_identity_pair(item: AnnotatedFace, cfg: Config, rng: np.random.Generator) -> TrainingPair:
    """One augmented view duplicated: condition and target poses coincide."""
    hr, landmarks = item.load_hr(cfg.sr_output_size)
    hr_j, pts_j = _augment_member(hr, landmarks, cfg, rng)
    lr = degrade(hr_j, cfg)
    maps = _member_heatmaps(pts_j, cfg)
    return TrainingPair(
        img_j=lr,
        img_k=lr,
        hr_j=hr_j,
        hr_k=hr_j,
        gt_heatmaps_j=maps,
        gt_heatmaps_k=maps,
        labeled=True,
        provenance="image-augmented",
    ).validate(cfg)


def _frame_to_hr(path, cfg: Config) -> ImageTensor:
    img = load_image(path)
    h, w = img.height, img.width
    if h != w:
        side = min(h, w)
        y0 = (h - side) // 2
        x0 = (w - side) // 2
        img = ImageTensor(img.data[y0 : y0 + side, x0 : x0 + side], role="HR")
    if img.height != cfg.sr_output_size:
        img = resize_image(img, cfg.sr_output_size, cfg.sr_output_size)
    return img


def sample_video_pair(video: VideoSequence, cfg: Config, rng: np.random.Generator) -> TrainingPair:
    """Two distinct frames of one clip; unlabeled, so no heatmaps attach."""
    n = video.num_frames
    if n < 2:
        raise TooFewFrames(f"video {video.name} has {n} frame(s); pairs need 2")
    j, k = sorted(rng.choice(n, size=2, replace=False).tolist())
    hr_j = _frame_to_hr(video.frame_paths[j], cfg)
    hr_k = _frame_to_hr(video.frame_paths[k], cfg)
    return TrainingPair(
        img_j=degrade(hr_j, cfg),
        img_k=degrade(hr_k, cfg),
        hr_j=hr_j,
        hr_k=hr_k,
        gt_heatmaps_j=None,
        gt_heatmaps_k=None,
        labeled=False,
        provenance="video-frames",
    ).validate(cfg)
