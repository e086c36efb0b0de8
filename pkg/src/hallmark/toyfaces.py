"""Procedural toy faces with exact landmark ground truth.

Each face is an anti-aliased ellipse on a light background with dark Gaussian
blobs at the landmark positions (two eyes, nose, two mouth corners; further
landmarks sit on the ellipse outline). Blob centers ARE the stored landmarks,
so annotation error is zero by construction. Images are grayscale-ish but
carried as 3 channels so luma metrics and color handling get exercised.
Generation is deterministic per (seed, index), independent of batch order.
"""
from __future__ import annotations

import numpy as np

from .data import AnnotatedFace
from .errors import InvalidConfig
from .types import ImageTensor, LandmarkSet


def _face_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _render_face(size: int, num_landmarks: int, rng: np.random.Generator):
    s = float(size)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    cx = s * (0.5 + rng.uniform(-0.04, 0.04))
    cy = s * (0.5 + rng.uniform(-0.04, 0.04))
    rx = s * rng.uniform(0.30, 0.38)
    ry = s * rng.uniform(0.36, 0.44)

    # Anti-aliased ellipse coverage via its normalized distance field.
    d = np.sqrt(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)
    alpha = np.clip((1.0 - d) * min(rx, ry) + 0.5, 0.0, 1.0)

    bg = 0.82 + rng.uniform(-0.03, 0.03, size=3)
    skin = 0.62 + rng.uniform(-0.03, 0.03, size=3)
    canvas = bg[None, None, :] * (1.0 - alpha[..., None]) + skin[None, None, :] * alpha[..., None]

    def inside(p: np.ndarray, limit: float = 0.82) -> np.ndarray:
        rel = np.sqrt(((p[0] - cx) / rx) ** 2 + ((p[1] - cy) / ry) ** 2)
        if rel > limit:
            p = np.array([cx, cy]) + (p - np.array([cx, cy])) * (limit / rel)
        return p

    jitter = lambda scale: rng.normal(0.0, scale * s, size=2)
    base = [
        np.array([cx - 0.45 * rx, cy - 0.28 * ry]) + jitter(0.015),
        np.array([cx + 0.45 * rx, cy - 0.28 * ry]) + jitter(0.015),
        np.array([cx, cy + 0.10 * ry]) + jitter(0.02),
        np.array([cx - 0.34 * rx, cy + 0.45 * ry]) + jitter(0.015),
        np.array([cx + 0.34 * rx, cy + 0.45 * ry]) + jitter(0.015),
    ]
    points = [inside(p) for p in base[: min(5, num_landmarks)]]
    if num_landmarks > 5:
        # Extra landmarks sit just inside the outline at evenly spaced angles.
        angles = np.linspace(0.35, 0.65, num_landmarks - 5) * 2.0 * np.pi
        for a in angles:
            points.append(
                inside(np.array([cx + 0.8 * rx * np.cos(a), cy + 0.8 * ry * np.sin(a)]))
            )
    points = np.stack(points)

    blob_sigma = [0.035, 0.035, 0.030, 0.028, 0.028] + [0.020] * max(0, num_landmarks - 5)
    blob_depth = [0.38, 0.38, 0.26, 0.30, 0.30] + [0.22] * max(0, num_landmarks - 5)
    for (px, py), sig, depth in zip(points, blob_sigma, blob_depth):
        r2 = (xs - px) ** 2 + (ys - py) ** 2
        canvas -= (depth * np.exp(-r2 / (2.0 * (sig * s) ** 2)))[..., None]

    canvas += rng.normal(0.0, 0.015, size=(size, size, 1))
    canvas = np.clip(canvas, 0.0, 1.0)

    x0 = max(0.0, cx - rx)
    y0 = max(0.0, cy - ry)
    bbox = (x0, y0, min(s - 1.0, cx + rx) - x0, min(s - 1.0, cy + ry) - y0)
    return canvas, points, bbox


def generate_toy_dataset(
    n: int, size: int = 128, num_landmarks: int = 5, seed: int = 0
) -> list[AnnotatedFace]:
    """n procedural faces with exact landmarks, bitwise-reproducible per seed."""
    if n <= 0:
        raise InvalidConfig(f"toy dataset size must be positive, got {n}")
    if num_landmarks < 2:
        raise InvalidConfig("toy faces need at least 2 landmarks (the eyes)")
    faces = []
    for i in range(n):
        canvas, points, bbox = _render_face(size, num_landmarks, _face_rng(seed, i))
        faces.append(
            AnnotatedFace(
                name=f"toy_{i:05d}",
                image=ImageTensor(canvas, role="HR"),
                landmarks=LandmarkSet(points, bbox=bbox, interocular_indices=(0, 1)),
            )
        )
    return faces
