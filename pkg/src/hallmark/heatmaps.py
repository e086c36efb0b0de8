"""Gaussian heatmap rendering and sub-pixel decoding.

Rendering places an isotropic Gaussian at each landmark on the map grid;
decoding recovers coordinates by integer argmax plus a quarter-pixel shift
toward the larger axis-aligned neighbor. A landmark is on-map when both
coordinates lie in [0, size - 1]; off-map landmarks render as all-zero maps
flagged invisible so the loss never pulls predictions toward frame borders.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHeatmap, InvalidSigma
from .types import HeatmapStack, LandmarkSet


@dataclass(frozen=True)
class DecodeResult:
    """Decoded landmarks in heatmap-resolution coordinates."""

    landmarks: LandmarkSet
    peak_values: np.ndarray


def render_heatmaps(
    landmarks: LandmarkSet | np.ndarray,
    resolution: tuple[int, int],
    sigma: float,
) -> HeatmapStack:
    """Render one Gaussian map per landmark.

    Map i is exp(-((x - xi)^2 + (y - yi)^2) / (2 sigma^2)) on the pixel grid,
    so an on-grid landmark peaks at exactly 1.0. Coordinates are expected in
    heatmap resolution already.
    """
    if sigma <= 0:
        raise InvalidSigma(f"sigma must be > 0, got {sigma}")
    points = landmarks.points if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks, dtype=np.float64)
    h, w = int(resolution[0]), int(resolution[1])
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    maps = np.zeros((points.shape[0], h, w), dtype=np.float64)
    visible = np.zeros(points.shape[0], dtype=bool)
    inv = 1.0 / (2.0 * sigma * sigma)
    for i, (px, py) in enumerate(points):
        if not (0.0 <= px <= w - 1 and 0.0 <= py <= h - 1):
            continue
        visible[i] = True
        # Separable evaluation: outer product of the two 1-D Gaussians.
        gx = np.exp(-((xs - px) ** 2) * inv)
        gy = np.exp(-((ys - py) ** 2) * inv)
        maps[i] = np.outer(gy, gx)
    return HeatmapStack(maps, visible=visible)


def decode_heatmaps(stack: HeatmapStack) -> DecodeResult:
    """Decode each map to (x, y) by argmax plus quarter-pixel refinement.

    The shift moves 0.25 px toward the strictly larger of the two axis
    neighbors; out-of-map neighbors read as zero, so a border peak whose inward
    neighbor is also zero ties and stays put. Argmax ties break toward the
    smaller flat index.
    """
    maps = stack.maps
    n, h, w = maps.shape
    points = np.empty((n, 2), dtype=np.float64)
    peaks = np.empty(n, dtype=np.float64)
    for i in range(n):
        m = maps[i]
        if m.max() == m.min():
            raise DegenerateHeatmap(f"map {i} is constant; nothing to decode")
        flat = int(np.argmax(m))
        y, x = divmod(flat, w)
        peaks[i] = m[y, x]

        left = m[y, x - 1] if x > 0 else 0.0
        right = m[y, x + 1] if x < w - 1 else 0.0
        dx = 0.25 if right > left else (-0.25 if left > right else 0.0)

        up = m[y - 1, x] if y > 0 else 0.0
        down = m[y + 1, x] if y < h - 1 else 0.0
        dy = 0.25 if down > up else (-0.25 if up > down else 0.0)

        points[i] = (x + dx, y + dy)
    return DecodeResult(landmarks=LandmarkSet(points), peak_values=peaks)
