"""Core domain types: images, landmark sets, heatmap stacks, stream features.

All data-plane types are immutable after construction (arrays are marked
read-only) so they can be shared freely across threads. Images are H x W x C
float arrays in the canonical [0, 1] range; 8-bit I/O converts at the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

# Image roles through the pipeline: low-resolution input, hallucinated output,
# high-resolution ground truth, and transfer-generated faces.
IMAGE_ROLES = ("LR", "SR", "HR", "generated")


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x C raster with a declared value range and pipeline role."""

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)
    role: str = "HR"

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ShapeMismatch(
                f"image must be H x W x C with C in {{1, 3}}, got {data.shape}"
            )
        if self.role not in IMAGE_ROLES:
            raise ShapeMismatch(f"unknown image role {self.role!r}")
        if not np.isfinite(data).all():
            raise ShapeMismatch("image contains non-finite values")
        lo, hi = self.value_range
        if data.min() < lo - 1e-9 or data.max() > hi + 1e-9:
            raise ShapeMismatch(
                f"image values [{data.min():.4g}, {data.max():.4g}] leave the "
                f"declared range [{lo}, {hi}]"
            )
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LandmarkSet:
    """L ordered (x, y) pixel coordinates plus normalization anchors."""

    points: np.ndarray
    bbox: tuple[float, float, float, float] | None = None
    interocular_indices: tuple[int, int] | None = None
    visible: np.ndarray | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ShapeMismatch(f"landmarks must be L x 2 with L > 0, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ShapeMismatch("landmark coordinates must be finite")
        if self.bbox is not None:
            x0, y0, w, h = self.bbox
            if w <= 0 or h <= 0:
                raise ShapeMismatch(f"bbox must have positive size, got w={w}, h={h}")
            object.__setattr__(self, "bbox", (float(x0), float(y0), float(w), float(h)))
        if self.interocular_indices is not None:
            i, j = self.interocular_indices
            if not (0 <= i < pts.shape[0] and 0 <= j < pts.shape[0]) or i == j:
                raise ShapeMismatch(f"bad interocular indices ({i}, {j}) for L={pts.shape[0]}")
        if self.visible is not None:
            vis = np.asarray(self.visible, dtype=bool)
            if vis.shape != (pts.shape[0],):
                raise ShapeMismatch("visibility flags must be one per landmark")
            object.__setattr__(self, "visible", _freeze(vis))
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    def interocular_distance(self) -> float:
        if self.interocular_indices is None:
            raise ShapeMismatch("landmark set has no interocular indices")
        i, j = self.interocular_indices
        return float(np.linalg.norm(self.points[i] - self.points[j]))


@dataclass(frozen=True)
class HeatmapStack:
    """L per-landmark maps on an h x w grid, values in [0, 1].

    ``visible[i]`` is False for landmarks that fell outside the map and were
    rendered as all zeros.
    """

    maps: np.ndarray
    visible: np.ndarray | None = None

    def __post_init__(self) -> None:
        maps = np.asarray(self.maps, dtype=np.float64)
        if maps.ndim != 3 or maps.shape[0] == 0:
            raise ShapeMismatch(f"heatmaps must be L x h x w, got {maps.shape}")
        if not np.isfinite(maps).all():
            raise ShapeMismatch("heatmaps contain non-finite values")
        if maps.min() < -1e-9 or maps.max() > 1.0 + 1e-9:
            raise ShapeMismatch("heatmap values must lie in [0, 1]")
        if self.visible is not None:
            vis = np.asarray(self.visible, dtype=bool)
            if vis.shape != (maps.shape[0],):
                raise ShapeMismatch("visibility flags must be one per map")
            object.__setattr__(self, "visible", _freeze(vis))
        object.__setattr__(self, "maps", _freeze(maps))

    @property
    def count(self) -> int:
        return self.maps.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.maps.shape[1], self.maps.shape[2])


@dataclass(frozen=True)
class FeatureMaps:
    """Features exchanged between the two detector streams at stack t.

    ``pose`` carries the landmark stream's channels, ``sr`` the hallucination
    stream's; both live on the shared map grid. Stored channels-first to match
    the network layout. The reference configuration uses 256 pose channels and
    64 hallucination channels on a 64 x 64 grid.
    """

    pose: object
    sr: object
    stack_index: int = 1

    def check(self, pose_channels: int, sr_channels: int, size: int) -> "FeatureMaps":
        ps = tuple(self.pose.shape[-3:])
        qs = tuple(self.sr.shape[-3:])
        if ps != (pose_channels, size, size):
            raise ShapeMismatch(f"pose features {ps}, expected {(pose_channels, size, size)}")
        if qs != (sr_channels, size, size):
            raise ShapeMismatch(f"sr features {qs}, expected {(sr_channels, size, size)}")
        return self


def to_uint8(img: ImageTensor) -> np.ndarray:
    """Convert a [0,1] image to 8-bit, rounding half away from zero."""
    return np.clip(np.rint(img.data * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray, role: str = "HR") -> ImageTensor:
    """Wrap an 8-bit H x W x C array as a canonical-range image."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageTensor(arr.astype(np.float64) / 255.0, role=role)
