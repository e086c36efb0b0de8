"""Dataset ingestion, bicubic degradation, and annotation round-trip I/O.

Formats: landmark files are plain text, one "x y" pair per line, L lines, no
header; the bbox index is one line per image, "name x0 y0 w h"; videos live as
root/video_id/frame_000001.png sequences. The degradation pipeline is fixed
Catmull-Rom bicubic (the kernel Pillow implements), anti-aliased on the way
down: 128-mode goes 128 -> 16 -> 64, 256-mode goes 256 -> 64.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import Config
from .errors import (
    EmptyVideo,
    MalformedLandmarkFile,
    MissingAnnotation,
    ShapeMismatch,
)
from .types import ImageTensor, LandmarkSet, from_uint8, to_uint8

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
BBOX_INDEX_NAME = "bboxes.txt"


def default_interocular_indices(num_landmarks: int) -> tuple[int, int]:
    """Outer eye corners: the 68-point scheme uses 36/45; the toy scheme puts
    the two eyes first."""
    return (36, 45) if num_landmarks == 68 else (0, 1)


@dataclass
class AnnotatedFace:
    """One dataset item: an HR face image with landmarks and bbox.

    The image may live on disk (image_path) or in memory (image); loaders
    produce path-backed items, the toy generator in-memory ones.
    """

    name: str
    landmarks: LandmarkSet
    image_path: Path | None = None
    image: ImageTensor | None = None

    def load_hr(self, size: int) -> tuple[ImageTensor, LandmarkSet]:
        """The HR image resized to size x size, landmarks scaled to match."""
        img = self.image if self.image is not None else load_image(self.image_path)
        h, w = img.height, img.width
        if (h, w) != (size, size):
            img = resize_image(img, size, size)
        sx, sy = size / w, size / h
        pts = self.landmarks.points * np.array([sx, sy])
        bbox = self.landmarks.bbox
        if bbox is not None:
            bbox = (bbox[0] * sx, bbox[1] * sy, bbox[2] * sx, bbox[3] * sy)
        lms = LandmarkSet(
            pts,
            bbox=bbox,
            interocular_indices=self.landmarks.interocular_indices,
            visible=self.landmarks.visible,
        )
        return ImageTensor(img.data, role="HR"), lms


@dataclass
class VideoSequence:
    """Ordered frame paths of one unlabeled video."""

    name: str
    frame_paths: list

    @property
    def num_frames(self) -> int:
        return len(self.frame_paths)


def load_image(path: Path | str) -> ImageTensor:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")), role="HR")


def save_image(img: ImageTensor, path: Path | str) -> None:
    arr = to_uint8(img)
    Image.fromarray(arr[..., 0] if arr.shape[2] == 1 else arr).save(path)


def _resize_array(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    """Per-channel float bicubic resize (Catmull-Rom kernel, anti-aliased when
    shrinking)."""
    channels = []
    for c in range(arr.shape[2]):
        im = Image.fromarray(arr[:, :, c].astype(np.float32), mode="F")
        channels.append(np.asarray(im.resize((width, height), Image.BICUBIC), dtype=np.float64))
    return np.stack(channels, axis=2)


def resize_image(img: ImageTensor, height: int, width: int, role: str | None = None) -> ImageTensor:
    out = np.clip(_resize_array(img.data, width, height), 0.0, 1.0)
    return ImageTensor(out, role=role or img.role)


def degrade(hr: ImageTensor, cfg: Config) -> ImageTensor:
    """Deterministic LR synthesis: bicubic down to the mode's bottleneck size,
    then bicubic up to the network input size when they differ."""
    s = cfg.sr_output_size
    if (hr.height, hr.width) != (s, s):
        raise ShapeMismatch(f"degrade expects {s}x{s} HR input, got {hr.height}x{hr.width}")
    bottleneck = 16 if s == 128 else 64
    arr = _resize_array(hr.data, bottleneck, bottleneck)
    if bottleneck != cfg.input_size:
        arr = _resize_array(arr, cfg.input_size, cfg.input_size)
    return ImageTensor(np.clip(arr, 0.0, 1.0), role="LR")


def read_landmark_file(path: Path | str, expected_count: int | None = None) -> np.ndarray:
    """Parse "x y" lines; reports the first malformed line by number."""
    lines = Path(path).read_text().strip().splitlines()
    points = []
    for i, line in enumerate(lines, start=1):
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLandmarkFile(f"{path}: line {i}: expected 'x y', got {line!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise MalformedLandmarkFile(f"{path}: line {i}: non-numeric coordinate {line!r}")
    if expected_count is not None and len(points) != expected_count:
        raise MalformedLandmarkFile(
            f"{path}: line {len(points) + 1}: expected {expected_count} landmarks, found {len(points)}"
        )
    if not points:
        raise MalformedLandmarkFile(f"{path}: line 1: file is empty")
    return np.asarray(points, dtype=np.float64)


def write_landmark_file(points: np.ndarray, path: Path | str) -> None:
    Path(path).write_text("".join(f"{x:.4f} {y:.4f}\n" for x, y in points))


def convert_pts(text: str) -> np.ndarray:
    """Convert the braced pts header variant to plain coordinates."""
    lines = [ln.strip() for ln in text.strip().splitlines()]
    try:
        start = lines.index("{") + 1
        end = len(lines) - 1 - lines[::-1].index("}")
    except ValueError:
        raise MalformedLandmarkFile("pts file has no braced point block")
    points = []
    for i, line in enumerate(lines[start:end], start=start + 1):
        parts = line.split()
        if len(parts) != 2:
            raise MalformedLandmarkFile(f"line {i}: expected 'x y', got {line!r}")
        points.append((float(parts[0]), float(parts[1])))
    if not points:
        raise MalformedLandmarkFile("pts block is empty")
    return np.asarray(points, dtype=np.float64)


def _read_bbox_index(path: Path) -> dict:
    boxes = {}
    for i, line in enumerate(path.read_text().strip().splitlines(), start=1):
        parts = line.split()
        if len(parts) != 5:
            raise MalformedLandmarkFile(
                f"{path}: line {i}: expected 'name x0 y0 w h', got {line!r}"
            )
        boxes[parts[0]] = tuple(float(v) for v in parts[1:])
    return boxes


def load_image_dataset(
    root: Path | str,
    expected_landmarks: int | None = None,
    interocular: tuple[int, int] | None = None,
    strict: bool = False,
) -> list[AnnotatedFace]:
    """Read every image listed in the bbox index with its landmark file.

    Items with unreadable images, malformed annotations, or a bbox that misses
    the image bounds are reported and skipped; strict mode raises instead.
    """
    root = Path(root)
    index_path = root / BBOX_INDEX_NAME
    if not index_path.exists():
        raise MissingAnnotation(f"no {BBOX_INDEX_NAME} index in {root}")
    boxes = _read_bbox_index(index_path)
    faces = []
    for name, bbox in sorted(boxes.items()):
        try:
            image_path = root / name
            if not image_path.exists():
                raise MissingAnnotation(f"image {name} listed in index but missing")
            lm_path = image_path.with_suffix(".txt")
            if not lm_path.exists():
                raise MissingAnnotation(f"no landmark file for {name}")
            points = read_landmark_file(lm_path, expected_landmarks)
            with Image.open(image_path) as im:
                width, height = im.size
            x0, y0, w, h = bbox
            if w <= 0 or h <= 0 or x0 + w <= 0 or y0 + h <= 0 or x0 >= width or y0 >= height:
                raise MissingAnnotation(f"bbox {bbox} of {name} misses image bounds {width}x{height}")
            io = interocular or default_interocular_indices(points.shape[0])
            faces.append(
                AnnotatedFace(
                    name=name,
                    image_path=image_path,
                    landmarks=LandmarkSet(points, bbox=bbox, interocular_indices=io),
                )
            )
        except (MissingAnnotation, MalformedLandmarkFile, OSError) as exc:
            if strict:
                raise
            log.warning("skipping %s: %s", name, exc)
    return faces


def write_image_dataset(faces: list[AnnotatedFace], root: Path | str) -> None:
    """Write images, landmark files, and the bbox index in loadable layout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index_lines = []
    for face in faces:
        name = face.name if face.name.endswith(IMAGE_EXTENSIONS) else face.name + ".png"
        img = face.image if face.image is not None else load_image(face.image_path)
        save_image(img, root / name)
        write_landmark_file(face.landmarks.points, (root / name).with_suffix(".txt"))
        x0, y0, w, h = face.landmarks.bbox
        index_lines.append(f"{name} {x0:.4f} {y0:.4f} {w:.4f} {h:.4f}\n")
    (root / BBOX_INDEX_NAME).write_text("".join(index_lines))


def load_video_dataset(root: Path | str) -> list[VideoSequence]:
    """Ordered frame lists per video subdirectory; no annotations needed.

    Frame numbering gaps are preserved in sorted order. A video directory with
    zero readable frames raises EmptyVideo.
    """
    root = Path(root)
    videos = []
    for video_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames = sorted(
            p for p in video_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not frames:
            raise EmptyVideo(f"video {video_dir.name} has no frames")
        videos.append(VideoSequence(name=video_dir.name, frame_paths=frames))
    return videos
