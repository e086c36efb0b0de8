"""Evaluation metrics: NME variants, CED area, failure rate, PSNR/SSIM on Y.

NME normalizers follow the four conventions used in face alignment: interocular
distance (io), bbox geometric mean sqrt(w*h) (box), bbox diagonal (diag), and
bbox width (wid). PSNR and SSIM run on the BT.601 luma channel computed from
[0, 1] RGB, fixed bit-exactly so results reproduce across implementations.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateNormalizer,
    EmptyErrorList,
    ImageTooSmall,
    InvalidConfig,
    LandmarkCountMismatch,
    ShapeMismatch,
)
from .types import ImageTensor, LandmarkSet

NME_KINDS = ("io", "box", "diag", "wid")


def _normalizer(gt: LandmarkSet, kind: str) -> float:
    if kind == "io":
        d = gt.interocular_distance()
    elif kind in ("box", "diag", "wid"):
        if gt.bbox is None:
            raise ShapeMismatch(f"NME kind {kind!r} needs a bbox")
        _, _, w, h = gt.bbox
        if kind == "box":
            d = math.sqrt(w * h)
        elif kind == "diag":
            d = math.sqrt(w * w + h * h)
        else:
            d = w
    else:
        raise InvalidConfig(f"unknown NME kind {kind!r}; choose from {NME_KINDS}")
    if d <= 0:
        raise DegenerateNormalizer(f"NME normalizer {kind} evaluated to {d}")
    return float(d)


def nme(pred: LandmarkSet, gt: LandmarkSet, kind: str = "io") -> float:
    """Mean per-landmark Euclidean error divided by the chosen normalizer."""
    if pred.count != gt.count:
        raise LandmarkCountMismatch(f"{pred.count} predicted vs {gt.count} ground-truth landmarks")
    d = _normalizer(gt, kind)
    errs = np.linalg.norm(pred.points - gt.points, axis=1)
    return float(errs.mean() / d)


def ced_auc(errors: list[float] | np.ndarray, threshold: float) -> float:
    """Area under the cumulative error distribution up to threshold, normalized.

    CED(e) is the fraction of errors <= e; the integral is evaluated exactly as
    a step function, no sampling grid involved.
    """
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise EmptyErrorList("ced_auc needs at least one error value")
    if threshold <= 0:
        raise InvalidConfig(f"threshold must be > 0, got {threshold}")
    if errs.min() < 0:
        raise InvalidConfig("errors must be nonnegative")
    s = np.sort(errs)
    interior = np.unique(s[(s > 0) & (s < threshold)])
    cuts = np.concatenate(([0.0], interior, [threshold]))
    area = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        # CED is right-continuous: on [a, b) it equals the fraction <= a.
        area += (b - a) * (np.searchsorted(s, a, side="right") / s.size)
    return float(area / threshold)


def ced_curve(errors: list[float] | np.ndarray) -> list[tuple[float, float]]:
    """The (e, CED(e)) breakpoints of the step function, for plotting/export."""
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise EmptyErrorList("ced_curve needs at least one error value")
    s = np.sort(errs)
    return [(float(e), float(np.searchsorted(s, e, side="right") / s.size)) for e in np.unique(s)]


def failure_rate(errors: list[float] | np.ndarray, threshold: float) -> float:
    """Fraction of errors strictly greater than threshold (equality is success)."""
    errs = np.asarray(errors, dtype=np.float64)
    if errs.size == 0:
        raise EmptyErrorList("failure_rate needs at least one error value")
    if threshold <= 0:
        raise InvalidConfig(f"threshold must be > 0, got {threshold}")
    return float((errs > threshold).mean())


def rgb_to_y(img: ImageTensor) -> np.ndarray:
    """BT.601 luma from [0,1] RGB: Y = 16/255 + (65.481 R + 128.553 G + 24.966 B)/255."""
    if img.channels != 3:
        raise ShapeMismatch(f"luma conversion needs 3 channels, got {img.channels}")
    r, g, b = img.data[..., 0], img.data[..., 1], img.data[..., 2]
    return 16.0 / 255.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0


def psnr_y(a: ImageTensor, b: ImageTensor) -> float:
    """PSNR in dB on the luma channel; identical inputs give math.inf."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = rgb_to_y(a) - rgb_to_y(b)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _gaussian_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(_SSIM_WINDOW) - half) ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed_mean(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, win.shape)
    return np.tensordot(view, win, axes=((2, 3), (0, 1)))


def ssim_y(a: ImageTensor, b: ImageTensor) -> float:
    """Mean local SSIM on luma with an 11x11 Gaussian window (sigma 1.5).

    Windows are fully interior (valid positions only), matching the reference
    windowed formulation with C1 = 0.01^2, C2 = 0.03^2 on unit dynamic range.
    """
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if ya.shape[0] < _SSIM_WINDOW or ya.shape[1] < _SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs at least {_SSIM_WINDOW} px per side, got {ya.shape}")
    win = _gaussian_window()
    mu_a = _windowed_mean(ya, win)
    mu_b = _windowed_mean(yb, win)
    var_a = _windowed_mean(ya * ya, win) - mu_a * mu_a
    var_b = _windowed_mean(yb * yb, win) - mu_b * mu_b
    cov = _windowed_mean(ya * yb, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    """Per-image metric records plus their aggregates."""

    records: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def add(self, record: dict) -> None:
        self.records.append(record)

    def finalize(
        self,
        nme_kind: str,
        auc_threshold: float,
        fr_threshold: float,
    ) -> dict:
        errors = [r["nme"] for r in self.records]
        if not errors:
            raise EmptyErrorList("no evaluation records")
        psnrs = [r["psnr"] for r in self.records if "psnr" in r]
        ssims = [r["ssim"] for r in self.records if "ssim" in r]
        self.aggregate = {
            "count": len(errors),
            "nme_kind": nme_kind,
            "nme": float(np.mean(errors)),
            "auc": ced_auc(errors, auc_threshold),
            "auc_threshold": auc_threshold,
            "fr": failure_rate(errors, fr_threshold),
            "fr_threshold": fr_threshold,
        }
        if psnrs:
            self.aggregate["psnr"] = float(np.mean(psnrs))
        if ssims:
            self.aggregate["ssim"] = float(np.mean(ssims))
        return self.aggregate

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps({"record": rec}) + "\n")
            fh.write(json.dumps({"aggregate": self.aggregate}) + "\n")
