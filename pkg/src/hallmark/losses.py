"""Objective terms for both training streams and their weighted composition.

Every L1/L2 reduction is a mean over its own elements so magnitudes stay
resolution- and batch-independent. A LossBreakdown stores the raw, unweighted
component values plus the weights; its total is always the weighted sum
accumulated in the fixed canonical component order, so the accounting identity
"total == sum(weight * component)" holds exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ExtractorUnavailable, NonFiniteLoss, ScoreOutOfRange, ShapeMismatch

# Canonical component order; totals accumulate in exactly this order.
COMPONENT_KEYS = ("heatmap_mse", "image_l1", "gradient_l1", "gan", "l1_transfer", "perceptual")

SCORE_EPS = 1e-7
_GRAD_DELTA = 1e-12


@dataclass
class LossBreakdown:
    """Weighted objective with raw per-component values.

    ``components`` are unweighted; ``total`` is the weighted sum in canonical
    order. Values are torch scalars while a graph is alive; ``detached()``
    yields plain floats for logging.
    """

    total: torch.Tensor | float
    components: dict
    weights: dict

    @staticmethod
    def build(components: dict, weights: dict) -> "LossBreakdown":
        comps = {k: components.get(k, 0.0) for k in COMPONENT_KEYS}
        ws = {k: float(weights.get(k, 0.0)) for k in COMPONENT_KEYS}
        total = 0.0
        for k in COMPONENT_KEYS:
            total = total + ws[k] * comps[k]
        return LossBreakdown(total=total, components=comps, weights=ws)

    def detached(self) -> "LossBreakdown":
        def _f(v):
            return float(v.detach()) if torch.is_tensor(v) else float(v)

        return LossBreakdown(
            total=_f(self.total),
            components={k: _f(v) for k, v in self.components.items()},
            weights=dict(self.weights),
        )

    def check_finite(self) -> "LossBreakdown":
        for k, v in self.components.items():
            val = float(v.detach()) if torch.is_tensor(v) else float(v)
            if val != val or val in (float("inf"), float("-inf")):
                raise NonFiniteLoss(f"loss component {k!r} is non-finite ({val})")
        return self


def gradient_map(img: torch.Tensor) -> torch.Tensor:
    """Per-channel central-difference gradient magnitude with replicate borders.

    Ix(x, y) = I(x+1, y) - I(x-1, y) and Iy(x, y) = I(x, y+1) - I(x, y-1); the
    result is sqrt(Ix^2 + Iy^2 + delta) - sqrt(delta) with delta = 1e-12, which
    keeps the map differentiable on flat regions and exactly zero for constant
    images. Accepts [C, H, W] or [B, C, H, W]."""
    squeeze = img.dim() == 3
    x = img.unsqueeze(0) if squeeze else img
    if x.dim() != 4:
        raise ShapeMismatch(f"gradient_map expects 3- or 4-D input, got {tuple(img.shape)}")
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    ix = p[..., 1:-1, 2:] - p[..., 1:-1, :-2]
    iy = p[..., 2:, 1:-1] - p[..., :-2, 1:-1]
    delta = torch.as_tensor(_GRAD_DELTA, dtype=x.dtype, device=x.device)
    mag = torch.sqrt(ix * ix + iy * iy + delta) - torch.sqrt(delta)
    return mag.squeeze(0) if squeeze else mag


def loss_dh(
    stacks: list[torch.Tensor],
    target_heatmaps: torch.Tensor | None,
    i_sr: torch.Tensor,
    i_hr: torch.Tensor,
    heatmap_weight: float,
    image_l1_weight: float,
    gradient_l1_weight: float,
) -> LossBreakdown:
    """Detector objective: per-stack heatmap MSE plus image and gradient-map L1.

    The heatmap term is mean-reduced per element and summed over stacks. With
    heatmap_weight == 0 (unlabeled mode) that term is skipped entirely, so no
    gradient ever flows through the heatmap path.
    """
    if heatmap_weight not in (0.0, 1.0):
        raise ShapeMismatch(f"heatmap_weight must be 0 or 1, got {heatmap_weight}")
    if i_sr.shape != i_hr.shape:
        raise ShapeMismatch(f"SR/HR shapes differ: {tuple(i_sr.shape)} vs {tuple(i_hr.shape)}")
    components = {}
    if heatmap_weight != 0.0:
        if target_heatmaps is None:
            raise ShapeMismatch("labeled mode needs target heatmaps")
        hm = 0.0
        for s in stacks:
            if s.shape != target_heatmaps.shape:
                raise ShapeMismatch(
                    f"stack shape {tuple(s.shape)} vs target {tuple(target_heatmaps.shape)}"
                )
            hm = hm + F.mse_loss(s, target_heatmaps)
        components["heatmap_mse"] = hm
    components["image_l1"] = F.l1_loss(i_sr, i_hr)
    components["gradient_l1"] = F.l1_loss(gradient_map(i_sr), gradient_map(i_hr))
    return LossBreakdown.build(
        components,
        {
            "heatmap_mse": heatmap_weight,
            "image_l1": image_l1_weight,
            "gradient_l1": gradient_l1_weight,
        },
    )


def clamp_scores(raw: torch.Tensor) -> torch.Tensor:
    """Clamp squashed scores into [eps, 1 - eps] so log terms stay finite."""
    return raw.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def _check_scores(t: torch.Tensor, name: str) -> torch.Tensor:
    lo = float(t.detach().min()) if t.numel() else 0.5
    hi = float(t.detach().max()) if t.numel() else 0.5
    if not (0.0 < lo and hi < 1.0):
        raise ScoreOutOfRange(f"{name} scores must lie strictly inside (0, 1), got [{lo}, {hi}]")
    return t


def loss_gan(
    real_appearance: torch.Tensor,
    real_shape: torch.Tensor,
    fake_appearance: torch.Tensor,
    fake_shape: torch.Tensor,
    role: str,
    non_saturating: bool = False,
) -> torch.Tensor:
    """Adversarial objective value for one role.

    Discriminator role returns the quantity the discriminators maximize,
    mean over samples of log(D_A D_S) on real plus log((1-D_A)(1-D_S)) on
    fake; the training step minimizes its negation. Generator role returns
    mean log((1-D_A)(1-D_S)) on fakes, minimized directly (the saturating
    form; the non-saturating flag switches to -log(D_A D_S))."""
    fa = _check_scores(fake_appearance, "fake appearance")
    fs = _check_scores(fake_shape, "fake shape")
    if role == "discriminator":
        ra = _check_scores(real_appearance, "real appearance")
        rs = _check_scores(real_shape, "real shape")
        real_term = (torch.log(ra) + torch.log(rs)).mean()
        fake_term = (torch.log(1.0 - fa) + torch.log(1.0 - fs)).mean()
        return real_term + fake_term
    if role == "generator":
        if non_saturating:
            return -(torch.log(fa) + torch.log(fs)).mean()
        return (torch.log(1.0 - fa) + torch.log(1.0 - fs)).mean()
    raise ShapeMismatch(f"unknown adversarial role {role!r}")


def loss_l1_transfer(i_tar: torch.Tensor, i_ger: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between target and generated images."""
    if i_tar.shape != i_ger.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(i_tar.shape)} vs {tuple(i_ger.shape)}")
    return F.l1_loss(i_ger, i_tar)


class PerceptualExtractor(nn.Module):
    """Frozen two-conv feature map used by the perceptual L1 term.

    Mirrors the first block of the classic 19-layer perceptual backbone up to
    its second 3x3 convolution (the feature is that conv's output, spatial size
    preserved). Weights come either from a file or, by default, from a fixed
    seeded initialization so runs are reproducible without downloads. The
    extractor identity travels inside checkpoints.
    """

    DEFAULT_SEED = 0x5EED

    def __init__(self, channels: int = 64, weights_path: str | None = None):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(3, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        if weights_path is not None:
            try:
                state = torch.load(weights_path, map_location="cpu", weights_only=True)
                self.load_state_dict(state)
            except Exception as exc:
                raise ExtractorUnavailable(
                    f"cannot load perceptual weights from {weights_path}: {exc}"
                ) from exc
            self.source = f"file:{weights_path}"
        else:
            gen = torch.Generator().manual_seed(self.DEFAULT_SEED)
            for conv in (self.conv1, self.conv2):
                fan_in = conv.in_channels * 9
                std = (2.0 / fan_in) ** 0.5
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * std)
                    conv.bias.zero_()
            self.source = f"seeded:{self.DEFAULT_SEED}"
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def identity(self) -> dict:
        return {"arch": f"conv3x3x2-{self.channels}", "layer": "block1_conv2", "source": self.source}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(F.relu(self.conv1(x)))


def loss_perceptual(
    i_tar: torch.Tensor, i_ger: torch.Tensor, extractor: PerceptualExtractor
) -> torch.Tensor:
    """Mean absolute difference between frozen feature maps of the two images."""
    if i_tar.shape != i_ger.shape:
        raise ShapeMismatch(f"shapes differ: {tuple(i_tar.shape)} vs {tuple(i_ger.shape)}")
    return F.l1_loss(extractor(i_ger), extractor(i_tar))


def loss_pt(
    i_tar: torch.Tensor,
    i_ger: torch.Tensor,
    real_appearance: torch.Tensor,
    real_shape: torch.Tensor,
    fake_appearance: torch.Tensor,
    fake_shape: torch.Tensor,
    extractor: PerceptualExtractor,
    gan_weight: float,
    l1_transfer_weight: float,
    perceptual_weight: float,
    role: str = "generator",
) -> LossBreakdown:
    """Pose-transfer objective for one direction.

    Generator role combines the adversarial, reconstruction L1, and perceptual
    terms; discriminator role carries only the adversarial component (the value
    the discriminators maximize; minimize its negation to train them).
    """
    weights = {
        "gan": gan_weight,
        "l1_transfer": l1_transfer_weight,
        "perceptual": perceptual_weight,
    }
    gan = loss_gan(real_appearance, real_shape, fake_appearance, fake_shape, role)
    if role == "discriminator":
        return LossBreakdown.build({"gan": gan}, {"gan": gan_weight})
    components = {
        "gan": gan,
        "l1_transfer": loss_l1_transfer(i_tar, i_ger),
        "perceptual": loss_perceptual(i_tar, i_ger, extractor),
    }
    return LossBreakdown.build(components, weights)


@dataclass
class PairLosses:
    """Per-pair terms entering the combined objective: detector losses for both
    members plus transfer losses for both directions."""

    dh_j: LossBreakdown
    dh_k: LossBreakdown
    pt_jk: LossBreakdown
    pt_kj: LossBreakdown


def loss_sht(labeled: list[PairLosses], unlabeled: list[PairLosses], weights: dict) -> LossBreakdown:
    """Combine per-pair terms into one batch objective.

    Raw components accumulate pair by pair, adding the two members (and the two
    transfer directions) together first, so swapping (j, k) inside any pair
    leaves the result bitwise unchanged. Everything is normalized by the member
    count 2B, then weighted once in canonical order. Unlabeled pairs arrive
    with their heatmap component already absent (zero), never gated here.
    """
    pairs = list(labeled) + list(unlabeled)
    if not pairs:
        raise ShapeMismatch("loss_sht needs at least one pair")
    denom = 2.0 * len(pairs)
    agg = {k: 0.0 for k in COMPONENT_KEYS}
    for p in pairs:
        for k in COMPONENT_KEYS:
            member_sum = (p.dh_j.components[k] + p.dh_k.components[k]) + (
                p.pt_jk.components[k] + p.pt_kj.components[k]
            )
            agg[k] = agg[k] + member_sum
    components = {k: agg[k] / denom for k in COMPONENT_KEYS}
    return LossBreakdown.build(components, weights)
