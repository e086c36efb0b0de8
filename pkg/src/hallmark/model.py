"""Dual-stream detector: stacked hourglasses for landmark heatmaps coupled to a
shape-preserving super-resolution stream by two fusion blocks per stack.

The pose stream runs T hourglasses at the map resolution; the hallucination
stream runs T groups of residual SR blocks. After stack t the pose gate scales
the SR features by a sigmoid mask computed from pose features, and the feature
fusion block folds the gated SR features back into the pose features. Heads:
one 1x1 conv per stack for heatmaps, and a pixel-shuffle upsampler after the
last stack for the hallucinated face.

Normalization is GroupNorm throughout: statistics are per-sample, so results
do not depend on batch composition.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .config import Config
from .errors import NonFiniteActivation, ShapeMismatch
from .types import FeatureMaps


def _gn(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, channels), channels)


def _mid_width(out_channels: int) -> int:
    return max(4, (int(out_channels * 19 / 32) // 4) * 4)


class ResidualBlock(nn.Module):
    """Pre-activation bottleneck: norm-relu-1x1 down, 3x3, 1x1 up, plus skip."""

    def __init__(self, in_channels: int, out_channels: int, mid: int | None = None):
        super().__init__()
        mid = mid or _mid_width(out_channels)
        self.norm1 = _gn(in_channels)
        self.conv1 = nn.Conv2d(in_channels, mid, 1)
        self.norm2 = _gn(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=1)
        self.norm3 = _gn(mid)
        self.conv3 = nn.Conv2d(mid, out_channels, 1)
        self.skip = (
            nn.Identity()
            if in_channels == out_channels
            else nn.Conv2d(in_channels, out_channels, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv1(F.relu(self.norm1(x)))
        y = self.conv2(F.relu(self.norm2(y)))
        y = self.conv3(F.relu(self.norm3(y)))
        return y + self.skip(x)


class Hourglass(nn.Module):
    """Recursive encoder-decoder at constant width with per-scale skips."""

    def __init__(self, depth: int, channels: int):
        super().__init__()
        self.depth = depth
        self.up1 = ResidualBlock(channels, channels)
        self.low1 = ResidualBlock(channels, channels)
        self.low2 = (
            Hourglass(depth - 1, channels) if depth > 1 else ResidualBlock(channels, channels)
        )
        self.low3 = ResidualBlock(channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skip = self.up1(x)
        y = F.max_pool2d(x, 2)
        y = self.low1(y)
        y = self.low2(y)
        y = self.low3(y)
        y = F.interpolate(y, scale_factor=2, mode="nearest")
        return y + skip


class SRBlock(nn.Module):
    """Shape-preserving residual block: conv, relu, conv, identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels * 2, 3, padding=1)
        self.conv2 = nn.Conv2d(channels * 2, channels, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.conv2(F.relu(self.conv1(x)))

    def zero_init_residual(self) -> None:
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)


class PoseGate(nn.Module):
    """First fusion block: q + q * sigmoid(RB(p)).

    RB is one residual block projecting pose channels down to SR channels; the
    sigmoid mask lies in (0, 1), so for positive q the output stays strictly
    between q and 2q.
    """

    def __init__(self, pose_channels: int, sr_channels: int):
        super().__init__()
        self.project = ResidualBlock(pose_channels, sr_channels)

    def forward(self, p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
        if p.shape[-2:] != q.shape[-2:]:
            raise ShapeMismatch(f"pose {tuple(p.shape)} vs sr {tuple(q.shape)} grids differ")
        return q + q * torch.sigmoid(self.project(p))


class FeatureFusion(nn.Module):
    """Second fusion block: p + conv(p concat q'), back to pose width."""

    def __init__(self, pose_channels: int, sr_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(pose_channels + sr_channels, pose_channels, 3, padding=1)

    def forward(self, p: torch.Tensor, q_prime: torch.Tensor) -> torch.Tensor:
        if p.shape[-2:] != q_prime.shape[-2:]:
            raise ShapeMismatch(f"pose {tuple(p.shape)} vs sr {tuple(q_prime.shape)} grids differ")
        return p + self.conv(torch.cat((p, q_prime), dim=1))

    def zero_init(self) -> None:
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)


@dataclass
class DetectorOutput:
    """Per-stack heatmaps plus the hallucinated face; optional stream features."""

    heatmaps: list
    sr_image: torch.Tensor
    features: list | None = None


class DualStreamNet(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        cp, cq = cfg.pose_channels, cfg.sr_channels
        size = cfg.input_size

        self.stem_pose = nn.Sequential(
            nn.Conv2d(3, cp // 4, 3, padding=1),
            _gn(cp // 4),
            nn.ReLU(inplace=True),
            ResidualBlock(cp // 4, cp // 2),
            ResidualBlock(cp // 2, cp),
        )
        self.stem_sr = nn.Conv2d(3, cq, 3, padding=1)

        depth = max(1, int(math.log2(size)) - 2)  # 64 -> 4 scales down to 4x4
        self.hourglasses = nn.ModuleList(
            Hourglass(depth, cp) for _ in range(cfg.num_stacks)
        )
        self.post = nn.ModuleList(
            nn.Sequential(
                ResidualBlock(cp, cp),
                nn.Conv2d(cp, cp, 1),
                _gn(cp),
                nn.ReLU(inplace=True),
            )
            for _ in range(cfg.num_stacks)
        )
        self.sr_modules = nn.ModuleList(
            nn.Sequential(*(SRBlock(cq) for _ in range(cfg.sr_blocks_per_module)))
            for _ in range(cfg.num_stacks)
        )
        self.pose_gates = nn.ModuleList(
            PoseGate(cp, cq) for _ in range(cfg.num_stacks)
        )
        self.fusions = nn.ModuleList(
            FeatureFusion(cp, cq) for _ in range(cfg.num_stacks)
        )
        self.heads = nn.ModuleList(
            nn.Conv2d(cp, cfg.num_landmarks, 1) for _ in range(cfg.num_stacks)
        )

        # Upsample head: one pixel-shuffle stage per x2 of SR scale, then 3ch.
        stages = []
        scale = cfg.sr_scale
        while scale > 1:
            stages += [nn.Conv2d(cq, cq * 4, 3, padding=1), nn.PixelShuffle(2), nn.ReLU(inplace=True)]
            scale //= 2
        self.sr_head = nn.Sequential(*stages)
        self.sr_out = nn.Conv2d(cq, 3, 3, padding=1)
        # Start the output mid-range so the [0,1] clamp is not saturated at init.
        nn.init.zeros_(self.sr_out.weight)
        nn.init.constant_(self.sr_out.bias, 0.5)

    def decouple_streams(self) -> None:
        """Zero the cross-stream write paths: fusion convs and SR residual tails."""
        for fusion in self.fusions:
            fusion.zero_init()
        for module in self.sr_modules:
            for block in module:
                block.zero_init_residual()

    def forward(
        self,
        lr_image: torch.Tensor,
        fusion_enabled: bool = True,
        return_features: bool = False,
    ) -> DetectorOutput:
        cfg = self.cfg
        if lr_image.dim() != 4 or lr_image.shape[1] != 3:
            raise ShapeMismatch(f"expected [B, 3, H, W] input, got {tuple(lr_image.shape)}")
        if lr_image.shape[-2:] != (cfg.input_size, cfg.input_size):
            raise ShapeMismatch(
                f"input must be {cfg.input_size}x{cfg.input_size}, got {tuple(lr_image.shape[-2:])}"
            )

        p = self.stem_pose(lr_image)
        q = self.stem_sr(lr_image)
        heatmaps = []
        features = [] if return_features else None
        for t in range(cfg.num_stacks):
            p_t = self.post[t](self.hourglasses[t](p))
            q_t = self.sr_modules[t](q)
            if fusion_enabled:
                q_next = self.pose_gates[t](p_t, q_t)
                p_next = self.fusions[t](p_t, q_next)
            else:
                q_next, p_next = q_t, p_t
            heatmaps.append(self.heads[t](p_next))
            if return_features:
                features.append(FeatureMaps(pose=p_next, sr=q_next, stack_index=t + 1))
            p, q = p_next, q_next

        sr = self.sr_out(self.sr_head(q)).clamp(0.0, 1.0)
        if not torch.isfinite(sr).all() or not torch.isfinite(heatmaps[-1]).all():
            raise NonFiniteActivation("detector forward produced NaN/Inf")
        return DetectorOutput(heatmaps=heatmaps, sr_image=sr, features=features)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
