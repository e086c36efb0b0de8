"""Pose-transfer GAN: attention-gated generator plus two patch discriminators.

The generator encodes the condition image and the (condition, target) heatmap
pair into separate pathways. Each transfer block computes a sigmoid attention
mask from the pose pathway and applies a masked residual update to the image
pathway, then refreshes the pose pathway from both. A decoder renders the
re-posed face. The appearance discriminator judges (condition, query) image
pairs; the shape discriminator judges (target heatmaps, query) pairs.
"""
from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import Config
from .errors import NonFiniteActivation, ShapeMismatch
from .losses import clamp_scores


def upsample_heatmaps(maps: torch.Tensor, size: int) -> torch.Tensor:
    """Bilinearly resize [B, L, h, w] heatmaps to size x size."""
    if maps.shape[-2:] == (size, size):
        return maps
    return F.interpolate(maps, size=(size, size), mode="bilinear", align_corners=False)


def _in(channels: int) -> nn.InstanceNorm2d:
    return nn.InstanceNorm2d(channels, affine=True)


class _Encoder(nn.Module):
    def __init__(self, in_channels: int, width: int, downs: int):
        super().__init__()
        layers = [nn.Conv2d(in_channels, width, 7, padding=3), _in(width), nn.ReLU(inplace=True)]
        c = width
        for _ in range(downs):
            layers += [nn.Conv2d(c, c * 2, 3, stride=2, padding=1), _in(c * 2), nn.ReLU(inplace=True)]
            c *= 2
        self.net = nn.Sequential(*layers)
        self.out_channels = c

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TransferBlock(nn.Module):
    """One attention-gated update of the image pathway.

    The mask comes from the pose pathway alone; the image pathway receives a
    residual update scaled elementwise by that mask, so zeroing the residual
    tail makes the block an exact identity on the image pathway.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.mask_conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.res1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.res_norm = _in(channels)
        self.res2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.pose_update = nn.Sequential(
            nn.Conv2d(channels * 2, channels, 3, padding=1), _in(channels), nn.ReLU(inplace=True)
        )

    def forward(self, x: torch.Tensor, p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mask = torch.sigmoid(self.mask_conv(p))
        residual = self.res2(F.relu(self.res_norm(self.res1(x))))
        x = x + mask * residual
        p = self.pose_update(torch.cat((p, x), dim=1))
        return x, p

    def zero_init_residual(self) -> None:
        nn.init.zeros_(self.res2.weight)
        nn.init.zeros_(self.res2.bias)


class _Decoder(nn.Module):
    def __init__(self, in_channels: int, ups: int):
        super().__init__()
        layers = []
        c = in_channels
        for _ in range(ups):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c, c // 2, 3, padding=1),
                _in(c // 2),
                nn.ReLU(inplace=True),
            ]
            c //= 2
        self.net = nn.Sequential(*layers)
        self.out = nn.Conv2d(c, 3, 7, padding=3)
        nn.init.zeros_(self.out.weight)
        nn.init.constant_(self.out.bias, 0.5)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(self.net(x))


class TransferGenerator(nn.Module):
    def __init__(self, cfg: Config):
        super().__init__()
        self.cfg = cfg
        self.image_size = cfg.sr_output_size
        downs = 2 if cfg.sr_output_size <= 128 else 3
        width = cfg.transfer_channels
        self.image_encoder = _Encoder(3, width, downs)
        self.pose_encoder = _Encoder(2 * cfg.num_landmarks, width, downs)
        c = self.image_encoder.out_channels
        self.blocks = nn.ModuleList(TransferBlock(c) for _ in range(cfg.transfer_blocks))
        self.decoder = _Decoder(c, downs)
        self.zero_init_transfer_residuals()

    def zero_init_transfer_residuals(self) -> None:
        """Restore the image pathway to an exact identity through every block.

        Applied at construction so a fresh generator reduces to an
        encoder/decoder pair; pose modulation grows from zero during training.
        """
        for block in self.blocks:
            block.zero_init_residual()

    def encode_image(self, i_con: torch.Tensor) -> torch.Tensor:
        return self.image_encoder(i_con)

    def forward(
        self, i_con: torch.Tensor, h_con: torch.Tensor, h_tar: torch.Tensor
    ) -> torch.Tensor:
        s = self.image_size
        if i_con.dim() != 4 or i_con.shape[1] != 3 or i_con.shape[-2:] != (s, s):
            raise ShapeMismatch(f"condition image must be [B, 3, {s}, {s}], got {tuple(i_con.shape)}")
        if h_con.shape != h_tar.shape:
            raise ShapeMismatch(
                f"heatmap shapes differ: {tuple(h_con.shape)} vs {tuple(h_tar.shape)}"
            )
        if h_con.shape[1] != self.cfg.num_landmarks:
            raise ShapeMismatch(
                f"expected {self.cfg.num_landmarks} heatmap channels, got {h_con.shape[1]}"
            )
        pose = torch.cat(
            (upsample_heatmaps(h_con, s), upsample_heatmaps(h_tar, s)), dim=1
        )
        x = self.image_encoder(i_con)
        p = self.pose_encoder(pose)
        for block in self.blocks:
            x, p = block(x, p)
        out = self.decoder(x).clamp(0.0, 1.0)
        if not torch.isfinite(out).all():
            raise NonFiniteActivation("transfer generator produced NaN/Inf")
        return out


class PatchDiscriminator(nn.Module):
    """Four strided convs over the concatenated conditioning and query, global
    mean of the final logit map, logistic squash, then epsilon clamping."""

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        c = width
        layers = [nn.Conv2d(in_channels, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        for _ in range(3):
            layers += [
                nn.Conv2d(c, c * 2, 4, stride=2, padding=1),
                _in(c * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c *= 2
        layers += [nn.Conv2d(c, 1, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.net(x)
        return clamp_scores(torch.sigmoid(logits.mean(dim=(1, 2, 3))))


class AppearanceDiscriminator(PatchDiscriminator):
    """Scores whether the query is a real face consistent with the condition."""

    def __init__(self, cfg: Config):
        super().__init__(6, cfg.disc_channels)

    def forward(self, i_con: torch.Tensor, i_query: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        if i_con.shape != i_query.shape:
            raise ShapeMismatch(
                f"condition {tuple(i_con.shape)} vs query {tuple(i_query.shape)} shapes differ"
            )
        return super().forward(torch.cat((i_con, i_query), dim=1))


class ShapeDiscriminator(PatchDiscriminator):
    """Scores whether the query's pose matches the target heatmaps."""

    def __init__(self, cfg: Config):
        super().__init__(cfg.num_landmarks + 3, cfg.disc_channels)

    def forward(self, h_tar: torch.Tensor, i_query: torch.Tensor) -> torch.Tensor:  # type: ignore[override]
        maps = upsample_heatmaps(h_tar, i_query.shape[-1])
        if maps.shape[-2:] != i_query.shape[-2:]:
            raise ShapeMismatch("heatmap and query grids differ after resize")
        return super().forward(torch.cat((maps, i_query), dim=1))
