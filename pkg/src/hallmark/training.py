"""Four-phase training schedule and the weakly-supervised joint loop.

Phases run in a fixed order: pretrain_detector optimizes the detector objective
on labeled pairs; pretrain_transfer trains the pose-transfer GAN on ground-truth
heatmaps; finetune_joint optimizes the combined objective on labeled pairs; and
weak_finetune mixes unlabeled video pairs in, whose heatmap term is dropped.
Phases may be skipped explicitly, never reordered.

Gradient routing in the joint phases: the hallucinated image and predicted
heatmaps enter the transfer network with gradient enabled, so the transfer
objective shapes the detector; discriminator updates see all generator-side
tensors detached. The discriminators own one optimizer, the detector and
generator each own theirs, and a joint step updates the latter two together.

A step whose loss goes non-finite is skipped; three consecutive skips abort the
phase. In deterministic mode the whole loop is bitwise reproducible, including
across a checkpoint save/restore boundary, because every sampling decision is
keyed by (seed, phase, step, slot) rather than by generator state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import PHASES, Config, config_to_dict, validate_config
from .data import AnnotatedFace, VideoSequence, degrade
from .errors import (
    CheckpointMismatch,
    CheckpointWriteError,
    NonFiniteLoss,
    PhaseViolation,
    ShapeMismatch,
)
from .heatmaps import decode_heatmaps
from .losses import (
    LossBreakdown,
    PerceptualExtractor,
    loss_dh,
    loss_gan,
    loss_pt,
)
from .metrics import EvalReport, nme, psnr_y, ssim_y
from .model import DualStreamNet
from .sampling import (
    TrainingPair,
    pair_rng,
    sample_identity_pair,
    sample_image_pair,
    sample_video_pair,
)
from .transfer import AppearanceDiscriminator, ShapeDiscriminator, TransferGenerator
from .types import HeatmapStack, ImageTensor, LandmarkSet

CHECKPOINT_FORMAT_VERSION = 1
_MAX_CONSECUTIVE_SKIPS = 3

# Which model sections a phase trains; checkpoints carry only trained sections.
_PHASE_SECTIONS = {
    "pretrain_detector": ("detector",),
    "pretrain_transfer": ("generator", "disc_appearance", "disc_shape"),
    "finetune_joint": ("detector", "generator", "disc_appearance", "disc_shape"),
    "weak_finetune": ("detector", "generator", "disc_appearance", "disc_shape"),
}


def set_fixed_precision(seed: int) -> None:
    """Deterministic kernels plus a fixed torch seed: bitwise-reproducible runs."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def lr_factor(step: int, total_steps: int) -> float:
    """Halve the learning rate at 60% and again at 85% of the phase."""
    if total_steps <= 0:
        return 1.0
    frac = step / total_steps
    if frac >= 0.85:
        return 0.25
    if frac >= 0.60:
        return 0.5
    return 1.0


@dataclass
class TrainState:
    phase: str | None = None
    step: int = 0
    total_steps: int = 0
    completed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    trained_sections: list = field(default_factory=list)
    loss_history: list = field(default_factory=list)
    consecutive_skips: int = 0

    def done_set(self) -> set:
        return set(self.completed) | set(self.skipped)

    def max_done_index(self) -> int:
        done = self.done_set()
        return max((PHASES.index(p) for p in done), default=-1)


def _image_to_chw(img: ImageTensor) -> torch.Tensor:
    # copy: stored arrays are frozen read-only and torch wants writable memory
    return torch.from_numpy(img.data.transpose(2, 0, 1).copy()).float()


def _maps_to_tensor(stack: HeatmapStack) -> torch.Tensor:
    return torch.from_numpy(stack.maps.copy()).float()


@dataclass
class _Batch:
    """Member tensors of one batch of pairs, j members and k members aligned."""

    lr_j: torch.Tensor
    lr_k: torch.Tensor
    hr_j: torch.Tensor
    hr_k: torch.Tensor
    hm_j: torch.Tensor | None
    hm_k: torch.Tensor | None
    labeled: torch.Tensor  # bool per pair

    @property
    def num_pairs(self) -> int:
        return self.lr_j.shape[0]


def _collate(pairs: list[TrainingPair], cfg: Config) -> _Batch:
    lr_j = torch.stack([_image_to_chw(p.img_j) for p in pairs])
    lr_k = torch.stack([_image_to_chw(p.img_k) for p in pairs])
    hr_j = torch.stack([_image_to_chw(p.hr_j) for p in pairs])
    hr_k = torch.stack([_image_to_chw(p.hr_k) for p in pairs])
    labeled = torch.tensor([p.labeled for p in pairs], dtype=torch.bool)
    hm_j = hm_k = None
    if labeled.any():
        zeros = torch.zeros(cfg.num_landmarks, cfg.heatmap_size, cfg.heatmap_size)
        hm_j = torch.stack(
            [_maps_to_tensor(p.gt_heatmaps_j) if p.labeled else zeros for p in pairs]
        )
        hm_k = torch.stack(
            [_maps_to_tensor(p.gt_heatmaps_k) if p.labeled else zeros for p in pairs]
        )
    return _Batch(lr_j, lr_k, hr_j, hr_k, hm_j, hm_k, labeled)


class Trainer:
    """Owns the four networks, their optimizers, and the phase state machine."""

    def __init__(self, cfg: Config, deterministic: bool = True):
        self.cfg = validate_config(cfg)
        self.deterministic = deterministic
        if deterministic:
            set_fixed_precision(cfg.seed)
        else:
            torch.manual_seed(cfg.seed)
        self.detector = DualStreamNet(cfg)
        self.generator = TransferGenerator(cfg)
        self.disc_appearance = AppearanceDiscriminator(cfg)
        self.disc_shape = ShapeDiscriminator(cfg)
        self.perceptual = PerceptualExtractor(cfg.perceptual_channels, cfg.perceptual_weights)
        self.opt_detector = torch.optim.Adam(self.detector.parameters(), lr=cfg.lr_detector)
        self.opt_generator = torch.optim.Adam(self.generator.parameters(), lr=cfg.lr_transfer)
        self.opt_disc = torch.optim.Adam(
            list(self.disc_appearance.parameters()) + list(self.disc_shape.parameters()),
            lr=cfg.lr_discriminator,
        )
        self.state = TrainState()

    # ---------------- phase machinery ----------------

    def _check_phase_allowed(self, phase: str) -> None:
        if phase not in PHASES:
            raise PhaseViolation(f"unknown phase {phase!r}; phases are {PHASES}")
        idx = PHASES.index(phase)
        if idx < self.state.max_done_index():
            raise PhaseViolation(
                f"phase {phase} cannot run after {PHASES[self.state.max_done_index()]}"
            )
        done = self.state.done_set()
        if phase == "finetune_joint":
            missing = {"pretrain_detector", "pretrain_transfer"} - done
            if missing:
                raise PhaseViolation(
                    f"finetune_joint requires pretrained components; missing {sorted(missing)}"
                )
        if phase == "weak_finetune" and "finetune_joint" not in done:
            raise PhaseViolation("weak_finetune requires finetune_joint (run or skip it first)")

    def skip_phase(self, phase: str) -> None:
        """Mark a phase as deliberately skipped so later phases may run."""
        self._check_phase_allowed(phase)
        if phase not in self.state.skipped:
            self.state.skipped.append(phase)

    def _mark_trained(self, phase: str) -> None:
        for section in _PHASE_SECTIONS[phase]:
            if section not in self.state.trained_sections:
                self.state.trained_sections.append(section)

    def _set_lrs(self, step: int, total: int) -> None:
        f = lr_factor(step, total)
        for opt, base in (
            (self.opt_detector, self.cfg.lr_detector),
            (self.opt_generator, self.cfg.lr_transfer),
            (self.opt_disc, self.cfg.lr_discriminator),
        ):
            for group in opt.param_groups:
                group["lr"] = base * f

    # ---------------- batch assembly ----------------

    def _assemble_batch(
        self,
        phase: str,
        step: int,
        faces: list[AnnotatedFace] | None,
        videos: list[VideoSequence] | None,
    ) -> list[TrainingPair]:
        cfg = self.cfg
        num_pairs = cfg.pairs_per_batch
        phase_ord = PHASES.index(phase)
        pairs = []
        num_unlabeled = 0
        if phase == "weak_finetune":
            num_unlabeled = int(round(num_pairs * cfg.unlabeled_fraction))
            if num_unlabeled > 0 and not videos:
                raise ShapeMismatch("weak_finetune needs a video dataset for unlabeled pairs")
        if num_unlabeled < num_pairs and not faces:
            raise ShapeMismatch(f"phase {phase} needs a labeled image dataset")
        for slot in range(num_pairs):
            rng = pair_rng(cfg.seed, phase_ord, step, slot)
            if slot < num_pairs - num_unlabeled:
                item = faces[int(rng.integers(len(faces)))]
                if phase == "pretrain_transfer" and rng.random() < cfg.identity_pair_fraction:
                    pairs.append(sample_identity_pair(item, cfg, rng))
                else:
                    pairs.append(sample_image_pair(item, cfg, rng))
            else:
                video = videos[int(rng.integers(len(videos)))]
                pairs.append(sample_video_pair(video, cfg, rng))
        return pairs

    # ---------------- steps ----------------

    def train_step_detector(self, batch: _Batch) -> dict:
        cfg = self.cfg
        x = torch.cat((batch.lr_j, batch.lr_k))
        target = torch.cat((batch.hm_j, batch.hm_k))
        hr = torch.cat((batch.hr_j, batch.hr_k))
        out = self.detector(x)
        breakdown = loss_dh(
            out.heatmaps,
            target,
            out.sr_image,
            hr,
            1.0,
            cfg.image_l1_weight,
            cfg.gradient_l1_weight,
        ).check_finite()
        self.opt_detector.zero_grad()
        breakdown.total.backward()
        self.opt_detector.step()
        return breakdown.detached().components | {"total": float(breakdown.total.detach())}

    def _transfer_directions(self, batch: _Batch, i_con_j, i_con_k, h_j, h_k):
        """Stack both directions: condition j targeting k's pose, and the swap."""
        i_con = torch.cat((i_con_j, i_con_k))
        i_tar = torch.cat((batch.hr_k, batch.hr_j))
        h_con = torch.cat((h_j, h_k))
        h_tar = torch.cat((h_k, h_j))
        return i_con, i_tar, h_con, h_tar

    def _gan_substep(self, i_con, i_tar, h_con, h_tar):
        """Shared GAN alternation: discriminator update, then generator scores.

        Returns the fake image, the generator-role scores (graph alive), and a
        score/objective log. All generator-side tensors are detached for the
        discriminator update.
        """
        fake = self.generator(i_con, h_con, h_tar)
        real_a = self.disc_appearance(i_con.detach(), i_tar)
        real_s = self.disc_shape(h_tar.detach(), i_tar)
        fake_a = self.disc_appearance(i_con.detach(), fake.detach())
        fake_s = self.disc_shape(h_tar.detach(), fake.detach())
        d_obj = loss_gan(real_a, real_s, fake_a, fake_s, "discriminator")
        d_loss = -self.cfg.gan_weight * d_obj
        if not torch.isfinite(d_loss):
            raise NonFiniteLoss(f"discriminator objective is non-finite ({float(d_loss)})")
        self.opt_disc.zero_grad()
        d_loss.backward()
        self.opt_disc.step()

        gen_a = self.disc_appearance(i_con, fake)
        gen_s = self.disc_shape(h_tar, fake)
        scores = torch.cat([s.detach() for s in (real_a, real_s, fake_a, fake_s, gen_a, gen_s)])
        log = {
            "disc_objective": float(d_obj.detach()),
            "score_min": float(scores.min()),
            "score_max": float(scores.max()),
        }
        return fake, gen_a, gen_s, log

    def train_step_transfer(self, batch: _Batch) -> dict:
        """GAN pretraining on ground-truth heatmaps and ground-truth images."""
        cfg = self.cfg
        i_con, i_tar, h_con, h_tar = self._transfer_directions(
            batch, batch.hr_j, batch.hr_k, batch.hm_j, batch.hm_k
        )
        fake, gen_a, gen_s, log = self._gan_substep(i_con, i_tar, h_con, h_tar)
        breakdown = loss_pt(
            i_tar,
            fake,
            None,
            None,
            gen_a,
            gen_s,
            self.perceptual,
            cfg.gan_weight,
            cfg.l1_transfer_weight,
            cfg.perceptual_weight,
            role="generator",
        ).check_finite()
        self.opt_generator.zero_grad()
        breakdown.total.backward()
        self.opt_generator.step()
        return breakdown.detached().components | {"total": float(breakdown.total.detach())} | log

    def train_step_joint(self, batch: _Batch) -> dict:
        """Combined objective over a (possibly mixed) batch of pairs.

        Detector losses split by the per-pair label flag; unlabeled members
        contribute no heatmap term at all. The transfer objective runs on every
        pair in both directions, with the hallucinated faces and predicted
        heatmaps feeding the generator gradient-enabled.
        """
        cfg = self.cfg
        num_pairs = batch.num_pairs
        members = 2 * num_pairs
        lr_all = torch.cat((batch.lr_j, batch.lr_k))
        hr_all = torch.cat((batch.hr_j, batch.hr_k))
        out = self.detector(lr_all)
        member_labeled = torch.cat((batch.labeled, batch.labeled))

        components = {}
        n_lab = int(member_labeled.sum())
        if n_lab:
            target = torch.cat((batch.hm_j, batch.hm_k))[member_labeled]
            dh_lab = loss_dh(
                [s[member_labeled] for s in out.heatmaps],
                target,
                out.sr_image[member_labeled],
                hr_all[member_labeled],
                1.0,
                cfg.image_l1_weight,
                cfg.gradient_l1_weight,
            )
        if n_lab < members:
            mask = ~member_labeled
            dh_unlab = loss_dh(
                [s[mask] for s in out.heatmaps],
                None,
                out.sr_image[mask],
                hr_all[mask],
                0.0,
                cfg.image_l1_weight,
                cfg.gradient_l1_weight,
            )
        for key in ("heatmap_mse", "image_l1", "gradient_l1"):
            val = 0.0
            if n_lab:
                val = val + (n_lab / members) * dh_lab.components[key]
            if n_lab < members:
                val = val + ((members - n_lab) / members) * dh_unlab.components[key]
            components[key] = val

        sr_j, sr_k = out.sr_image[:num_pairs], out.sr_image[num_pairs:]
        hm_pred = out.heatmaps[-1]
        hm_j, hm_k = hm_pred[:num_pairs], hm_pred[num_pairs:]
        i_con, i_tar, h_con, h_tar = self._transfer_directions(batch, sr_j, sr_k, hm_j, hm_k)
        fake, gen_a, gen_s, log = self._gan_substep(i_con, i_tar, h_con, h_tar)
        pt = loss_pt(
            i_tar,
            fake,
            None,
            None,
            gen_a,
            gen_s,
            self.perceptual,
            cfg.gan_weight,
            cfg.l1_transfer_weight,
            cfg.perceptual_weight,
            role="generator",
        )
        for key in ("gan", "l1_transfer", "perceptual"):
            components[key] = pt.components[key]

        breakdown = LossBreakdown.build(
            components,
            {
                "heatmap_mse": cfg.heatmap_weight,
                "image_l1": cfg.image_l1_weight,
                "gradient_l1": cfg.gradient_l1_weight,
                "gan": cfg.gan_weight,
                "l1_transfer": cfg.l1_transfer_weight,
                "perceptual": cfg.perceptual_weight,
            },
        ).check_finite()
        self.opt_detector.zero_grad()
        self.opt_generator.zero_grad()
        breakdown.total.backward()
        self.opt_detector.step()
        self.opt_generator.step()
        return breakdown.detached().components | {"total": float(breakdown.total.detach())} | log

    def _dispatch(self, phase: str, batch: _Batch) -> dict:
        if phase == "pretrain_detector":
            return self.train_step_detector(batch)
        if phase == "pretrain_transfer":
            return self.train_step_transfer(batch)
        return self.train_step_joint(batch)

    # ---------------- phase loop ----------------

    def run_phase(
        self,
        phase: str,
        steps: int,
        faces: list[AnnotatedFace] | None = None,
        videos: list[VideoSequence] | None = None,
        log_path: str | Path | None = None,
        checkpoint_dir: str | Path | None = None,
        pause_after: int | None = None,
    ) -> TrainState:
        """Advance a phase to `steps` total steps, or pause early.

        `steps` is the declared phase length (the learning-rate schedule keys
        off it), so a resumed run must declare the same total. `pause_after`
        stops after that many new steps without marking the phase complete.
        """
        self._check_phase_allowed(phase)
        state = self.state
        if state.phase != phase:
            state.phase = phase
            state.step = 0
        state.total_steps = steps
        new_steps = 0
        log_fh = open(log_path, "a") if log_path else None
        try:
            while state.step < steps:
                if pause_after is not None and new_steps >= pause_after:
                    return state
                step = state.step
                self._set_lrs(step, steps)
                pairs = self._assemble_batch(phase, step, faces, videos)
                batch = _collate(pairs, self.cfg)
                abort = None
                try:
                    record = self._dispatch(phase, batch)
                    state.consecutive_skips = 0
                except NonFiniteLoss as exc:
                    state.consecutive_skips += 1
                    record = {"skipped": True, "error": str(exc)}
                    if state.consecutive_skips >= _MAX_CONSECUTIVE_SKIPS:
                        abort = exc
                entry = {"phase": phase, "step": step} | record
                state.loss_history.append(entry)
                if log_fh:
                    log_fh.write(json.dumps(entry) + "\n")
                    log_fh.flush()
                if abort is not None:
                    raise NonFiniteLoss(
                        f"{_MAX_CONSECUTIVE_SKIPS} consecutive non-finite steps in "
                        f"{phase} at step {step}: {abort}"
                    ) from abort
                state.step += 1
                new_steps += 1
                if checkpoint_dir and state.step % self.cfg.checkpoint_every == 0:
                    self._mark_trained(phase)
                    self.save_checkpoint(Path(checkpoint_dir) / f"{phase}_{state.step:07d}.pt")
        finally:
            if log_fh:
                log_fh.close()
        self._mark_trained(phase)
        if phase not in state.completed:
            state.completed.append(phase)
        return state

    # ---------------- checkpointing ----------------

    def save_checkpoint(self, path: str | Path) -> None:
        # Inference commands always need the detector, so it is always saved;
        # transfer sections appear only once a phase has trained them.
        names = list(self.state.trained_sections) or ["detector"]
        if "detector" not in names:
            names.insert(0, "detector")
        sections = {}
        optimizers = {"detector": self.opt_detector.state_dict()}
        for name in names:
            model, _ = self._section(name)
            sections[name] = model.state_dict()
        if "generator" in sections:
            optimizers["generator"] = self.opt_generator.state_dict()
        if "disc_appearance" in sections or "disc_shape" in sections:
            optimizers["discriminator"] = self.opt_disc.state_dict()
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": config_to_dict(self.cfg),
            "perceptual": self.perceptual.identity(),
            "state": {
                "phase": self.state.phase,
                "step": self.state.step,
                "total_steps": self.state.total_steps,
                "completed": list(self.state.completed),
                "skipped": list(self.state.skipped),
                "trained_sections": list(self.state.trained_sections),
                "consecutive_skips": self.state.consecutive_skips,
            },
            "models": sections,
            "optimizers": optimizers,
        }
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            torch.save(payload, tmp)
            tmp.replace(path)
        except OSError as exc:
            raise CheckpointWriteError(f"cannot write checkpoint {path}: {exc}") from exc

    def _section(self, name: str):
        return {
            "detector": (self.detector, self.opt_detector),
            "generator": (self.generator, self.opt_generator),
            "disc_appearance": (self.disc_appearance, None),
            "disc_shape": (self.disc_shape, None),
        }[name]

    @staticmethod
    def read_checkpoint(path: str | Path) -> dict:
        path = Path(path)
        if not path.exists():
            raise CheckpointMismatch(f"checkpoint not found: {path}")
        payload = torch.load(path, map_location="cpu", weights_only=False)
        version = payload.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointMismatch(
                f"checkpoint format {version!r} unsupported (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        return payload

    @classmethod
    def restore(cls, path: str | Path, cfg: Config | None = None, deterministic: bool = True) -> "Trainer":
        payload = cls.read_checkpoint(path)
        from .config import config_from_dict

        saved_cfg = config_from_dict(payload["config"])
        if cfg is not None:
            a, b = config_to_dict(cfg), config_to_dict(saved_cfg)
            diff = [k for k in a if a[k] != b[k]]
            if diff:
                raise CheckpointMismatch(
                    f"config mismatch on {diff[0]!r}: run has {a[diff[0]]!r}, "
                    f"checkpoint has {b[diff[0]]!r}"
                )
        trainer = cls(saved_cfg, deterministic=deterministic)
        st = payload["state"]
        trainer.state = TrainState(
            phase=st["phase"],
            step=st["step"],
            total_steps=st["total_steps"],
            completed=list(st["completed"]),
            skipped=list(st["skipped"]),
            trained_sections=list(st["trained_sections"]),
            consecutive_skips=st["consecutive_skips"],
        )
        opts = {
            "detector": trainer.opt_detector,
            "generator": trainer.opt_generator,
            "discriminator": trainer.opt_disc,
        }
        try:
            for name, state_dict in payload["models"].items():
                model, _ = trainer._section(name)
                model.load_state_dict(state_dict)
            for name, opt_state in payload.get("optimizers", {}).items():
                opts[name].load_state_dict(opt_state)
        except (RuntimeError, KeyError) as exc:
            raise CheckpointMismatch(f"checkpoint tensors do not fit the config: {exc}") from exc
        return trainer


# ---------------- evaluation ----------------


def _decode_with_fallback(maps: np.ndarray) -> np.ndarray:
    """Decode one stack; constant maps fall back to the map center."""
    h, w = maps.shape[-2:]
    stack = HeatmapStack(np.clip(maps, 0.0, 1.0))
    try:
        return decode_heatmaps(stack).landmarks.points
    except Exception:
        points = []
        for m in maps:
            if m.max() == m.min():
                points.append(((w - 1) / 2.0, (h - 1) / 2.0))
            else:
                sub = decode_heatmaps(HeatmapStack(np.clip(m[None], 0.0, 1.0)))
                points.append(tuple(sub.landmarks.points[0]))
        return np.asarray(points)


def detect_landmarks(
    detector: DualStreamNet, lr: ImageTensor, cfg: Config
) -> tuple[LandmarkSet, ImageTensor]:
    """Run the detector on one LR image; landmarks come back in HR coordinates."""
    x = _image_to_chw(lr).unsqueeze(0)
    detector.eval()
    with torch.no_grad():
        out = detector(x)
    raw = out.heatmaps[-1][0].double().numpy()
    # Normalize for decoding only; the decode is invariant to affine rescaling.
    lo, hi = raw.min(), raw.max()
    norm = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    points = _decode_with_fallback(norm)
    scale = cfg.sr_output_size / cfg.heatmap_size
    sr = out.sr_image[0].numpy().transpose(1, 2, 0).astype(np.float64)
    return (
        LandmarkSet(points * scale),
        ImageTensor(np.clip(sr, 0.0, 1.0), role="SR"),
    )


def evaluate_detector(
    detector: DualStreamNet,
    faces: list[AnnotatedFace],
    cfg: Config,
    nme_kind: str = "io",
    auc_threshold: float = 0.10,
    fr_threshold: float = 0.10,
    with_image_metrics: bool = True,
) -> EvalReport:
    """Degrade each face, detect, and score landmarks plus hallucination quality."""
    report = EvalReport()
    for face in faces:
        hr, gt = face.load_hr(cfg.sr_output_size)
        lr = degrade(hr, cfg)
        pred, sr = detect_landmarks(detector, lr, cfg)
        record = {"name": face.name, "nme": nme(pred, gt, nme_kind)}
        if with_image_metrics:
            record["psnr"] = psnr_y(sr, hr)
            record["ssim"] = ssim_y(sr, hr)
        report.add(record)
    report.finalize(nme_kind, auc_threshold, fr_threshold)
    return report
