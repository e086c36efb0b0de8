"""Command-line entry points.

Subcommands: train, eval, detect, hallucinate, transfer, make-toy-data, and
convert-pts. Exit codes are fixed for scripting: 1 for configuration problems
(bad keys, phase-order violations, overwrite guards, checkpoint mismatches),
2 for data problems (unreadable inputs, missing annotations), 3 for a training
abort (repeated non-finite losses). Existing outputs are never overwritten
without --force.

The default config path can be set through the HALLMARK_CONFIG environment
variable; --config overrides it and --set key=value overrides single fields.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import PHASES, Config, apply_overrides, config_from_dict, config_to_dict, load_config
from .data import (
    BBOX_INDEX_NAME,
    IMAGE_EXTENSIONS,
    load_image,
    load_image_dataset,
    load_video_dataset,
    read_landmark_file,
    resize_image,
    save_image,
    write_image_dataset,
    write_landmark_file,
)
from .data import convert_pts as parse_pts_text
from .errors import CheckpointMismatch, ConfigError, DataError, InvalidConfig, TrainingAbort
from .heatmaps import render_heatmaps
from .metrics import ced_curve
from .model import DualStreamNet
from .sampling import warp_image
from .toyfaces import generate_toy_dataset
from .training import Trainer, _decode_with_fallback, detect_landmarks, evaluate_detector
from .transfer import TransferGenerator
from .types import ImageTensor, LandmarkSet

CONFIG_ENV_VAR = "HALLMARK_CONFIG"


def _parse_overrides(pairs: list[str] | None) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise InvalidConfig(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _build_config(args) -> Config:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    cfg = load_config(path) if path else Config()
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if overrides or not path:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _explicit_config(args) -> Config | None:
    """The config the user actually asked for, or None if they gave nothing."""
    if getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR):
        return _build_config(args)
    if getattr(args, "set", None) or getattr(args, "seed", None) is not None:
        return _build_config(args)
    return None


def _guard(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise InvalidConfig(f"{path} exists; pass --force to overwrite")


def _collect_images(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not files:
            raise DataError(f"no image files under {path}")
        return files
    if not path.exists():
        raise DataError(f"input {path} does not exist")
    return [path]


def _read_image(path: Path):
    try:
        return load_image(path)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _load_detector(checkpoint: Path, requested: Config | None) -> tuple[Config, DualStreamNet, dict]:
    payload = Trainer.read_checkpoint(checkpoint)
    cfg = config_from_dict(payload["config"])
    if requested is not None:
        a, b = config_to_dict(requested), config_to_dict(cfg)
        diff = [k for k in a if a[k] != b[k]]
        if diff:
            raise CheckpointMismatch(
                f"config mismatch on {diff[0]!r}: requested {a[diff[0]]!r}, "
                f"checkpoint has {b[diff[0]]!r}"
            )
    detector = DualStreamNet(cfg)
    detector.load_state_dict(payload["models"]["detector"])
    detector.eval()
    return cfg, detector, payload


def _predict_heatmaps(detector: DualStreamNet, img, cfg: Config) -> torch.Tensor:
    """Final-stack raw heatmaps for one arbitrary-size image, batch dim kept."""
    lr = resize_image(img, cfg.input_size, cfg.input_size, role="LR")
    x = torch.from_numpy(lr.data.transpose(2, 0, 1).copy()).float().unsqueeze(0)
    with torch.no_grad():
        out = detector(x)
    return out.heatmaps[-1]


# ---------------- commands ----------------


def cmd_train(args) -> int:
    cfg = _build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out_dir / "metrics.jsonl"
    final_path = out_dir / "final.pt"
    _guard(log_path, args.force)
    _guard(final_path, args.force)
    if log_path.exists():
        log_path.unlink()

    if args.resume:
        trainer = Trainer.restore(args.resume, _explicit_config(args), deterministic=not args.fast)
    else:
        trainer = Trainer(cfg, deterministic=not args.fast)
    cfg = trainer.cfg

    faces = load_image_dataset(args.images, expected_landmarks=cfg.num_landmarks) if args.images else None
    videos = load_video_dataset(args.videos) if args.videos else None

    for phase in args.skip or []:
        trainer.skip_phase(phase)
    for phase in args.phase:
        trainer.run_phase(
            phase,
            args.steps,
            faces=faces,
            videos=videos,
            log_path=log_path,
            checkpoint_dir=out_dir,
        )
        print(f"phase {phase} done at step {trainer.state.step}/{args.steps}")
    trainer.save_checkpoint(final_path)
    print(f"checkpoint written to {final_path}")
    return 0


def cmd_eval(args) -> int:
    cfg, detector, _ = _load_detector(Path(args.checkpoint), _explicit_config(args))
    faces = load_image_dataset(args.images, expected_landmarks=cfg.num_landmarks, strict=args.strict)
    if not faces:
        raise DataError(f"no usable annotated faces under {args.images}")
    report = evaluate_detector(
        detector,
        faces,
        cfg,
        nme_kind=args.nme,
        auc_threshold=args.auc_threshold,
        fr_threshold=args.fr_threshold,
    )
    print(json.dumps(report.aggregate))
    if args.out:
        _guard(Path(args.out), args.force)
        report.dump_jsonl(args.out)
    if args.ced:
        _guard(Path(args.ced), args.force)
        curve = ced_curve([r["nme"] for r in report.records])
        Path(args.ced).write_text(json.dumps({"ced": curve}) + "\n")
    return 0


def cmd_detect(args) -> int:
    cfg, detector, _ = _load_detector(Path(args.checkpoint), _explicit_config(args))
    inputs = _collect_images(Path(args.images))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / BBOX_INDEX_NAME
    _guard(index_path, args.force)
    index_lines = []
    for path in inputs:
        img = _read_image(path)
        maps = _predict_heatmaps(detector, img, cfg)[0].double().numpy()
        lo, hi = maps.min(), maps.max()
        norm = (maps - lo) / (hi - lo) if hi > lo else np.zeros_like(maps)
        points = _decode_with_fallback(norm)
        # landmark files carry input-image pixel coordinates
        scale = np.array([img.width / cfg.heatmap_size, img.height / cfg.heatmap_size])
        points = points * scale
        name = path.stem + ".png"
        save_image(img, out_dir / name)
        write_landmark_file(points, out_dir / (path.stem + ".txt"))
        x0, y0 = points.min(axis=0)
        x1, y1 = points.max(axis=0)
        index_lines.append(f"{name} {x0:.4f} {y0:.4f} {max(x1 - x0, 1.0):.4f} {max(y1 - y0, 1.0):.4f}")
        print(f"{path.name}: {points.shape[0]} landmarks")
    index_path.write_text("".join(line + "\n" for line in index_lines))
    return 0


def cmd_hallucinate(args) -> int:
    cfg, detector, _ = _load_detector(Path(args.checkpoint), _explicit_config(args))
    inputs = _collect_images(Path(args.images))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        img = _read_image(path)
        target = out_dir / (path.stem + ".png")
        _guard(target, args.force)
        lr = resize_image(img, cfg.input_size, cfg.input_size, role="LR")
        _, sr = detect_landmarks(detector, lr, cfg)
        save_image(sr, target)
        print(f"{path.name} -> {target.name} ({sr.height}x{sr.width})")
    return 0


def cmd_transfer(args) -> int:
    cfg, detector, payload = _load_detector(Path(args.checkpoint), _explicit_config(args))
    if "generator" not in payload["models"]:
        raise ConfigError(
            "checkpoint has no trained transfer generator; run the transfer "
            "pretraining phase first (detection and hallucination still work)"
        )
    generator = TransferGenerator(cfg)
    generator.load_state_dict(payload["models"]["generator"])
    generator.eval()

    condition = _read_image(Path(args.condition))
    s = cfg.sr_output_size
    i_con = resize_image(condition, s, s, role="HR")

    def heatmaps_for(img, points_path, source_size):
        if points_path:
            pts = read_landmark_file(points_path, cfg.num_landmarks)
            pts = pts * (cfg.heatmap_size / source_size)
            stack = render_heatmaps(
                LandmarkSet(pts), (cfg.heatmap_size, cfg.heatmap_size), cfg.heatmap_sigma
            )
            return torch.from_numpy(stack.maps.copy()).float().unsqueeze(0)
        return _predict_heatmaps(detector, img, cfg)

    h_con = heatmaps_for(condition, args.condition_points, max(condition.height, condition.width))
    if args.target_points:
        h_tar = heatmaps_for(None, args.target_points, s)
    elif args.target:
        h_tar = heatmaps_for(_read_image(Path(args.target)), None, s)
    else:
        raise InvalidConfig("transfer needs --target IMAGE or --target-points FILE")

    out_path = Path(args.out)
    _guard(out_path, args.force)
    x = torch.from_numpy(i_con.data.transpose(2, 0, 1).copy()).float().unsqueeze(0)
    with torch.no_grad():
        fake = generator(x, h_con, h_tar)
    arr = fake[0].numpy().transpose(1, 2, 0).astype(np.float64)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_image(ImageTensor(np.clip(arr, 0.0, 1.0), role="generated"), out_path)
    print(f"generated face written to {out_path}")
    return 0


def cmd_make_toy_data(args) -> int:
    out_dir = Path(args.out)
    _guard(out_dir / BBOX_INDEX_NAME, args.force)
    faces = generate_toy_dataset(args.count, size=args.size, num_landmarks=args.landmarks, seed=args.seed)
    write_image_dataset(faces, out_dir)
    print(f"wrote {len(faces)} faces to {out_dir}")
    if args.videos:
        video_root = Path(args.video_out or (out_dir.parent / (out_dir.name + "-videos")))
        video_root.mkdir(parents=True, exist_ok=True)
        clips = generate_toy_dataset(
            args.videos, size=args.size, num_landmarks=args.landmarks, seed=args.seed + 1
        )
        for i, face in enumerate(clips):
            clip_dir = video_root / f"clip{i:04d}"
            clip_dir.mkdir(exist_ok=True)
            center = (face.image.width / 2.0, face.image.height / 2.0)
            for j, angle in enumerate(np.linspace(-8.0, 8.0, args.frames)):
                frame = warp_image(face.image, float(angle), 1.0, center)
                save_image(frame, clip_dir / f"frame{j:04d}.png")
        print(f"wrote {args.videos} clips of {args.frames} frames to {video_root}")
    return 0


def cmd_convert_pts(args) -> int:
    inputs = []
    src = Path(args.input)
    if src.is_dir():
        inputs = sorted(src.glob("*.pts"))
        if not inputs:
            raise DataError(f"no .pts files under {src}")
    else:
        if not src.exists():
            raise DataError(f"input {src} does not exist")
        inputs = [src]
    out = Path(args.out)
    single_file = len(inputs) == 1 and out.suffix == ".txt"
    if not single_file:
        out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        try:
            points = parse_pts_text(path.read_text())
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
        target = out if single_file else out / (path.stem + ".txt")
        _guard(target, args.force)
        write_landmark_file(points, target)
        print(f"{path.name} -> {target}")
    return 0


# ---------------- parser ----------------


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help=f"config YAML (default: ${CONFIG_ENV_VAR})")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hallmark",
        description="Joint face super-resolution and landmark detection with pose-transfer supervision.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one or more training phases")
    p.add_argument("--phase", action="append", required=True, choices=PHASES)
    p.add_argument("--steps", type=int, required=True, help="total steps per phase")
    p.add_argument("--images", help="labeled image dataset root")
    p.add_argument("--videos", help="unlabeled video dataset root")
    p.add_argument("--out", required=True, help="output directory for checkpoints and logs")
    p.add_argument("--log", help="metrics log path (default OUT/metrics.jsonl)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--skip", action="append", choices=PHASES, help="mark a phase as deliberately skipped")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--fast", action="store_true", help="disable fixed-precision determinism")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--nme", default="io", choices=("io", "box", "diag", "wid"))
    p.add_argument("--auc-threshold", type=float, default=0.10)
    p.add_argument("--fr-threshold", type=float, default=0.10)
    p.add_argument("--out", help="write the per-image report JSONL here")
    p.add_argument("--ced", help="write the CED curve breakpoints (JSON) here")
    p.add_argument("--strict", action="store_true", help="fail on any bad dataset item")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="detect landmarks on images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("hallucinate", help="super-resolve face images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_hallucinate)

    p = sub.add_parser("transfer", help="re-pose a face to a target landmark layout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True, help="source face image")
    p.add_argument("--condition-points", help="landmark file for the condition image")
    p.add_argument("--target", help="image whose detected pose to transfer onto the face")
    p.add_argument("--target-points", help="landmark file giving the target pose directly")
    p.add_argument("--out", required=True, help="output image path")
    _add_common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("make-toy-data", help="generate a procedural toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--landmarks", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--videos", type=int, default=0, help="also write this many toy video clips")
    p.add_argument("--frames", type=int, default=4, help="frames per toy clip")
    p.add_argument("--video-out", help="video root (default OUT-videos)")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_make_toy_data)

    p = sub.add_parser("convert-pts", help="convert braced pts landmark files to plain format")
    p.add_argument("input", help=".pts file or directory")
    p.add_argument("out", help="output .txt file or directory")
    _add_common(p, config=False)
    p.set_defaults(func=cmd_convert_pts)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
