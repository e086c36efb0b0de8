import json

import numpy as np
import pytest
import torch

from hallmark.config import Config
from hallmark.data import VideoSequence, save_image
from hallmark.errors import (
    CheckpointMismatch,
    NonFiniteLoss,
    PhaseViolation,
    ShapeMismatch,
)
from hallmark.toyfaces import generate_toy_dataset
from hallmark.training import Trainer, evaluate_detector, lr_factor

TINY = dict(
    num_landmarks=5,
    num_stacks=2,
    pose_channels=64,
    sr_channels=16,
    sr_output_size=128,
    batch_size=2,
    transfer_channels=16,
    disc_channels=16,
    perceptual_channels=16,
    transfer_blocks=3,
    seed=0,
)


@pytest.fixture(scope="module")
def faces():
    return generate_toy_dataset(8, size=128, num_landmarks=5, seed=11)


@pytest.fixture()
def videos(tmp_path, faces):
    for v in range(2):
        clip = tmp_path / "clips" / f"c{v}"
        clip.mkdir(parents=True)
        for f in range(2):
            save_image(faces[2 * v + f].image, clip / f"f{f}.png")
    from hallmark.data import load_video_dataset

    return load_video_dataset(tmp_path / "clips")


def test_lr_factor_schedule():
    assert lr_factor(0, 100) == 1.0
    assert lr_factor(59, 100) == 1.0
    assert lr_factor(60, 100) == 0.5
    assert lr_factor(84, 100) == 0.5
    assert lr_factor(85, 100) == 0.25
    assert lr_factor(99, 100) == 0.25


def test_phase_order_enforced(faces):
    t = Trainer(Config(**TINY))
    with pytest.raises(PhaseViolation):
        t.run_phase("finetune_joint", 1, faces=faces)
    with pytest.raises(PhaseViolation):
        t.run_phase("weak_finetune", 1, faces=faces)
    with pytest.raises(PhaseViolation):
        t.run_phase("nonsense", 1, faces=faces)


def test_skip_unlocks_later_phases(faces):
    t = Trainer(Config(**TINY))
    t.skip_phase("pretrain_detector")
    t.skip_phase("pretrain_transfer")
    t.run_phase("finetune_joint", 1, faces=faces)
    assert t.state.completed == ["finetune_joint"]
    with pytest.raises(PhaseViolation):
        t.skip_phase("pretrain_detector")  # backward skip after later phase ran


def test_weak_finetune_needs_videos(faces):
    t = Trainer(Config(**TINY, unlabeled_fraction=1.0))
    for phase in ("pretrain_detector", "pretrain_transfer", "finetune_joint"):
        t.skip_phase(phase)
    with pytest.raises(ShapeMismatch):
        t.run_phase("weak_finetune", 1, faces=faces, videos=None)


def test_detector_phase_decreases_loss_history(faces):
    t = Trainer(Config(**TINY))
    state = t.run_phase("pretrain_detector", 3, faces=faces)
    assert [e["step"] for e in state.loss_history] == [0, 1, 2]
    assert all("total" in e for e in state.loss_history)


def test_transfer_phase_logs_scores(faces):
    t = Trainer(Config(**TINY))
    t.skip_phase("pretrain_detector")
    state = t.run_phase("pretrain_transfer", 2, faces=faces)
    for entry in state.loss_history:
        assert 0.0 < entry["score_min"] <= entry["score_max"] < 1.0


def test_joint_phase_mixed_batch(faces, videos):
    t = Trainer(Config(**TINY, unlabeled_fraction=0.5))
    for phase in ("pretrain_detector", "pretrain_transfer", "finetune_joint"):
        t.skip_phase(phase)
    state = t.run_phase("weak_finetune", 2, faces=faces, videos=videos)
    assert len(state.loss_history) == 2
    assert state.completed == ["weak_finetune"]


def test_seed_reproducibility_across_trainers(faces):
    a = Trainer(Config(**TINY))
    b = Trainer(Config(**TINY))
    ha = a.run_phase("pretrain_detector", 3, faces=faces).loss_history
    hb = b.run_phase("pretrain_detector", 3, faces=faces).loss_history
    assert ha == hb


def test_nonfinite_abort_after_three(faces, monkeypatch):
    t = Trainer(Config(**TINY))
    calls = {"n": 0}

    def explode(phase, batch):
        calls["n"] += 1
        raise NonFiniteLoss("synthetic")

    monkeypatch.setattr(t, "_dispatch", explode)
    with pytest.raises(NonFiniteLoss, match="consecutive"):
        t.run_phase("pretrain_detector", 10, faces=faces)
    assert calls["n"] == 3
    assert sum(1 for e in t.state.loss_history if e.get("skipped")) == 3


def test_nonfinite_counter_resets(faces, monkeypatch):
    t = Trainer(Config(**TINY))
    real = t._dispatch
    calls = {"n": 0}

    def flaky(phase, batch):
        calls["n"] += 1
        if calls["n"] % 2 == 1:
            raise NonFiniteLoss("synthetic")
        return real(phase, batch)

    monkeypatch.setattr(t, "_dispatch", flaky)
    state = t.run_phase("pretrain_detector", 4, faces=faces)  # F ok F ok: never 3 in a row
    assert sum(1 for e in state.loss_history if e.get("skipped")) == 2


def test_checkpoint_round_trip(tmp_path, faces):
    cfg = Config(**TINY)
    t = Trainer(cfg)
    t.run_phase("pretrain_detector", 2, faces=faces)
    path = tmp_path / "ck.pt"
    t.save_checkpoint(path)
    back = Trainer.restore(path, cfg)
    for p, q in zip(t.detector.state_dict().values(), back.detector.state_dict().values()):
        assert torch.equal(p, q)
    assert back.state.completed == ["pretrain_detector"]
    assert "generator" not in Trainer.read_checkpoint(path)["models"]


def test_checkpoint_sections_grow_with_phases(tmp_path, faces):
    t = Trainer(Config(**TINY))
    t.run_phase("pretrain_detector", 1, faces=faces)
    t.run_phase("pretrain_transfer", 1, faces=faces)
    path = tmp_path / "ck.pt"
    t.save_checkpoint(path)
    models = Trainer.read_checkpoint(path)["models"]
    assert set(models) == {"detector", "generator", "disc_appearance", "disc_shape"}


def test_checkpoint_config_mismatch(tmp_path, faces):
    t = Trainer(Config(**TINY))
    path = tmp_path / "ck.pt"
    t.save_checkpoint(path)
    other = dict(TINY)
    other["seed"] = 5
    with pytest.raises(CheckpointMismatch, match="seed"):
        Trainer.restore(path, Config(**other))


def test_checkpoint_rejects_unknown_version(tmp_path):
    t = Trainer(Config(**TINY))
    path = tmp_path / "ck.pt"
    t.save_checkpoint(path)
    payload = torch.load(path, weights_only=False)
    payload["format_version"] = 99
    torch.save(payload, path)
    with pytest.raises(CheckpointMismatch, match="format"):
        Trainer.read_checkpoint(path)


def test_checkpoint_missing_file():
    with pytest.raises(CheckpointMismatch):
        Trainer.read_checkpoint("/nonexistent/ck.pt")


def test_bitwise_resume(tmp_path, faces):
    cfg = Config(**dict(TINY, checkpoint_every=2))
    a = Trainer(cfg)
    a.run_phase("pretrain_detector", 4, faces=faces)
    b = Trainer(cfg)
    b.run_phase("pretrain_detector", 4, faces=faces, checkpoint_dir=tmp_path, pause_after=2)
    ck = sorted(tmp_path.glob("*.pt"))[-1]
    c = Trainer.restore(ck, cfg)
    c.run_phase("pretrain_detector", 4, faces=faces)
    for p, q in zip(a.detector.state_dict().values(), c.detector.state_dict().values()):
        assert torch.equal(p, q)


def test_discriminator_isolated_from_generator_step(faces):
    """The generator update must not move discriminator weights, and the
    discriminator update must not move detector or generator weights."""
    t = Trainer(Config(**TINY))
    t.skip_phase("pretrain_detector")
    disc_before = [p.clone() for p in t.disc_appearance.parameters()]
    det_before = [p.clone() for p in t.detector.parameters()]
    t.run_phase("pretrain_transfer", 1, faces=faces)
    assert not all(
        torch.equal(p, q) for p, q in zip(disc_before, t.disc_appearance.parameters())
    )  # discriminator trained
    assert all(torch.equal(p, q) for p, q in zip(det_before, t.detector.parameters()))


def test_metrics_log_jsonl(tmp_path, faces):
    t = Trainer(Config(**TINY))
    log = tmp_path / "m.jsonl"
    t.run_phase("pretrain_detector", 2, faces=faces, log_path=log)
    lines = [json.loads(ln) for ln in log.read_text().splitlines()]
    assert len(lines) == 2
    assert lines[0]["phase"] == "pretrain_detector"
    assert lines[0]["step"] == 0


def test_evaluate_detector_report(faces):
    t = Trainer(Config(**TINY))
    report = evaluate_detector(t.detector, faces[:3], t.cfg)
    assert report.aggregate["count"] == 3
    assert report.aggregate["nme"] > 0.0
    assert "psnr" in report.aggregate and "ssim" in report.aggregate
    assert all("name" in r for r in report.records)


def test_transfer_objective_reaches_detector(faces):
    """Pose-transfer supervision must back-propagate into the detector: the
    generator consumes hallucinated faces and predicted heatmaps with their
    graph intact."""
    from hallmark.losses import loss_pt
    from hallmark.sampling import pair_rng, sample_image_pair
    from hallmark.training import _collate

    cfg = Config(**TINY)
    t = Trainer(cfg)
    batch = _collate([sample_image_pair(faces[0], cfg, pair_rng(0, 2, 0, 0))], cfg)
    out = t.detector(torch.cat((batch.lr_j, batch.lr_k)))
    hm = out.heatmaps[-1]
    i_con, i_tar, h_con, h_tar = t._transfer_directions(
        batch, out.sr_image[:1], out.sr_image[1:], hm[:1], hm[1:]
    )
    fake = t.generator(i_con, h_con, h_tar)
    pt = loss_pt(
        i_tar,
        fake,
        None,
        None,
        t.disc_appearance(i_con, fake),
        t.disc_shape(h_tar, fake),
        t.perceptual,
        0.05,
        0.01,
        0.01,
        role="generator",
    )
    pt.total.backward()
    grads = [p.grad for p in t.detector.parameters() if p.grad is not None]
    assert grads
    assert any(float(g.abs().max()) > 0.0 for g in grads)
