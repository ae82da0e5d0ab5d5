"""Training loop mechanics, checkpoints, and the CLI surface."""

import json

import numpy as np
import pytest

from sidenet.archive import read_archive, write_archive
from sidenet.cli import main as cli_main
from sidenet.config import TrainConfig, load_config_file, resolve_config
from sidenet.data import load_manifest, read_clip, read_landmarks
from sidenet.encoder import encode_frames, encoder_meta, image_patch_index, normalize_frames
from sidenet.errors import ConfigError
from sidenet.spatial import LANDMARK_GROUPS, PART_NAMES, MiningSample, attention_grids, mine_part_prototypes
from sidenet.detector import init_detector_params
from sidenet.train import EarlyStopper, history_digest, train


@pytest.fixture(scope="module")
def weights_archive(tmp_path_factory, tiny_weights):
    path = tmp_path_factory.mktemp("weights") / "tiny.nta"
    write_archive(path, tiny_weights.tensors, meta=encoder_meta(tiny_weights))
    return path


def quick_config(**kwargs):
    base = dict(seed=0, lr=3e-3, epochs=2, batch_size=4, frames_per_clip=6,
                clips_per_video=1, eval_clips_per_video=1, augment=False,
                use_fcg=False, patience=10, mining_rounds=2, mining_frames=4)
    base.update(kwargs)
    return TrainConfig(**base)


def test_early_stopper_contract():
    stopper = EarlyStopper(patience=10)
    assert stopper.update(0.9)  # first epoch sets the best
    for epoch in range(2, 12):
        assert not stopper.update(0.9 - 0.01 * epoch)
        if epoch < 11:
            assert not stopper.should_stop
    assert stopper.should_stop  # stops after epoch 11


def test_early_stopper_resets_on_improvement():
    stopper = EarlyStopper(patience=3)
    stopper.update(0.5)
    stopper.update(0.4)
    stopper.update(0.6)
    assert stopper.since_improve == 0


def test_train_smoke_and_history(tiny_weights, toyset_small, tmp_path):
    records = load_manifest(toyset_small)
    result = train(quick_config(), records, tiny_weights, None, tmp_path / "run")
    assert result.best_path.exists() and result.last_path.exists()
    assert len(result.history["epochs"]) == 2
    for entry in result.history["steps"]:
        assert np.isfinite(entry["loss"])
    saved = json.loads((tmp_path / "run" / "history.json").read_text())
    assert history_digest(saved) == history_digest(result.history)


def test_train_requires_phi_when_fcg_on(tiny_weights, toyset_small, tmp_path):
    records = load_manifest(toyset_small)
    with pytest.raises(ConfigError, match="mine"):
        train(quick_config(use_fcg=True), records, tiny_weights, None, tmp_path / "run")


def test_train_empty_val_split_rejected(tiny_weights, toyset_small, tmp_path):
    records = [r for r in load_manifest(toyset_small) if r.split != "val"]
    with pytest.raises(ConfigError, match="validation"):
        train(quick_config(), records, tiny_weights, None, tmp_path / "run")


def test_checkpoint_restores_bitwise(tiny_weights, toyset_small, tmp_path):
    from sidenet.train import load_checkpoint

    records = load_manifest(toyset_small)
    cfg = quick_config(epochs=1)
    result = train(cfg, records, tiny_weights, None, tmp_path / "run")
    params = init_detector_params(cfg.detector_config(tiny_weights.config), cfg.seed)
    meta = load_checkpoint(result.last_path, params)
    assert meta["epoch"] == 1
    ar = read_archive(result.last_path)
    for name, tensor in params.named_parameters().items():
        assert (ar[name] == tensor.data).all()


def test_config_file_parsing(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("lr = 0.001  # comment\nuse_fcg = false\ntemporal_attrs = q,k\nbatch_size = 2\n")
    values = load_config_file(path)
    cfg = resolve_config(path)
    assert values["lr"] == 0.001
    assert cfg.use_fcg is False
    assert cfg.attr_tuple == ("q", "k")
    assert cfg.batch_size == 2


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("learning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rate"):
        load_config_file(path)


# ---------------------------------------------------------------------------
# CLI

def write_cli_config(tmp_path):
    path = tmp_path / "cli.cfg"
    path.write_text(
        "lr = 0.003\nepochs = 2\nbatch_size = 4\nframes_per_clip = 6\n"
        "clips_per_video = 1\neval_clips_per_video = 1\naugment = false\n"
        "mining_rounds = 2\nmining_frames = 4\npatience = 10\n"
    )
    return path


def test_cli_full_flow(tmp_path, weights_archive, toyset_small, capsys):
    cfg = write_cli_config(tmp_path)
    phi = tmp_path / "phi.nta"
    rc = cli_main(["--config", str(cfg), "--weights", str(weights_archive),
                   "mine", "--manifest", str(toyset_small), "--out", str(phi)])
    assert rc == 0 and phi.exists()
    protos = read_archive(phi)
    assert "fcg/phi/layer0" in protos
    assert protos.meta["gamma_s"] == "k"

    out_dir = tmp_path / "run"
    rc = cli_main(["--config", str(cfg), "--weights", str(weights_archive),
                   "train", "--manifest", str(toyset_small), "--out-dir", str(out_dir),
                   "--phi", str(phi)])
    assert rc == 0
    ckpt = out_dir / "checkpoint_best.nta"
    assert ckpt.exists()

    rc = cli_main(["--weights", str(weights_archive), "--checkpoint", str(ckpt),
                   "eval", "--manifest", str(toyset_small), "--split", "test"])
    assert rc == 0
    eval_out = capsys.readouterr().out
    assert "video AUROC" in eval_out

    records = load_manifest(toyset_small)
    clip_path = records[0].clip_path
    rc = cli_main(["--weights", str(weights_archive), "--checkpoint", str(ckpt),
                   "score", "--clip", str(clip_path)])
    assert rc == 0
    score_out = capsys.readouterr().out
    assert "score:" in score_out and "total_seconds:" in score_out
    assert "logit_t:" in score_out and "logit_s:" in score_out and "logit_st:" in score_out

    dump_dir = tmp_path / "aff"
    rc = cli_main(["--weights", str(weights_archive), "--checkpoint", str(ckpt),
                   "dump-affinity", "--clip", str(clip_path), "--out-dir", str(dump_dir)])
    assert rc == 0
    pgms = sorted(dump_dir.glob("*.pgm"))
    assert len(pgms) == 4 * 6  # queries x frames
    first = pgms[0].read_bytes()
    rc = cli_main(["--weights", str(weights_archive), "--checkpoint", str(ckpt),
                   "dump-affinity", "--clip", str(clip_path), "--out-dir", str(dump_dir)])
    assert rc == 0 and pgms[0].read_bytes() == first  # deterministic


def test_cli_perturb(tmp_path, toyset_small, capsys):
    records = load_manifest(toyset_small)
    out_dir = tmp_path / "pert"
    rc = cli_main(["perturb", "--clip", str(records[0].clip_path),
                   "--out-dir", str(out_dir), "--kind", "jpeg", "--severity", "3"])
    assert rc == 0
    assert (out_dir / "jpeg_s3.frames").exists()
    assert "psnr" in capsys.readouterr().out


def test_cli_params_reports_reference_both_modes(tmp_path, capsys):
    rc = cli_main(["params"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "250.0K" in out and "total trainable" in out
    assert "per-layer" in out

    cfg = tmp_path / "shared.cfg"
    cfg.write_text("share_temporal_weights = true\n")
    rc = cli_main(["--config", str(cfg), "params"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "250.0K" in out and "shared" in out


def test_cli_exit_codes(tmp_path, toyset_small, monkeypatch):
    # missing --weights -> configuration error
    assert cli_main(["mine", "--manifest", str(toyset_small), "--out", str(tmp_path / "p.nta")]) == 2
    # malformed manifest -> data error
    bad = tmp_path / "bad.tsv"
    bad.write_text("nope.frames\treal\tv\ttrain\n")
    assert cli_main(["perturb", "--clip", str(tmp_path / "missing.frames"),
                     "--out-dir", str(tmp_path), "--kind", "blur", "--severity", "1"]) == 3
    # unknown config key -> configuration error
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert cli_main(["--config", str(cfg), "params"]) == 2
    # numerical failure -> exit 4
    import sidenet.cli as cli_mod
    from sidenet.errors import NumericalError

    def boom(args, config):
        raise NumericalError("training loss became non-finite")

    monkeypatch.setitem(cli_mod._COMMANDS, "params", boom)
    assert cli_main(["params"]) == 4


# ---------------------------------------------------------------------------
# affinity warm-start behavior

def test_affinity_mass_concentrates_on_guided_parts(tiny_weights, toyset_small):
    records = [r for r in load_manifest(toyset_small) if r.split == "train"]
    samples = []
    for r in records[:4]:
        video = read_clip(r.clip_path)
        lms = read_landmarks(r.landmark_path)
        samples.append(MiningSample(video[0], lms[0]))
    protos = mine_part_prototypes(samples, tiny_weights, rounds=4, seed=1)

    cfg = quick_config(use_fcg=True).detector_config(tiny_weights.config)
    params = init_detector_params(cfg, seed=0, prototypes=protos)

    video = read_clip(records[0].clip_path)
    lms = read_landmarks(records[0].landmark_path)
    clip = video[:4]
    taps = encode_frames(normalize_frames(clip, tiny_weights), tiny_weights)
    grids = np.mean([attention_grids(params.queries[l].data, taps[l], "k") for l in range(4)], axis=0)

    p = tiny_weights.config.patches
    for part_idx, part in enumerate(PART_NAMES):
        masses = []
        for t in range(4):
            patches = {
                image_patch_index(lms[t, i, 0], lms[t, i, 1], tiny_weights.config)
                for i in LANDMARK_GROUPS[part]
            }
            flat = grids[part_idx, t].reshape(-1)
            masses.append(float(np.mean([flat[q] for q in patches])))
        assert np.mean(masses) > 1.0 / p, f"query for {part} not above uniform baseline"
