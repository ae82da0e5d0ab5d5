"""Manifests, containers, landmarks, sampling, and augmentation."""

import numpy as np
import pytest

from sidenet.data import (
    AugmentConfig,
    apply_dataset_fraction,
    apply_loo_exclusion,
    augment_clip,
    clip_indices,
    load_manifest,
    plan_windows,
    read_clip,
    read_frames_header,
    read_landmarks,
    sample_clip,
    subsample_video_ids,
    write_frames,
    write_landmarks,
)
from sidenet.errors import DataError
from sidenet.rng import make_rng


def make_clip(path, frames=8, size=16, seed=0):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(frames, 3, size, size)).astype(np.uint8)
    write_frames(path, arr)
    return arr


def test_frames_container_roundtrip(tmp_path):
    path = tmp_path / "clip.frames"
    arr = make_clip(path)
    assert read_frames_header(path) == (8, 16, 16)
    back = read_clip(path)
    assert (back == arr).all()


def test_manifest_two_records(tmp_path):
    make_clip(tmp_path / "a.frames")
    make_clip(tmp_path / "b.frames")
    mpath = tmp_path / "m.tsv"
    mpath.write_text("# comment\na.frames\treal\tv1\ttrain\nb.frames\tfake\tv2\tval\t-\tflicker\n")
    records = load_manifest(mpath)
    assert len(records) == 2
    assert records[0].label == "real" and records[0].landmark_path is None
    assert records[1].manipulation_tag == "flicker"


def test_manifest_bad_label_reports_line(tmp_path):
    make_clip(tmp_path / "a.frames")
    mpath = tmp_path / "m.tsv"
    mpath.write_text("a.frames\treall\tv1\ttrain\n")
    with pytest.raises(DataError, match=r":1: unknown label 'reall'"):
        load_manifest(mpath)


def test_manifest_duplicate_clip_rejected(tmp_path):
    make_clip(tmp_path / "a.frames")
    mpath = tmp_path / "m.tsv"
    mpath.write_text("a.frames\treal\tv1\ttrain\na.frames\tfake\tv2\ttrain\n")
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(mpath)


def test_manifest_missing_file_reports_line(tmp_path):
    mpath = tmp_path / "m.tsv"
    mpath.write_text("missing.frames\treal\tv1\ttrain\n")
    with pytest.raises(DataError, match=":1:"):
        load_manifest(mpath)


def test_landmark_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    lms = rng.uniform(0, 32, size=(3, 68, 2))
    path = tmp_path / "l.lmk"
    write_landmarks(path, lms)
    back = read_landmarks(path)
    assert back.shape == (3, 68, 2)
    np.testing.assert_allclose(back, lms, atol=1e-3)


def test_landmark_wrong_count(tmp_path):
    path = tmp_path / "l.lmk"
    path.write_text("\n".join("1 2" for _ in range(67)) + "\n")
    with pytest.raises(DataError, match="67"):
        read_landmarks(path)


# ---------------------------------------------------------------------------
# sampling

def test_uniform_indices_example():
    # 2 s window at 25 fps: 50 frames, T=10 -> every 5th frame
    idx = clip_indices(0, 50, 10)
    np.testing.assert_array_equal(idx, np.arange(0, 50, 5))


def test_exact_length_identity():
    idx = clip_indices(0, 10, 10)
    np.testing.assert_array_equal(idx, np.arange(10))


def test_window_too_short_errors():
    with pytest.raises(DataError):
        clip_indices(0, 5, 10)


def test_windows_are_disjoint_and_sized():
    rng = make_rng(0, "w")
    windows = plan_windows(n_frames=400, fps=25.0, rng=rng, max_clips=4)
    assert 1 <= len(windows) <= 4
    end = 0
    for start, length in windows:
        assert start >= end  # no overlap
        assert 50 <= length <= 100  # 2-4 s at 25 fps
        end = start + length
    assert end <= 400


def test_short_video_uses_full_span():
    rng = make_rng(0, "w2")
    assert plan_windows(30, 25.0, rng, 4) == [(0, 30)]


def test_sample_clip_slices_window():
    video = np.arange(100 * 3 * 2 * 2, dtype=np.uint8).reshape(100, 3, 2, 2)
    clip = sample_clip(video, 10, 50, 10)
    np.testing.assert_array_equal(clip[:, 0, 0, 0], video[np.arange(10, 60, 5), 0, 0, 0])


# ---------------------------------------------------------------------------
# dataset shaping

def test_fraction_counts_and_stability():
    ids = [f"v{i}" for i in range(10)]
    kept = subsample_video_ids(ids, 0.5, seed=7)
    assert len(kept) == 5
    assert kept == subsample_video_ids(ids, 0.5, seed=7)
    assert kept != subsample_video_ids(ids, 0.5, seed=8)


def test_fraction_superset_monotone():
    ids = [f"v{i}" for i in range(40)]
    k25 = subsample_video_ids(ids, 0.25, seed=3)
    k50 = subsample_video_ids(ids, 0.50, seed=3)
    k75 = subsample_video_ids(ids, 0.75, seed=3)
    assert k25 <= k50 <= k75


def test_loo_exclusion_audit(toyset_small):
    records = load_manifest(toyset_small)
    filtered = apply_loo_exclusion(records, "flicker")
    removed = {(r.video_id, r.split) for r in records} - {(r.video_id, r.split) for r in filtered}
    assert removed  # some train/val fakes dropped
    for r in records:
        if r.split == "test":
            assert any(f.video_id == r.video_id for f in filtered)  # test untouched
    for r in filtered:
        if r.split in ("train", "val"):
            assert not (r.label == "fake" and r.manipulation_tag == "flicker")


def test_fraction_applies_to_train_only(toyset_small):
    records = load_manifest(toyset_small)
    out = apply_dataset_fraction(records, 0.5, seed=0)
    train_in = {r.video_id for r in records if r.split == "train"}
    train_out = {r.video_id for r in out if r.split == "train"}
    assert len(train_out) == (len(train_in) + 1) // 2
    assert {r.video_id for r in out if r.split != "train"} == {r.video_id for r in records if r.split != "train"}


# ---------------------------------------------------------------------------
# augmentation

def test_all_gates_off_is_identity():
    clip = np.random.default_rng(2).integers(0, 256, size=(4, 3, 16, 16)).astype(np.uint8)
    out = augment_clip(clip, make_rng(0, "aug"), AugmentConfig.none())
    assert (out == clip).all()


def test_flip_is_involution():
    clip = np.random.default_rng(3).integers(0, 256, size=(2, 3, 8, 8)).astype(np.uint8)
    flipped = clip[:, :, :, ::-1]
    assert (flipped[:, :, :, ::-1] == clip).all()


def test_augment_deterministic_under_seed():
    clip = np.random.default_rng(4).integers(0, 256, size=(3, 3, 16, 16)).astype(np.uint8)
    a = augment_clip(clip, make_rng(5, "aug", 1), AugmentConfig())
    b = augment_clip(clip, make_rng(5, "aug", 1), AugmentConfig())
    assert (a == b).all()
    c = augment_clip(clip, make_rng(5, "aug", 2), AugmentConfig())
    assert not (a == c).all()


def test_augment_is_video_level():
    # identical frames stay identical after any augmentation draw
    frame = np.random.default_rng(6).integers(0, 256, size=(3, 16, 16)).astype(np.uint8)
    clip = np.stack([frame] * 4)
    out = augment_clip(clip, make_rng(9, "aug"), AugmentConfig())
    for i in range(1, 4):
        assert (out[i] == out[0]).all()
