"""Perturbation ladders: identity at severity 0, monotone distortion."""

import numpy as np
import pytest

from sidenet.errors import ConfigError
from sidenet.imageops import psnr
from sidenet.perturb import KINDS, NOISE_SIGMA, apply_perturbation


@pytest.fixture(scope="module")
def fixture_clip():
    """Textured clip: gradient plus seeded noise, so every ladder bites."""
    rng = np.random.default_rng(123)
    base = np.linspace(40, 215, 24 * 24).reshape(24, 24)
    clip = np.stack([
        np.clip(base[None] + rng.normal(0, 30, size=(3, 24, 24)), 0, 255)
        for _ in range(4)
    ]).astype(np.uint8)
    return clip


def test_severity_zero_is_bit_identity(fixture_clip):
    for kind in KINDS:
        out = apply_perturbation(fixture_clip, kind, 0, seed=1)
        assert (out == fixture_clip).all(), kind
        assert out is not fixture_clip


def test_psnr_non_increasing_in_severity(fixture_clip):
    for kind in KINDS:
        values = [psnr(fixture_clip, apply_perturbation(fixture_clip, kind, s, seed=1)) for s in range(6)]
        for a, b in zip(values, values[1:]):
            assert a >= b, f"{kind}: PSNR ladder not monotone: {values}"


def test_blur_severity_five_worse_than_one(fixture_clip):
    p1 = psnr(fixture_clip, apply_perturbation(fixture_clip, "blur", 1))
    p5 = psnr(fixture_clip, apply_perturbation(fixture_clip, "blur", 5))
    assert p5 < p1


def test_noise_variance_matches_configured_sigma():
    clip = np.full((4, 3, 32, 32), 128, dtype=np.uint8)
    out = apply_perturbation(clip, "noise", 3, seed=5)
    observed = float(np.var(out.astype(np.float64) - 128.0))
    assert observed == pytest.approx(NOISE_SIGMA[2] ** 2, rel=0.10)


def test_deterministic_given_seed_and_severity(fixture_clip):
    for kind in ("block", "noise"):
        a = apply_perturbation(fixture_clip, kind, 3, seed=9)
        b = apply_perturbation(fixture_clip, kind, 3, seed=9)
        c = apply_perturbation(fixture_clip, kind, 3, seed=10)
        assert (a == b).all()
        assert not (a == c).all()


def test_block_occlusions_nest_across_severity(fixture_clip):
    prev_mask = None
    for s in range(1, 6):
        out = apply_perturbation(fixture_clip, "block", s, seed=2)
        mask = (out == 0) & (fixture_clip != 0)
        if prev_mask is not None:
            assert (mask | prev_mask == mask).all()  # coverage only grows
        prev_mask = mask


def test_unknown_kind_rejected(fixture_clip):
    with pytest.raises(ConfigError):
        apply_perturbation(fixture_clip, "sepia", 1)
    with pytest.raises(ConfigError):
        apply_perturbation(fixture_clip, "blur", 6)
