import numpy as np
import pytest

from sidenet.encoder import TINY, encode_frames, normalize_frames, random_encoder_weights


@pytest.fixture(scope="session")
def tiny_weights():
    return random_encoder_weights(TINY, seed=11)


@pytest.fixture(scope="session")
def tiny_taps(tiny_weights):
    """Taps for a fixed random 3-frame clip through the Tiny encoder."""
    rng = np.random.Generator(np.random.Philox(key=3))
    frames = rng.integers(0, 256, size=(3, 3, 32, 32), dtype=np.int64).astype(np.uint8)
    return encode_frames(normalize_frames(frames, tiny_weights), tiny_weights)


@pytest.fixture(scope="session")
def toyset_spatiotemporal(tmp_path_factory):
    from sidenet.toyset import generate_toyset

    root = tmp_path_factory.mktemp("toy_st")
    return generate_toyset(root, "spatiotemporal", n_train=64, n_val=16, seed=0, frames=60)


@pytest.fixture(scope="session")
def toyset_temporal(tmp_path_factory):
    from sidenet.toyset import generate_toyset

    root = tmp_path_factory.mktemp("toy_t")
    return generate_toyset(root, "temporal", n_train=64, n_val=16, seed=0, frames=60)


@pytest.fixture(scope="session")
def toyset_small(tmp_path_factory):
    """Faster 12+6 video set for non-acceptance pipeline tests."""
    from sidenet.toyset import generate_toyset

    root = tmp_path_factory.mktemp("toy_small")
    return generate_toyset(root, "spatiotemporal", n_train=12, n_val=6, n_test=6, seed=3, frames=60)


def make_taps(t=2, p=16, heads=4, dim=16, seed=0):
    """Random LayerTaps at arbitrary dimensions (no encoder involved)."""
    from sidenet.encoder import LayerTaps

    rng = np.random.Generator(np.random.Philox(key=seed))
    return LayerTaps(
        queries=rng.normal(size=(t, p, heads, dim)).astype(np.float32),
        keys=rng.normal(size=(t, p, heads, dim)).astype(np.float32),
        values=rng.normal(size=(t, p, heads, dim)).astype(np.float32),
        patches=rng.normal(size=(t, p, heads * dim)).astype(np.float32),
    )
