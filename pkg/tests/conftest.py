import numpy as np
import pytest
import torch

from bevfuse.synthetic import SceneConfig, default_grid, default_rig, generate_dataset


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def scene_config():
    return SceneConfig(seed=7)


@pytest.fixture(scope="session")
def rig(scene_config):
    return default_rig(scene_config)


@pytest.fixture(scope="session")
def grid():
    return default_grid()


@pytest.fixture(scope="session")
def tiny_dataset(scene_config):
    """2 train / 2 val scenes, enough for trainer plumbing tests."""
    return generate_dataset(scene_config, 2, 2)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish proper rotation via QR with sign fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
