import numpy as np
import pytest

from roadeye.geometry import RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix, det +1."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_rigid(rng: np.random.Generator, t_scale: float = 100.0) -> RigidTransform:
    return RigidTransform.from_rotation_translation(
        random_rotation(rng), rng.uniform(-t_scale, t_scale, 3)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
