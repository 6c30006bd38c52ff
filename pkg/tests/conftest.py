import numpy as np
import pytest

from splatseg.core_model import Camera, SceneModel


def make_random_scene(n: int, seed: int = 0, feature_scale: float = 0.25) -> SceneModel:
    """Generic scene in front of the default camera (z in [2, 4])."""
    rg = np.random.default_rng(seed)
    quats = rg.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return SceneModel(
        positions=np.stack([rg.uniform(-0.6, 0.6, n), rg.uniform(-0.6, 0.6, n),
                            rg.uniform(2.0, 4.0, n)], axis=1),
        log_scales=rg.uniform(np.log(0.06), np.log(0.25), (n, 3)),
        rotations=quats,
        opacity_logits=rg.uniform(-1.5, 2.0, n),
        colors=rg.uniform(0.05, 0.95, (n, 3)),
        features=rg.standard_normal((n, 16)) * feature_scale,
    )


def make_camera(size: int = 16, focal: float | None = None, camera_id: int = 0) -> Camera:
    return Camera(fx=focal or 2.2 * size, fy=focal or 2.2 * size,
                  cx=size / 2.0, cy=size / 2.0, rotation=np.eye(3),
                  translation=np.zeros(3), width=size, height=size,
                  camera_id=camera_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
