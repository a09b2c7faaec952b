import numpy as np
import pytest

from stereosplat.camera import CameraModel


@pytest.fixture
def identity_cam():
    return CameraModel(
        fx=100.0,
        fy=100.0,
        cx=50.0,
        cy=50.0,
        width=100,
        height=100,
        rotation=np.eye(3),
        translation=np.zeros(3),
    )


def random_camera(rng, width=64, height=64):
    """Random pose with a proper rotation and the scene in front."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-0.5, 0.5)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    rotation = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    return CameraModel(
        fx=rng.uniform(50, 200),
        fy=rng.uniform(50, 200),
        cx=(width - 1) / 2 + rng.uniform(-2, 2),
        cy=(height - 1) / 2 + rng.uniform(-2, 2),
        width=width,
        height=height,
        rotation=rotation,
        translation=rng.uniform(-0.3, 0.3, 3),
    )
