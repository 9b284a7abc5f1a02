import numpy as np
import pytest

from robustmvs.geometry import Camera
from robustmvs.synth import make_ablation_scene, render


def random_camera(rng, width=64, height=48, depth_min=5.0, depth_max=20.0):
    """Valid camera with a random small rotation and translation."""
    focal = rng.uniform(80.0, 200.0)
    K = np.array([
        [focal, 0.0, (width - 1) / 2.0 + rng.uniform(-2, 2)],
        [0.0, focal * rng.uniform(0.95, 1.05), (height - 1) / 2.0 + rng.uniform(-2, 2)],
        [0.0, 0.0, 1.0],
    ])
    angle = rng.uniform(-0.2, 0.2, size=3)
    Rx = _rot(0, angle[0])
    Ry = _rot(1, angle[1])
    Rz = _rot(2, angle[2])
    R = Rx @ Ry @ Rz
    t = rng.uniform(-2.0, 2.0, size=3)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return Camera(K, T, depth_min, depth_max, width, height)


def _rot(axis, theta):
    c, s = np.cos(theta), np.sin(theta)
    R = np.eye(3)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    R[i, i] = c
    R[j, j] = c
    R[i, j] = -s if axis != 1 else s
    R[j, i] = s if axis != 1 else -s
    return R


class SceneBundle:
    def __init__(self, scene):
        self.scene = scene
        self.cameras = scene.cameras
        self.renders = [render(scene, i) for i in range(len(scene.cameras))]

    def views_for(self, ref, indices):
        return [(self.renders[i].image, self.cameras[i]) for i in indices]


@pytest.fixture(scope="session")
def plane_small():
    return SceneBundle(make_ablation_scene("textured_plane", seed=0, width=64, height=48))


@pytest.fixture(scope="session")
def plane_full():
    return SceneBundle(make_ablation_scene("textured_plane", seed=0, width=128, height=96))


@pytest.fixture(scope="session")
def occlusion_full():
    return SceneBundle(make_ablation_scene("occlusion", seed=0, width=128, height=96))


@pytest.fixture(scope="session")
def lighting_full():
    return SceneBundle(make_ablation_scene("lighting_shift", seed=0, width=128, height=96))


@pytest.fixture(scope="session")
def occlusion_small():
    return SceneBundle(make_ablation_scene("occlusion", seed=0, width=64, height=48))
