"""Deterministic synthetic scenes: textured primitives rendered by ray casting.

The renderer provides exact depth maps, Lambertian-shaded images with
per-view brightness gain/offset, and geometric co-visibility labels, which
the test suite uses as ground truth for warping, loss, sweep, and fusion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Camera, depth_hypotheses, pixel_grid, save_camera
from .imaging import save_image, write_pfm

_MISS = np.inf
_AMBIENT = 0.3


class ValueNoise:
    """Band-limited value noise: seeded lattices, bilinear interpolation.

    Periodic with the lattice size, which deliberately makes the texture
    self-similar at large shifts (a stress case for single-view matching).
    """

    def __init__(self, seed: int,
                 frequencies: Sequence[float] = (0.8, 1.9, 4.3, 9.7, 14.9),
                 amplitudes: Sequence[float] = (0.2, 0.2, 0.25, 0.2, 0.15),
                 lattice: int = 37, lo: float = 0.25, hi: float = 0.85):
        rng = np.random.default_rng(seed)
        self.frequencies = tuple(frequencies)
        self.amplitudes = tuple(amplitudes)
        self.lattice = lattice
        self.lo = lo
        self.hi = hi
        self.grids = [rng.random((lattice, lattice)) for _ in frequencies]

    def sample(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        n = self.lattice
        acc = np.zeros_like(np.asarray(u, dtype=np.float64))
        total = sum(self.amplitudes)
        for grid, freq, amp in zip(self.grids, self.frequencies, self.amplitudes):
            x = np.mod(u * freq, n)
            y = np.mod(v * freq, n)
            x0 = np.floor(x).astype(np.int64) % n
            y0 = np.floor(y).astype(np.int64) % n
            x1 = (x0 + 1) % n
            y1 = (y0 + 1) % n
            fx = x - np.floor(x)
            fy = y - np.floor(y)
            top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
            bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
            acc += amp * (top * (1 - fy) + fy * bot)
        return self.lo + (self.hi - self.lo) * acc / total


class ConstantPatchTexture:
    """Wraps a texture with an exactly constant rectangular patch in (u, v)."""

    def __init__(self, base: ValueNoise, u_range: tuple[float, float],
                 v_range: tuple[float, float], value: float = 0.5):
        self.base = base
        self.u_range = u_range
        self.v_range = v_range
        self.value = value

    def sample(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = self.base.sample(u, v)
        inside = ((u >= self.u_range[0]) & (u <= self.u_range[1])
                  & (v >= self.v_range[0]) & (v <= self.v_range[1]))
        return np.where(inside, self.value, out)


@dataclass(frozen=True)
class PlaneSurface:
    """Infinite textured plane; texture coordinates live in the plane basis."""

    point: np.ndarray
    normal: np.ndarray
    texture: object

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u_axis = np.cross(helper, n)
        u_axis /= np.linalg.norm(u_axis)
        v_axis = np.cross(n, u_axis)
        object.__setattr__(self, "_u_axis", u_axis)
        object.__setattr__(self, "_v_axis", v_axis)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        denom = dirs @ self.normal
        num = (self.point - origins) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        return np.where((np.abs(denom) > 1e-12) & (t > 1e-9), t, _MISS)

    def albedo(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.point
        return self.texture.sample(rel @ self._u_axis, rel @ self._v_axis)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.normal, points.shape)


@dataclass(frozen=True)
class SlabSurface:
    """Finite textured rectangle, used as an occluder between camera and scene."""

    center: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    half_u: float
    half_v: float
    texture: object

    def __post_init__(self):
        u = np.asarray(self.u_axis, dtype=np.float64)
        v = np.asarray(self.v_axis, dtype=np.float64)
        u = u / np.linalg.norm(u)
        v = v - (v @ u) * u
        v = v / np.linalg.norm(v)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", v)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "_normal", np.cross(u, v))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        n = self._normal
        denom = dirs @ n
        num = (self.center - origins) @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        hit = origins + t[:, None] * dirs
        rel = hit - self.center
        inside = ((np.abs(rel @ self.u_axis) <= self.half_u)
                  & (np.abs(rel @ self.v_axis) <= self.half_v))
        ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & inside
        return np.where(ok, t, _MISS)

    def albedo(self, points: np.ndarray) -> np.ndarray:
        rel = points - self.center
        return self.texture.sample(rel @ self.u_axis, rel @ self.v_axis)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self._normal, points.shape)


@dataclass(frozen=True)
class SphereSurface:
    center: np.ndarray
    radius: float
    texture: object

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        # dirs need not be unit length; t is in units of |dirs|
        oc = origins - self.center
        a = np.sum(dirs * dirs, axis=1)
        b = np.sum(oc * dirs, axis=1)
        c = np.sum(oc * oc, axis=1) - self.radius**2
        disc = b * b - a * c
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        t0 = (-b - sqrt_disc) / a
        t1 = (-b + sqrt_disc) / a
        t = np.where(t0 > 1e-9, t0, t1)
        return np.where((disc > 0) & (t > 1e-9), t, _MISS)

    def albedo(self, points: np.ndarray) -> np.ndarray:
        rel = (points - self.center) / self.radius
        return self.texture.sample(rel[:, 0] * 8.0, rel[:, 1] * 8.0)

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        n = points - self.center
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True)
class Scene:
    """Immutable scene description: surfaces, cameras, per-view lighting."""

    surfaces: tuple
    cameras: tuple[Camera, ...]
    gains: tuple[float, ...]
    offsets: tuple[float, ...]
    seed: int
    light_dir: np.ndarray = field(default_factory=lambda: np.array([0.3, -0.2, 1.0]))

    def __post_init__(self):
        if len(self.gains) != len(self.cameras) or len(self.offsets) != len(self.cameras):
            raise ValueError("need one gain and offset per camera")
        l = np.asarray(self.light_dir, dtype=np.float64)
        object.__setattr__(self, "light_dir", l / np.linalg.norm(l))


class RenderResult(NamedTuple):
    image: np.ndarray          # (H, W) grayscale in [0, 1]
    depth: np.ndarray          # (H, W) exact camera-frame depth
    covisible: np.ndarray      # (n_views, H, W) bool; True where the surface
    # point of this pixel projects inside view j and is not blocked there.
    # Entry for the rendered view itself is all True.
    occluded: np.ndarray       # (n_views, H, W) bool; True where the point is
    # blocked by another surface on the way to view j (independent of bounds).


def _cast(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-surface intersection; returns (t, surface index) per ray."""
    n = origins.shape[0]
    best_t = np.full(n, _MISS)
    best_s = np.full(n, -1, dtype=np.int64)
    for si, surf in enumerate(scene.surfaces):
        t = surf.intersect(origins, dirs)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_s = np.where(closer, si, best_s)
    return best_t, best_s


def render(scene: Scene, view: int) -> RenderResult:
    """Ray-cast one view: exact depth, shaded image, co-visibility labels."""
    if not 0 <= view < len(scene.cameras):
        raise ValueError(f"view index {view} out of range")
    cam = scene.cameras[view]
    h, w = cam.height, cam.width
    grid = pixel_grid(w, h)
    ones = np.ones((grid.shape[0], 1))
    rays_cam = np.concatenate([grid, ones], axis=1) @ np.linalg.inv(cam.intrinsics).T
    dirs = rays_cam @ cam.rotation  # world directions, scaled so z_cam = t
    center = cam.center()
    origins = np.broadcast_to(center, dirs.shape)

    t, surf_idx = _cast(scene, origins, dirs)
    hit = t < _MISS
    t_safe = np.where(hit, t, 1.0)
    points = origins + t_safe[:, None] * dirs
    # dirs are scaled so that the ray parameter equals camera-frame depth
    depth = np.where(hit, t, 0.0)

    albedo = np.zeros(grid.shape[0])
    shade = np.zeros(grid.shape[0])
    for si, surf in enumerate(scene.surfaces):
        sel = hit & (surf_idx == si)
        if not np.any(sel):
            continue
        pts = points[sel]
        albedo[sel] = surf.albedo(pts)
        normals = surf.normal_at(pts)
        lamb = np.abs(normals @ scene.light_dir)
        shade[sel] = _AMBIENT + (1.0 - _AMBIENT) * lamb
    img = np.clip(scene.gains[view] * albedo * shade + scene.offsets[view], 0.0, 1.0)
    img = np.where(hit, img, 0.0)

    n_views = len(scene.cameras)
    covis = np.zeros((n_views, grid.shape[0]), dtype=bool)
    occl = np.zeros((n_views, grid.shape[0]), dtype=bool)
    for j, cam_j in enumerate(scene.cameras):
        if j == view:
            covis[j] = hit
            continue
        uv, z = cam_j.project(points)
        in_bounds = ((z > 1e-9)
                     & (uv[:, 0] >= 0.0) & (uv[:, 0] <= cam_j.width - 1.0)
                     & (uv[:, 1] >= 0.0) & (uv[:, 1] <= cam_j.height - 1.0))
        center_j = cam_j.center()
        to_point = points - center_j
        dist = np.linalg.norm(to_point, axis=1)
        dirs_j = to_point / np.where(dist > 0, dist, 1.0)[:, None]
        t_j, _ = _cast(scene, np.broadcast_to(center_j, dirs_j.shape), dirs_j)
        blocked = hit & (t_j < dist * (1.0 - 1e-6))
        occl[j] = blocked
        covis[j] = hit & in_bounds & ~blocked

    return RenderResult(
        image=img.reshape(h, w),
        depth=depth.reshape(h, w),
        covisible=covis.reshape(n_views, h, w),
        occluded=occl.reshape(n_views, h, w),
    )


# --- canonical test scenes ----------------------------------------------------

SCENE_KINDS = ("textured_plane", "lighting_shift", "occlusion", "textureless_patch")

_PLANE_Z = 10.0
_DEPTH_MIN = 6.0
_DEPTH_STEP = 0.1             # plane depth 10.0 sits exactly on hypothesis 40
_NUM_DEPTHS = 128
_BASELINE = 1.0
_FOCAL = 200.0


def _look_at_camera(position: np.ndarray, target: np.ndarray, focal: float,
                    width: int, height: int,
                    depth_min: float, depth_max: float) -> Camera:
    fwd = target - position
    fwd = fwd / np.linalg.norm(fwd)
    # camera frame: x right, y down, z forward (world y points down too)
    right = np.cross(np.array([0.0, 1.0, 0.0]), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    t = -R @ position
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    K = np.array([
        [focal, 0.0, (width - 1) / 2.0],
        [0.0, focal, (height - 1) / 2.0],
        [0.0, 0.0, 1.0],
    ])
    return Camera(K, T, depth_min, depth_max, width, height)


def camera_ring(n_views: int = 7, baseline: float = _BASELINE,
                width: int = 128, height: int = 96, focal: float | None = None,
                depth_min: float = _DEPTH_MIN,
                depth_max: float = _DEPTH_MIN + _DEPTH_STEP * (_NUM_DEPTHS - 1),
                target_z: float = _PLANE_Z) -> tuple[Camera, ...]:
    """Reference camera at the origin plus views fanned out along x, all
    verged on the point (0, 0, target_z).

    The focal length scales with the image width so the field of view (and
    with it the scene's occlusion geometry) is resolution independent.
    """
    if focal is None:
        focal = _FOCAL * width / 128.0
    target = np.array([0.0, 0.0, target_z])
    offsets = [0.0]
    k = 1
    while len(offsets) < n_views:
        offsets.append(baseline * k)
        if len(offsets) < n_views:
            offsets.append(-baseline * k)
        k += 1
    cams = [
        _look_at_camera(np.array([dx, 0.0, 0.0]), target, focal, width, height,
                        depth_min, depth_max)
        for dx in offsets
    ]
    return tuple(cams)


def make_ablation_scene(kind: str, seed: int = 0, width: int = 128,
                        height: int = 96) -> Scene:
    """Canonical 7-camera stress scenes used by the ablation study and tests.

    textured_plane: fronto-parallel noise-textured plane, no stressors.
    lighting_shift: same geometry with per-view brightness offsets of +/-0.1.
    occlusion: adds a textured slab that blocks part of the plane in exactly
        the three positive-x views.
    textureless_patch: plane with an exactly constant central square.
    """
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind '{kind}' (choose from {SCENE_KINDS})")
    cams = camera_ring(width=width, height=height)
    n = len(cams)
    texture = ValueNoise(seed=seed * 7919 + 13)
    plane = PlaneSurface(point=np.array([0.0, 0.0, _PLANE_Z]),
                         normal=np.array([0.0, 0.0, -1.0]),
                         texture=texture)
    surfaces: list = [plane]
    gains = tuple([1.0] * n)
    offsets = tuple([0.0] * n)

    if kind == "lighting_shift":
        offsets = tuple(0.0 if i == 0 else (0.1 if i % 2 else -0.1) for i in range(n))
    elif kind == "occlusion":
        # Slab between the cameras and the plane, off to +x: the reference
        # neither sees it nor is blocked by it, while the three +x views lose
        # sight of part of the plane area the reference observes. Mild
        # per-view brightness offsets add the lighting variation a real MVS
        # capture has; without it single-view (K=1) matching is unrealistically
        # reliable on noiseless renders.
        slab_tex = ValueNoise(seed=seed * 7919 + 101)
        slab = SlabSurface(center=np.array([2.15, 0.0, 5.0]),
                           u_axis=np.array([1.0, 0.0, 0.0]),
                           v_axis=np.array([0.0, 1.0, 0.0]),
                           half_u=0.45, half_v=3.0,
                           texture=slab_tex)
        surfaces.append(slab)
        offsets = (0.0, 0.06, -0.06, -0.05, 0.05, 0.07, -0.07)[:n]
    elif kind == "textureless_patch":
        patch = ConstantPatchTexture(texture, u_range=(-1.6, 1.6),
                                     v_range=(-1.2, 1.2), value=0.5)
        plane = PlaneSurface(point=np.array([0.0, 0.0, _PLANE_Z]),
                             normal=np.array([0.0, 0.0, -1.0]),
                             texture=patch)
        surfaces = [plane]

    return Scene(surfaces=tuple(surfaces), cameras=cams, gains=gains,
                 offsets=offsets, seed=seed)


def write_scene_dir(scene: Scene, out_dir: str | Path,
                    num_depths: int = _NUM_DEPTHS) -> None:
    """Write a scene in the pipeline input layout.

    images/NNNN.png, cams/NNNN_cam.txt, gt_depths/NNNN.pfm, and per-view
    co-visibility masks covis/NNNN_viewMMMM.png (255 = co-visible).
    """
    out = Path(out_dir)
    for sub in ("images", "cams", "gt_depths", "covis"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, cam in enumerate(scene.cameras):
        res = render(scene, i)
        save_image(out / "images" / f"{i:04d}.png", res.image)
        save_camera(out / "cams" / f"{i:04d}_cam.txt", cam, num_depths=num_depths)
        write_pfm(out / "gt_depths" / f"{i:04d}.pfm", res.depth)
        for j in range(len(scene.cameras)):
            if j == i:
                continue
            save_image(out / "covis" / f"{i:04d}_view{j:04d}.png",
                       res.covisible[j].astype(np.float64))
