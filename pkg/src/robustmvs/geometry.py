"""Pinhole cameras, rigid transforms, and depth-parameterized pixel warps.

Conventions used throughout the package:

* pixel centers sit at integer coordinates (pixel (0, 0) is centered at 0.0, 0.0);
* depth is the z coordinate in the camera frame, not the ray length;
* extrinsics map world coordinates to camera coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

# Points with a view-frame depth at or below this are degenerate projections and
# are reported invalid instead of being clamped.
MIN_VIEW_DEPTH = 1e-9


class PixelCoord(NamedTuple):
    """Continuous pixel location; ``valid`` is False for degenerate or
    out-of-bounds projections."""

    x: float
    y: float
    valid: bool = True


class CameraFileError(ValueError):
    """Raised for malformed camera text files; message carries file and line."""


@dataclass(frozen=True)
class Camera:
    """One calibrated view: intrinsics, world-to-camera extrinsics, depth range.

    Attributes:
        intrinsics: 3x3 upper-triangular matrix in pixels, K[2,2] == 1.
        extrinsics: 4x4 rigid world-to-camera transform.
        depth_min: near end of the usable depth range (scene units).
        depth_max: far end of the usable depth range.
        width: image width in pixels.
        height: image height in pixels.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    depth_min: float
    depth_max: float
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        T = np.asarray(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {K.shape}")
        if T.shape != (4, 4):
            raise ValueError(f"extrinsics must be 4x4, got {T.shape}")
        if not np.all(np.isfinite(K)) or not np.all(np.isfinite(T)):
            raise ValueError("camera matrices must be finite")
        if abs(K[2, 2] - 1.0) > 1e-12:
            raise ValueError(f"K[2,2] must be 1, got {K[2, 2]}")
        if np.max(np.abs(K[[1, 2, 2], [0, 0, 1]])) > 1e-12:
            raise ValueError("intrinsics must be upper triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        R = T[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise ValueError("rotation block of extrinsics is not orthonormal")
        if np.max(np.abs(T[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-12:
            raise ValueError("last extrinsics row must be [0 0 0 1]")
        if not (0.0 < self.depth_min < self.depth_max):
            raise ValueError(
                f"need 0 < depth_min < depth_max, got [{self.depth_min}, {self.depth_max}]"
            )
        if self.width < 2 or self.height < 2:
            raise ValueError("image dimensions must be at least 2x2")
        K = K.copy()
        T = T.copy()
        K.flags.writeable = False
        T.flags.writeable = False
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def optical_axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera frame) in world coordinates."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def project(self, points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project (N, 3) world points; returns (N, 2) pixels and (N,) depths."""
        pts = np.atleast_2d(np.asarray(points_world, dtype=np.float64))
        cam = pts @ self.rotation.T + self.translation
        z = cam[:, 2]
        q = cam @ self.intrinsics.T
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = q[:, :2] / q[:, 2:3]
        return uv, z

    def backproject(self, pixels: np.ndarray, depths: np.ndarray) -> np.ndarray:
        """Lift (N, 2) pixels at (N,) camera-frame depths to world points."""
        uv = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        d = np.asarray(depths, dtype=np.float64).reshape(-1)
        ones = np.ones((uv.shape[0], 1))
        rays = np.concatenate([uv, ones], axis=1) @ np.linalg.inv(self.intrinsics).T
        cam = rays * d[:, None]
        return (cam - self.translation) @ self.rotation


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    """Invert a 4x4 rigid transform without a general matrix inverse."""
    R = T[:3, :3]
    t = T[:3, 3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ t
    return out


def relative_transform(cam_src: Camera, cam_view: Camera) -> np.ndarray:
    """Transform taking source-camera coordinates to view-camera coordinates."""
    return cam_view.extrinsics @ rigid_inverse(cam_src.extrinsics)


def warp_points(
    uv: np.ndarray,
    depths: np.ndarray,
    cam_src: Camera,
    cam_view: Camera,
    with_jacobian: bool = False,
) -> tuple[np.ndarray, ...]:
    """Warp source pixels at given depths into the view image.

    Back-projects each pixel to a 3D point at its depth in the source frame,
    maps it into the view frame and projects with the view intrinsics.

    Args:
        uv: (N, 2) continuous source pixel coordinates.
        depths: (N,) source-frame depths.
        cam_src: source camera.
        cam_view: view camera.
        with_jacobian: also return d(warped coords)/d(depth).

    Returns:
        (coords (N, 2), view_depth (N,), valid (N,)) and, when requested,
        the per-pixel depth jacobian (N, 2). ``valid`` is False where the
        source depth is non-positive, the point lands at or behind the view
        image plane, or the projection falls outside the view bounds.
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    rel = relative_transform(cam_src, cam_view)
    K_inv = np.linalg.inv(cam_src.intrinsics)
    KR = cam_view.intrinsics @ rel[:3, :3] @ K_inv
    Kt = cam_view.intrinsics @ rel[:3, 3]

    ones = np.ones((uv.shape[0], 1))
    homo = np.concatenate([uv, ones], axis=1)
    a = homo @ KR.T                       # (N, 3), direction term linear in depth
    q = a * d[:, None] + Kt               # projective coordinates
    z = q[:, 2]
    safe = np.abs(z) > MIN_VIEW_DEPTH
    z_div = np.where(safe, z, 1.0)
    coords = q[:, :2] / z_div[:, None]
    # view-frame depth is the third projective coordinate only when K[2] = (0,0,1)
    view_depth = z.copy()

    valid = (d > 0) & (z > MIN_VIEW_DEPTH)
    valid &= (coords[:, 0] >= 0.0) & (coords[:, 0] <= cam_view.width - 1.0)
    valid &= (coords[:, 1] >= 0.0) & (coords[:, 1] <= cam_view.height - 1.0)
    coords = np.where(safe[:, None], coords, 0.0)

    if not with_jacobian:
        return coords, view_depth, valid
    # x = (d*a0 + b0)/(d*a2 + b2) => dx/dd = (a0*b2 - a2*b0)/z^2
    num_x = a[:, 0] * Kt[2] - a[:, 2] * Kt[0]
    num_y = a[:, 1] * Kt[2] - a[:, 2] * Kt[1]
    jac = np.stack([num_x, num_y], axis=1) / np.where(safe, z * z, 1.0)[:, None]
    jac = np.where(safe[:, None], jac, 0.0)
    return coords, view_depth, valid, jac


def warp_pixel(
    u: PixelCoord | tuple[float, float],
    depth: float,
    cam_src: Camera,
    cam_view: Camera,
) -> PixelCoord:
    """Warp a single source pixel at the given depth into the view image."""
    x, y = float(u[0]), float(u[1])
    coords, _, valid = warp_points(
        np.array([[x, y]]), np.array([depth]), cam_src, cam_view
    )
    return PixelCoord(float(coords[0, 0]), float(coords[0, 1]), bool(valid[0]))


def homography_for_depth(cam_src: Camera, cam_view: Camera, depth: float) -> np.ndarray:
    """Plane-induced homography for the fronto-parallel source plane at ``depth``.

    Agrees with warp_pixel for every pixel whose back-projection lies on the
    plane z = depth in the source frame.
    """
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    rel = relative_transform(cam_src, cam_view)
    R = rel[:3, :3]
    t = rel[:3, 3]
    n = np.array([0.0, 0.0, 1.0])
    H = cam_view.intrinsics @ (R + np.outer(t, n) / depth) @ np.linalg.inv(
        cam_src.intrinsics
    )
    return H


def apply_homography(
    H: np.ndarray, uv: np.ndarray, cam_view: Camera
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map (N, 2) pixels through a homography; returns coords, depth, validity."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    ones = np.ones((uv.shape[0], 1))
    q = np.concatenate([uv, ones], axis=1) @ H.T
    z = q[:, 2]
    safe = np.abs(z) > MIN_VIEW_DEPTH
    coords = q[:, :2] / np.where(safe, z, 1.0)[:, None]
    valid = (z > MIN_VIEW_DEPTH)
    valid &= (coords[:, 0] >= 0.0) & (coords[:, 0] <= cam_view.width - 1.0)
    valid &= (coords[:, 1] >= 0.0) & (coords[:, 1] <= cam_view.height - 1.0)
    coords = np.where(safe[:, None], coords, 0.0)
    return coords, z, valid


def baseline_angle(cam_ref: Camera, cam_other: Camera) -> float:
    """Triangulation angle in degrees at the reference mid-depth point."""
    mid = 0.5 * (cam_ref.depth_min + cam_ref.depth_max)
    target = cam_ref.center() + mid * cam_ref.optical_axis()
    v1 = cam_ref.center() - target
    v2 = cam_other.center() - target
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        return 0.0
    cosang = np.clip(np.dot(v1, v2) / (n1 * n2), -1.0, 1.0)
    return math.degrees(math.acos(cosang))


def pixel_grid(width: int, height: int) -> np.ndarray:
    """(H*W, 2) row-major grid of integer pixel centers as floats."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


# --- camera text files (MVSNet-style) --------------------------------------
#
# extrinsic
# <4 rows x 4 floats>
#
# intrinsic
# <3 rows x 3 floats>
#
# <depth_min> <depth_interval>
#
# The file stores the hypothesis spacing, not the far depth, so loading needs
# the hypothesis count to reconstruct depth_max.


def load_camera(
    path: str | Path,
    width: int,
    height: int,
    num_depths: int = 128,
) -> Camera:
    """Parse a camera text file; image size comes from the paired image."""
    path = Path(path)
    lines = path.read_text().splitlines()

    def fail(lineno: int, msg: str):
        raise CameraFileError(f"{path}:{lineno}: {msg}")

    idx = 0

    def next_content() -> tuple[int, str]:
        nonlocal idx
        while idx < len(lines):
            line = lines[idx].strip()
            idx += 1
            if line:
                return idx, line
        fail(len(lines), "unexpected end of file")

    def read_matrix(rows: int, cols: int, label: str) -> np.ndarray:
        lineno, line = next_content()
        if line.lower() != label:
            fail(lineno, f"expected '{label}', got '{line}'")
        out = np.zeros((rows, cols))
        for r in range(rows):
            lineno, line = next_content()
            parts = line.split()
            if len(parts) != cols:
                fail(lineno, f"expected {cols} values in {label} row {r}, got {len(parts)}")
            try:
                out[r] = [float(p) for p in parts]
            except ValueError:
                fail(lineno, f"non-numeric value in {label} row {r}")
        return out

    extrinsic = read_matrix(4, 4, "extrinsic")
    intrinsic = read_matrix(3, 3, "intrinsic")
    lineno, line = next_content()
    parts = line.split()
    if len(parts) < 2:
        fail(lineno, "expected 'depth_min depth_interval'")
    try:
        depth_min = float(parts[0])
        depth_interval = float(parts[1])
    except ValueError:
        fail(lineno, "non-numeric depth range")
    if depth_interval <= 0:
        fail(lineno, f"depth_interval must be positive, got {depth_interval}")
    depth_max = depth_min + depth_interval * (num_depths - 1)
    try:
        return Camera(intrinsic, extrinsic, depth_min, depth_max, width, height)
    except ValueError as exc:
        raise CameraFileError(f"{path}: {exc}") from exc


def save_camera(path: str | Path, cam: Camera, num_depths: int = 128) -> None:
    """Write a camera text file; depth interval is derived from the range."""
    interval = (cam.depth_max - cam.depth_min) / (num_depths - 1)
    rows = ["extrinsic"]
    rows += [" ".join(format(v, ".17g") for v in row) for row in cam.extrinsics]
    rows += ["", "intrinsic"]
    rows += [" ".join(format(v, ".17g") for v in row) for row in cam.intrinsics]
    rows += ["", f"{cam.depth_min:.17g} {interval:.17g}", ""]
    Path(path).write_text("\n".join(rows))


def depth_hypotheses(cam: Camera, num_depths: int) -> np.ndarray:
    """Uniformly spaced depth hypotheses covering the camera depth range."""
    if num_depths < 2:
        raise ValueError("need at least 2 depth hypotheses")
    return np.linspace(cam.depth_min, cam.depth_max, num_depths)
