"""Geometric-consistency filtering and fusion of depth maps into a point cloud.

A reference pixel survives when enough other views agree with its estimate
after reprojection; mutually consistent estimates are averaged in 3D and
every source pixel contributes to at most one fused point.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Camera, pixel_grid, warp_points


@dataclass(frozen=True)
class FusionConfig:
    depth_tolerance: float = 0.01        # relative depth agreement
    reprojection_tolerance: float = 1.0  # pixels
    min_consistent_views: int = 3

    def __post_init__(self):
        if self.depth_tolerance <= 0 or self.reprojection_tolerance <= 0:
            raise ValueError("fusion tolerances must be positive")
        if self.min_consistent_views < 1:
            raise ValueError("min_consistent_views must be at least 1")


@dataclass
class PointCloud:
    """Fused 3D points with per-point color and supporting-view count."""

    points: np.ndarray   # (N, 3) float64 world coordinates
    colors: np.ndarray   # (N, 3) uint8
    support: np.ndarray  # (N,) int64, views contributing incl. the reference

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        self.support = np.asarray(self.support, dtype=np.int64).reshape(-1)
        if not (len(self.points) == len(self.colors) == len(self.support)):
            raise ValueError("points, colors, and support lengths differ")
        if len(self.points) and not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class FusionStats:
    input_pixels: int = 0
    filtered_low_confidence: int = 0
    skipped_consumed: int = 0
    rejected_inconsistent: int = 0
    fused_points: int = 0
    consumed_view_pixels: int = 0
    per_view_points: dict = field(default_factory=dict)
    # per-view (H, W) masks of pixels whose estimate entered some fused point
    contributed: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"input_pixels = {self.input_pixels}",
            f"filtered_low_confidence = {self.filtered_low_confidence}",
            f"skipped_consumed = {self.skipped_consumed}",
            f"rejected_inconsistent = {self.rejected_inconsistent}",
            f"fused_points = {self.fused_points}",
            f"consumed_view_pixels = {self.consumed_view_pixels}",
        ]
        for view, n in sorted(self.per_view_points.items()):
            out.append(f"points_from_view_{view:04d} = {n}")
        return out


def _image_colors(image: np.ndarray | None, flat_idx: np.ndarray, n_pixels: int) -> np.ndarray:
    if image is None:
        return np.full((flat_idx.size, 3), 128, dtype=np.uint8)
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    flat = np.clip(np.round(img.reshape(n_pixels, 3) * 255.0), 0, 255).astype(np.uint8)
    return flat[flat_idx]


def backproject(
    depth: np.ndarray,
    cam: Camera,
    image: np.ndarray | None = None,
) -> PointCloud:
    """Lift every valid depth pixel to a world-space point with its color."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise ValueError(
            f"depth shape {depth.shape} does not match camera "
            f"({cam.height}, {cam.width})"
        )
    flat = depth.ravel()
    valid = np.flatnonzero(flat > 0)
    grid = pixel_grid(cam.width, cam.height)
    points = cam.backproject(grid[valid], flat[valid])
    colors = _image_colors(image, valid, flat.size)
    return PointCloud(points=points, colors=colors,
                      support=np.ones(valid.size, dtype=np.int64))


def _match_view(
    depth_ref: np.ndarray,
    depth_view: np.ndarray,
    cam_ref: Camera,
    cam_view: Camera,
    cfg: FusionConfig,
):
    """Per-pixel agreement of the reference depth with one other view.

    Returns (consistent (N,) bool, view pixel linear index (N,), view 3D
    estimate (N, 3)); the estimate row is only meaningful where consistent.
    """
    h, w = depth_ref.shape
    n = h * w
    grid = pixel_grid(w, h)
    flat_ref = depth_ref.ravel()
    coords, _, valid = warp_points(grid, flat_ref, cam_ref, cam_view)

    px = np.clip(np.round(coords[:, 0]).astype(np.int64), 0, cam_view.width - 1)
    py = np.clip(np.round(coords[:, 1]).astype(np.int64), 0, cam_view.height - 1)
    lin = py * cam_view.width + px
    d_view = depth_view.ravel()[lin]
    ok = valid & (flat_ref > 0) & (d_view > 0)

    view_pix = np.stack([px, py], axis=1).astype(np.float64)
    est = cam_view.backproject(view_pix, d_view)
    uv_back, z_back = cam_ref.project(est)
    reproj_err = np.linalg.norm(uv_back - grid, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_depth = np.abs(z_back - flat_ref) / np.where(flat_ref > 0, flat_ref, 1.0)
    consistent = (
        ok
        & (z_back > 0)
        & (reproj_err < cfg.reprojection_tolerance)
        & (rel_depth < cfg.depth_tolerance)
    )
    return consistent, lin, est


def consistency_check(
    depth_ref: np.ndarray,
    depth_view: np.ndarray,
    cam_ref: Camera,
    cam_view: Camera,
    cfg: FusionConfig,
) -> np.ndarray:
    """Boolean (H, W) mask of reference pixels consistent with the view.

    A pixel passes when its forward warp lands on a valid view pixel, the
    view's estimate reprojects into the reference within the pixel tolerance,
    and the relative depth difference stays below the depth tolerance.
    """
    consistent, _, _ = _match_view(depth_ref, depth_view, cam_ref, cam_view, cfg)
    return consistent.reshape(depth_ref.shape)


def fuse(
    depth_maps: Sequence[np.ndarray],
    cameras: Sequence[Camera],
    images: Sequence[np.ndarray] | None,
    cfg: FusionConfig,
    confidences: Sequence[np.ndarray] | None = None,
    confidence_threshold: float = 0.8,
) -> tuple[PointCloud, FusionStats]:
    """Fuse per-view depth maps into one point cloud.

    Reference views are processed in input order; each unconsumed pixel that
    is consistent with enough other views is merged with those views'
    estimates (3D average), consuming the matched view pixels. The required
    number of consistent views is capped at the number of other views so a
    single depth map degenerates to plain back-projection.
    """
    n_views = len(depth_maps)
    if n_views == 0:
        raise ValueError("fuse needs at least one depth map")
    if len(cameras) != n_views:
        raise ValueError("one camera per depth map required")
    if images is not None and len(images) != n_views:
        raise ValueError("one image per depth map required")
    if confidences is not None and len(confidences) != n_views:
        raise ValueError("one confidence map per depth map required")

    required = min(cfg.min_consistent_views, n_views - 1)
    stats = FusionStats()
    usable = []
    for v in range(n_views):
        depth = np.asarray(depth_maps[v], dtype=np.float64)
        ok = depth > 0
        stats.input_pixels += int(ok.sum())
        if confidences is not None:
            passed = np.asarray(confidences[v]) >= confidence_threshold
            stats.filtered_low_confidence += int((ok & ~passed).sum())
            ok = ok & passed
        usable.append(ok)

    consumed = [np.zeros(d.size, dtype=bool) for d in depth_maps]
    contributed = [np.zeros(d.shape, dtype=bool) for d in depth_maps]
    stats.contributed = contributed
    points_out = []
    colors_out = []
    support_out = []

    for r in range(n_views):
        depth_ref = np.asarray(depth_maps[r], dtype=np.float64)
        h, w = depth_ref.shape
        n = h * w
        ref_ok = usable[r].ravel() & ~consumed[r]
        stats.skipped_consumed += int((usable[r].ravel() & consumed[r]).sum())
        if not np.any(ref_ok):
            continue

        counts = np.zeros(n, dtype=np.int64)
        merge_count = np.zeros(n, dtype=np.int64)
        sums = np.zeros((n, 3))
        matches = []
        for v in range(n_views):
            if v == r:
                continue
            depth_v = np.where(usable[v], np.asarray(depth_maps[v], dtype=np.float64), 0.0)
            consistent, lin, est = _match_view(depth_ref, depth_v, cameras[r], cameras[v], cfg)
            consistent &= ref_ok
            # consistent views always vote; their estimates are merged only
            # while the matched view pixel is still unconsumed, and each view
            # pixel may be merged into one reference pixel (first row-major)
            counts += consistent
            mergeable = consistent & ~consumed[v][lin]
            cand = np.flatnonzero(mergeable)
            if cand.size:
                _, first = np.unique(lin[cand], return_index=True)
                keep = cand[np.sort(first)]
                drop = np.setdiff1d(cand, keep, assume_unique=True)
                mergeable[drop] = False
            merge_count += mergeable
            sums += np.where(mergeable[:, None], est, 0.0)
            matches.append((v, mergeable, lin))

        fuse_mask = ref_ok & (counts >= required)
        stats.rejected_inconsistent += int((ref_ok & (counts < required)).sum())
        idx = np.flatnonzero(fuse_mask)
        if idx.size == 0:
            continue
        grid = pixel_grid(w, h)
        ref_pts = cameras[r].backproject(grid[idx], depth_ref.ravel()[idx])
        merged = (ref_pts + sums[idx]) / (merge_count[idx] + 1.0)[:, None]
        img_r = images[r] if images is not None else None
        colors = _image_colors(img_r, idx, n)
        points_out.append(merged)
        colors_out.append(colors)
        support_out.append(counts[idx] + 1)
        stats.per_view_points[r] = idx.size
        stats.fused_points += idx.size

        consumed[r][idx] = True
        contributed[r].ravel()[idx] = True
        for v, mergeable, lin in matches:
            used = mergeable & fuse_mask
            consumed[v][lin[used]] = True
            contributed[v].ravel()[lin[used]] = True
            stats.consumed_view_pixels += int(used.sum())

    if points_out:
        cloud = PointCloud(
            points=np.concatenate(points_out),
            colors=np.concatenate(colors_out),
            support=np.concatenate(support_out),
        )
    else:
        cloud = PointCloud(
            points=np.zeros((0, 3)),
            colors=np.zeros((0, 3), dtype=np.uint8),
            support=np.zeros(0, dtype=np.int64),
        )
    return cloud, stats


# --- PLY I/O ------------------------------------------------------------------

_PLY_PROPS = b"""property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
property uchar support
"""


def save_ply(path: str | Path, cloud: PointCloud, ascii_format: bool = False) -> None:
    """Write the cloud as PLY: float32 xyz, uint8 rgb, uint8 support."""
    n = len(cloud)
    support = np.clip(cloud.support, 0, 255).astype(np.uint8)
    fmt = b"ascii 1.0" if ascii_format else b"binary_little_endian 1.0"
    header = b"ply\nformat " + fmt + b"\n"
    header += f"element vertex {n}\n".encode("ascii")
    header += _PLY_PROPS + b"end_header\n"
    with open(Path(path), "wb") as f:
        f.write(header)
        if ascii_format:
            for i in range(n):
                x, y, z = (format(float(v), ".9g") for v in cloud.points[i].astype(np.float32))
                r, g, b = (int(v) for v in cloud.colors[i])
                f.write(f"{x} {y} {z} {r} {g} {b} {int(support[i])}\n".encode("ascii"))
        else:
            rec = np.zeros(
                n,
                dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                       ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                       ("support", "u1")],
            )
            rec["x"] = cloud.points[:, 0]
            rec["y"] = cloud.points[:, 1]
            rec["z"] = cloud.points[:, 2]
            rec["red"] = cloud.colors[:, 0]
            rec["green"] = cloud.colors[:, 1]
            rec["blue"] = cloud.colors[:, 2]
            rec["support"] = support
            rec.tofile(f)


def load_ply(path: str | Path) -> PointCloud:
    """Read a PLY vertex cloud written by save_ply (or any x/y/z cloud)."""
    path = Path(path)
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: unterminated PLY header")
            tokens = line.decode("ascii", errors="replace").strip().split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                props.append((tokens[1], tokens[2]))
            elif tokens[0] == "end_header":
                break
        if fmt is None or n_vertex is None:
            raise ValueError(f"{path}: malformed PLY header")
        names = [name for _, name in props]
        for needed in ("x", "y", "z"):
            if needed not in names:
                raise ValueError(f"{path}: PLY misses vertex property '{needed}'")

        type_map = {
            "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
            "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
            "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
            "int32": "<i4", "uint32": "<u4",
        }
        if fmt == "ascii":
            rows = [f.readline().split() for _ in range(n_vertex)]
            data = {
                name: np.array([float(row[i]) for row in rows])
                for i, (_, name) in enumerate(props)
            }
        elif fmt == "binary_little_endian":
            dtype = np.dtype([(name, type_map[t]) for t, name in props])
            rec = np.fromfile(f, dtype=dtype, count=n_vertex)
            if rec.size != n_vertex:
                raise ValueError(f"{path}: truncated PLY payload")
            data = {name: rec[name] for _, name in props}
        else:
            raise ValueError(f"{path}: unsupported PLY format '{fmt}'")

    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    if all(c in data for c in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.uint8)
    else:
        colors = np.full((n_vertex, 3), 128, dtype=np.uint8)
    support = data.get("support", np.ones(n_vertex)).astype(np.int64)
    return PointCloud(points=points, colors=colors, support=support)
