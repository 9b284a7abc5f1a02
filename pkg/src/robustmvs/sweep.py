"""Non-learned plane-sweep depth solver.

Builds a cost volume from the first-order photometric cost (or the naive
absolute difference, or a variance metric), extracts depth by soft-argmin,
scores estimates by probability mass near the chosen depth, and offers
gradient-descent refinement of depth maps through the differentiable loss.

Depth maps are (H, W) float arrays; pixels with no usable estimate carry 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import Camera, pixel_grid, rigid_inverse
from .imaging import bilinear_sample_many, image_gradient
from .loss import LossConfig, huber, loss_gradient, rank_views, total_loss

logger = logging.getLogger(__name__)

# cost assigned to cells where no view provides a valid sample
SENTINEL_COST = 1e6

# auto temperature = this fraction of the median positive cost; small enough
# that clearly wrong hypotheses get negligible probability mass
TEMPERATURE_FRACTION = 1.0 / 16.0

AGGREGATION_MODES = ("topk", "variance")
COST_KINDS = ("first_order", "naive")


@dataclass(frozen=True)
class CostVolume:
    """Matching cost per pixel and depth hypothesis."""

    depths: np.ndarray        # (D,) strictly increasing hypothesis depths
    cost: np.ndarray          # (H, W, D) finite, >= 0
    valid_counts: np.ndarray  # (H, W, D) uint8 views contributing per cell

    def __post_init__(self):
        d = np.asarray(self.depths, dtype=np.float64)
        if d.ndim != 1 or d.size < 2:
            raise ValueError("need at least 2 depth hypotheses")
        if np.any(np.diff(d) <= 0):
            raise ValueError("depth hypotheses must be strictly increasing")
        if self.cost.shape[:2] + (d.size,) != self.cost.shape or self.cost.ndim != 3:
            raise ValueError("cost must be (H, W, D)")

    @property
    def num_depths(self) -> int:
        return self.depths.size


@dataclass(frozen=True)
class ConfidenceMap:
    """Probability mass near the estimated depth, with the threshold verdict."""

    confidence: np.ndarray  # (H, W) in [0, 1]
    passed: np.ndarray      # (H, W) bool, False where filtered out
    threshold: float


def select_views(
    cameras: Sequence[Camera],
    reference: int,
    n: int,
    target_angle: float = 10.0,
) -> list[int]:
    """Rank the other views by triangulation quality and return the best n.

    Views are ordered by closeness of their baseline angle (at the reference
    mid-depth point) to the target angle, ties toward the smaller baseline.
    Returns all other views with a warning when fewer than n exist.
    """
    if not 0 <= reference < len(cameras):
        raise ValueError(f"reference index {reference} out of range")
    others = [i for i in range(len(cameras)) if i != reference]
    if n > len(others):
        logger.warning(
            "requested %d views but only %d available from reference %d",
            n, len(others), reference,
        )
        n = len(others)
    ranked = rank_views(cameras[reference], [cameras[i] for i in others], target_angle)
    return [others[i] for i in ranked[:n]]


def _view_warp_coeffs(cam_ref: Camera, cam_view: Camera, grid: np.ndarray):
    """Per-pixel linear projective coefficients: q(d) = d * a + b."""
    rel = cam_view.extrinsics @ rigid_inverse(cam_ref.extrinsics)
    KR = cam_view.intrinsics @ rel[:3, :3] @ np.linalg.inv(cam_ref.intrinsics)
    Kt = cam_view.intrinsics @ rel[:3, 3]
    ones = np.ones((grid.shape[0], 1))
    a = np.concatenate([grid, ones], axis=1) @ KR.T
    return a, Kt


def _cost_map(
    ref_img: np.ndarray,
    warped: np.ndarray,
    valid: np.ndarray,
    cost_kind: str,
    cfg: LossConfig,
    h: int,
    w: int,
) -> np.ndarray:
    shape = (h, w) if ref_img.ndim == 2 else (h, w, ref_img.shape[2])
    wimg = warped.reshape(shape)
    if cost_kind == "naive":
        per_channel = np.abs(ref_img - wimg)
    else:
        g_ref = image_gradient(ref_img)
        g_wrp = image_gradient(wimg)
        per_channel = (
            huber(ref_img - wimg, cfg.huber_delta)
            + np.abs(g_ref.gx - g_wrp.gx)
            + np.abs(g_ref.gy - g_wrp.gy)
        )
    cmap = per_channel if per_channel.ndim == 2 else per_channel.mean(axis=2)
    return cmap * valid.reshape(h, w)


def _smooth_support(cost: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    """Average the per-view cost over a square support window of valid pixels."""
    num = uniform_filter(cost, size=window, mode="constant", cval=0.0)
    den = uniform_filter(valid.astype(np.float64), size=window, mode="constant", cval=0.0)
    return np.where(den > 0, num / np.maximum(den, 1e-12), 0.0)


def build_cost_volume_multi_k(
    ref_img: np.ndarray,
    views: Sequence[tuple[np.ndarray, Camera]],
    cam_ref: Camera,
    hypotheses: np.ndarray,
    cfg: LossConfig,
    k_values: Sequence[int],
    aggregation: str = "topk",
    cost_kind: str = "first_order",
    support_window: int = 3,
) -> dict[int, CostVolume]:
    """Build cost volumes for several top-K settings in one sweep.

    The per-view warped cost maps are computed once per hypothesis and
    aggregated for every requested K, which is what the K-sweep ablation
    needs. Variance aggregation ignores k_values and uses key 0.
    """
    if aggregation not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation '{aggregation}'")
    if cost_kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind '{cost_kind}'")
    depths = np.asarray(hypotheses, dtype=np.float64)
    if depths.ndim != 1 or depths.size < 2:
        raise ValueError("need at least 2 depth hypotheses")
    if np.any(np.diff(depths) <= 0):
        raise ValueError("hypotheses must be strictly increasing")
    h, w = cam_ref.height, cam_ref.width
    if ref_img.shape[:2] != (h, w):
        raise ValueError("reference image does not match reference camera size")
    n_views = len(views)
    if n_views < 1:
        raise ValueError("need at least one view")

    grid = pixel_grid(w, h)
    coeffs = [_view_warp_coeffs(cam_ref, cam, grid) for _, cam in views]
    d_count = depths.size
    keys = [0] if aggregation == "variance" else sorted(set(int(k) for k in k_values))
    if aggregation == "topk":
        for k in keys:
            if not 1 <= k <= n_views:
                raise ValueError(f"K={k} outside 1..{n_views}")

    out_cost = {k: np.empty((h, w, d_count)) for k in keys}
    counts = np.empty((h, w, d_count), dtype=np.uint8)
    per_view_cost = np.empty((n_views, h * w))
    per_view_valid = np.empty((n_views, h * w), dtype=bool)
    per_view_warp = np.empty((n_views, h * w) + (() if ref_img.ndim == 2 else (ref_img.shape[2],)))

    for di, d in enumerate(depths):
        for m, ((img, cam), (a, kt)) in enumerate(zip(views, coeffs)):
            q = a * d + kt
            z = q[:, 2]
            safe = z > 1e-9
            coords = q[:, :2] / np.where(safe, z, 1.0)[:, None]
            values, valid = bilinear_sample_many(img, coords, safe)
            per_view_valid[m] = valid
            per_view_warp[m] = values
            per_view_cost[m] = _cost_map(
                ref_img, values, valid, cost_kind, cfg, h, w
            ).ravel()
        if support_window > 1:
            for m in range(n_views):
                sm = _smooth_support(
                    per_view_cost[m].reshape(h, w),
                    per_view_valid[m].reshape(h, w),
                    support_window,
                )
                per_view_cost[m] = sm.ravel()
        n_valid = per_view_valid.sum(axis=0)
        counts[:, :, di] = n_valid.reshape(h, w).astype(np.uint8)
        if aggregation == "variance":
            ref_flat = ref_img.reshape(h * w, -1) if ref_img.ndim == 3 else ref_img.reshape(h * w, 1)
            warp_flat = per_view_warp.reshape(n_views, h * w, -1)
            vmask = per_view_valid[:, :, None]
            total_n = n_valid[:, None] + 1.0  # reference always contributes
            mean = (np.where(vmask, warp_flat, 0.0).sum(axis=0) + ref_flat) / total_n
            sq = np.where(vmask, (warp_flat - mean[None]) ** 2, 0.0).sum(axis=0)
            sq += (ref_flat - mean) ** 2
            var = (sq / total_n).mean(axis=1)
            cell = np.where(n_valid > 0, var, SENTINEL_COST)
            out_cost[0][:, :, di] = cell.reshape(h, w)
        else:
            costs_inf = np.where(per_view_valid, per_view_cost, np.inf)
            costs_sorted = np.sort(costs_inf, axis=0)
            cums = np.cumsum(np.where(np.isfinite(costs_sorted), costs_sorted, 0.0), axis=0)
            for k in keys:
                take = np.minimum(k, n_valid)
                cell = np.where(
                    take > 0,
                    np.take_along_axis(cums, np.maximum(take - 1, 0)[None, :], axis=0)[0],
                    SENTINEL_COST,
                )
                out_cost[k][:, :, di] = cell.reshape(h, w)

    return {
        k: CostVolume(depths=depths, cost=out_cost[k], valid_counts=counts)
        for k in keys
    }


def build_cost_volume(
    ref_img: np.ndarray,
    views: Sequence[tuple[np.ndarray, Camera]],
    cam_ref: Camera,
    hypotheses: np.ndarray,
    cfg: LossConfig,
    aggregation: str = "topk",
    cost_kind: str = "first_order",
    support_window: int = 3,
) -> CostVolume:
    """Plane-sweep cost volume: warp every view at every hypothesis depth and
    aggregate the per-view matching costs per pixel (top-K by default)."""
    k = min(cfg.K, len(views))
    volumes = build_cost_volume_multi_k(
        ref_img, views, cam_ref, hypotheses, cfg,
        k_values=[k], aggregation=aggregation, cost_kind=cost_kind,
        support_window=support_window,
    )
    return volumes[0 if aggregation == "variance" else k]


def auto_temperature(volume: CostVolume) -> float:
    """Data-driven softmax temperature from the cost scale of the volume."""
    cost = volume.cost
    positive = cost[(cost > 0) & (cost < SENTINEL_COST)]
    if positive.size == 0:
        return 1.0
    med = float(np.median(positive))
    return max(med * TEMPERATURE_FRACTION, 1e-12)


def soft_argmin_depth(
    volume: CostVolume,
    temperature: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Probability-weighted expected depth along the hypothesis axis.

    Returns the depth map and the per-pixel probability volume. Pixels whose
    every cell is the no-view sentinel get depth 0 and zero probabilities.
    """
    tau = auto_temperature(volume) if temperature is None else float(temperature)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    cost = volume.cost
    usable = cost < SENTINEL_COST
    any_usable = usable.any(axis=2)
    cmin = np.where(any_usable, np.min(np.where(usable, cost, np.inf), axis=2), 0.0)
    with np.errstate(under="ignore"):
        p = np.exp(-(cost - cmin[:, :, None]) / tau)
    p = np.where(usable, p, 0.0)
    norm = p.sum(axis=2)
    safe_norm = np.where(norm > 0, norm, 1.0)
    p = p / safe_norm[:, :, None]
    depth = (p * volume.depths[None, None, :]).sum(axis=2)
    depth = np.where(any_usable & (norm > 0), depth, 0.0)
    return depth, p


def confidence_map(
    prob: np.ndarray,
    depth: np.ndarray,
    depths: np.ndarray,
    threshold: float = 0.8,
) -> ConfidenceMap:
    """Sum the probabilities of the four hypotheses nearest each estimate.

    Pixels whose mass falls below the threshold, and pixels without a depth
    estimate, are marked filtered (passed=False).
    """
    depths = np.asarray(depths, dtype=np.float64)
    d_count = depths.size
    sums = prob.sum(axis=2)
    has_prob = sums > 1e-6
    if np.any(np.abs(sums[has_prob] - 1.0) > 1e-6):
        raise ValueError("probability volume is not normalized per pixel")
    dist = np.abs(depths[None, None, :] - depth[:, :, None])
    nearest = np.argsort(dist, axis=2, kind="stable")[:, :, : min(4, d_count)]
    conf = np.take_along_axis(prob, nearest, axis=2).sum(axis=2)
    conf = np.where(has_prob & (depth > 0), np.clip(conf, 0.0, 1.0), 0.0)
    return ConfidenceMap(confidence=conf, passed=conf >= threshold, threshold=threshold)


def refine_depth_descent(
    ref_img: np.ndarray,
    cam_ref: Camera,
    views: Sequence[tuple[np.ndarray, Camera]],
    initial: np.ndarray,
    cfg: LossConfig,
    steps: int = 0,
    step_size: float = 1.0,
    max_backtracks: int = 12,
) -> np.ndarray:
    """Projected gradient descent on total_loss over the depth map.

    Backtracking line search only ever accepts strict decreases, so the loss
    is monotone non-increasing; depths stay clamped to the camera range and
    invalid pixels (depth 0) are left untouched.
    """
    current = np.asarray(initial, dtype=np.float64).copy()
    if steps <= 0:
        return current
    refinable = current > 0
    current = np.where(
        refinable, np.clip(current, cam_ref.depth_min, cam_ref.depth_max), 0.0
    )
    cur = total_loss(ref_img, cam_ref, views, current, cfg)
    for _ in range(steps):
        grad = loss_gradient(ref_img, cam_ref, views, current, cfg)
        grad = np.where(refinable, grad, 0.0)
        if not np.any(grad):
            break
        scale = step_size
        accepted = False
        for _ in range(max_backtracks):
            cand = np.where(
                refinable,
                np.clip(current - scale * grad, cam_ref.depth_min, cam_ref.depth_max),
                0.0,
            )
            cand_res = total_loss(ref_img, cam_ref, views, cand, cfg)
            if cand_res.total < cur.total:
                current = cand
                cur = cand_res
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
    return current
