"""Robust multi-view photometric loss stack with analytic depth gradients.

Terms: masked absolute-difference (naive) loss, first-order Huber+gradient
consistency maps, per-pixel top-K aggregation over views, windowed SSIM, and
edge-weighted depth smoothness. Every photometric aggregate reports both the
raw sum of contributions and the mean over valid pixel-view contributions;
the weighted total combines the means so its scale is independent of image
resolution and mask coverage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from .geometry import Camera, baseline_angle
from .imaging import (
    WarpedView,
    bilinear_sample_jacobian,
    gradient_adjoint,
    image_gradient,
    warp_view,
)

DEFAULT_VIEW_ANGLE = 10.0  # preferred triangulation angle for view ranking, degrees


@dataclass(frozen=True)
class LossConfig:
    """Weights and hyperparameters of the total loss."""

    alpha: float = 0.8
    beta: float = 0.2
    gamma: float = 0.0067
    M: int = 6
    K: int = 3
    huber_delta: float = 0.2
    ssim_window: int = 3
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2

    def __post_init__(self):
        if not (1 <= self.K <= self.M):
            raise ValueError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd and >= 1")


@dataclass(frozen=True)
class TermResult:
    """Sum and contribution count of one loss term; mean is sum/count."""

    total: float
    count: int

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    @property
    def no_signal(self) -> bool:
        return self.count == 0


@dataclass(frozen=True)
class LossVolume:
    """Per-view first-order loss maps stacked along the last axis (H, W, M)."""

    loss: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.loss.ndim != 3 or self.loss.shape != self.valid.shape:
            raise ValueError("loss and valid must both be (H, W, M)")
        if self.loss.shape[2] < 1:
            raise ValueError("need at least one view")

    @property
    def num_views(self) -> int:
        return self.loss.shape[2]


class TopKResult(NamedTuple):
    """Aggregate of the K best per-pixel view losses.

    ``total`` sums the selected entries (monotone in K); ``count`` is the
    number of selected contributions, so total/count is the mean used in the
    weighted objective. ``selection`` is the (H, W, M) binary pick tensor.
    """

    total: float
    count: int
    selection: np.ndarray

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0


@dataclass(frozen=True)
class TotalLossResult:
    total: float
    photo: TermResult
    ssim: TermResult
    smooth: TermResult
    selection: np.ndarray
    ranking: tuple[int, ...]
    config: LossConfig


def _channel_mean(arr: np.ndarray) -> np.ndarray:
    return arr if arr.ndim == 2 else arr.mean(axis=2)


def _num_channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def huber(e: np.ndarray, delta: float) -> np.ndarray:
    """Quadratic e^2/(2 delta) inside |e| <= delta, |e| - delta/2 outside."""
    a = np.abs(e)
    return np.where(a <= delta, e * e / (2.0 * delta), a - delta / 2.0)


def huber_deriv(e: np.ndarray, delta: float) -> np.ndarray:
    return np.where(np.abs(e) <= delta, e / delta, np.sign(e))


def naive_photometric_loss(
    img_src: np.ndarray,
    warped: Sequence[tuple[np.ndarray, np.ndarray]],
) -> TermResult:
    """Masked absolute intensity difference summed over all views.

    Normalized as a mean over valid pixel-view contributions; color images
    average the per-channel absolute differences first.
    """
    total = 0.0
    count = 0
    for warped_img, mask in warped:
        if warped_img.shape[:2] != img_src.shape[:2]:
            raise ValueError("warped image shape does not match source")
        diff = _channel_mean(np.abs(img_src - warped_img))
        m = np.asarray(mask, dtype=bool)
        total += float(diff[m].sum())
        count += int(m.sum())
    return TermResult(total, count)


def first_order_loss_map(
    img_src: np.ndarray,
    warped_img: np.ndarray,
    mask: np.ndarray,
    cfg: LossConfig,
) -> np.ndarray:
    """Per-pixel Huber intensity difference plus absolute gradient differences.

    The gradient term compares the source gradients against the gradients of
    the warped image, which makes the map insensitive to constant per-view
    brightness offsets.
    """
    if warped_img.shape != img_src.shape:
        raise ValueError(
            f"shape mismatch: source {img_src.shape} vs warped {warped_img.shape}"
        )
    g_src = image_gradient(img_src)
    g_wrp = image_gradient(warped_img)
    per_channel = (
        huber(img_src - warped_img, cfg.huber_delta)
        + np.abs(g_src.gx - g_wrp.gx)
        + np.abs(g_src.gy - g_wrp.gy)
    )
    return _channel_mean(per_channel) * np.asarray(mask, dtype=np.float64)


def build_loss_volume(
    img_src: np.ndarray,
    warped: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: LossConfig,
) -> LossVolume:
    """Stack per-view first-order loss maps into an (H, W, M) volume."""
    maps = []
    valids = []
    for warped_img, mask in warped:
        maps.append(first_order_loss_map(img_src, warped_img, mask, cfg))
        valids.append(np.asarray(mask, dtype=bool))
    return LossVolume(loss=np.stack(maps, axis=2), valid=np.stack(valids, axis=2))


def robust_topk_loss(volume: LossVolume, K: int) -> TopKResult:
    """Sum the K smallest valid per-view losses at every pixel.

    Pixels with fewer than K valid views use all their valid views; pixels
    with none contribute nothing. Ties are broken toward the lower view
    index so results are reproducible.
    """
    M = volume.num_views
    if not 1 <= K <= M:
        raise ValueError(f"need 1 <= K <= M={M}, got K={K}")
    costs = np.where(volume.valid, volume.loss, np.inf)
    order = np.argsort(costs, axis=2, kind="stable")
    take = np.minimum(K, volume.valid.sum(axis=2))
    rank_ok = np.arange(M)[None, None, :] < take[:, :, None]
    sorted_costs = np.take_along_axis(costs, order, axis=2)
    total = float(np.where(rank_ok, sorted_costs, 0.0).sum())
    selection = np.zeros(volume.loss.shape, dtype=np.uint8)
    np.put_along_axis(selection, order, rank_ok.astype(np.uint8), axis=2)
    return TopKResult(total=total, count=int(take.sum()), selection=selection)


def _pool(arr: np.ndarray, window: int) -> np.ndarray:
    # zero-padded average pooling; the operator is symmetric, so it is its own
    # adjoint in the backward pass
    size = (window, window) if arr.ndim == 2 else (window, window, 1)
    return uniform_filter(arr, size=size, mode="constant", cval=0.0)


def ssim(
    patch_x: np.ndarray,
    patch_y: np.ndarray,
    c1: float = 0.01**2,
    c2: float = 0.03**2,
) -> float:
    """Structural similarity of two equally shaped patches (single window)."""
    x = np.asarray(patch_x, dtype=np.float64)
    y = np.asarray(patch_y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"patch shapes differ: {x.shape} vs {y.shape}")
    mu_x = x.mean()
    mu_y = y.mean()
    var_x = (x * x).mean() - mu_x**2
    var_y = (y * y).mean() - mu_y**2
    cov = (x * y).mean() - mu_x * mu_y
    return float(
        (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    )


def ssim_map(
    img_x: np.ndarray,
    img_y: np.ndarray,
    window: int = 3,
    c1: float = 0.01**2,
    c2: float = 0.03**2,
) -> np.ndarray:
    """Per-pixel SSIM with average pooling over a square window."""
    x = np.asarray(img_x, dtype=np.float64)
    y = np.asarray(img_y, dtype=np.float64)
    mu_x = _pool(x, window)
    mu_y = _pool(y, window)
    var_x = _pool(x * x, window) - mu_x**2
    var_y = _pool(y * y, window) - mu_y**2
    cov = _pool(x * y, window) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)
         / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)))
    return _channel_mean(s)


def _ssim_masked(
    img_src: np.ndarray,
    warped: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: LossConfig,
) -> TermResult:
    total = 0.0
    count = 0
    for warped_img, mask in warped:
        s = ssim_map(img_src, warped_img, cfg.ssim_window, cfg.ssim_c1, cfg.ssim_c2)
        m = np.asarray(mask, dtype=bool)
        total += float((1.0 - s)[m].sum())
        count += int(m.sum())
    return TermResult(total, count)


def ssim_loss(
    img_src: np.ndarray,
    warped_pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: LossConfig,
) -> TermResult:
    """Masked mean of 1 - SSIM over exactly two warped views; range [0, 2]."""
    if len(warped_pairs) != 2:
        raise ValueError(f"ssim_loss expects exactly 2 warped views, got {len(warped_pairs)}")
    return _ssim_masked(img_src, warped_pairs, cfg)


def smoothness_loss(depth: np.ndarray, img: np.ndarray) -> TermResult:
    """Edge-weighted mean absolute depth gradient."""
    if depth.shape != img.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match image {img.shape[:2]}")
    gd = image_gradient(depth)
    gi = image_gradient(img)
    wx = np.exp(-_channel_mean(np.abs(gi.gx)))
    wy = np.exp(-_channel_mean(np.abs(gi.gy)))
    value = np.abs(gd.gx) * wx + np.abs(gd.gy) * wy
    return TermResult(float(value.sum()), int(value.size))


def rank_views(
    cam_src: Camera,
    cams: Sequence[Camera],
    target_angle: float = DEFAULT_VIEW_ANGLE,
) -> list[int]:
    """Order views by triangulation quality: closest baseline angle to the
    target at the reference mid-depth point, ties toward the smaller baseline."""
    src_center = cam_src.center()
    scored = []
    for idx, cam in enumerate(cams):
        angle = baseline_angle(cam_src, cam)
        dist = float(np.linalg.norm(cam.center() - src_center))
        scored.append((abs(angle - target_angle), dist, idx))
    scored.sort()
    return [idx for _, _, idx in scored]


def total_loss(
    img_src: np.ndarray,
    cam_src: Camera,
    views: Sequence[tuple[np.ndarray, Camera]],
    depth: np.ndarray,
    cfg: LossConfig,
) -> TotalLossResult:
    """Weighted objective: alpha * top-K photo + beta * SSIM + gamma * smooth.

    Warps every view with the given depth map, aggregates the first-order
    loss volume with the per-pixel top-K rule, and evaluates SSIM on the two
    best-ranked views.
    """
    if not views:
        raise ValueError("total_loss needs at least one view")
    warps = [warp_view(depth, img, cam_src, cam) for img, cam in views]
    pairs = [(w.image, w.mask) for w in warps]
    volume = build_loss_volume(img_src, pairs, cfg)
    k_eff = min(cfg.K, len(views))
    topk = robust_topk_loss(volume, k_eff)
    ranking = tuple(rank_views(cam_src, [cam for _, cam in views]))
    ssim_views = ranking[: min(2, len(views))]
    ssim_term = _ssim_masked(img_src, [pairs[i] for i in ssim_views], cfg)
    smooth = smoothness_loss(depth, img_src)
    photo = TermResult(topk.total, topk.count)
    total = cfg.alpha * photo.mean + cfg.beta * ssim_term.mean + cfg.gamma * smooth.mean
    return TotalLossResult(
        total=float(total),
        photo=photo,
        ssim=ssim_term,
        smooth=smooth,
        selection=topk.selection,
        ranking=ranking,
        config=cfg,
    )


def _photo_backward(
    img_src: np.ndarray,
    warps: Sequence[WarpedView],
    views: Sequence[tuple[np.ndarray, Camera]],
    selection: np.ndarray,
    count: int,
    cfg: LossConfig,
) -> np.ndarray:
    """Gradient of the mean top-K first-order term w.r.t. the depth map."""
    h, w = img_src.shape[:2]
    grad = np.zeros((h, w))
    if count == 0 or cfg.alpha == 0.0:
        return grad
    g_src = image_gradient(img_src)
    channels = _num_channels(img_src)
    for m, warp in enumerate(warps):
        seed = cfg.alpha * selection[:, :, m].astype(np.float64) / (count * channels)
        if not np.any(seed):
            continue
        e = img_src - warp.image
        g_wrp = image_gradient(warp.image)
        dgx = g_src.gx - g_wrp.gx
        dgy = g_src.gy - g_wrp.gy
        seed_c = seed if img_src.ndim == 2 else seed[:, :, None]
        d_warped = -seed_c * huber_deriv(e, cfg.huber_delta)
        d_warped -= gradient_adjoint(seed_c * np.sign(dgx), axis=1)
        d_warped -= gradient_adjoint(seed_c * np.sign(dgy), axis=0)
        grad += _chain_to_depth(d_warped, warp, views[m][0])
    return grad


def _chain_to_depth(
    d_warped: np.ndarray, warp: WarpedView, img_view: np.ndarray
) -> np.ndarray:
    """Map a gradient w.r.t. the warped image to a gradient w.r.t. depth."""
    h, w = warp.mask.shape
    coords = warp.coords.reshape(-1, 2)
    jx, jy = bilinear_sample_jacobian(img_view, coords, warp.mask.ravel())
    jac = warp.coord_depth_jac.reshape(-1, 2)
    if img_view.ndim == 2:
        dval = jx * jac[:, 0] + jy * jac[:, 1]
        return (d_warped.ravel() * dval).reshape(h, w)
    dval = jx * jac[:, 0:1] + jy * jac[:, 1:2]
    return (d_warped.reshape(-1, img_view.shape[2]) * dval).sum(axis=1).reshape(h, w)


def _ssim_backward(
    img_src: np.ndarray,
    warps: Sequence[WarpedView],
    views: Sequence[tuple[np.ndarray, Camera]],
    ssim_view_ids: Sequence[int],
    count: int,
    cfg: LossConfig,
) -> np.ndarray:
    """Gradient of the masked mean (1 - SSIM) term w.r.t. the depth map."""
    h, w = img_src.shape[:2]
    grad = np.zeros((h, w))
    if count == 0 or cfg.beta == 0.0:
        return grad
    channels = _num_channels(img_src)
    x = np.asarray(img_src, dtype=np.float64)
    win = cfg.ssim_window
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2
    mu_x = _pool(x, win)
    ex2 = _pool(x * x, win)
    for m in ssim_view_ids:
        warp = warps[m]
        y = warp.image
        mu_y = _pool(y, win)
        ey2 = _pool(y * y, win)
        exy = _pool(x * y, win)
        var_x = ex2 - mu_x**2
        var_y = ey2 - mu_y**2
        cov = exy - mu_x * mu_y
        n1 = 2 * mu_x * mu_y + c1
        n2 = 2 * cov + c2
        d1 = mu_x**2 + mu_y**2 + c1
        d2 = var_x + var_y + c2
        s = n1 * n2 / (d1 * d2)
        # d(1 - SSIM) seeds: the loss averages channels and masks per pixel
        seed2d = -cfg.beta * warp.mask.astype(np.float64) / (count * channels)
        seed = seed2d if x.ndim == 2 else seed2d[:, :, None]
        ds_dmuy = (2 * mu_x * (n2 - n1)) / (d1 * d2) - s * (2 * mu_y / d1 - 2 * mu_y / d2)
        ds_dey2 = -s / d2
        ds_dexy = 2 * n1 / (d1 * d2)
        d_warped = (
            _pool(seed * ds_dmuy, win)
            + 2.0 * y * _pool(seed * ds_dey2, win)
            + x * _pool(seed * ds_dexy, win)
        )
        grad += _chain_to_depth(d_warped, warp, views[m][0])
    return grad


def _smooth_backward(depth: np.ndarray, img: np.ndarray, weight: float) -> np.ndarray:
    if weight == 0.0:
        return np.zeros_like(depth)
    gd = image_gradient(depth)
    gi = image_gradient(img)
    wx = np.exp(-_channel_mean(np.abs(gi.gx)))
    wy = np.exp(-_channel_mean(np.abs(gi.gy)))
    scale = weight / depth.size
    return gradient_adjoint(scale * np.sign(gd.gx) * wx, axis=1) + gradient_adjoint(
        scale * np.sign(gd.gy) * wy, axis=0
    )


def loss_gradient(
    img_src: np.ndarray,
    cam_src: Camera,
    views: Sequence[tuple[np.ndarray, Camera]],
    depth: np.ndarray,
    cfg: LossConfig,
) -> np.ndarray:
    """Analytic gradient of total_loss w.r.t. the depth map.

    The top-K selection, validity masks, and absolute-value/Huber branches
    are held fixed at the evaluation point (subgradient convention), which
    matches central finite differences away from those switching sets.
    """
    if not views:
        raise ValueError("loss_gradient needs at least one view")
    warps = [warp_view(depth, img, cam_src, cam) for img, cam in views]
    pairs = [(w.image, w.mask) for w in warps]
    volume = build_loss_volume(img_src, pairs, cfg)
    topk = robust_topk_loss(volume, min(cfg.K, len(views)))
    ranking = rank_views(cam_src, [cam for _, cam in views])
    ssim_views = ranking[: min(2, len(views))]
    ssim_term = _ssim_masked(img_src, [pairs[i] for i in ssim_views], cfg)

    grad = _photo_backward(img_src, warps, views, topk.selection, topk.count, cfg)
    grad += _ssim_backward(img_src, warps, views, ssim_views, ssim_term.count, cfg)
    grad += _smooth_backward(depth, img_src, cfg.gamma)
    return grad


def topk_selection_frequency(
    selections: Sequence[np.ndarray], ranking: Sequence[int]
) -> np.ndarray:
    """Count how often each view rank is picked by the top-K selection.

    ``ranking`` lists view indices best-first; the returned histogram entry r
    counts selections of the view at rank r, summed over all tensors.
    """
    ranking = list(ranking)
    counts = np.zeros(len(ranking), dtype=np.int64)
    for sel in selections:
        if sel.shape[2] != len(ranking):
            raise ValueError("selection tensor view count does not match ranking")
        per_view = sel.reshape(-1, sel.shape[2]).sum(axis=0)
        for rank, view in enumerate(ranking):
            counts[rank] += int(per_view[view])
    return counts


def format_breakdown(result: TotalLossResult) -> str:
    """Flat key-value report of the loss terms (sum, mean, valid count)."""
    cfg = result.config
    lines = [
        f"total = {result.total:.12g}",
        f"photo.sum = {result.photo.total:.12g}",
        f"photo.mean = {result.photo.mean:.12g}",
        f"photo.count = {result.photo.count}",
        f"photo.no_signal = {int(result.photo.no_signal)}",
        f"ssim.sum = {result.ssim.total:.12g}",
        f"ssim.mean = {result.ssim.mean:.12g}",
        f"ssim.count = {result.ssim.count}",
        f"ssim.no_signal = {int(result.ssim.no_signal)}",
        f"smooth.sum = {result.smooth.total:.12g}",
        f"smooth.mean = {result.smooth.mean:.12g}",
        f"smooth.count = {result.smooth.count}",
        f"weights.alpha = {cfg.alpha:.12g}",
        f"weights.beta = {cfg.beta:.12g}",
        f"weights.gamma = {cfg.gamma:.12g}",
        f"topk.K = {cfg.K}",
        f"views.M = {len(result.ranking)}",
        f"views.ranking = {','.join(str(v) for v in result.ranking)}",
    ]
    return "\n".join(lines) + "\n"
