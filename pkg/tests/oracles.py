"""Independent loop-based oracles for the vectorized implementations.

Everything here is written with explicit per-pixel Python loops and stays
deliberately naive; tests compare the package's vectorized results against
these within tight tolerances.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def huber_scalar(e: float, delta: float) -> float:
    a = abs(e)
    if a <= delta:
        return e * e / (2.0 * delta)
    return a - delta / 2.0


def gradient_loop(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central differences interior, one-sided borders, per channel."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
        squeeze = True
    else:
        squeeze = False
    h, w, c = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                if x == 0:
                    gx[y, x, ch] = img[y, 1, ch] - img[y, 0, ch]
                elif x == w - 1:
                    gx[y, x, ch] = img[y, w - 1, ch] - img[y, w - 2, ch]
                else:
                    gx[y, x, ch] = (img[y, x + 1, ch] - img[y, x - 1, ch]) / 2.0
                if y == 0:
                    gy[y, x, ch] = img[1, x, ch] - img[0, x, ch]
                elif y == h - 1:
                    gy[y, x, ch] = img[h - 1, x, ch] - img[h - 2, x, ch]
                else:
                    gy[y, x, ch] = (img[y + 1, x, ch] - img[y - 1, x, ch]) / 2.0
    if squeeze:
        return gx[:, :, 0], gy[:, :, 0]
    return gx, gy


def _channels(img: np.ndarray) -> np.ndarray:
    return img[:, :, None] if img.ndim == 2 else img


def naive_loss_loop(img_src, warped_pairs):
    """Mean over valid pixel-view contributions of channel-mean |difference|."""
    src = _channels(np.asarray(img_src, dtype=np.float64))
    h, w, c = src.shape
    total = 0.0
    count = 0
    for warped, mask in warped_pairs:
        wimg = _channels(np.asarray(warped, dtype=np.float64))
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    continue
                diff = sum(abs(src[y, x, ch] - wimg[y, x, ch]) for ch in range(c)) / c
                total += diff
                count += 1
    return total, count


def first_order_map_loop(img_src, warped, mask, delta):
    """Per-pixel Huber intensity + absolute gradient differences, masked."""
    src = _channels(np.asarray(img_src, dtype=np.float64))
    wimg = _channels(np.asarray(warped, dtype=np.float64))
    h, w, c = src.shape
    gx_s, gy_s = gradient_loop(src)
    gx_w, gy_w = gradient_loop(wimg)
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            acc = 0.0
            for ch in range(c):
                acc += huber_scalar(src[y, x, ch] - wimg[y, x, ch], delta)
                acc += abs(gx_s[y, x, ch] - gx_w[y, x, ch])
                acc += abs(gy_s[y, x, ch] - gy_w[y, x, ch])
            out[y, x] = acc / c
    return out


def topk_loop(loss: np.ndarray, valid: np.ndarray, k: int):
    """Per-pixel sum of the K smallest valid entries (ties by view index)."""
    h, w, m = loss.shape
    total = 0.0
    count = 0
    selection = np.zeros((h, w, m), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            entries = [(loss[y, x, i], i) for i in range(m) if valid[y, x, i]]
            entries.sort(key=lambda t: (t[0], t[1]))
            for value, i in entries[:k]:
                total += value
                count += 1
                selection[y, x, i] = 1
    return total, count, selection


def topk_bruteforce_value(values, valid, k):
    """Minimum sum over all k-subsets of valid views (exponential search)."""
    idx = [i for i, v in enumerate(valid) if v]
    k = min(k, len(idx))
    if k == 0:
        return 0.0
    return min(sum(values[i] for i in combo)
               for combo in itertools.combinations(idx, k))


def ssim_scalar_loop(x, y, c1, c2):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    mx = x.mean()
    my = y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    return (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ssim_map_loop(img_x, img_y, window, c1, c2):
    """Per-pixel SSIM with zero-padded average pooling, channel-averaged."""
    x = _channels(np.asarray(img_x, dtype=np.float64))
    y = _channels(np.asarray(img_y, dtype=np.float64))
    h, w, c = x.shape
    half = window // 2
    out = np.zeros((h, w))
    area = float(window * window)
    for yy in range(h):
        for xx in range(w):
            acc = 0.0
            for ch in range(c):
                sx = sy = sxx = syy = sxy = 0.0
                for dy in range(-half, half + 1):
                    for dx in range(-half, half + 1):
                        py, px = yy + dy, xx + dx
                        if 0 <= py < h and 0 <= px < w:
                            a = x[py, px, ch]
                            b = y[py, px, ch]
                        else:
                            a = b = 0.0
                        sx += a
                        sy += b
                        sxx += a * a
                        syy += b * b
                        sxy += a * b
                mx, my = sx / area, sy / area
                vx = sxx / area - mx * mx
                vy = syy / area - my * my
                cov = sxy / area - mx * my
                acc += ((2 * mx * my + c1) * (2 * cov + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
            out[yy, xx] = acc / c
    return out


def ssim_loss_loop(img_src, pairs, window, c1, c2):
    total = 0.0
    count = 0
    for warped, mask in pairs:
        smap = ssim_map_loop(img_src, warped, window, c1, c2)
        h, w = smap.shape
        for y in range(h):
            for x in range(w):
                if mask[y, x]:
                    total += 1.0 - smap[y, x]
                    count += 1
    return total, count


def smoothness_loop(depth, img):
    d = np.asarray(depth, dtype=np.float64)
    gdx, gdy = gradient_loop(d)
    gix, giy = gradient_loop(np.asarray(img, dtype=np.float64))
    if gix.ndim == 3:
        gix = np.abs(gix).mean(axis=2)
        giy = np.abs(giy).mean(axis=2)
    else:
        gix = np.abs(gix)
        giy = np.abs(giy)
    h, w = d.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            total += (abs(gdx[y, x]) * math.exp(-gix[y, x])
                      + abs(gdy[y, x]) * math.exp(-giy[y, x]))
    return total, h * w


def nn_distances_bruteforce(from_pts, to_pts):
    """Exact nearest-neighbor distance from every point to the other cloud."""
    out = []
    for p in from_pts:
        out.append(min(math.dist(p, q) for q in to_pts))
    return np.asarray(out)


def depth_metrics_loop(pred, truth):
    h, w = truth.shape
    diffs = []
    for y in range(h):
        for x in range(w):
            if truth[y, x] > 0:
                diffs.append((abs(pred[y, x] - truth[y, x]), truth[y, x]))
    n = len(diffs)
    l1 = sum(d for d, _ in diffs) / n
    w1 = 100.0 * sum(1 for d, _ in diffs if d <= 1.0) / n
    w3 = 100.0 * sum(1 for d, _ in diffs if d <= 3.0) / n
    w3r = 100.0 * sum(1 for d, t in diffs if d / t <= 0.03) / n
    return l1, w1, w3, w3r
