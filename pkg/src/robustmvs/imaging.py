"""Image containers, bilinear sampling, gradients, and inverse warping.

Images are numpy arrays of shape (H, W) or (H, W, C) with float intensities
in [0, 1]. Validity masks are boolean (H, W) arrays. Depth maps are float
(H, W) arrays where invalid pixels carry depth 0.
"""

from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image as PILImage

from .geometry import Camera, PixelCoord, pixel_grid, warp_points


class GradientImage(NamedTuple):
    """Per-axis image gradients; gx is along x (columns), gy along y (rows)."""

    gx: np.ndarray
    gy: np.ndarray


def image_gradient(img: np.ndarray) -> GradientImage:
    """Central-difference gradients, one-sided at the borders.

    Exact for images linear in x or y; the gradient of a constant image is
    identically zero.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"image must be at least 2x2, got {img.shape[:2]}")
    gy = np.gradient(img, axis=0)
    gx = np.gradient(img, axis=1)
    return GradientImage(gx=gx, gy=gy)


def gradient_adjoint(seed: np.ndarray, axis: int) -> np.ndarray:
    """Transpose of the image_gradient stencil along one axis.

    Needed by the analytic loss gradients: if g = D f with D the
    central/one-sided difference operator, this returns D^T seed.
    """
    seed = np.asarray(seed, dtype=np.float64)
    n = seed.shape[axis]
    if n < 2:
        raise ValueError("axis too short for gradient adjoint")
    out = np.zeros_like(seed)
    sl = [slice(None)] * seed.ndim

    def at(obj, idx):
        sl_ = list(sl)
        sl_[axis] = idx
        return obj[tuple(sl_)]

    if n > 2:
        at(out, slice(2, None))[...] += at(seed, slice(1, -1)) * 0.5
        at(out, slice(None, -2))[...] -= at(seed, slice(1, -1)) * 0.5
    at(out, 1)[...] += at(seed, 0)
    at(out, 0)[...] -= at(seed, 0)
    at(out, n - 1)[...] += at(seed, n - 1)
    at(out, n - 2)[...] -= at(seed, n - 1)
    return out


def _gather(img: np.ndarray, iy: np.ndarray, ix: np.ndarray) -> np.ndarray:
    return img[iy, ix]


def bilinear_sample_many(
    img: np.ndarray,
    coords: np.ndarray,
    coords_valid: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Bilinearly sample an image at (N, 2) continuous coordinates.

    A sample is valid only when all four interpolation neighbors lie inside
    the image (strict masking); invalid samples return exactly 0.
    """
    img = np.asarray(img, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    h, w = img.shape[:2]
    x = coords[:, 0]
    y = coords[:, 1]
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    valid = (x0 >= 0) & (x0 + 1 <= w - 1) & (y0 >= 0) & (y0 + 1 <= h - 1)
    if coords_valid is not None:
        valid = valid & np.asarray(coords_valid, dtype=bool).reshape(-1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    fx = x - x0c
    fy = y - y0c
    if img.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    v00 = _gather(img, y0c, x0c)
    v01 = _gather(img, y0c, x0c + 1)
    v10 = _gather(img, y0c + 1, x0c)
    v11 = _gather(img, y0c + 1, x0c + 1)
    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    values = top + fy * (bot - top)
    mask = valid if img.ndim == 2 else valid[:, None]
    values = np.where(mask, values, 0.0)
    return values, valid


def bilinear_sample_jacobian(
    img: np.ndarray,
    coords: np.ndarray,
    valid: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Derivative of the bilinear sample w.r.t. the sample coordinates.

    Returns (d value/dx, d value/dy), each shaped like the sampled values.
    Piecewise constant in x/y within each pixel cell; zero where invalid.
    """
    img = np.asarray(img, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    h, w = img.shape[:2]
    x0 = np.clip(np.floor(coords[:, 0]).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(coords[:, 1]).astype(np.int64), 0, h - 2)
    fx = coords[:, 0] - x0
    fy = coords[:, 1] - y0
    if img.ndim == 3:
        fx = fx[:, None]
        fy = fy[:, None]
    v00 = _gather(img, y0, x0)
    v01 = _gather(img, y0, x0 + 1)
    v10 = _gather(img, y0 + 1, x0)
    v11 = _gather(img, y0 + 1, x0 + 1)
    dgx = (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
    dgy = (1.0 - fx) * (v10 - v00) + fx * (v11 - v01)
    mask = valid if img.ndim == 2 else np.asarray(valid, bool)[:, None]
    dgx = np.where(mask, dgx, 0.0)
    dgy = np.where(mask, dgy, 0.0)
    return dgx, dgy


def bilinear_sample(img: np.ndarray, coord: PixelCoord) -> tuple[np.ndarray | float, bool]:
    """Sample one coordinate; returns (value per channel, valid)."""
    coords_valid = np.array([coord.valid if isinstance(coord, PixelCoord) else True])
    values, valid = bilinear_sample_many(
        img, np.array([[coord[0], coord[1]]]), coords_valid
    )
    value = values[0]
    if np.ndim(value) == 0:
        value = float(value)
    return value, bool(valid[0])


class WarpedView(NamedTuple):
    """Inverse-warp output plus the quantities needed for depth derivatives."""

    image: np.ndarray          # (H, W[, C]) sampled view intensities, 0 where invalid
    mask: np.ndarray           # (H, W) bool validity
    coords: np.ndarray         # (H, W, 2) warped coordinates
    coord_depth_jac: np.ndarray  # (H, W, 2) d(coords)/d(depth)


def warp_view(
    depth: np.ndarray,
    img_view: np.ndarray,
    cam_src: Camera,
    cam_view: Camera,
) -> WarpedView:
    """Inverse-warp a view into the source frame using the source depth map."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    if (h, w) != (cam_src.height, cam_src.width):
        raise ValueError(
            f"depth map shape {depth.shape} does not match source camera "
            f"({cam_src.height}, {cam_src.width})"
        )
    grid = pixel_grid(w, h)
    coords, _, valid, jac = warp_points(
        grid, depth.ravel(), cam_src, cam_view, with_jacobian=True
    )
    values, sample_valid = bilinear_sample_many(img_view, coords, valid)
    out_shape = (h, w) if img_view.ndim == 2 else (h, w, img_view.shape[2])
    return WarpedView(
        image=values.reshape(out_shape),
        mask=sample_valid.reshape(h, w),
        coords=coords.reshape(h, w, 2),
        coord_depth_jac=jac.reshape(h, w, 2),
    )


def inverse_warp(
    depth: np.ndarray,
    img_view: np.ndarray,
    cam_src: Camera,
    cam_view: Camera,
) -> tuple[np.ndarray, np.ndarray]:
    """Warp ``img_view`` into the source frame; returns (image, validity mask)."""
    warped = warp_view(depth, img_view, cam_src, cam_view)
    return warped.image, warped.mask


# --- image and depth-map files ----------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8- or 16-bit PNG as float intensities in [0, 1]."""
    path = Path(path)
    with PILImage.open(path) as pil:
        if pil.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(pil, dtype=np.float64) / 65535.0
        elif pil.mode in ("L", "RGB"):
            arr = np.asarray(pil, dtype=np.float64) / 255.0
        elif pil.mode in ("LA", "RGBA", "P"):
            arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
        else:
            raise ValueError(f"{path}: unsupported image mode '{pil.mode}'")
    return arr


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write float intensities in [0, 1] as an 8-bit PNG."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data).save(Path(path))


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a grayscale PFM depth/confidence map (bottom-up row order)."""
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").strip()
        if header not in ("Pf", "PF"):
            raise ValueError(f"{path}: not a PFM file (header '{header}')")
        if header == "PF":
            raise ValueError(f"{path}: color PFM not supported for depth maps")
        dims = f.readline().decode("ascii", errors="replace").strip()
        while dims.startswith("#"):
            dims = f.readline().decode("ascii", errors="replace").strip()
        try:
            w, h = (int(v) for v in dims.split())
        except ValueError:
            raise ValueError(f"{path}: malformed PFM dimensions '{dims}'") from None
        scale = float(f.readline().decode("ascii", errors="replace").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.fromfile(f, dtype=dtype, count=w * h)
        if data.size != w * h:
            raise ValueError(f"{path}: truncated PFM payload")
    return np.flipud(data.reshape(h, w)).astype(np.float64)


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    """Write a grayscale little-endian PFM (bottom-up row order)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"PFM writer expects a 2D array, got shape {arr.shape}")
    h, w = arr.shape
    with open(Path(path), "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        np.flipud(arr).astype("<f4").tofile(f)
