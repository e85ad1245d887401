"""Image container conventions, per-channel statistics and raster I/O.

Images are numpy float64 arrays of shape (H, W, 3), channel-last RGB,
nominally in [0, 1].  Intermediate arithmetic may leave that range;
clamping happens only on export.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

# Guard for divisions by dynamic range or pixel values.  Channels with a
# dynamic range below EPS carry no usable information.
EPS = 1e-6


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check shape (H, W, 3) with H, W >= 1 and return a float64 view."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image dimensions must be >= 1, got {arr.shape[:2]}")
    return arr


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel order statistics of one image.

    All fields are arrays of shape (3,) indexed R, G, B.  ``bw`` is the
    dynamic range max - min.
    """

    min: np.ndarray
    max: np.ndarray
    bw: np.ndarray
    mean: np.ndarray
    median: np.ndarray


def channel_stats(img: np.ndarray) -> ChannelStats:
    """Compute min/max/dynamic-range/mean/median per channel.

    The median of an even pixel count is the mean of the two middle
    order statistics.
    """
    img = validate_image(img)
    cmin = img.min(axis=(0, 1))
    cmax = img.max(axis=(0, 1))
    return ChannelStats(
        min=cmin,
        max=cmax,
        bw=cmax - cmin,
        mean=img.mean(axis=(0, 1)),
        median=np.median(img, axis=(0, 1)),
    )


def stretch_histogram(img: np.ndarray, stats: ChannelStats | None = None) -> np.ndarray:
    """Stretch each channel to span [0, 1]: out = (in - min) / (max - min).

    Channels with a dynamic range below EPS are mapped to zero.  ``stats``
    must come from ``img``; it is recomputed when omitted.
    """
    img = validate_image(img)
    if stats is None:
        stats = channel_stats(img)
    safe_bw = np.where(stats.bw >= EPS, stats.bw, 1.0)
    out = (img - stats.min) / safe_bw
    return np.where(stats.bw >= EPS, out, 0.0)


def clamp01(img: np.ndarray) -> np.ndarray:
    """Clip all values into [0, 1], logging how many were out of range."""
    arr = np.asarray(img, dtype=np.float64)
    clipped = int(np.count_nonzero((arr < 0.0) | (arr > 1.0)))
    if clipped:
        log.debug("clamp01: clipped %d of %d values", clipped, arr.size)
    return np.clip(arr, 0.0, 1.0)


def resize_bilinear(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize with bilinear interpolation (half-pixel centers, edge clamp).

    Aspect ratio is not preserved.  Resizing to the original dimensions
    returns a bit-identical copy.
    """
    img = validate_image(img)
    if height < 1 or width < 1:
        raise ValueError(f"target dimensions must be >= 1, got {height}x{width}")
    h, w = img.shape[:2]
    if (height, width) == (h, w):
        return img.copy()

    ys = (np.arange(height, dtype=np.float64) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (w / width) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    top = img[y0c][:, x0c] * (1.0 - fx) + img[y0c][:, x1c] * fx
    bot = img[y1c][:, x0c] * (1.0 - fx) + img[y1c][:, x1c] * fx
    return top * (1.0 - fy) + bot * fy


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit PNG/JPEG as a float64 (H, W, 3) array in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return validate_image(arr)


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write an image as 8-bit PNG/JPEG (by extension), atomically.

    Values are clamped to [0, 1] and scaled by 255 with round-to-nearest.
    """
    img = clamp01(validate_image(img))
    data = np.rint(img * 255.0).astype(np.uint8)
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=os.path.splitext(path)[1])
    try:
        with os.fdopen(fd, "wb") as fh:
            Image.fromarray(data, mode="RGB").save(fh, format=_format_for(path))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_for(path: str) -> str:
    ext = os.path.splitext(path)[1].lower()
    if ext in (".jpg", ".jpeg"):
        return "JPEG"
    if ext == ".png":
        return "PNG"
    raise ValueError(f"unsupported raster format: {ext!r} (use .png, .jpg or .jpeg)")
