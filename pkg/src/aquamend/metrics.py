"""Image quality metrics: MSE, PSNR, SSIM, GMSD, CIEDE2000, UCIQE, UIQM.

Full-reference metrics expect two images with identical dimensions and
values in [0, 1].  Conventions, where the metric definitions leave room:

* luminance for SSIM/GMSD uses Rec.601 weights (0.299, 0.587, 0.114);
* Lab conversion assumes sRGB primaries with the D65 reference white,
  with the white point taken as the transform of RGB(1,1,1) so neutral
  grays land exactly on the L axis;
* UCIQE works on L and chroma normalized to [0, 1] scale (divided by
  100); UIQM follows the customary 8-bit scale internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import EPS, validate_image

PSNR_CAP_DB = 100.0

# --------------------------------------------------------------------------
# Color conversions
# --------------------------------------------------------------------------

REC601 = np.array([0.299, 0.587, 0.114])

_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# White point = transform of RGB(1,1,1); keeps grays at exactly a=b=0.
_WHITE = _SRGB_TO_XYZ.sum(axis=1)


def rec601_luminance(img: np.ndarray) -> np.ndarray:
    """Grayscale via Rec.601 weights."""
    return validate_image(img) @ REC601


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an sRGB image in [0, 1] to CIELAB (D65)."""
    img = validate_image(img)
    c = np.clip(img, 0.0, 1.0)
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


# --------------------------------------------------------------------------
# Full-reference metrics
# --------------------------------------------------------------------------


def _pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = validate_image(a)
    b = validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all pixels and channels."""
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit peak, capped at 100 dB."""
    err = mse(a, b)
    if err < 1e-10:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / err)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel)


def ssim(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Structural similarity on Rec.601 luminance.

    Gaussian-weighted 11x11 windows (sigma 1.5), K1=0.01, K2=0.03, unit
    dynamic range; the score is the mean over all fully-valid windows.
    """
    a, b = _pair(a, b)
    if a.shape[0] < size or a.shape[1] < size:
        raise ValueError(f"image must be at least {size}x{size} for SSIM")
    x = rec601_luminance(a)
    y = rec601_luminance(b)
    kernel = _gaussian_kernel(size, sigma)

    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    var_x = _windowed_mean(x * x, kernel) - mu_x**2
    var_y = _windowed_mean(y * y, kernel) - mu_y**2
    cov = _windowed_mean(x * y, kernel) - mu_x * mu_y

    c1 = 0.01**2
    c2 = 0.03**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


_PREWITT_X = np.array([[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]]) / 3.0
_PREWITT_Y = _PREWITT_X.T


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("hwij,ij->hw", win, kernel)


def gmsd(a: np.ndarray, b: np.ndarray, c: float = 0.0026) -> float:
    """Gradient magnitude similarity deviation on luminance.

    Prewitt 3x3 gradients over the interior, similarity map
    (2*ga*gb + c) / (ga^2 + gb^2 + c), score = population standard
    deviation of the map.  Identical images score exactly 0.
    """
    a, b = _pair(a, b)
    if a.shape[0] < 3 or a.shape[1] < 3:
        raise ValueError("image must be at least 3x3 for GMSD")
    x = rec601_luminance(a)
    y = rec601_luminance(b)
    gx = np.hypot(_filter_valid(x, _PREWITT_X), _filter_valid(x, _PREWITT_Y))
    gy = np.hypot(_filter_valid(y, _PREWITT_X), _filter_valid(y, _PREWITT_Y))
    sim = (2.0 * gx * gy + c) / (gx**2 + gy**2 + c)
    return float(np.std(sim))


def ciede2000_lab(lab1: np.ndarray, lab2: np.ndarray) -> np.ndarray:
    """CIEDE2000 color difference between Lab triples (vectorized).

    Implements the standard formulation with the hue rotation term and all
    branch conditions; validated against the published reference pairs.
    """
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    l1, a1, b1 = lab1[..., 0], lab1[..., 1], lab1[..., 2]
    l2, a2, b2 = lab2[..., 0], lab2[..., 1], lab2[..., 2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    c_bar = 0.5 * (c1 + c2)
    g = 0.5 * (1.0 - np.sqrt(c_bar**7 / (c_bar**7 + 25.0**7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h1p = np.where((a1p == 0.0) & (b1 == 0.0), 0.0, h1p)
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h2p = np.where((a2p == 0.0) & (b2 == 0.0), 0.0, h2p)

    dl = l2 - l1
    dc = c2p - c1p

    zero_chroma = (c1p * c2p) == 0.0
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(zero_chroma, 0.0, dh)
    dbig_h = 2.0 * np.sqrt(c1p * c2p) * np.sin(np.radians(dh) / 2.0)

    l_bar = 0.5 * (l1 + l2)
    c_bar_p = 0.5 * (c1p + c2p)

    h_sum = h1p + h2p
    h_diff = np.abs(h1p - h2p)
    h_bar = np.where(
        h_diff <= 180.0,
        0.5 * h_sum,
        np.where(h_sum < 360.0, 0.5 * (h_sum + 360.0), 0.5 * (h_sum - 360.0)),
    )
    h_bar = np.where(zero_chroma, h_sum, h_bar)

    t = (
        1.0
        - 0.17 * np.cos(np.radians(h_bar - 30.0))
        + 0.24 * np.cos(np.radians(2.0 * h_bar))
        + 0.32 * np.cos(np.radians(3.0 * h_bar + 6.0))
        - 0.20 * np.cos(np.radians(4.0 * h_bar - 63.0))
    )
    d_theta = 30.0 * np.exp(-(((h_bar - 275.0) / 25.0) ** 2))
    r_c = 2.0 * np.sqrt(c_bar_p**7 / (c_bar_p**7 + 25.0**7))
    s_l = 1.0 + 0.015 * (l_bar - 50.0) ** 2 / np.sqrt(20.0 + (l_bar - 50.0) ** 2)
    s_c = 1.0 + 0.045 * c_bar_p
    s_h = 1.0 + 0.015 * c_bar_p * t
    r_t = -np.sin(np.radians(2.0 * d_theta)) * r_c

    term_l = dl / s_l
    term_c = dc / s_c
    term_h = dbig_h / s_h
    return np.sqrt(term_l**2 + term_c**2 + term_h**2 + r_t * term_c * term_h)


def ciede2000(a: np.ndarray, b: np.ndarray) -> float:
    """Mean CIEDE2000 color difference over all pixels (sRGB inputs)."""
    a, b = _pair(a, b)
    return float(np.mean(ciede2000_lab(srgb_to_lab(a), srgb_to_lab(b))))


# --------------------------------------------------------------------------
# No-reference underwater metrics
# --------------------------------------------------------------------------

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UIQM_COEFFS = (0.0282, 0.2953, 3.5753)


def uciqe(img: np.ndarray) -> float:
    """Underwater color image quality: chroma spread, contrast, saturation.

    score = 0.4680*std(chroma) + 0.2745*(q99(L) - q01(L)) + 0.2576*mean(sat)
    with L and chroma on a [0, 1] scale and saturation = chroma / L
    (guarded for dark pixels).  Numerically neutral pixels (chroma below
    1e-12, i.e. conversion round-off) count as zero saturation, so a
    constant gray image scores exactly 0.
    """
    img = validate_image(img)
    lab = srgb_to_lab(img)
    lum = lab[..., 0] / 100.0
    chroma = np.hypot(lab[..., 1], lab[..., 2]) / 100.0
    sigma_c = float(np.std(chroma))
    con_l = float(np.quantile(lum, 0.99) - np.quantile(lum, 0.01))
    saturation = np.where(chroma > 1e-12, chroma / np.maximum(lum, EPS), 0.0)
    mu_s = float(np.mean(saturation))
    w1, w2, w3 = UCIQE_COEFFS
    return w1 * sigma_c + w2 * con_l + w3 * mu_s


def _trimmed_mean(x: np.ndarray, alpha: float = 0.1) -> float:
    xs = np.sort(x.ravel())
    k = xs.size
    lo = math.ceil(alpha * k)
    hi = math.floor(alpha * k)
    trimmed = xs[lo : k - hi]
    return float(trimmed.mean()) if trimmed.size else 0.0


def _uicm(img255: np.ndarray) -> float:
    rg = img255[..., 0] - img255[..., 1]
    yb = 0.5 * (img255[..., 0] + img255[..., 1]) - img255[..., 2]
    mu_rg = _trimmed_mean(rg)
    mu_yb = _trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))
    return -0.0268 * math.hypot(mu_rg, mu_yb) + 0.1586 * math.sqrt(var_rg + var_yb)


_SOBEL_X = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
_SOBEL_Y = _SOBEL_X.T


def _sobel_magnitude(plane: np.ndarray) -> np.ndarray:
    padded = np.pad(plane, 1, mode="edge")
    gx = _filter_valid(padded, _SOBEL_X)
    gy = _filter_valid(padded, _SOBEL_Y)
    return np.hypot(gx, gy)


def _eme(plane: np.ndarray, window: int) -> float:
    h, w = plane.shape
    k1, k2 = h // window, w // window
    if k1 == 0 or k2 == 0:
        return 0.0
    total = 0.0
    for i in range(k1):
        for j in range(k2):
            block = plane[i * window : (i + 1) * window, j * window : (j + 1) * window]
            lo, hi = block.min(), block.max()
            if lo > 0.0:
                total += math.log(hi / lo)
    return 2.0 / (k1 * k2) * total


def _uism(img255: np.ndarray, window: int = 10) -> float:
    weights = (0.299, 0.587, 0.114)
    total = 0.0
    for ch, weight in enumerate(weights):
        plane = img255[..., ch]
        edges = _sobel_magnitude(plane) * plane
        total += weight * _eme(edges, window)
    return total


def _log_amee(plane: np.ndarray, window: int = 10) -> float:
    h, w = plane.shape
    k1, k2 = h // window, w // window
    if k1 == 0 or k2 == 0:
        return 0.0
    total = 0.0
    for i in range(k1):
        for j in range(k2):
            block = plane[i * window : (i + 1) * window, j * window : (j + 1) * window]
            lo, hi = block.min(), block.max()
            top, bot = hi - lo, hi + lo
            if top > 0.0 and bot > 0.0:
                ratio = top / bot
                total += ratio * math.log(ratio)
    return -1.0 / (k1 * k2) * total + 0.0


def uiqm_components(img: np.ndarray, window: int = 10) -> tuple[float, float, float]:
    """(colorfulness, sharpness, contrast) terms of UIQM.

    Colorfulness uses opponent-color planes with 10%% asymmetric trimmed
    means; sharpness is a Sobel-weighted EME; contrast is logAMEE on the
    Rec.601 gray plane.  Computation follows the customary 8-bit scale.
    """
    img = validate_image(img)
    img255 = img * 255.0
    uicm = _uicm(img255)
    uism = _uism(img255, window)
    uiconm = _log_amee(rec601_luminance(img) * 255.0, window)
    return uicm, uism, uiconm


def uiqm(img: np.ndarray, window: int = 10) -> float:
    """Underwater image quality measure: weighted sum of the three terms."""
    uicm, uism, uiconm = uiqm_components(img, window)
    w1, w2, w3 = UIQM_COEFFS
    return w1 * uicm + w2 * uism + w3 * uiconm


# --------------------------------------------------------------------------
# Batch evaluation harness
# --------------------------------------------------------------------------

FULL_REFERENCE = ("mse", "psnr", "ssim", "gmsd", "ciede2000")
NO_REFERENCE = ("uciqe", "uiqm")
ALL_METRICS = FULL_REFERENCE + NO_REFERENCE

_FULL_REFERENCE_FNS = {
    "mse": mse,
    "psnr": psnr,
    "ssim": ssim,
    "gmsd": gmsd,
    "ciede2000": ciede2000,
}
_NO_REFERENCE_FNS = {"uciqe": uciqe, "uiqm": uiqm}


@dataclass
class MetricReport:
    """Per-image metric values plus their arithmetic means.

    ``per_image`` maps image id -> {metric: value}; full-reference entries
    are simply absent when the image has no reference.  ``pairs`` lists
    (image id, reference id or None).
    """

    per_image: dict = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)


def evaluate_image(img: np.ndarray, reference: np.ndarray | None = None) -> dict:
    """All metrics for one image (full-reference ones only with a reference)."""
    values = {name: fn(img) for name, fn in _NO_REFERENCE_FNS.items()}
    if reference is not None:
        for name, fn in _FULL_REFERENCE_FNS.items():
            values[name] = fn(img, reference)
    return values


def evaluate_batch(images: list, references: dict | None = None) -> MetricReport:
    """Evaluate [(image id, image), ...] against optional references by id."""
    report = MetricReport()
    references = references or {}
    for image_id, img in images:
        ref = references.get(image_id)
        report.per_image[image_id] = evaluate_image(img, ref)
        report.pairs.append((image_id, image_id if ref is not None else None))
    for name in ALL_METRICS:
        values = [m[name] for m in report.per_image.values() if name in m]
        if values:
            report.aggregate[name] = float(np.mean(values))
    return report
