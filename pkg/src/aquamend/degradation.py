"""Color-space degradation model and the synthetic degradation function.

The degradation of an underwater image is described entirely from its own
channel statistics: pixel-wise attenuation and backscatter maps (``gd``,
``gb``) plus a per-channel context luminosity (the channel median).  Those
drive an image-formation-style transform that intensifies the degradation
already present, which is what the training loop feeds back to the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import EPS, ChannelStats, channel_stats, validate_image


@dataclass(frozen=True)
class DegradationBundle:
    """Degradation parameters estimated from a single image.

    ``gd`` and ``gb`` are nonnegative (H, W, 3) maps; ``lam`` is the
    per-channel context luminosity (median); ``stats`` are the channel
    statistics everything was derived from.
    """

    gd: np.ndarray
    gb: np.ndarray
    lam: np.ndarray
    stats: ChannelStats


def context_luminosity(img: np.ndarray) -> np.ndarray:
    """Per-channel median, standing in for the ambient/background light.

    The median is used instead of the mean because high-intensity outlier
    regions (light spots) bias the mean upward.
    """
    img = validate_image(img)
    return np.median(img, axis=(0, 1))


def _range_coefficient(stats: ChannelStats) -> np.ndarray:
    """(1 - bw) / bw per channel, zero where the range is degenerate."""
    safe_bw = np.where(stats.bw >= EPS, stats.bw, 1.0)
    return np.where(stats.bw >= EPS, (1.0 - stats.bw) / safe_bw, 0.0)


def gd_map(img: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Attenuation factor acting on scene radiance.

    gd = ((1 - bw) / bw) * (max - I) * (I - min), per pixel per channel.
    Vanishes at both channel extremes, concentrating the degradation inside
    the dynamic range.  Channels with bw < EPS get an all-zero map.
    """
    img = validate_image(img)
    return _range_coefficient(stats) * (stats.max - img) * (img - stats.min)


def gb_map(img: np.ndarray, stats: ChannelStats, lam: np.ndarray) -> np.ndarray:
    """Backscatter factor due to ambient light.

    gb = ((1 - bw) / bw) * (max - I) * (lam - min).  Nonnegative because
    the context luminosity (median) never falls below the channel minimum.
    """
    img = validate_image(img)
    return _range_coefficient(stats) * (stats.max - img) * (lam - stats.min)


def estimate_bundle(
    img: np.ndarray,
    stats: ChannelStats | None = None,
    lam: np.ndarray | None = None,
) -> DegradationBundle:
    """Estimate the full degradation bundle of an image.

    ``stats``/``lam`` may be injected to evaluate the maps against frozen
    statistics (used by the loss gradient contract); by default both are
    computed from ``img``.
    """
    img = validate_image(img)
    if stats is None:
        stats = channel_stats(img)
    if lam is None:
        lam = stats.median
    return DegradationBundle(
        gd=gd_map(img, stats),
        gb=gb_map(img, stats, lam),
        lam=np.asarray(lam, dtype=np.float64),
        stats=stats,
    )


def apply_ifm(scene: np.ndarray, bundle: DegradationBundle) -> np.ndarray:
    """Image-formation transform: scene * e^-gd + (1 - e^-gb) * lam.

    No clamping is applied; the raw arithmetic is what the loss sees.
    """
    scene = validate_image(scene)
    if bundle.gd.shape != scene.shape:
        raise ValueError(
            f"bundle maps {bundle.gd.shape} do not match scene {scene.shape}"
        )
    return scene * np.exp(-bundle.gd) + (1.0 - np.exp(-bundle.gb)) * bundle.lam


def degrade_once(img: np.ndarray) -> np.ndarray:
    """One degradation pass of an image under its own estimated bundle."""
    img = validate_image(img)
    return apply_ifm(img, estimate_bundle(img))


def degrade_twice(img: np.ndarray) -> np.ndarray:
    """Two degradation passes; the second recomputes the bundle.

    The intermediate image defines a new, stronger degradation context, so
    its statistics (not the original image's) parameterize the second pass.
    """
    once = degrade_once(img)
    return apply_ifm(once, estimate_bundle(once))


def degradation_function(
    net_out: np.ndarray,
    degraded: np.ndarray,
    stretched: np.ndarray,
    attention: np.ndarray | None = None,
) -> np.ndarray:
    """Intensify degradation on the network output.

    out = net_out + (degraded - stretched) [+ attention], unclamped.  The
    twice-degraded image contributes degradation features while the
    histogram-stretched image removes quality features; the optional
    attention map adds extra degradation over saturated regions.

    Grouping the difference first makes ``degraded == stretched`` with no
    attention an exact identity, and makes the attention term exactly
    additive.
    """
    net_out = validate_image(net_out)
    degraded = validate_image(degraded)
    stretched = validate_image(stretched)
    if degraded.shape != net_out.shape or stretched.shape != net_out.shape:
        raise ValueError("degradation inputs must share the network output shape")
    out = net_out + (degraded - stretched)
    if attention is not None:
        attention = validate_image(attention)
        if attention.shape != net_out.shape:
            raise ValueError("attention map shape mismatch")
        out = out + attention
    return out
