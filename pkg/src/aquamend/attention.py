"""Closed-form attention over channel unbalance and high-intensity outliers.

Images whose channel means drift apart and that contain pixels far above
the channel average develop saturated areas once histogram-stretched.  This
module detects those pixels and produces an attention image that the
degradation function adds as extra degradation, so the network learns to
suppress the saturation instead of amplifying it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import EPS, channel_stats, stretch_histogram, validate_image


@dataclass(frozen=True)
class AttentionMap:
    """Attention image plus the intermediate detector quantities.

    ``i_at`` is the stretched attention image in [0, 1]; ``thr`` the
    per-channel outlier threshold; ``gr`` the reinforcement factor (>= 1);
    ``i_x`` the nonnegative outlier-pixel map.
    """

    i_at: np.ndarray
    thr: np.ndarray
    gr: np.ndarray
    i_x: np.ndarray


def outlier_threshold(img: np.ndarray) -> np.ndarray:
    """Per-channel outlier detection threshold: max(mean - median, 0).

    Outliers drag the mean above the median, so the gap measures their
    presence; a symmetric histogram yields zero.
    """
    img = validate_image(img)
    mean = img.mean(axis=(0, 1))
    median = np.median(img, axis=(0, 1))
    return np.maximum(mean - median, 0.0)


def reinforcement_factor(img: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """gr = 1 + thr / mean, per channel (>= 1)."""
    img = validate_image(img)
    mean = img.mean(axis=(0, 1))
    return 1.0 + np.asarray(thr, dtype=np.float64) / np.maximum(mean, EPS)


def outlier_image(img: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """Select pixels above the outlier cutoff max(I) * thr / mean.

    I_x = max(I - cutoff, 0); a channel with thr = 0 (or a vanishing mean)
    contains no detected outliers and maps to all zeros.
    """
    img = validate_image(img)
    thr = np.asarray(thr, dtype=np.float64)
    mean = img.mean(axis=(0, 1))
    cmax = img.max(axis=(0, 1))
    cutoff = cmax * thr / np.maximum(mean, EPS)
    i_x = np.maximum(img - cutoff, 0.0)
    active = (thr > 0.0) & (mean >= EPS)
    return np.where(active, i_x, 0.0)


def attention_map(img: np.ndarray) -> AttentionMap:
    """Build the attention image for saturated-region suppression.

    The raw attention response weights the outlier map by the channel
    unbalance |mean_k - global mean| and the reinforcement factor, divided
    by the pixel value (dark pixels guarded at EPS).  The response is then
    histogram-stretched per channel into [0, 1]; a constant (e.g. all-zero)
    response channel stretches to zeros.
    """
    img = validate_image(img)
    thr = outlier_threshold(img)
    gr = reinforcement_factor(img, thr)
    i_x = outlier_image(img, thr)

    channel_mean = img.mean(axis=(0, 1))
    global_mean = img.mean()
    unbalance = np.abs(channel_mean - global_mean)
    i_a = gr * unbalance * i_x / np.maximum(img, EPS)

    i_at = stretch_histogram(i_a, channel_stats(i_a))
    return AttentionMap(i_at=i_at, thr=thr, gr=gr, i_x=i_x)
