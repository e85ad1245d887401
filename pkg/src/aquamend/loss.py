"""Scene- and image-radiance loss terms for self-supervised training.

The input image decomposes into a scene component C_J and an ambient
component C_P under the weights e^-gd and 1 - e^-gb.  Training compares
the input image against the *degraded* network output on both the full
image and the scene component, so the network is penalized as if its
output were worse than it is and learns to over-correct.

Gradient contract: the degraded output's per-channel order statistics
(min, max, median, dynamic range) are treated as constants within one
forward pass; the gradient flows only through the pointwise arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degradation import DegradationBundle, degradation_function, estimate_bundle
from .image import EPS, ChannelStats, validate_image


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted loss components: total = c1*l_sc + c2*l_im + l1_penalty."""

    l_sc: float
    l_im: float
    l1_penalty: float
    total: float
    c1: float
    c2: float


def scene_weight(gd: np.ndarray) -> np.ndarray:
    """Weight of the scene radiance in the vector decomposition: e^-gd."""
    return np.exp(-np.asarray(gd, dtype=np.float64))


def ambient_weight(gb: np.ndarray) -> np.ndarray:
    """Weight of the ambient light in the vector decomposition: 1 - e^-gb."""
    return 1.0 - np.exp(-np.asarray(gb, dtype=np.float64))


def ambient_component(img: np.ndarray, bundle: DegradationBundle) -> np.ndarray:
    """Ambient-light component C_P = lam * (1 - e^-gb)."""
    img = validate_image(img)
    if bundle.gb.shape != img.shape:
        raise ValueError(f"bundle maps {bundle.gb.shape} do not match image {img.shape}")
    return bundle.lam * ambient_weight(bundle.gb)


def scene_component(img: np.ndarray, c_p: np.ndarray) -> np.ndarray:
    """Scene-radiance component C_J = I - C_P."""
    img = validate_image(img)
    c_p = np.asarray(c_p, dtype=np.float64)
    if c_p.shape != img.shape:
        raise ValueError(f"ambient component {c_p.shape} does not match image {img.shape}")
    return img - c_p


def scene_loss(c_j: np.ndarray, c_j_star: np.ndarray) -> float:
    """MSE between the scene components of input and degraded output."""
    return _mse(c_j, c_j_star)


def image_loss(img: np.ndarray, degraded_out: np.ndarray) -> float:
    """MSE between the input image and the degraded network output."""
    return _mse(img, degraded_out)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def total_loss(l_sc: float, l_im: float, l1: float, c1: float, c2: float) -> LossBreakdown:
    """Combine the loss terms: total = c1*l_sc + c2*l_im + l1."""
    if c1 < 0 or c2 < 0:
        raise ValueError("loss weights must be nonnegative")
    return LossBreakdown(
        l_sc=float(l_sc),
        l_im=float(l_im),
        l1_penalty=float(l1),
        total=c1 * float(l_sc) + c2 * float(l_im) + float(l1),
        c1=float(c1),
        c2=float(c2),
    )


@dataclass(frozen=True)
class SelfSupervisedLoss:
    """One evaluation of the output-replacement loss for a single image.

    ``grad`` is d(c1*l_sc + c2*l_im)/d(net_out) under the frozen-statistics
    gradient contract.  ``degraded`` is the degraded network output and
    ``star_bundle`` the degradation bundle estimated from it (reusable to
    freeze statistics for finite-difference checks).
    """

    l_sc: float
    l_im: float
    grad: np.ndarray
    degraded: np.ndarray
    star_bundle: DegradationBundle


def scene_reference(img: np.ndarray) -> np.ndarray:
    """Scene component of an input image under its own bundle (cacheable)."""
    img = validate_image(img)
    bundle = estimate_bundle(img)
    return scene_component(img, ambient_component(img, bundle))


def self_supervised_loss(
    image: np.ndarray,
    net_out: np.ndarray,
    degraded_input: np.ndarray,
    stretched_input: np.ndarray,
    attention: np.ndarray | None,
    c1: float,
    c2: float,
    scene_ref: np.ndarray | None = None,
    star_stats: ChannelStats | None = None,
    star_lam: np.ndarray | None = None,
) -> SelfSupervisedLoss:
    """Evaluate both loss terms and their gradient w.r.t. the network output.

    The degraded output's bundle is recomputed here each call; passing
    ``star_stats``/``star_lam`` evaluates against frozen statistics instead
    (the same freeze the analytic gradient assumes).
    """
    image = validate_image(image)
    degraded = degradation_function(net_out, degraded_input, stretched_input, attention)
    bundle = estimate_bundle(degraded, stats=star_stats, lam=star_lam)

    c_p_star = ambient_component(degraded, bundle)
    c_j_star = scene_component(degraded, c_p_star)
    if scene_ref is None:
        scene_ref = scene_reference(image)

    l_sc = scene_loss(scene_ref, c_j_star)
    l_im = image_loss(image, degraded)

    # d(gb)/d(out) = -kappa per channel; statistics held constant.
    stats = bundle.stats
    safe_bw = np.where(stats.bw >= EPS, stats.bw, 1.0)
    coef = np.where(stats.bw >= EPS, (1.0 - stats.bw) / safe_bw, 0.0)
    kappa = coef * (bundle.lam - stats.min)
    d_cj = 1.0 + bundle.lam * kappa * np.exp(-bundle.gb)

    n = image.size
    grad = (2.0 / n) * (
        c1 * (c_j_star - scene_ref) * d_cj + c2 * (degraded - image)
    )
    return SelfSupervisedLoss(
        l_sc=l_sc, l_im=l_im, grad=grad, degraded=degraded, star_bundle=bundle
    )
