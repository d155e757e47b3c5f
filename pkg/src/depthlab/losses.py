"""Training objective: structural similarity, reflectance consistency,
reconstruction fidelity, warped-synthesis photometric error, mask-guided
depth smoothness, and their weighted total.

All terms are differentiable tensor expressions. Validity masks (from the
warp) and semantic label rasters enter as constants. Each loss is zero on
its fixed point: identical inputs, or depth constant within every label.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SSIM_C1 = 0.01**2  # unit dynamic range
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class LossWeights:
    """Balance alpha for the SSIM/L1 mix plus one weight per loss term."""

    alpha: float = 0.85
    reconstruction: float = 0.2
    reflectance: float = 0.2
    synthesis: float = 1.0
    smoothness: float = 0.003

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        for name in ("reconstruction", "reflectance", "synthesis", "smoothness"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


@dataclass(frozen=True)
class SemanticMaskSet:
    """Integer label raster; every pixel belongs to exactly one mask."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be a 2-d integer raster")
        if lab.min() < 0:
            raise ValueError("labels must be nonnegative")
        object.__setattr__(self, "labels", lab)

    def indicator(self, label: int) -> np.ndarray:
        return (self.labels == label).astype(np.float64)


def _as_image(x) -> Tensor:
    t = ad.as_tensor(x)
    if t.ndim == 2:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 3:
        raise ValueError(f"image must be (C, H, W) or (H, W), got {t.shape}")
    return t


def _box3(t: Tensor) -> Tensor:
    """3x3 zero-padded mean pooling per channel (same size)."""
    c = t.shape[0]
    kernel = Tensor(np.full((c, 3, 3), 1.0 / 9.0))
    return ad.depthwise_conv2d(t, kernel, stride=1, padding=1)


def ssim(x, y) -> tuple[Tensor, Tensor]:
    """Mean structural similarity and the per-pixel map.

    Local statistics come from 3x3 zero-padded mean pooling with C1 = 1e-4
    and C2 = 9e-4 for a unit dynamic range. Channels are scored separately
    and averaged into an (H, W) map. Symmetric in its arguments.
    """
    x = _as_image(x)
    y = _as_image(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim operands differ in shape: {x.shape} vs {y.shape}")
    mu_x = _box3(x)
    mu_y = _box3(y)
    xx = _box3(x * x)
    yy = _box3(y * y)
    xy = _box3(x * y)
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    score = num / den
    pixel_map = ad.tmean(score, axis=0)
    return ad.tmean(pixel_map), pixel_map


def _masked_pixel_mean(per_pixel: Tensor, validity: np.ndarray | None) -> Tensor:
    if validity is None:
        return ad.tmean(per_pixel)
    mask = np.asarray(validity, dtype=np.float64)
    if mask.shape != per_pixel.shape:
        raise ValueError(f"validity shape {mask.shape} does not match {per_pixel.shape}")
    count = float(mask.sum())
    if count == 0:
        raise ValueError("empty validity mask")
    return ad.tsum(per_pixel * Tensor(mask)) / count


def _validity_array(validity) -> np.ndarray | None:
    if validity is None:
        return None
    if isinstance(validity, Tensor):
        return validity.data
    return np.asarray(validity, dtype=np.float64)


def reflectance_consistency_loss(r_t, r_warped, validity=None) -> Tensor:
    """Mean absolute reflectance difference between the target frame and the
    warped source frame, over valid pixels."""
    r_t = _as_image(r_t)
    r_warped = _as_image(r_warped)
    if r_t.shape != r_warped.shape:
        raise ValueError(f"reflectance shapes differ: {r_t.shape} vs {r_warped.shape}")
    per_pixel = ad.tmean(ad.tabs(r_t - r_warped), axis=0)
    return _masked_pixel_mean(per_pixel, _validity_array(validity))


def _photometric(a: Tensor, b: Tensor, alpha: float, validity: np.ndarray | None) -> Tensor:
    ssim_mean, ssim_map = ssim(a, b)
    if validity is None:
        ssim_term = ssim_mean
    else:
        ssim_term = _masked_pixel_mean(ssim_map, validity)
    l1_map = ad.tmean(ad.tabs(a - b), axis=0)
    l1_term = _masked_pixel_mean(l1_map, validity)
    return alpha * ((1.0 - ssim_term) * 0.5) + (1.0 - alpha) * l1_term


def reconstruction_loss(target_hat, target, source_hat, source, alpha: float = 0.85) -> Tensor:
    """Fidelity of the decomposition reconstructions for a frame pair: the
    target branch plus the source branch, each an SSIM/L1 mix."""
    branch_t = _photometric(_as_image(target_hat), _as_image(target), alpha, None)
    branch_s = _photometric(_as_image(source_hat), _as_image(source), alpha, None)
    return branch_t + branch_s


def synthesis_loss(warped_hat, target, alpha: float = 0.85, validity=None) -> Tensor:
    """SSIM/L1 mix between the warped-and-relit source frame and the target,
    over valid pixels."""
    return _photometric(_as_image(warped_hat), _as_image(target), alpha, _validity_array(validity))


def masked_smoothness_loss(depth, image, masks: SemanticMaskSet) -> Tensor:
    """Edge-aware depth smoothness, restricted to neighbor pairs that share a
    semantic label.

    Forward differences; a pixel's x-term counts only when its right
    neighbor carries the same label (y analogous). The image gradient
    magnitude is averaged over color channels. The result is the mean over
    contributing terms.
    """
    d = ad.as_tensor(depth)
    if d.ndim != 2:
        raise ValueError(f"depth must be 2-d, got {d.shape}")
    img = _as_image(image)
    labels = masks.labels
    if labels.shape != d.shape or img.shape[1:] != d.shape:
        raise ValueError(f"shape mismatch: depth {d.shape}, image {img.shape}, labels {labels.shape}")
    h, w = d.shape

    same_x = (labels[:, 1:] == labels[:, :-1]).astype(np.float64)
    same_y = (labels[1:, :] == labels[:-1, :]).astype(np.float64)
    n_terms = float(same_x.sum() + same_y.sum())
    if n_terms == 0:
        return Tensor(0.0)

    img_dx = np.mean(np.abs(img.data[:, :, 1:] - img.data[:, :, :-1]), axis=0)
    img_dy = np.mean(np.abs(img.data[:, 1:, :] - img.data[:, :-1, :]), axis=0)

    d_dx = ad.tabs(ad.slice_axis(d, 1, 1, w) - ad.slice_axis(d, 1, 0, w - 1))
    d_dy = ad.tabs(ad.slice_axis(d, 0, 1, h) - ad.slice_axis(d, 0, 0, h - 1))

    term_x = ad.tsum(d_dx * Tensor(np.exp(-img_dx) * same_x))
    term_y = ad.tsum(d_dy * Tensor(np.exp(-img_dy) * same_y))
    return (term_x + term_y) / n_terms


def total_loss(
    reconstruction: Tensor,
    reflectance: Tensor,
    synthesis: Tensor,
    smoothness: Tensor,
    weights: LossWeights,
) -> Tensor:
    """Weighted sum of the four loss terms; rejects non-finite inputs by name."""
    terms = {
        "reconstruction": reconstruction,
        "reflectance": reflectance,
        "synthesis": synthesis,
        "smoothness": smoothness,
    }
    for name, term in terms.items():
        if not np.isfinite(term.data).all():
            raise ValueError(f"loss term '{name}' is not finite")
    return (
        weights.reconstruction * reconstruction
        + weights.reflectance * reflectance
        + weights.synthesis * synthesis
        + weights.smoothness * smoothness
    )
