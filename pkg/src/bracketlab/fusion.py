"""Deterministic reference-based exposure fusion and tone-mapped metrics.

The fusion oracle linearises each capture back to radiance, rejects invalid
(saturated / noise-floor) pixels, deghosts non-reference contributions that
disagree with the reference estimate, and averages the survivors with tent
weights scaled by exposure gain.  It stands in for a learned fusion network:
deterministic, classical, and sufficient to rank brackets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .camera import CameraConstants, CaptureSettings, LdrImage, tonemap_mu

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class FusionConfig:
    saturation_cutoff: float = 0.95
    noise_floor: float = 0.05
    deghost_threshold: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.noise_floor < self.saturation_cutoff < 1.0:
            raise ValueError("need 0 < noise_floor < saturation_cutoff < 1")
        if self.deghost_threshold <= 0:
            raise ValueError("deghost_threshold must be positive")


def linearize(ldr: LdrImage, consts: CameraConstants,
              cfg: FusionConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Invert raw formation below saturation.

    Returns the radiance estimate (clamped at zero) and a validity mask that
    excludes saturated pixels and pixels at or below the noise floor.
    """
    if ldr.settings is None:
        raise ValueError("LDR image carries no gain metadata")
    cfg = cfg or FusionConfig()
    gain = consts.counts_per_radiance(ldr.settings.iso, ldr.settings.shutter_s)
    counts = ldr.values * consts.full_scale
    radiance = np.clip((counts - consts.dark_offset) / gain, 0.0, None)
    valid = (~ldr.saturated
             & (ldr.values < cfg.saturation_cutoff)
             & (ldr.values > cfg.noise_floor))
    return radiance, valid


def _tent(values: np.ndarray) -> np.ndarray:
    return np.clip(1.0 - np.abs(2.0 * values - 1.0), 1e-4, None)


def fuse(bracket: list[tuple[LdrImage, CaptureSettings]], ref_index: int,
         consts: CameraConstants, cfg: FusionConfig | None = None) -> np.ndarray:
    """Merge a bracket into one linear radiance estimate.

    Weights are tent functions of the LDR value (peaked at mid-exposure)
    scaled by exposure gain, which makes better-exposed, better-quantised
    frames dominate.  Non-reference estimates deviating from the reference by
    more than the deghost threshold (relative, where the reference is valid)
    are discarded.  Pixels valid in no frame fall back to the reference's
    clamped estimate.
    """
    if not bracket:
        raise ValueError("empty bracket")
    if not 0 <= ref_index < len(bracket):
        raise IndexError("ref_index outside bracket")
    cfg = cfg or FusionConfig()

    estimates, valids, weights = [], [], []
    for ldr, settings in bracket:
        radiance, valid = linearize(ldr, consts, cfg)
        gain = consts.counts_per_radiance(settings.iso, settings.shutter_s)
        estimates.append(radiance)
        valids.append(valid)
        weights.append(_tent(ldr.values) * gain)

    ref_est = estimates[ref_index]
    ref_valid = valids[ref_index]
    scale = np.maximum(np.abs(ref_est), 1e-12)

    num = np.zeros_like(ref_est)
    den = np.zeros_like(ref_est)
    for k, (est, valid, wgt) in enumerate(zip(estimates, valids, weights)):
        keep = valid.copy()
        if k != ref_index:
            ghosted = ref_valid & (np.abs(est - ref_est) > cfg.deghost_threshold * scale)
            keep &= ~ghosted
        w = np.where(keep, wgt, 0.0)
        num += w * est
        den += w

    covered = den > 0.0
    fused = np.where(covered, num / np.where(covered, den, 1.0), ref_est)
    return np.clip(fused, 0.0, None)


def _normalized_pair(hdr: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if hdr.shape != gt.shape:
        raise ValueError(f"geometry mismatch: {hdr.shape} vs {gt.shape}")
    peak = float(gt.max())
    if peak <= 0:
        raise ValueError("ground truth has no positive radiance")
    a = np.clip(hdr / peak, 0.0, 1.0)
    b = np.clip(gt / peak, 0.0, 1.0)
    return tonemap_mu(a), tonemap_mu(b)


def psnr_mu(hdr: np.ndarray, gt: np.ndarray) -> float:
    """PSNR in dB after peak normalisation and mu-law tone mapping."""
    a, b = _normalized_pair(hdr, gt)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_SSIM_KERNEL = _gaussian_kernel()


def ssim_mu(hdr: np.ndarray, gt: np.ndarray) -> float:
    """SSIM after mu-law tone mapping, 11x11 Gaussian window, sigma 1.5."""
    a, b = _normalized_pair(hdr, gt)
    k = _SSIM_KERNEL
    c1 = (0.01) ** 2
    c2 = (0.03) ** 2
    mu_a = convolve2d(a, k, mode="valid")
    mu_b = convolve2d(b, k, mode="valid")
    mu_aa = convolve2d(a * a, k, mode="valid")
    mu_bb = convolve2d(b * b, k, mode="valid")
    mu_ab = convolve2d(a * b, k, mode="valid")
    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b
    ssim_map = (((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(ssim_map.mean())
