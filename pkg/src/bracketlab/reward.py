"""Reward terms for the bracketing MDP.

The state quality is the negative sum of three tone-mapped L2 terms:
whole-frame construction error, error over the authored importance mask, and
error over the motion-derived ghost mask.  Each term is mean-normalised by
its active pixel count so the weights stay comparable across mask sizes.
Per-action rewards are quality differences minus a quadratic step penalty for
brackets longer than the free-step count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import tonemap_mu


@dataclass(frozen=True)
class RewardConfig:
    flow_threshold: float = 0.2  # K: normalised flow magnitude cutoff
    step_alpha: float = 0.5
    free_steps: int = 3  # H
    w_construction: float = 1.0
    w_priority: float = 1.0
    w_ghost: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.flow_threshold < 1.0:
            raise ValueError("flow_threshold must lie in (0, 1)")
        if self.step_alpha < 0:
            raise ValueError("step_alpha must be non-negative")
        if self.free_steps < 1:
            raise ValueError("free_steps must be >= 1")
        if min(self.w_construction, self.w_priority, self.w_ghost) < 0:
            raise ValueError("term weights must be non-negative")


def ghost_mask(flow: np.ndarray, threshold: float = 0.2) -> np.ndarray:
    """Binary mask of pixels whose normalised flow magnitude exceeds K.

    Magnitudes are normalised by the largest magnitude in the field, so the
    mask is invariant to uniform scaling; an all-zero field gives an empty
    mask.
    """
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow must be finite")
    mag = np.sqrt(flow[..., 0] ** 2 + flow[..., 1] ** 2)
    peak = float(mag.max())
    if peak == 0.0:
        return np.zeros(mag.shape)
    return (mag / peak > threshold).astype(np.float64)


def _masked_l2(sq_err: np.ndarray, mask: np.ndarray) -> float:
    active = int(np.count_nonzero(mask))
    if active == 0:
        return 0.0
    return float(np.sum(mask * sq_err) / active)


def quality_score(fused: np.ndarray, gt: np.ndarray, importance: np.ndarray,
                  ghost: np.ndarray, cfg: RewardConfig) -> float:
    """Non-positive state quality; zero iff fused matches gt on active pixels."""
    if fused.shape != gt.shape or importance.shape != gt.shape or ghost.shape != gt.shape:
        raise ValueError("geometry mismatch between images and masks")
    peak = float(gt.max())
    if peak <= 0:
        raise ValueError("ground truth has no positive radiance")
    a = tonemap_mu(np.clip(fused / peak, 0.0, 1.0))
    b = tonemap_mu(np.clip(gt / peak, 0.0, 1.0))
    sq = (a - b) ** 2
    construction = float(np.mean(sq))
    priority = _masked_l2(sq, importance)
    ghost_term = _masked_l2(sq, ghost)
    return -(cfg.w_construction * construction
             + cfg.w_priority * priority
             + cfg.w_ghost * ghost_term)


def step_penalty(frame_index: int, cfg: RewardConfig) -> float:
    """Quadratic penalty for frames past the free budget: alpha*(j-H)^2."""
    if frame_index < 1:
        raise ValueError("frame_index must be >= 1")
    if frame_index <= cfg.free_steps:
        return 0.0
    return cfg.step_alpha * (frame_index - cfg.free_steps) ** 2


def step_reward(score_prev: float, score_next: float, frame_index: int,
                cfg: RewardConfig) -> float:
    """Per-action reward: quality improvement minus the step penalty."""
    return score_next - score_prev - step_penalty(frame_index, cfg)
