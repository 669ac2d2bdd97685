"""Desk-scale simulator and RL harness for blur-aware HDR exposure bracketing."""

__version__ = "0.1.0"

from .camera import (CameraConstants, CaptureSettings, ISO_GRID, SHUTTER_GRID,
                     capture, develop, ev_of, itmo_mu, settings_for_ev,
                     simulate_blurred_hdr, supersample_count, synthesize_noise,
                     tonemap_mu)
from .env import ActionSpec, BracketState, EpisodeTrace, ExposureEnv
from .fusion import FusionConfig, fuse, linearize, psnr_mu, ssim_mu
from .reward import RewardConfig, ghost_mask, quality_score, step_penalty, step_reward
from .scene import (RadianceScene, SceneSpec, generate_scene, ground_truth_hdr,
                    importance_mask, motion_field, sample_radiance)

__all__ = [
    "ActionSpec", "BracketState", "CameraConstants", "CaptureSettings",
    "EpisodeTrace", "ExposureEnv", "FusionConfig", "ISO_GRID", "RadianceScene",
    "RewardConfig", "SHUTTER_GRID", "SceneSpec", "capture", "develop", "ev_of",
    "fuse", "generate_scene", "ghost_mask", "ground_truth_hdr",
    "importance_mask", "itmo_mu", "linearize", "motion_field", "psnr_mu",
    "quality_score", "sample_radiance", "settings_for_ev",
    "simulate_blurred_hdr", "ssim_mu", "step_penalty", "step_reward",
    "supersample_count", "synthesize_noise", "tonemap_mu",
]
