#!/usr/bin/env python3
"""Two-minute demo: train a small agent and compare it with the baselines.

Runs at 64x64 on a handful of scenes, then prints per-scene PSNR-mu of the
trained agent, the fixed +-2 EV bracket, and the worst-case-SNR scheduler.
"""

import time

import numpy as np

from bracketlab.agent import TrainConfig, run_episode, train
from bracketlab.baselines import (fixed_bracket, radiance_histogram,
                                  snr_optimal_bracket)
from bracketlab.camera import CameraConstants
from bracketlab.env import ExposureEnv, state_from_schedule
from bracketlab.fusion import FusionConfig
from bracketlab.reward import RewardConfig
from bracketlab.scene import SceneSpec, generate_scene


def main() -> None:
    consts = CameraConstants()
    fusion_cfg = FusionConfig()
    reward_cfg = RewardConfig()
    rng = np.random.default_rng(0)
    corpus = [
        generate_scene(SceneSpec(
            width=64, height=64,
            dynamic_range_stops=float(rng.uniform(8, 14)),
            object_count=2, motion_magnitude=float(rng.uniform(5, 40)),
            seed=100 + k))
        for k in range(10)
    ]

    print("training (3200 episodes, single worker)...")
    t0 = time.time()
    result = train(corpus, consts, fusion_cfg, reward_cfg,
                   TrainConfig(episodes=3200, episodes_per_epoch=800, seed=3))
    print(f"  done in {time.time() - t0:.0f}s; "
          f"final mean quality {result.curve[-1]['mean_score']:.4f}")

    print(f"{'scene':>6} {'motion':>7} {'agent':>7} {'fixed':>7} {'snr-opt':>8}")
    scores = []
    for k in range(5):
        scene = generate_scene(SceneSpec(
            width=64, height=64, dynamic_range_stops=11.0, object_count=2,
            motion_magnitude=float(8 + 9 * k), seed=900 + k))
        env = ExposureEnv(scene, consts, fusion_cfg, reward_cfg,
                          episode_seed=55)
        trace, _ = run_episode(env, result.agent, result.agent.feature_cfg,
                               rng=None)
        agent = env.evaluate_state(trace.final_state, with_ssim=False)["psnr_mu"]
        fixed = env.evaluate_state(
            state_from_schedule(fixed_bracket(scene, consts)),
            with_ssim=False)["psnr_mu"]
        snr = env.evaluate_state(
            state_from_schedule(snr_optimal_bracket(
                radiance_histogram(scene), scene.frame_interval, consts)),
            with_ssim=False)["psnr_mu"]
        scores.append((agent, fixed, snr))
        print(f"{900 + k:>6} {8 + 9 * k:>7} {agent:>7.2f} {fixed:>7.2f} "
              f"{snr:>8.2f}")
    means = np.mean(scores, axis=0)
    print(f"{'mean':>6} {'':>7} {means[0]:>7.2f} {means[1]:>7.2f} "
          f"{means[2]:>8.2f}")


if __name__ == "__main__":
    main()
