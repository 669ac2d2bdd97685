"""Reference schedulers and the exhaustive optimality oracle.

All baselines emit a 3-frame schedule of (role, settings) pairs whose total
shutter time fits the capture budget, so they are directly comparable to the
trained agent through the shared evaluation path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .camera import (CameraConstants, CaptureSettings, ISO_GRID, LdrImage,
                     MIN_SHUTTER, SHUTTER_GRID, itmo_mu, tonemap_mu)
from .env import (ActionSpec, BracketState, ExposureEnv, _grid_arrays,
                  MAX_FRAMES_DEFAULT)
from .errors import DegenerateSceneError, GridTooLargeError
from .fusion import FusionConfig, linearize
from .reward import RewardConfig
from .scene import RadianceScene, ground_truth_hdr

Schedule = list[tuple[str, CaptureSettings]]

AUTO_ISO = 200
MID_GRAY = 0.18
ORACLE_CANDIDATE_CAP = 100_000


def fixed_bracket(scene: RadianceScene, consts: CameraConstants) -> Schedule:
    """Auto-exposed ISO-200 reference with the standard +-2 stop sides."""
    env = ExposureEnv(scene, consts, FusionConfig(), RewardConfig())
    state = env.initial_bracket()
    return [(f.role, f.settings) for f in state.frames]


def _snap_shutter(t_star: float, max_shutter: float) -> float:
    cands = [t for t in SHUTTER_GRID if t <= max_shutter + 1e-12]
    if not cands:
        raise DegenerateSceneError("no shutter fits the remaining budget")
    t_star = min(max(t_star, min(cands)), max(cands))
    return min(cands, key=lambda t: abs(np.log2(t) - np.log2(t_star)))


def histogram_heuristic_bracket(previews: list[LdrImage],
                                consts: CameraConstants,
                                frame_interval: float,
                                seed: int = 0,
                                fallback: Schedule | None = None) -> Schedule:
    """Brightness-clustering scheduler: k-means over tone-mapped luminance.

    Clusters the linearised preview radiance (k=3, seeded sampling, 20
    iteration cap) and maps each cluster centre to the ISO-200 shutter that
    exposes it to mid-gray, snapped to the grid under the shared budget.
    Degenerate single-intensity previews return ``fallback`` when given.
    """
    pool = []
    for ldr in previews:
        est, valid = linearize(ldr, consts)
        pool.append(est[valid])
    values = np.concatenate(pool) if pool else np.empty(0)

    def degenerate() -> Schedule:
        if fallback is not None:
            return fallback
        raise DegenerateSceneError("previews too uniform for clustering")

    if values.size < 3:
        return degenerate()
    peak = float(values.max())
    if peak <= 0:
        return degenerate()
    x = tonemap_mu(np.clip(values / peak, 0.0, 1.0))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    if x.size > 8192:
        x = x[rng.choice(x.size, size=8192, replace=False)]
    x = np.sort(x)
    if float(x[-1] - x[0]) < 1e-6:
        return degenerate()

    centers = np.quantile(x, [1 / 6, 3 / 6, 5 / 6])
    for _ in range(20):
        assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
        moved = False
        for k in range(3):
            members = x[assign == k]
            if members.size:
                c = float(members.mean())
                moved |= c != centers[k]
                centers[k] = c
        if not moved:
            break
    if np.unique(np.round(centers, 9)).size < 3:
        return degenerate()

    # Brightest cluster needs the least exposure: that is the under frame.
    order = np.argsort(centers)[::-1]  # bright, middle, dark
    phi = [float(itmo_mu(float(centers[k])) * peak) for k in order]
    t_stars = [MID_GRAY * consts.full_scale * consts.gain_unit / (AUTO_ISO * p)
               for p in phi]
    iso_index = ISO_GRID.index(AUTO_ISO)
    # Budget-aware snapping, mid first (same discipline as the MDP).
    t_mid = _snap_shutter(t_stars[1], frame_interval - 2 * MIN_SHUTTER)
    t_under = _snap_shutter(t_stars[0], frame_interval - t_mid - MIN_SHUTTER)
    t_over = _snap_shutter(t_stars[2], frame_interval - t_mid - t_under)

    def settings(t):
        return CaptureSettings.from_indices(iso_index, SHUTTER_GRID.index(t),
                                            consts)

    return [("under", settings(t_under)), ("mid", settings(t_mid)),
            ("over", settings(t_over))]


def radiance_histogram(scene: RadianceScene,
                       n_bins: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Log-spaced occupancy histogram of the scene's positive radiance."""
    frame = ground_truth_hdr(scene, 0.0)
    positive = frame[frame > 0]
    lo, hi = float(positive.min()), float(positive.max())
    edges = np.geomspace(lo, hi * (1 + 1e-12), n_bins + 1)
    counts, _ = np.histogram(positive, bins=edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    return centers, counts


def _snr_matrix(levels: np.ndarray, consts: CameraConstants,
                fusion_cfg: FusionConfig | None = None) -> np.ndarray:
    """Worst-case-SNR table: per grid setting, per radiance level.

    Signal follows the raw-formation mean; the noise variance is the
    three-term model.  Levels a frame cannot actually deliver to fusion
    (saturated, or under the fusion noise floor) score zero.
    """
    fusion_cfg = fusion_cfg or FusionConfig()
    _, shutters, isos, _ = _grid_arrays(consts.f_number)
    gain = isos / consts.gain_unit
    electrons = levels[None, :] * shutters[:, None]
    signal = electrons * gain[:, None]
    var = (electrons * gain[:, None] ** 2
           + consts.sigma_read ** 2 * gain[:, None] ** 2 + consts.sigma_adc ** 2)
    snr = signal / np.sqrt(var)
    counts = signal + consts.dark_offset
    usable = ((counts < fusion_cfg.saturation_cutoff * consts.full_scale)
              & (counts > fusion_cfg.noise_floor * consts.full_scale))
    return np.where(usable, snr, 0.0)


def snr_optimal_bracket(histogram: tuple[np.ndarray, np.ndarray],
                        time_budget: float, consts: CameraConstants,
                        fusion_cfg: FusionConfig | None = None) -> Schedule:
    """Exhaustive worst-case-SNR scheduler under a total shutter budget.

    Searches every unordered 3-frame grid combination with total shutter
    time within budget, maximising the minimum per-occupied-bin SNR where
    bins combine across frames by their best frame.  The min-SNR objective
    plateaus once some bin is uncoverable, so ties cascade: higher mean-bin
    SNR, then lower total ISO, then longer total shutter.
    """
    levels, counts = histogram
    occupied = np.asarray(counts) > 0
    if not occupied.any():
        raise DegenerateSceneError("empty radiance histogram")
    evs, shutters, isos, _ = _grid_arrays(consts.f_number)
    n = len(shutters)
    if 3 * MIN_SHUTTER > time_budget + 1e-12:
        raise DegenerateSceneError("budget below the smallest 3-frame total")
    snr = _snr_matrix(np.asarray(levels, float)[occupied], consts,
                      fusion_cfg).astype(np.float64)

    ii, jj = np.triu_indices(n)
    pair_snr = np.maximum(snr[ii], snr[jj])
    pair_t = shutters[ii] + shutters[jj]
    pair_iso = isos[ii] + isos[jj]

    best = (-np.inf, -np.inf, np.inf, -np.inf, None)
    for k in range(n):
        usable = (jj <= k) & (pair_t + shutters[k] <= time_budget + 1e-12)
        if not usable.any():
            continue
        combined = np.maximum(pair_snr[usable], snr[k])
        value = combined.min(axis=1)
        mean = combined.mean(axis=1)
        iso_tot = pair_iso[usable] + isos[k]
        t_tot = pair_t[usable] + shutters[k]
        order = np.lexsort((-t_tot, iso_tot, -mean, -value))
        b = order[0]
        cand = (float(value[b]), float(mean[b]), float(iso_tot[b]),
                float(t_tot[b]),
                (int(ii[usable][b]), int(jj[usable][b]), k))
        if (cand[0], cand[1], -cand[2], cand[3]) > (best[0], best[1],
                                                    -best[2], best[3]):
            best = cand
    if best[4] is None:
        raise DegenerateSceneError("no feasible 3-frame combination in budget")

    chosen = [CaptureSettings.from_indices(f // len(SHUTTER_GRID),
                                           f % len(SHUTTER_GRID), consts)
              for f in best[4]]
    # Highest EV collects the least light: that frame takes the under role.
    chosen.sort(key=lambda s: -s.ev)
    return [("under", chosen[0]), ("mid", chosen[1]), ("over", chosen[2])]


def shutter_only_agent(scenes, consts, fusion_cfg, reward_cfg, train_cfg):
    """Train the RL agent with its ISO head frozen to the fixed-ISO value."""
    from dataclasses import replace
    from .agent import train
    cfg = replace(train_cfg, fixed_iso=AUTO_ISO)
    return train(scenes, consts, fusion_cfg, reward_cfg, cfg)


@dataclass
class OracleCandidate:
    actions: tuple
    frames: int
    quality: float
    total_return: float


@dataclass
class OracleResult:
    best_state: BracketState
    best_quality: float
    best_return_state: BracketState
    best_return: float
    candidates: list[OracleCandidate]


def exhaustive_oracle(scene: RadianceScene, iso_indices, shutter_indices,
                      consts: CameraConstants, fusion_cfg: FusionConfig,
                      reward_cfg: RewardConfig, max_actions: int = 3,
                      episode_seed: int = 0,
                      max_frames: int = MAX_FRAMES_DEFAULT) -> OracleResult:
    """Evaluate every stage-action trajectory on reduced grids.

    Sensor noise is a pure function of the bracket state (state-keyed
    seeding), so every candidate sees identical noise for identical
    settings and the maximum is exact.  ``max_actions`` beyond 3 explores
    optional extra frames; trajectories always end with a stop.
    """
    grid = list(itertools.product(iso_indices, shutter_indices))
    per_stage = len(grid)
    if per_stage > 16:
        raise GridTooLargeError(f"{per_stage} actions per stage exceeds 16")
    if not 1 <= max_actions <= 4:
        raise GridTooLargeError("oracle supports 1..4 actions")
    total = per_stage ** min(max_actions, 3) * (
        (per_stage + 1) ** max(0, max_actions - 3))
    if total > ORACLE_CANDIDATE_CAP:
        raise GridTooLargeError(f"{total} candidates exceed the guard")

    env = ExposureEnv(scene, consts, fusion_cfg, reward_cfg,
                      episode_seed=episode_seed, max_frames=max_frames)
    candidates: list[OracleCandidate] = []
    best_q = (-np.inf, None)
    best_r = (-np.inf, None)

    stage_actions = [ActionSpec(i, j) for i, j in grid]

    def rollout(prefix: tuple[ActionSpec, ...]):
        env.reset(episode_seed=episode_seed)
        total_reward = 0.0
        state = env.state
        for a in prefix:
            state, r, done, _ = env.step(a)
            total_reward += r
            if done:
                break
        return state, total_reward

    def record(actions: tuple[ActionSpec, ...]):
        nonlocal best_q, best_r
        state, total_reward = rollout(actions)
        quality = env.score_state(state)
        cand = OracleCandidate(
            actions=tuple((a.iso_index, a.shutter_index, a.stop) for a in actions),
            frames=len(state.frames), quality=quality, total_return=total_reward)
        candidates.append(cand)
        if quality > best_q[0]:
            best_q = (quality, state)
        if total_reward > best_r[0]:
            best_r = (total_reward, state)

    base_combos = itertools.product(stage_actions, repeat=min(max_actions, 3))
    for combo in base_combos:
        if max_actions <= 3:
            record(tuple(combo))
        else:
            record(tuple(combo))  # stop immediately after three frames
            for extra in stage_actions:
                record(tuple(combo) + (extra,))

    return OracleResult(best_state=best_q[1], best_quality=best_q[0],
                        best_return_state=best_r[1], best_return=best_r[0],
                        candidates=candidates)


def schedule_of(state: BracketState) -> Schedule:
    return [(f.role, f.settings) for f in state.frames]
