"""Sequential exposure-bracketing MDP.

State: the current bracket of (role, settings) frames captured back-to-back
within one frame interval, in order under, mid, over, extras.  Actions pick
one (ISO, shutter) grid pair per stage:

* stage 0: the action sets the mid frame; sides are customised to +-2
  compensation stops around it.
* stage 1: the action sets the under frame; mid is inherited bit-equal and
  the over frame is customised to mirror the measured under offset.
* stage 2: the action sets the over frame directly (asymmetric allowed).
* stage >= 3: a stop flag ends the episode, otherwise the action appends an
  extra frame, until the frame cap forces termination.

Settings realisation is budget-aware: every frame is chosen as the
nearest-EV grid point whose shutter fits the remaining frame-interval budget,
and stage-0/1 choices are further restricted so the customised side frames
stay realisable within grid tolerance.  Rewards are quality-score differences
minus the step penalty; per-frame sensor noise is seeded from the state
itself, so equal states always render identically.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import camera
from .camera import (CameraConstants, CaptureSettings, LdrImage, MIN_SHUTTER,
                     ISO_GRID, SHUTTER_GRID)
from .errors import DegenerateSceneError, OverBudgetError
from .fusion import FusionConfig, fuse, psnr_mu, ssim_mu
from .reward import RewardConfig, ghost_mask, quality_score, step_penalty
from .scene import RadianceScene, ground_truth_hdr, motion_field

MAX_FRAMES_DEFAULT = 5
AUTO_EXPOSURE_TARGET = 0.18
AUTO_EXPOSURE_ISO = 200
INITIAL_OFFSET_STOPS = 2.0

ROLE_ORDER = ("under", "mid", "over")


@dataclass(frozen=True)
class BracketFrame:
    role: str
    settings: CaptureSettings


@dataclass(frozen=True)
class ActionSpec:
    iso_index: int
    shutter_index: int
    stop: bool = False


@dataclass(frozen=True)
class BracketState:
    frames: tuple[BracketFrame, ...]
    stage: int
    done: bool = False

    @property
    def ref_index(self) -> int:
        for k, f in enumerate(self.frames):
            if f.role == "mid":
                return k
        raise ValueError("bracket has no mid frame")

    def total_shutter(self) -> float:
        return sum(f.settings.shutter_s for f in self.frames)

    def key(self) -> tuple:
        return tuple((f.role, f.settings.iso_index, f.settings.shutter_index)
                     for f in self.frames)


@dataclass
class TraceStep:
    state: BracketState
    action: ActionSpec
    reward: float
    score_after: float
    projected: bool


@dataclass
class EpisodeTrace:
    initial_state: BracketState
    initial_score: float
    steps: list[TraceStep]
    final_state: BracketState

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def final_score(self) -> float:
        return self.steps[-1].score_after if self.steps else self.initial_score

    def to_dict(self) -> dict:
        def frames(state):
            return [
                {"role": f.role, "iso": f.settings.iso,
                 "shutter_s": f.settings.shutter_s, "ev": f.settings.ev}
                for f in state.frames
            ]
        return {
            "initial": {"frames": frames(self.initial_state),
                        "score": self.initial_score},
            "steps": [
                {"action": {"iso_index": s.action.iso_index,
                            "shutter_index": s.action.shutter_index,
                            "stop": s.action.stop},
                 "reward": s.reward, "score_after": s.score_after,
                 "projected": s.projected}
                for s in self.steps
            ],
            "final": {"frames": frames(self.final_state),
                      "score": self.final_score},
        }


def slot_starts(frames: tuple[BracketFrame, ...], frame_interval: float) -> tuple[float, ...]:
    """Back-to-back capture slot starts in normalised time, first at u=0."""
    total = sum(f.settings.shutter_s for f in frames)
    if total > frame_interval * (1 + 1e-9):
        raise OverBudgetError(
            f"bracket shutter total {total:.5f}s exceeds interval {frame_interval:.5f}s"
        )
    starts, t = [], 0.0
    for f in frames:
        starts.append(t / frame_interval)
        t += f.settings.shutter_s
    return tuple(starts)


@lru_cache(maxsize=8)
def _grid_arrays(f_number: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flat (ev, shutter, iso, iso_idx*19+sh_idx) arrays over the 456 grid points."""
    consts = CameraConstants(f_number=f_number)
    table = camera.grid_ev_table(consts)
    ii, jj = np.meshgrid(np.arange(len(ISO_GRID)), np.arange(len(SHUTTER_GRID)),
                         indexing="ij")
    evs = table.ravel()
    shutters = np.array(SHUTTER_GRID)[jj.ravel()]
    isos = np.array(ISO_GRID)[ii.ravel()]
    flat = ii.ravel() * len(SHUTTER_GRID) + jj.ravel()
    return evs, shutters, isos, flat


@lru_cache(maxsize=8)
def grid_symmetry_tol(f_number: float) -> float:
    """Half the largest adjacent gap in the sorted achievable EV set."""
    evs, _, _, _ = _grid_arrays(f_number)
    gaps = np.diff(np.unique(evs))
    return float(gaps.max()) / 2.0 + 1e-9


def _pick_nearest(target_ev: float, allowed: np.ndarray, f_number: float) -> int:
    """Flat grid index nearest to target among allowed; lower ISO, longer T ties."""
    evs, shutters, isos, _ = _grid_arrays(f_number)
    diff = np.where(allowed, np.abs(evs - target_ev), np.inf)
    best = diff.min()
    if not np.isfinite(best):
        raise OverBudgetError("no grid setting fits the remaining shutter budget")
    cands = np.nonzero(diff <= best + 1e-15)[0]
    order = np.lexsort((-shutters[cands], isos[cands]))
    return int(cands[order[0]])


def _settings_from_flat(flat_index: int, consts: CameraConstants) -> CaptureSettings:
    i, j = divmod(flat_index, len(SHUTTER_GRID))
    return CaptureSettings.from_indices(i, j, consts)


@lru_cache(maxsize=8)
def _mid_feasible(f_number: float, frame_interval: float) -> np.ndarray:
    """Boolean mask over flat grid: mids whose +-2 sides realise within tolerance."""
    evs, shutters, _, _ = _grid_arrays(f_number)
    tol = grid_symmetry_tol(f_number)
    n = evs.size
    ok = np.zeros(n, dtype=bool)
    for c in range(n):
        t_mid = shutters[c]
        if t_mid > frame_interval - 2 * MIN_SHUTTER + 1e-12:
            continue
        cap_u = frame_interval - t_mid - MIN_SHUTTER
        allowed_u = shutters <= cap_u + 1e-12
        diff_u = np.where(allowed_u, np.abs(evs - (evs[c] + INITIAL_OFFSET_STOPS)), np.inf)
        u = int(np.argmin(diff_u))
        if diff_u[u] > tol:
            continue
        cap_o = frame_interval - t_mid - shutters[u]
        allowed_o = shutters <= cap_o + 1e-12
        diff_o = np.where(allowed_o, np.abs(evs - (evs[c] - INITIAL_OFFSET_STOPS)), np.inf)
        o = int(np.argmin(diff_o))
        if diff_o[o] > tol:
            continue
        ok[c] = True
    return ok


def customize(mid: CaptureSettings, offset_stops: float,
              consts: CameraConstants,
              max_shutter: float | None = None) -> CaptureSettings:
    """Derive a side frame from the mid frame by a compensation offset.

    Positive offsets brighten: compensation +k targets EV(mid) - k under the
    sign convention that compensation stops negate EV offsets.  Out-of-span
    targets propagate :class:`EvOutOfRangeError`.
    """
    return camera.settings_for_ev(mid.ev - offset_stops, consts,
                                  max_shutter=max_shutter)


@lru_cache(maxsize=4096)
def _under_feasible_for_mid(f_number: float, frame_interval: float,
                            mid_flat: int) -> np.ndarray:
    evs, shutters, _, _ = _grid_arrays(f_number)
    tol = grid_symmetry_tol(f_number)
    mid_ev = evs[mid_flat]
    mid_t = shutters[mid_flat]
    cand = shutters <= frame_interval - mid_t - MIN_SHUTTER + 1e-12
    targets = 2.0 * mid_ev - evs
    caps = frame_interval - mid_t - shutters
    pair_ok = ((shutters[None, :] <= caps[:, None] + 1e-12)
               & (np.abs(evs[None, :] - targets[:, None]) <= tol))
    out = cand & pair_ok.any(axis=1)
    out.flags.writeable = False
    return out


class ExposureEnv:
    """One scene's bracketing episode; render and score caches are per-env."""

    def __init__(self, scene: RadianceScene, consts: CameraConstants,
                 fusion_cfg: FusionConfig, reward_cfg: RewardConfig,
                 episode_seed: int = 0, max_frames: int = MAX_FRAMES_DEFAULT,
                 iso_lock: int | None = None):
        self.scene = scene
        self.consts = consts
        self.fusion_cfg = fusion_cfg
        self.reward_cfg = reward_cfg
        self.max_frames = max_frames
        self.episode_seed = episode_seed
        self._evs, self._shutters, self._isos, _ = _grid_arrays(consts.f_number)
        self._tol = grid_symmetry_tol(consts.f_number)
        self._mid_ok = _mid_feasible(consts.f_number, scene.frame_interval)
        if not self._mid_ok.any():
            raise DegenerateSceneError("no feasible mid setting for this interval")
        # iso_lock pins agent-chosen frames to one ISO row (shutter-only
        # ablation); customised side frames stay unconstrained.
        self.iso_lock = iso_lock
        self._lock_index = None if iso_lock is None else ISO_GRID.index(iso_lock)
        if self._lock_index is not None:
            row = self._isos == iso_lock
            if not (self._mid_ok & row).any():
                raise DegenerateSceneError("no feasible mid at the locked ISO")
        self._capture_cache: dict[tuple, LdrImage] = {}
        self._score_cache: dict[tuple, float] = {}
        self._gt_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._initial: BracketState | None = None
        self.state: BracketState | None = None

    # -- bracket construction ------------------------------------------------

    def _realize(self, target_ev: float, max_shutter: float,
                 iso_index: int | None = None) -> CaptureSettings:
        allowed = self._shutters <= max_shutter + 1e-12
        if iso_index is not None:
            allowed = allowed & (self._isos == ISO_GRID[iso_index])
        return _settings_from_flat(_pick_nearest(target_ev, allowed,
                                                 self.consts.f_number), self.consts)

    def _customized_sides(self, mid: CaptureSettings) -> tuple[CaptureSettings, CaptureSettings]:
        dtau = self.scene.frame_interval
        under = self._realize(mid.ev + INITIAL_OFFSET_STOPS,
                              dtau - mid.shutter_s - MIN_SHUTTER)
        over = self._realize(mid.ev - INITIAL_OFFSET_STOPS,
                             dtau - mid.shutter_s - under.shutter_s)
        return under, over

    def _realize_mid(self, desired_ev: float,
                     iso_index: int | None = None) -> CaptureSettings:
        """Nearest feasible mid; optionally restricted to one ISO."""
        allowed = self._mid_ok.copy()
        if iso_index is not None:
            mask = np.zeros_like(allowed)
            lo = iso_index * len(SHUTTER_GRID)
            mask[lo:lo + len(SHUTTER_GRID)] = True
            allowed &= mask
            if not allowed.any():
                raise DegenerateSceneError("no feasible mid at the requested ISO")
        return _settings_from_flat(
            _pick_nearest(desired_ev, allowed, self.consts.f_number), self.consts)

    def _under_feasible(self, mid: CaptureSettings) -> np.ndarray:
        """Unders whose mirrored over frame realises within tolerance."""
        mid_flat = mid.iso_index * len(SHUTTER_GRID) + mid.shutter_index
        return _under_feasible_for_mid(self.consts.f_number,
                                       self.scene.frame_interval, mid_flat)

    def initial_bracket(self) -> BracketState:
        """Auto-exposed ISO-200 reference with +-2 compensation sides."""
        frame0 = ground_truth_hdr(self.scene, 0.0)
        phi_mean = float(frame0.mean())
        phi_max = float(frame0.max())
        full = self.consts.full_scale
        dim_gain = self.consts.counts_per_radiance(ISO_GRID[0], MIN_SHUTTER)
        bright_gain = self.consts.counts_per_radiance(
            ISO_GRID[-1], self.scene.frame_interval - 2 * MIN_SHUTTER)
        if phi_max * bright_gain < 1.0:
            raise DegenerateSceneError("scene too dark for any grid setting")
        if float(frame0.min()) * dim_gain >= full:
            raise DegenerateSceneError("scene saturates every grid setting")
        if phi_mean <= 0:
            raise DegenerateSceneError("scene has no radiance")
        t_star = AUTO_EXPOSURE_TARGET * full * self.consts.gain_unit / (
            phi_mean * AUTO_EXPOSURE_ISO)
        iso_index = ISO_GRID.index(AUTO_EXPOSURE_ISO)
        target_ev = camera.ev_of(AUTO_EXPOSURE_ISO,
                                 min(max(t_star, MIN_SHUTTER), max(SHUTTER_GRID)),
                                 self.consts)
        mid = self._realize_mid(target_ev, iso_index=iso_index)
        under, over = self._customized_sides(mid)
        frames = (BracketFrame("under", under), BracketFrame("mid", mid),
                  BracketFrame("over", over))
        return BracketState(frames=frames, stage=0)

    # -- MDP interface -------------------------------------------------------

    def reset(self, episode_seed: int | None = None) -> BracketState:
        if episode_seed is not None and episode_seed != self.episode_seed:
            self.episode_seed = episode_seed
            self._capture_cache.clear()
            self._score_cache.clear()
        if self._initial is None:
            self._initial = self.initial_bracket()
        self.state = self._initial
        return self.state

    def step(self, action: ActionSpec) -> tuple[BracketState, float, bool, dict]:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        state = self.state
        if state.done:
            raise RuntimeError("step() after episode end")
        if not 0 <= action.iso_index < len(ISO_GRID):
            raise ValueError(f"iso_index {action.iso_index} out of range")
        if not 0 <= action.shutter_index < len(SHUTTER_GRID):
            raise ValueError(f"shutter_index {action.shutter_index} out of range")
        if action.stop and state.stage < 3:
            raise ValueError("stop flag is only valid from stage 3 onwards")

        if action.stop:
            new_state = replace(state, done=True)
            self.state = new_state
            score = self.score_state(state)
            return new_state, 0.0, True, {"projected": False, "score": score,
                                          "stopped": True}

        requested = CaptureSettings.from_indices(action.iso_index,
                                                 action.shutter_index, self.consts)
        dtau = self.scene.frame_interval
        frames = list(state.frames)
        projected = False
        forced_stop = False

        lock = self._lock_index
        if lock is not None and action.iso_index != lock:
            requested = CaptureSettings.from_indices(lock, action.shutter_index,
                                                     self.consts)
            projected = True

        if state.stage == 0:
            req_flat = requested.iso_index * len(SHUTTER_GRID) + requested.shutter_index
            if self._mid_ok[req_flat]:
                mid = requested
            else:
                mid = self._realize_mid(requested.ev, iso_index=lock)
                projected = True
            under, over = self._customized_sides(mid)
            frames = [BracketFrame("under", under), BracketFrame("mid", mid),
                      BracketFrame("over", over)]
        elif state.stage == 1:
            mid = state.frames[1].settings
            feasible = self._under_feasible(mid)
            if lock is not None:
                feasible = feasible & (self._isos == ISO_GRID[lock])
            req_flat = requested.iso_index * len(SHUTTER_GRID) + requested.shutter_index
            if feasible[req_flat]:
                under = requested
            else:
                projected = True
                if not feasible.any():
                    # Mirror tolerance unattainable: fall back to the budget
                    # constraint alone and mirror best-effort.
                    feasible = self._shutters <= (dtau - mid.shutter_s
                                                  - MIN_SHUTTER + 1e-12)
                    if lock is not None:
                        feasible = feasible & (self._isos == ISO_GRID[lock])
                if feasible.any():
                    under = _settings_from_flat(
                        _pick_nearest(requested.ev, feasible, self.consts.f_number),
                        self.consts)
                else:
                    under = state.frames[0].settings  # keep; mirrors stay valid
            over = self._realize(2.0 * mid.ev - under.ev,
                                 dtau - mid.shutter_s - under.shutter_s)
            frames[0] = BracketFrame("under", under)
            frames[2] = BracketFrame("over", over)
        elif state.stage == 2:
            used = sum(f.settings.shutter_s for f in frames[:2])
            over = self._realize(requested.ev, dtau - used, iso_index=lock)
            if over != requested:
                projected = True
            frames[2] = BracketFrame("over", over)
        else:
            budget = dtau - state.total_shutter()
            if budget < MIN_SHUTTER - 1e-12:
                new_state = replace(state, done=True)
                self.state = new_state
                score = self.score_state(state)
                return new_state, 0.0, True, {"projected": False, "score": score,
                                              "stopped": True, "forced_stop": True}
            extra = self._realize(requested.ev, budget, iso_index=lock)
            if extra != requested:
                projected = True
            frames.append(BracketFrame("extra", extra))

        done = len(frames) >= self.max_frames and state.stage >= 2
        new_state = BracketState(frames=tuple(frames), stage=state.stage + 1,
                                 done=done)
        prev_score = self.score_state(state)
        next_score = self.score_state(new_state)
        frame_index = state.stage + 1
        reward = next_score - prev_score - step_penalty(frame_index, self.reward_cfg)
        self.state = new_state
        info = {"projected": projected, "score": next_score,
                "forced_stop": forced_stop}
        return new_state, reward, done, info

    # -- rendering and scoring ----------------------------------------------

    def _capture(self, slot_index: int, slot_u: float,
                 settings: CaptureSettings) -> LdrImage:
        key = (slot_index, settings.iso_index, settings.shutter_index,
               int(round(slot_u * 1e12)))
        hit = self._capture_cache.get(key)
        if hit is not None:
            return hit
        seed = np.random.SeedSequence(
            [self.episode_seed, slot_index, settings.iso_index,
             settings.shutter_index, key[3]])
        rng = np.random.default_rng(seed)
        ldr = camera.capture(self.scene, slot_u, settings, self.consts, rng)
        self._capture_cache[key] = ldr
        return ldr

    def render_state(self, state: BracketState) -> list[LdrImage]:
        starts = slot_starts(state.frames, self.scene.frame_interval)
        return [self._capture(k, u, f.settings)
                for k, (u, f) in enumerate(zip(starts, state.frames))]

    def _reference_context(self, state: BracketState) -> tuple[np.ndarray, np.ndarray, float]:
        starts = slot_starts(state.frames, self.scene.frame_interval)
        ref = state.ref_index
        mid = state.frames[ref].settings
        u_ref = starts[ref] + 0.5 * mid.shutter_s / self.scene.frame_interval
        key = int(round(u_ref * 1e12))
        hit = self._gt_cache.get(key)
        if hit is None:
            gt = ground_truth_hdr(self.scene, u_ref)
            ghost = ghost_mask(motion_field(self.scene, 0.0, u_ref),
                               self.reward_cfg.flow_threshold)
            hit = (gt, ghost)
            self._gt_cache[key] = hit
        return hit[0], hit[1], u_ref

    def fuse_state(self, state: BracketState) -> np.ndarray:
        ldrs = self.render_state(state)
        bracket = [(ldr, f.settings) for ldr, f in zip(ldrs, state.frames)]
        return fuse(bracket, state.ref_index, self.consts, self.fusion_cfg)

    def score_state(self, state: BracketState) -> float:
        key = state.key()
        hit = self._score_cache.get(key)
        if hit is not None:
            return hit
        gt, ghost, _ = self._reference_context(state)
        fused = self.fuse_state(state)
        score = quality_score(fused, gt, self.scene.importance, ghost,
                              self.reward_cfg)
        self._score_cache[key] = score
        return score

    def evaluate_state(self, state: BracketState, with_ssim: bool = True) -> dict:
        """Final-bracket quality metrics against the reference ground truth."""
        gt, ghost, u_ref = self._reference_context(state)
        fused = self.fuse_state(state)
        out = {
            "score": quality_score(fused, gt, self.scene.importance, ghost,
                                   self.reward_cfg),
            "psnr_mu": psnr_mu(fused, gt),
            "frames": len(state.frames),
            "u_ref": u_ref,
        }
        if with_ssim:
            out["ssim_mu"] = ssim_mu(fused, gt)
        return out


def state_from_schedule(schedule: list[tuple[str, CaptureSettings]],
                        stage: int = 3, done: bool = True) -> BracketState:
    """Wrap a scheduler's (role, settings) list as a terminal bracket state."""
    frames = tuple(BracketFrame(role, settings) for role, settings in schedule)
    return BracketState(frames=frames, stage=stage, done=done)
