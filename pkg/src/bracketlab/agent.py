"""Actor-critic agent: features, losses, shared parameter store, training.

Features are per-frame tone-mapped luminance histograms, an 8x8 log-luminance
grid of the mid frame as a coarse content summary, and a stage encoding.
The advantage actor-critic loss uses exact backprop through the numpy
network; the shared parameter store serialises adaptive-moment updates under
a lock so asynchronous workers never observe a torn parameter set.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraConstants, LdrImage, tonemap_mu
from .env import ActionSpec, BracketState, EpisodeTrace, ExposureEnv, TraceStep
from .errors import ConfigError, TrainingDivergenceError
from .fusion import FusionConfig
from .nnet import (NetConfig, PolicyNet, entropy_of, masked_softmax,
                   N_ISO_ACTIONS, N_SHUTTER_ACTIONS)
from .reward import RewardConfig
from .scene import RadianceScene

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FeatureConfig:
    hist_bins: int = 64
    max_frames: int = 5
    semantic_grid: int = 8

    @property
    def hist_dim(self) -> int:
        return self.hist_bins * self.max_frames

    @property
    def semantic_dim(self) -> int:
        return self.semantic_grid * self.semantic_grid

    @property
    def stage_dim(self) -> int:
        return 2

    @property
    def total_dim(self) -> int:
        return self.hist_dim + self.semantic_dim + self.stage_dim


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 3000
    episodes_per_epoch: int = 100
    episodes_per_update: int = 2
    workers: int = 1
    learning_rate: float = 2e-3
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    reward_scale: float = 20.0  # optimisation-side scaling of tiny rewards
    discount: float = 1.0
    seed: int = 0
    hist_bins: int = 64
    semantic_grid: int = 8
    max_frames: int = 5
    branch_widths: tuple[int, int] = (64, 32)
    trunk_widths: tuple[int, int] = (128, 64)
    normalize_advantages: bool = False
    fixed_iso: int | None = None  # lock to this ISO value (shutter-only ablation)
    iso_subset: tuple[int, ...] | None = None  # reduced-grid action masks
    shutter_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.episodes < 1 or self.workers < 1 or self.learning_rate <= 0:
            raise ConfigError("episodes, workers and learning_rate must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(hist_bins=self.hist_bins, max_frames=self.max_frames,
                             semantic_grid=self.semantic_grid)

    def net_config(self) -> NetConfig:
        f = self.feature_config()
        return NetConfig(hist_dim=f.hist_dim, semantic_dim=f.semantic_dim,
                         stage_dim=f.stage_dim, branch_widths=self.branch_widths,
                         trunk_widths=self.trunk_widths)


def _block_mean(values: np.ndarray, grid: int) -> np.ndarray:
    h, w = values.shape
    iy = np.minimum((np.arange(h) * grid) // h, grid - 1)
    ix = np.minimum((np.arange(w) * grid) // w, grid - 1)
    flat = iy[:, None] * grid + ix[None, :]
    sums = np.bincount(flat.ravel(), weights=values.ravel(), minlength=grid * grid)
    counts = np.bincount(flat.ravel(), minlength=grid * grid)
    return (sums / counts).reshape(grid, grid)


def extract_features(ldrs: list[LdrImage], mid_index: int, stage: int,
                     max_stages: int, cfg: FeatureConfig) -> np.ndarray:
    """Deterministic feature vector for one bracket state.

    Histogram slices of present frames are L1-normalised; absent frame slots
    (bracket shorter than max_frames) stay zero.
    """
    if not ldrs:
        raise ValueError("need at least one LDR image")
    hist = np.zeros((cfg.max_frames, cfg.hist_bins))
    for k, ldr in enumerate(ldrs[:cfg.max_frames]):
        tone = tonemap_mu(ldr.values)
        counts, _ = np.histogram(tone, bins=cfg.hist_bins, range=(0.0, 1.0))
        hist[k] = counts / tone.size
    pooled = _block_mean(ldrs[mid_index].values, cfg.semantic_grid)
    semantic = np.log2(1.0 + 255.0 * pooled) / 8.0
    stage_block = np.array([stage, max_stages], dtype=np.float64) / max_stages
    return np.concatenate([hist.ravel(), semantic.ravel(), stage_block])


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Categorical draw; rejects non-normalised input."""
    if abs(float(probs.sum()) - 1.0) > 1e-6 or probs.min() < -1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return int(rng.choice(len(probs), p=probs / probs.sum()))

def greedy_action(probs: np.ndarray) -> int:
    """Argmax with lowest-index tie-break."""
    if abs(float(probs.sum()) - 1.0) > 1e-6 or probs.min() < -1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")
    return int(np.argmax(probs))


def compute_advantages(rewards: list[float], values: np.ndarray,
                       discount: float) -> tuple[np.ndarray, np.ndarray]:
    """Discounted returns-to-go (terminal bootstrap zero) and advantages."""
    if len(rewards) != len(values):
        raise ValueError("rewards and values must align")
    returns = np.zeros(len(rewards))
    acc = 0.0
    for i in reversed(range(len(rewards))):
        acc = rewards[i] + discount * acc
        returns[i] = acc
    return returns, returns - np.asarray(values)


@dataclass
class Batch:
    features: np.ndarray          # (N, D)
    iso_actions: np.ndarray       # (N,) int
    shutter_actions: np.ndarray   # (N,) int
    stop_actions: np.ndarray      # (N,) int in {0: continue, 1: stop}
    use_capture: np.ndarray       # (N,) bool, False for pure stop decisions
    use_stop: np.ndarray          # (N,) bool, True from stage >= 3
    advantages: np.ndarray        # (N,)
    returns: np.ndarray           # (N,)

    def __len__(self) -> int:
        return self.features.shape[0]


def loss_and_grads(net: PolicyNet, params: dict[str, np.ndarray], batch: Batch,
                   value_coef: float, entropy_coef: float,
                   iso_allowed: np.ndarray | None = None,
                   shutter_allowed: np.ndarray | None = None
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Unnormalised A2C loss over the batch and its exact gradients.

    loss = sum_n [ -adv * log pi(a|s) + c_v (V - G)^2 - c_e H(pi) ],
    with the stop head participating only where the stop decision was live
    and the capture heads only where a capture action was taken.
    """
    cache = net.forward(params, batch.features)
    n = len(batch)
    heads = {
        "iso": (batch.iso_actions, batch.use_capture, iso_allowed, N_ISO_ACTIONS),
        "shutter": (batch.shutter_actions, batch.use_capture, shutter_allowed,
                    N_SHUTTER_ACTIONS),
        "stop": (batch.stop_actions, batch.use_stop, None, 2),
    }
    loss = 0.0
    dlogits: dict[str, np.ndarray] = {}
    for head, (actions, used, allowed, width) in heads.items():
        probs, logp = masked_softmax(cache[f"{head}.logits"], allowed)
        ent = entropy_of(probs, logp)
        use = used.astype(np.float64)
        idx = np.arange(n)
        safe_actions = np.where(used, actions, 0)
        chosen_logp = logp[idx, safe_actions]
        loss += float(np.sum(use * (-batch.advantages * chosen_logp
                                    - entropy_coef * ent)))
        onehot = np.zeros((n, width))
        onehot[idx, safe_actions] = 1.0
        d_policy = batch.advantages[:, None] * (probs - onehot)
        d_entropy = entropy_coef * probs * (logp + ent[:, None])
        d = use[:, None] * (d_policy + d_entropy)
        if allowed is not None:
            d = np.where(allowed[None, :], d, 0.0)
        dlogits[head] = d

    v = cache["value"]
    err = v - batch.returns
    loss += float(value_coef * np.sum(err * err))
    dvalue = 2.0 * value_coef * err

    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite training loss")
    grads = net.backward(params, cache, dlogits, dvalue)
    return loss, grads


def random_batch_spec(rng: np.random.Generator, n: int,
                      fcfg: FeatureConfig) -> Batch:
    """Synthetic probe batch for gradient verification."""
    return Batch(
        features=rng.uniform(0, 1, (n, fcfg.total_dim)),
        iso_actions=rng.integers(0, N_ISO_ACTIONS, n),
        shutter_actions=rng.integers(0, N_SHUTTER_ACTIONS, n),
        stop_actions=rng.integers(0, 2, n),
        use_capture=np.concatenate([[True] * (n - 1), [False]]),
        use_stop=np.concatenate([[False] * (n // 2), [True] * (n - n // 2)]),
        advantages=rng.normal(0, 1, n),
        returns=rng.normal(-0.1, 0.3, n),
    )


def gradient_check(net: PolicyNet, params: dict[str, np.ndarray], batch: Batch,
                   value_coef: float = 0.5, entropy_coef: float = 0.01,
                   n_samples: int = 512, step: float = 1e-5,
                   rng: np.random.Generator | None = None,
                   min_grad: float = 1e-8, corruption: float = 1.0) -> float:
    """Max relative error of backprop vs central finite differences.

    ``corruption`` scales the analytic gradients before comparison; the
    negative control passes a factor != 1 and must see a large error.
    """
    rng = rng or np.random.default_rng(0)
    _, grads = loss_and_grads(net, params, batch, value_coef, entropy_coef)
    if corruption != 1.0:
        grads = {k: corruption * g for k, g in grads.items()}

    def loss_at(p):
        cache_loss, _ = loss_and_grads(net, p, batch, value_coef, entropy_coef)
        return cache_loss

    names = sorted(params)
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    work = {k: params[k].copy() for k in names}
    for flat in picks:
        slot = int(np.searchsorted(bounds, flat, side="right"))
        name = names[slot]
        offset = int(flat - (bounds[slot] - sizes[slot]))
        idx = np.unravel_index(offset, params[name].shape)
        original = work[name][idx]
        work[name][idx] = original + step
        up = loss_at(work)
        work[name][idx] = original - step
        down = loss_at(work)
        work[name][idx] = original
        numeric = (up - down) / (2.0 * step)
        analytic = grads[name][idx]
        denom = max(abs(numeric), abs(analytic))
        if denom < min_grad:
            continue
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


class ParamStore:
    """Shared parameters with atomic snapshots and serialised Adam updates."""

    def __init__(self, params: dict[str, np.ndarray], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self._lock = threading.Lock()
        self._params = {k: v.copy() for k, v in params.items()}
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}
        self._t = 0
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.version = 0

    def snapshot(self) -> tuple[dict[str, np.ndarray], int]:
        with self._lock:
            return {k: v.copy() for k, v in self._params.items()}, self.version

    def apply(self, grads: dict[str, np.ndarray]) -> int:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(f"non-finite gradient for {k}")
        with self._lock:
            self._t += 1
            t = self._t
            lr = self.learning_rate
            b1, b2, eps = self.beta1, self.beta2, self.eps
            scale = lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
            for k, g in grads.items():
                m = self._m[k]
                v = self._v[k]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                self._params[k] -= scale * m / (np.sqrt(v) + eps)
            self.version += 1
            return self.version


@dataclass
class TrainedAgent:
    """Greedy/sampling policy wrapper around trained parameters."""

    net: PolicyNet
    params: dict[str, np.ndarray]
    feature_cfg: FeatureConfig
    max_frames: int = 5
    iso_allowed: np.ndarray | None = None
    shutter_allowed: np.ndarray | None = None

    def restricted(self, iso_subset, shutter_subset) -> "TrainedAgent":
        iso_mask = np.zeros(N_ISO_ACTIONS, bool)
        iso_mask[list(iso_subset)] = True
        sh_mask = np.zeros(N_SHUTTER_ACTIONS, bool)
        sh_mask[list(shutter_subset)] = True
        return replace(self, iso_allowed=iso_mask, shutter_allowed=sh_mask)

    def policy(self, features: np.ndarray) -> dict[str, np.ndarray]:
        cache = self.net.forward(self.params, features[None, :])
        iso_p, _ = masked_softmax(cache["iso.logits"], self.iso_allowed)
        sh_p, _ = masked_softmax(cache["shutter.logits"], self.shutter_allowed)
        stop_p, _ = masked_softmax(cache["stop.logits"], None)
        return {"iso": iso_p[0], "shutter": sh_p[0], "stop": stop_p[0],
                "value": float(cache["value"][0])}

    def act(self, features: np.ndarray, stage: int,
            rng: np.random.Generator | None = None) -> ActionSpec:
        out = self.policy(features)
        pick = greedy_action if rng is None else (lambda p: sample_action(p, rng))
        if stage >= 3 and pick(out["stop"]) == 1:
            return ActionSpec(0, 0, stop=True)
        return ActionSpec(pick(out["iso"]), pick(out["shutter"]), stop=False)


class NearestGridAgent:
    """Projects a trained policy's actions onto a reduced setting grid.

    The base agent acts on the full grid; each capture action is snapped to
    the reduced-grid point nearest in log-ISO / log-shutter, so restricted
    trajectories stay inside an exhaustive oracle's candidate set while
    preserving the policy's intent.
    """

    def __init__(self, base: TrainedAgent, iso_indices, shutter_indices):
        from .camera import ISO_GRID, SHUTTER_GRID
        self.base = base
        self.feature_cfg = base.feature_cfg
        self.iso_indices = tuple(iso_indices)
        self.shutter_indices = tuple(shutter_indices)
        self._log_iso = np.log2([ISO_GRID[i] for i in self.iso_indices])
        self._log_sh = np.log2([SHUTTER_GRID[j] for j in self.shutter_indices])
        self._full_log_iso = np.log2(ISO_GRID)
        self._full_log_sh = np.log2(SHUTTER_GRID)

    def act(self, features: np.ndarray, stage: int,
            rng: np.random.Generator | None = None) -> ActionSpec:
        action = self.base.act(features, stage, rng)
        if action.stop:
            return action
        i = self.iso_indices[int(np.argmin(np.abs(
            self._log_iso - self._full_log_iso[action.iso_index])))]
        j = self.shutter_indices[int(np.argmin(np.abs(
            self._log_sh - self._full_log_sh[action.shutter_index])))]
        return ActionSpec(i, j, stop=False)


class RandomAgent:
    """Uniform-random policy over the discrete action space."""

    def __init__(self, iso_allowed: np.ndarray | None = None,
                 shutter_allowed: np.ndarray | None = None):
        self.iso_choices = (np.nonzero(iso_allowed)[0] if iso_allowed is not None
                            else np.arange(N_ISO_ACTIONS))
        self.sh_choices = (np.nonzero(shutter_allowed)[0]
                           if shutter_allowed is not None
                           else np.arange(N_SHUTTER_ACTIONS))

    def act(self, features: np.ndarray, stage: int,
            rng: np.random.Generator | None = None) -> ActionSpec:
        rng = rng or np.random.default_rng(0)
        if stage >= 3 and rng.integers(0, 2) == 1:
            return ActionSpec(0, 0, stop=True)
        return ActionSpec(int(rng.choice(self.iso_choices)),
                          int(rng.choice(self.sh_choices)), stop=False)


def run_episode(env: ExposureEnv, agent, feature_cfg: FeatureConfig,
                rng: np.random.Generator | None, episode_seed: int | None = None,
                collect_features: bool = False):
    """Roll one episode; returns the trace and optional per-step batch rows."""
    state = env.reset(episode_seed=episode_seed)
    rows = [] if collect_features else None
    steps: list[TraceStep] = []
    initial_score = env.score_state(state)
    done = False
    while not done:
        ldrs = env.render_state(state)
        feats = extract_features(ldrs, state.ref_index, state.stage,
                                 env.max_frames, feature_cfg)
        action = agent.act(feats, state.stage, rng)
        prev_state = state
        state, reward, done, info = env.step(action)
        steps.append(TraceStep(state=prev_state, action=action, reward=reward,
                               score_after=info["score"],
                               projected=info.get("projected", False)))
        if rows is not None:
            rows.append({
                "features": feats,
                "iso": action.iso_index,
                "shutter": action.shutter_index,
                "stop": 1 if action.stop else 0,
                "use_capture": not action.stop,
                "use_stop": prev_state.stage >= 3,
                "reward": reward,
            })
    trace = EpisodeTrace(initial_state=steps[0].state if steps else state,
                         initial_score=initial_score, steps=steps,
                         final_state=state)
    return trace, rows


@dataclass
class EpisodeRecord:
    worker: int
    index: int
    final_score: float
    total_reward: float
    mean_entropy: float
    frames: int


@dataclass
class TrainResult:
    agent: TrainedAgent
    curve: list[dict]
    records: list[EpisodeRecord] = field(repr=False, default_factory=list)
    store_version: int = 0


def _mean_policy_entropy(agent: TrainedAgent, rows: list[dict]) -> float:
    ents = []
    for row in rows:
        out = agent.policy(row["features"])
        for head in ("iso", "shutter"):
            p = out[head]
            nz = p[p > 0]
            ents.append(float(-(nz * np.log(nz)).sum()))
    return float(np.mean(ents)) if ents else 0.0


def _action_masks(cfg: TrainConfig) -> tuple[np.ndarray | None, np.ndarray | None]:
    from .camera import ISO_GRID
    iso_allowed = None
    shutter_allowed = None
    if cfg.fixed_iso is not None:
        iso_allowed = np.zeros(N_ISO_ACTIONS, bool)
        iso_allowed[ISO_GRID.index(cfg.fixed_iso)] = True
    if cfg.iso_subset is not None:
        iso_allowed = np.zeros(N_ISO_ACTIONS, bool)
        iso_allowed[list(cfg.iso_subset)] = True
    if cfg.shutter_subset is not None:
        shutter_allowed = np.zeros(N_SHUTTER_ACTIONS, bool)
        shutter_allowed[list(cfg.shutter_subset)] = True
    return iso_allowed, shutter_allowed


def train(scenes: list[RadianceScene], consts: CameraConstants,
          fusion_cfg: FusionConfig, reward_cfg: RewardConfig,
          cfg: TrainConfig) -> TrainResult:
    """Advantage actor-critic training over a scene corpus.

    Single-worker runs are sequential and bit-reproducible for a given seed;
    multi-worker runs share the parameter store under its lock.
    """
    if not scenes:
        raise ConfigError("training corpus is empty")
    feature_cfg = cfg.feature_config()
    net = PolicyNet(cfg.net_config())
    params = net.init_params(np.random.default_rng(np.random.SeedSequence([cfg.seed, 7])))
    store = ParamStore(params, learning_rate=cfg.learning_rate)
    iso_allowed, shutter_allowed = _action_masks(cfg)
    iso_lock = cfg.fixed_iso
    records: list[EpisodeRecord] = []
    records_lock = threading.Lock()
    failure: list[Exception] = []

    per_worker = cfg.episodes // cfg.workers
    extra = cfg.episodes % cfg.workers

    def run_worker(worker_id: int):
        try:
            n_eps = per_worker + (1 if worker_id < extra else 0)
            wrng = np.random.default_rng(np.random.SeedSequence([cfg.seed, worker_id, 11]))
            envs: dict[int, ExposureEnv] = {}
            adv_rms: float | None = None
            i = 0
            while i < n_eps:
                chunk = min(cfg.episodes_per_update, n_eps - i)
                params_now, _ = store.snapshot()
                agent = TrainedAgent(net, params_now, feature_cfg,
                                     max_frames=cfg.max_frames,
                                     iso_allowed=iso_allowed,
                                     shutter_allowed=shutter_allowed)
                all_rows: list[dict] = []
                all_returns: list[np.ndarray] = []
                all_adv: list[np.ndarray] = []
                for _ in range(chunk):
                    scene_idx = int(wrng.integers(len(scenes)))
                    env = envs.get(scene_idx)
                    if env is None:
                        env = ExposureEnv(scenes[scene_idx], consts, fusion_cfg,
                                          reward_cfg, max_frames=cfg.max_frames,
                                          iso_lock=iso_lock)
                        envs[scene_idx] = env
                    seed_ints = np.random.SeedSequence(
                        [cfg.seed, worker_id, i, 23]).generate_state(1)
                    trace, rows = run_episode(env, agent, feature_cfg, wrng,
                                              episode_seed=int(seed_ints[0]),
                                              collect_features=True)
                    feats = np.stack([r["features"] for r in rows])
                    values = net.forward(params_now, feats)["value"]
                    returns, adv = compute_advantages(
                        [r["reward"] * cfg.reward_scale for r in rows],
                        values, cfg.discount)
                    all_rows.extend(rows)
                    all_returns.append(returns)
                    all_adv.append(adv)
                    rec = EpisodeRecord(worker=worker_id, index=i,
                                        final_score=trace.final_score,
                                        total_reward=float(sum(trace.rewards)),
                                        mean_entropy=_mean_policy_entropy(agent, rows),
                                        frames=len(trace.final_state.frames))
                    with records_lock:
                        records.append(rec)
                    i += 1
                adv = np.concatenate(all_adv)
                if cfg.normalize_advantages:
                    batch_ms = float(np.mean(adv ** 2))
                    adv_rms = (batch_ms if adv_rms is None
                               else 0.95 * adv_rms + 0.05 * batch_ms)
                    adv = adv / max(np.sqrt(adv_rms), 1e-6)
                batch = Batch(
                    features=np.stack([r["features"] for r in all_rows]),
                    iso_actions=np.array([r["iso"] for r in all_rows]),
                    shutter_actions=np.array([r["shutter"] for r in all_rows]),
                    stop_actions=np.array([r["stop"] for r in all_rows]),
                    use_capture=np.array([r["use_capture"] for r in all_rows]),
                    use_stop=np.array([r["use_stop"] for r in all_rows]),
                    advantages=adv, returns=np.concatenate(all_returns),
                )
                try:
                    _, grads = loss_and_grads(net, params_now, batch,
                                              cfg.value_coef, cfg.entropy_coef,
                                              iso_allowed, shutter_allowed)
                    store.apply(grads)
                except TrainingDivergenceError as exc:
                    raise TrainingDivergenceError(str(exc), episode=i) from exc
        except Exception as exc:  # surfaced by the caller
            failure.append(exc)

    if cfg.workers == 1:
        run_worker(0)
    else:
        threads = [threading.Thread(target=run_worker, args=(w,))
                   for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if failure:
        raise failure[0]

    records.sort(key=lambda r: (r.worker, r.index))
    curve = []
    for start in range(0, len(records), cfg.episodes_per_epoch):
        chunk = records[start:start + cfg.episodes_per_epoch]
        curve.append({
            "epoch": start // cfg.episodes_per_epoch,
            "episodes": len(chunk),
            "mean_score": float(np.mean([r.final_score for r in chunk])),
            "mean_reward": float(np.mean([r.total_reward for r in chunk])),
            "mean_entropy": float(np.mean([r.mean_entropy for r in chunk])),
            "mean_frames": float(np.mean([r.frames for r in chunk])),
        })
    final_params, version = store.snapshot()
    agent = TrainedAgent(net, final_params, feature_cfg, max_frames=cfg.max_frames,
                         iso_allowed=iso_allowed, shutter_allowed=shutter_allowed)
    return TrainResult(agent=agent, curve=curve, records=records,
                       store_version=version)


def save_checkpoint(path, agent: TrainedAgent, train_cfg: TrainConfig,
                    config_echo: dict | None = None,
                    rng_state: dict | None = None) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "train_config": {
            "hist_bins": train_cfg.hist_bins,
            "semantic_grid": train_cfg.semantic_grid,
            "max_frames": train_cfg.max_frames,
            "branch_widths": list(train_cfg.branch_widths),
            "trunk_widths": list(train_cfg.trunk_widths),
            "fixed_iso": train_cfg.fixed_iso,
            "seed": train_cfg.seed,
        },
        "layout": {k: list(v) for k, v in agent.net.layout.items()},
        "config_echo": config_echo or {},
        "rng_state": rng_state or {},
    }
    arrays = {f"param/{k}": v for k, v in agent.params.items()}
    if agent.iso_allowed is not None:
        arrays["mask/iso"] = agent.iso_allowed
    if agent.shutter_allowed is not None:
        arrays["mask/shutter"] = agent.shutter_allowed
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path) -> tuple[TrainedAgent, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported checkpoint format {meta.get('format_version')}")
        tc = meta["train_config"]
        cfg = TrainConfig(hist_bins=tc["hist_bins"],
                          semantic_grid=tc["semantic_grid"],
                          max_frames=tc["max_frames"],
                          branch_widths=tuple(tc["branch_widths"]),
                          trunk_widths=tuple(tc["trunk_widths"]),
                          fixed_iso=tc["fixed_iso"], seed=tc["seed"])
        net = PolicyNet(cfg.net_config())
        params = {}
        for name, shape in net.layout.items():
            key = f"param/{name}"
            if key not in data:
                raise ConfigError(f"checkpoint missing parameter {name}")
            arr = data[key]
            if tuple(arr.shape) != tuple(shape):
                raise ConfigError(
                    f"shape mismatch for {name}: {arr.shape} vs {shape}")
            params[name] = arr.copy()
        iso_allowed = data["mask/iso"].copy() if "mask/iso" in data else None
        shutter_allowed = (data["mask/shutter"].copy()
                           if "mask/shutter" in data else None)
    agent = TrainedAgent(net, params, cfg.feature_config(),
                         max_frames=cfg.max_frames, iso_allowed=iso_allowed,
                         shutter_allowed=shutter_allowed)
    return agent, meta
