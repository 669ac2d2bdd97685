"""Run configuration: dataclasses, JSON loading, canonical echo and hashing.

Sub-config seeds left unset in the file are derived deterministically from
the master seed, so one --seed flag reseeds the whole experiment while the
echoed config still records every effective value.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import TrainConfig
from .camera import CameraConstants
from .errors import ConfigError
from .fusion import FusionConfig
from .reward import RewardConfig


@dataclass(frozen=True)
class CorpusConfig:
    dynamic_scenes: int = 24
    static_scenes: int = 8
    width: int = 128
    height: int = 128
    dynamic_range: tuple[float, float] = (8.0, 14.0)
    motion_range: tuple[float, float] = (5.0, 60.0)
    object_range: tuple[int, int] = (1, 3)
    frame_interval: float = 1.0 / 30.0
    seed: int = 0

    def __post_init__(self):
        if self.dynamic_scenes < 0 or self.static_scenes < 0:
            raise ConfigError("scene counts must be non-negative")
        if self.dynamic_scenes + self.static_scenes == 0:
            raise ConfigError("corpus must contain at least one scene")
        if self.motion_range[0] > self.motion_range[1]:
            raise ConfigError("motion_range must be ordered")
        if self.dynamic_range[0] > self.dynamic_range[1]:
            raise ConfigError("dynamic_range must be ordered")


@dataclass(frozen=True)
class EvalConfig:
    compute_ssim: bool = True
    motion_buckets: tuple[float, ...] = (0.0, 15.0, 30.0, 60.0)
    snr_budget: float | None = None  # None: one frame interval
    gap_iso_indices: tuple[int, ...] = (3, 6, 12, 18)
    gap_shutter_indices: tuple[int, ...] = (1, 5, 10, 14)
    gap_scenes: int = 8
    gap_max_actions: int = 3
    seed: int = 0

    def __post_init__(self):
        if len(self.motion_buckets) < 2:
            raise ConfigError("need at least two motion bucket edges")
        if list(self.motion_buckets) != sorted(self.motion_buckets):
            raise ConfigError("motion bucket edges must be sorted")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    eval_corpus: CorpusConfig = field(default_factory=lambda: CorpusConfig(
        dynamic_scenes=16, static_scenes=8, seed=1))
    camera: CameraConstants = field(default_factory=CameraConstants)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train_shutter_only: bool = True


_TUPLE_FIELDS = {"dynamic_range", "motion_range", "object_range",
                 "motion_buckets", "gap_iso_indices", "gap_shutter_indices",
                 "branch_widths", "trunk_widths", "iso_subset", "shutter_subset"}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _derive_seed(master: int, salt: int) -> int:
    digest = hashlib.sha256(f"{master}:{salt}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def run_config_from_dict(data: dict, seed_override: int | None = None,
                         output_dir: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    data = dict(data)
    if seed_override is not None:
        data["seed"] = seed_override
        # Derived sub-seeds must follow the override.
        for section in ("corpus", "eval_corpus", "train", "eval"):
            if section in data and isinstance(data[section], dict):
                data[section] = {k: v for k, v in data[section].items()
                                 if k != "seed"}
    if output_dir is not None:
        data["output_dir"] = output_dir
    master = data.get("seed", 0)
    if not isinstance(master, int):
        raise ConfigError("seed must be an integer")
    sections = {
        "corpus": (CorpusConfig, 1),
        "eval_corpus": (CorpusConfig, 2),
        "camera": (CameraConstants, None),
        "fusion": (FusionConfig, None),
        "reward": (RewardConfig, None),
        "train": (TrainConfig, 3),
        "eval": (EvalConfig, 4),
    }
    kwargs: dict = {"seed": master,
                    "output_dir": data.get("output_dir", "out"),
                    "train_shutter_only": data.get("train_shutter_only", True)}
    for name, (cls, salt) in sections.items():
        section = dict(data.get(name, {}))
        if salt is not None and "seed" not in section:
            section["seed"] = _derive_seed(master, salt)
        kwargs[name] = _build(cls, section, name)
    unknown = set(data) - set(sections) - {"seed", "output_dir",
                                           "train_shutter_only"}
    if unknown:
        raise ConfigError(f"unknown top-level fields {sorted(unknown)}")
    return RunConfig(**kwargs)


def load_run_config(path, seed_override: int | None = None,
                    output_dir: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return run_config_from_dict(data, seed_override, output_dir)


def config_to_dict(cfg: RunConfig) -> dict:
    def unwrap(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: unwrap(getattr(value, f.name))
                    for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [unwrap(v) for v in value]
        return value

    return unwrap(cfg)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, indent=2)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]
