"""Experiment configuration: YAML file, dataclass sections, content hashes."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NoReturn

import yaml

from langcl.core.errors import ConfigError

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("FT", "ER", "AGEM", "DER", "PNN", "PB", "L2P", "EWC", "LwF", "MAS")
REGIMES = ("shared", "per-language")


@dataclass(frozen=True)
class ModelConfig:
    regime: str = "shared"
    d_model: int = 64
    n_layers: int = 2
    context: int = 3
    init_scale: float = 1.0


@dataclass(frozen=True)
class DataConfig:
    seed: int = 1234
    n_base: int = 10
    n_new: int = 10
    d_in: int = 16
    pool_size: int = 24
    vocab_size: int = 12
    overlap: float = 0.5
    frames_per_token: tuple[int, int] = (2, 4)
    noise: float = 0.5
    max_tokens: int = 12
    max_frames: int = 60
    boundary_prob: float = 0.25
    min_prototype_distance: float = 0.5
    splits: tuple[int, int, int] = (2000, 200, 200)
    char_languages: tuple[str, ...] = ()
    manifest_dir: str | None = None


@dataclass(frozen=True)
class TrainingConfig:
    base_epochs: int = 20
    epochs_per_task: int = 2
    lr: float = 1e-4
    batch_size: int = 8
    clip_norm: float = 5.0
    plateau_factor: float = 0.8
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "FT"
    replay_ratio: float = 0.10
    der_alpha: float = 1.0
    ewc_lambda: float = 5.0
    ewc_alpha: float = 0.5
    lwf_T: float = 2.0
    lwf_lambda: float = 10.0
    mas_lambda: float = 1.0
    mas_alpha: float = 0.5
    pb_init: float = 0.01
    pb_threshold: float = 0.005
    pb_lr_scale: float = 1.0
    l2p_noise: float = 0.01
    importance_max_samples: int | None = None
    agem_batch_size: int | None = None


@dataclass(frozen=True)
class ExperimentSettings:
    seed: int = 0
    order: tuple[str, ...] | None = None
    max_new: int | None = None
    n_orders: int = 10
    workers: int = 1
    cache_dir: str = ".langcl-cache"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def with_strategy(self, kind: str) -> ExperimentConfig:
        return replace(self, strategy=replace(self.strategy, kind=kind))

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, experiment=replace(self.experiment, seed=seed))

    def with_order(self, order: tuple[str, ...] | None) -> ExperimentConfig:
        return replace(self, experiment=replace(self.experiment, order=order))

    def with_training(self, **changes: Any) -> ExperimentConfig:
        return replace(self, training=replace(self.training, **changes))

    def with_workers(self, workers: int) -> ExperimentConfig:
        return replace(self, experiment=replace(self.experiment, workers=workers))


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "data": DataConfig,
    "training": TrainingConfig,
    "strategy": StrategyConfig,
    "experiment": ExperimentSettings,
}

PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "default": {},
    # Small and quick: what the test suite and a laptop demo use.
    "toy": {
        "model": {"d_model": 32, "n_layers": 1},
        "data": {
            "n_base": 3,
            "n_new": 3,
            "d_in": 8,
            "pool_size": 8,
            "vocab_size": 6,
            "max_tokens": 6,
            "max_frames": 24,
            "noise": 0.3,
            "splits": [120, 30, 30],
        },
        "training": {"base_epochs": 8, "epochs_per_task": 2, "lr": 0.01},
    },
    # Three base and three new languages, like the smaller multilingual suite.
    "fleurs": {
        "data": {"n_base": 3, "n_new": 3, "splits": [600, 100, 100]},
    },
}


def _coerce(section: str, cls: type, raw: dict[str, Any]) -> Any:
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    values: dict[str, Any] = {}
    for name, value in raw.items():
        if isinstance(value, list):
            value = tuple(value)
        values[name] = value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"invalid [{section}] section: {e}") from e


def _check(config: ExperimentConfig) -> None:
    def fail(section: str, key: str, detail: str) -> NoReturn:
        raise ConfigError(f"[{section}] {key}: {detail}")

    m, d, t, s, x = (
        config.model,
        config.data,
        config.training,
        config.strategy,
        config.experiment,
    )
    if m.regime not in REGIMES:
        fail("model", "regime", f"must be one of {', '.join(REGIMES)}")
    for key in ("d_model", "n_layers", "context"):
        if getattr(m, key) < 1:
            fail("model", key, "must be positive")
    if not 0.0 <= d.overlap <= 1.0:
        fail("data", "overlap", "must be in [0, 1]")
    if d.n_base < 1 or d.n_new < 0:
        fail("data", "n_base/n_new", "need at least one base language")
    if len(d.splits) != 3 or min(d.splits) < 1:
        fail("data", "splits", "need three positive sizes (train, val, test)")
    low, high = d.frames_per_token
    if not 1 <= low <= high:
        fail("data", "frames_per_token", "need 1 <= low <= high")
    if d.max_frames // high < 1:
        fail("data", "max_frames", "too small for a single token")
    if d.vocab_size < 2 or d.d_in < 1:
        fail("data", "vocab_size/d_in", "too small")
    if t.lr <= 0:
        fail("training", "lr", "must be positive")
    if not 0.0 < t.plateau_factor < 1.0:
        fail("training", "plateau_factor", "must be in (0, 1)")
    if t.batch_size < 1 or t.base_epochs < 0 or t.epochs_per_task < 1:
        fail("training", "batch_size/epochs", "out of range")
    if s.kind not in STRATEGY_KINDS:
        fail("strategy", "kind", f"must be one of {', '.join(STRATEGY_KINDS)}")
    if not 0.0 < s.replay_ratio <= 1.0:
        fail("strategy", "replay_ratio", "must be in (0, 1]")
    if not 0.0 <= s.ewc_alpha <= 1.0 or not 0.0 <= s.mas_alpha <= 1.0:
        fail("strategy", "ewc_alpha/mas_alpha", "must be in [0, 1]")
    if s.lwf_T <= 0:
        fail("strategy", "lwf_T", "must be positive")
    if x.n_orders < 1 or x.workers < 1:
        fail("experiment", "n_orders/workers", "must be positive")


def from_dict(raw: dict[str, Any] | None, preset: str = "default") -> ExperimentConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset '{preset}'")
    raw = dict(raw or {})
    merged: dict[str, dict[str, Any]] = {k: dict(v) for k, v in PRESETS[preset].items()}
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for section, values in raw.items():
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must be a mapping")
        merged.setdefault(section, {}).update(values)
    sections = {
        name: _coerce(name, cls, merged.get(name, {})) for name, cls in _SECTIONS.items()
    }
    config = ExperimentConfig(**sections)
    _check(config)
    return config


def load_config(path: Path | None, preset: str = "default") -> ExperimentConfig:
    if path is None:
        return from_dict({}, preset)
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = dict(raw or {})
    preset = raw.pop("preset", preset)
    logger.debug(f"loaded config {path} (preset {preset})")
    return from_dict(raw, preset)


def to_dict(config: ExperimentConfig) -> dict[str, Any]:
    def plain(value: Any) -> Any:
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    return {name: plain(asdict(getattr(config, name))) for name in _SECTIONS}


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False)


def _digest(payload: Any) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


_NON_RESULT_KEYS = ("workers", "cache_dir", "n_orders")


def config_hash(config: ExperimentConfig) -> str:
    """Hash of everything that affects an experiment's results."""
    payload = to_dict(config)
    for key in _NON_RESULT_KEYS:
        payload["experiment"].pop(key, None)
    return _digest(payload)


def reference_hash(config: ExperimentConfig) -> str:
    """Hash for joint and solo reference runs, which ignore strategy and order."""
    payload = to_dict(config)
    payload.pop("strategy")
    for key in (*_NON_RESULT_KEYS, "order", "max_new"):
        payload["experiment"].pop(key, None)
    return _digest(payload)


def base_hash(config: ExperimentConfig) -> str:
    """Hash of the inputs that determine the pretrained base model."""
    payload = to_dict(config)
    training = payload["training"]
    training.pop("epochs_per_task")
    return _digest(
        {
            "model": payload["model"],
            "data": payload["data"],
            "training": training,
            "seed": payload["experiment"]["seed"],
        }
    )


def apply_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    strategy: str | None = None,
) -> ExperimentConfig:
    """Command-line ``--seed`` and ``--strategy`` take precedence over the file."""
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"[experiment] seed: must be non-negative, got {seed}")
        config = config.with_seed(seed)
    if strategy is not None:
        config = config.with_strategy(strategy)
    _check(config)
    return config


SECTION_HELP = {
    "model": "encoder size and token-space regime (shared | per-language)",
    "data": "synthetic language suite; set manifest_dir to read manifests instead",
    "training": "optimizer and epoch budgets shared by every strategy",
    "strategy": "continual-learning method and its hyperparameters",
    "experiment": "run seed, language order, parallelism and cache location",
}


def commented_yaml(config: ExperimentConfig) -> str:
    """``dump_config`` with a comment above each section."""
    payload = to_dict(config)
    parts = ["# langcl experiment configuration", ""]
    for section in _SECTIONS:
        parts.append(f"# {SECTION_HELP[section]}")
        parts.append(yaml.safe_dump({section: payload[section]}, sort_keys=False).rstrip())
        parts.append("")
    return "\n".join(parts)
