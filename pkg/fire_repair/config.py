"""
Experiment configuration.

One JSON file maps onto nested frozen dataclasses; every key is optional and falls back
to the desk defaults. Overrides use dotted paths, e.g. ``repair.variant=no_augment`` or
``stream.length=300``; override values are parsed as JSON when possible and otherwise
kept as strings.

All randomness derives from ``seed`` through named sub-seeds (see ``sub_seed``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from fire_repair.augment import AugmentChain, default_chain
from fire_repair.errors import ConfigError, FireError
from fire_repair.evaluation import DetectorSpec
from fire_repair.repair import RepairConfig


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 4
    image_size: int = 16
    channels: int = 3
    train_size: int = 4000
    test_size: int = 1000

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("data.num_classes must be >= 2")
        if self.image_size < 4 or self.image_size % 4:
            raise ConfigError("data.image_size must be a multiple of 4")
        if self.train_size < 1 or self.test_size < 1:
            raise ConfigError("data.train_size and data.test_size must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    conv_channels: tuple[int, int] = (8, 16)
    hidden: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1 or self.hidden < 1:
            raise ConfigError("model.conv_channels needs two positive widths and model.hidden must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    weight_decay: float = 5e-4
    progress: bool = False


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "patch"
    target_label: int = 0
    poison_ratio: float = 0.1
    patch_size: int = 3
    blend_ratio: float = 0.2
    warp_strength: float = 1.5

    def __post_init__(self) -> None:
        if self.kind not in ("patch", "blended", "warp"):
            raise ConfigError(f"attack.kind must be patch, blended or warp, got {self.kind!r}")
        if not 0.0 < self.poison_ratio <= 1.0:
            raise ConfigError(f"attack.poison_ratio must be in (0, 1], got {self.poison_ratio}")
        if self.target_label < 0:
            raise ConfigError("attack.target_label must be >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    """``chain`` is a list of augmentation dicts; empty means the default jitter + blur chain."""

    chain: tuple[dict[str, Any], ...] = ()
    shrinkpad_ratio: float = 0.9

    def __post_init__(self) -> None:
        object.__setattr__(self, "chain", tuple(dict(step) for step in self.chain))
        if not 0.0 < self.shrinkpad_ratio <= 1.0:
            raise ConfigError(f"augment.shrinkpad_ratio must be in (0, 1], got {self.shrinkpad_ratio}")
        try:
            AugmentChain.from_list(self.chain)
        except (FireError, ValueError, TypeError) as exc:
            raise ConfigError(f"augment.chain: {exc}") from None

    def build(self) -> AugmentChain:
        return AugmentChain.from_list(self.chain) if self.chain else default_chain()


@dataclass(frozen=True)
class StreamConfig:
    """Stream, sweep, bench and ablation sizes.

    Attributes:
        length: Entries per stream.
        replicas: Seeded stream replicas per ``fire stream`` run.
        workers: Processes used to run replicas; 1 runs them inline.
        num_clean: Clean samples for the initialization phase.
        num_pairs: (clean, poisoned) pairs for the paired direction estimate.
        warmup: Untimed warmup iterations for ``fire bench``.
        ablation_counts: Clean-sample counts tried by ``fire ablate-clean``.
        ablation_position: Stream position scored by the ablation.
    """

    length: int = 200
    replicas: int = 5
    workers: int = 1
    num_clean: int = 100
    num_pairs: int = 100
    warmup: int = 5
    ablation_counts: tuple[int, ...] = (1, 5, 10, 25, 50, 100)
    ablation_position: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "ablation_counts", tuple(int(n) for n in self.ablation_counts))
        for name in ("length", "replicas", "workers", "num_clean", "num_pairs", "ablation_position"):
            if getattr(self, name) < 1:
                raise ConfigError(f"stream.{name} must be >= 1")
        if self.warmup < 0:
            raise ConfigError("stream.warmup must be >= 0")
        if any(n < 1 for n in self.ablation_counts):
            raise ConfigError("stream.ablation_counts must all be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str | None = None
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    repair: RepairConfig = field(default_factory=RepairConfig)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def __post_init__(self) -> None:
        if self.attack.target_label >= self.data.num_classes:
            raise ConfigError(f"attack.target_label {self.attack.target_label} >= data.num_classes "
                              f"{self.data.num_classes}")

    def seed_for(self, name: str) -> int:
        return sub_seed(self.seed, name)


SECTIONS: dict[str, type] = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "attack": AttackConfig,
    "augment": AugmentConfig,
    "repair": RepairConfig,
    "detector": DetectorSpec,
    "stream": StreamConfig,
}


def sub_seed(root_seed: int, name: str) -> int:
    """Independent named seed (``data``, ``train``, ``poison``, ``stream``, ``augment``, ``clean``)."""
    return int(np.random.SeedSequence([root_seed, zlib.crc32(name.encode("utf-8"))]).generate_state(1)[0])


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``key.path=value`` overrides to a raw config dict (returns a new dict)."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"Override {item!r} is not of the form key.path=value")
        parts = key.strip().split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override {key!r}: {part!r} is not a section")
        node[parts[-1]] = _parse_value(value.strip())
    return out


def _build_section(name: str, cls: type, values: Any) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"Section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (FireError, ValueError, TypeError) as exc:
        raise ConfigError(f"Invalid {name!r} section: {exc}") from None


def config_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    """Build and validate a config from a plain dict.

    Raises:
        ConfigError: On unknown keys or out-of-range values, naming the section.
    """
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"Unknown top-level key(s): {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        cls = SECTIONS.get(key)
        kwargs[key] = _build_section(key, cls, value) if cls else value
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Load a JSON config (or the defaults when ``path`` is None) and apply overrides."""
    raw: dict[str, Any] = {}
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"Config file not found at {path}. Pass an existing JSON file to --config "
                              "or omit it to use the defaults.")
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(apply_overrides(raw, overrides))


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    return value


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return _jsonable(dataclasses.asdict(config))


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical (sorted-key) JSON form."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
