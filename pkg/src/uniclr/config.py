"""Run configuration: a versioned, strictly-validated schema.

Configs live in YAML with a top-level `schema_version`. Every key maps onto a
dataclass field below; unknown keys are rejected and values are type-checked.
Dotted overrides (`loss.kind=mpnce`) are parsed against the same schema.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass

import yaml

from .augment import AugmentationPolicy
from .errors import ConfigError
from .losses import LOSS_KINDS
from .similarity import MODES
from .world import WorldConfig

SCHEMA_VERSION = 1

SUPERVISION_MODES = ("unified", "separated")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "mpnce"
    trivial: bool = True
    weights: bool = True

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class SimilarityConfig:
    mode: str = "domain"
    init_tau: float = 0.1
    init_offset: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"similarity.mode must be one of {MODES}, got {self.mode!r}")
        if self.init_tau <= 0:
            raise ConfigError("similarity.init_tau must be positive")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-3
    sim_lr_scale: float = 1.0  # multiplier on lr for temperature/offset params
    warmup_epochs: int = 2
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be nonnegative")
        if self.sim_lr_scale < 0:
            raise ConfigError("sim_lr_scale must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be nonnegative")


@dataclass(frozen=True)
class EncoderSizes:
    repr_width: int = 64
    aug_width: int = 16
    embed_width: int = 32
    image_hidden: int = 96
    text_hidden: int = 48
    text_repr_width: int = 48
    aug_hidden: int = 32
    head_blocks: int = 3
    head_expansion: int = 4
    aug_input: str = "head"

    def __post_init__(self):
        if self.aug_input not in ("head", "encoder", "none"):
            raise ConfigError("encoder.aug_input must be head, encoder, or none")


@dataclass(frozen=True)
class EvalConfig:
    probe_steps: int = 60
    probe_lr: float = 0.1
    density_batch: int = 64

    def __post_init__(self):
        if self.probe_steps < 1 or self.density_batch < 2:
            raise ConfigError("probe_steps must be >=1 and density_batch >=2")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 64
    image_views: int = 3
    text_views: int = 1
    supervision: str = "unified"
    loss: LossConfig = field(default_factory=LossConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    encoder: EncoderSizes = field(default_factory=EncoderSizes)
    world: WorldConfig = field(default_factory=WorldConfig)
    weak: AugmentationPolicy = field(default_factory=lambda: _default_weak())
    strong: AugmentationPolicy = field(default_factory=lambda: _default_strong())
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (negatives required)")
        if self.image_views < 1 or self.text_views < 1:
            raise ConfigError("view counts must be at least 1")
        if self.supervision not in SUPERVISION_MODES:
            raise ConfigError(f"supervision must be one of {SUPERVISION_MODES}")
        if self.supervision == "separated" and self.loss.kind not in ("mpnce", "infonce"):
            raise ConfigError("separated supervision requires a per-positive loss")
        n_train = self.world.n_pairs - max(1, int(round(self.world.n_pairs * self.world.eval_fraction)))
        if self.batch_size > n_train:
            raise ConfigError("batch_size exceeds the training split")


def _default_weak() -> AugmentationPolicy:
    return AugmentationPolicy(strength="weak", crop_scale=(0.5, 1.0))


def _default_strong() -> AugmentationPolicy:
    return AugmentationPolicy(
        strength="strong", crop_scale=(0.08, 1.0), flip_prob=0.5, gray_prob=0.2
    )


# -----------------------------------------------------------------------------
# dict <-> dataclass plumbing
# -----------------------------------------------------------------------------


def to_dict(cfg) -> dict:
    """Dataclass tree to plain dict (tuples become lists, YAML-friendly)."""
    def conv(v):
        if is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return conv(cfg)


def _coerce(name: str, value, target_type):
    origin = getattr(target_type, "__origin__", None)
    if is_dataclass(target_type):
        if not isinstance(value, dict):
            raise ConfigError(f"{name} must be a mapping")
        return from_dict(target_type, value, prefix=name)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list, got {value!r}")
        args = target_type.__args__
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(f"{name}[{i}]", v, args[0]) for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{name} must have {len(args)} entries")
        return tuple(_coerce(f"{name}[{i}]", v, t) for i, (v, t) in enumerate(zip(value, args)))
    raise ConfigError(f"unsupported config field type for {name}")


def from_dict(cls, data: dict, prefix: str = "") -> object:
    """Build a dataclass from a dict, rejecting unknown keys."""
    by_name = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(by_name)
    if unknown:
        where = f" in {prefix}" if prefix else ""
        raise ConfigError(f"unknown config key(s){where}: {sorted(unknown)}")
    kwargs = {}
    hints = _resolved_hints(cls)
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        kwargs[name] = _coerce(path, value, hints[name])
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _resolved_hints(cls) -> dict:
    import typing

    return typing.get_type_hints(cls)


def default_config() -> RunConfig:
    return RunConfig()


def _deep_merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def config_from_dict(data: dict) -> RunConfig:
    """Interpret a (possibly partial) config dict as overrides of the defaults."""
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
    merged = _deep_merge(to_dict(RunConfig()), data)
    return from_dict(RunConfig, merged)


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION}
    out.update(to_dict(cfg))
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    return config_from_dict(data)


def _parse_override_value(raw: str, target_type, path: str):
    origin = getattr(target_type, "__origin__", None)
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "on", "1", "yes"):
            return True
        if low in ("false", "off", "0", "no"):
            return False
        raise ConfigError(f"{path}: cannot parse {raw!r} as a boolean")
    if target_type is int:
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: cannot parse {raw!r} as an integer") from exc
    if target_type is float:
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: cannot parse {raw!r} as a number") from exc
    if target_type is str:
        return raw
    if origin is tuple:
        parts = [p for p in raw.split(",") if p]
        args = target_type.__args__
        elem = args[0]
        return [
            _parse_override_value(p, elem if args[-1] is Ellipsis or len(args) == 1 else args[i], path)
            for i, p in enumerate(parts)
        ]
    raise ConfigError(f"{path}: overrides are not supported for this field")


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value strings onto a config dict, schema-checked."""
    data = yaml.safe_load(yaml.safe_dump(data))  # deep copy
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        cls = RunConfig
        for k in keys[:-1]:
            hints = _resolved_hints(cls)
            if k not in hints or not is_dataclass(hints[k]):
                raise ConfigError(f"unknown config section {k!r} in override {dotted!r}")
            cls = hints[k]
        hints = _resolved_hints(cls)
        leaf = keys[-1]
        if leaf not in hints:
            raise ConfigError(f"unknown config key {dotted!r}")
        value = _parse_override_value(raw, hints[leaf], dotted)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[leaf] = value
    return data
