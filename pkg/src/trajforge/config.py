"""Pipeline configuration: one INI file, one section per module.

Keys may be written with ``-`` or ``_``. Values are parsed according to the
type of the field's default: comma-separated lists for tuples, ``none`` for
optional values, ``name:value`` pairs for the motion mix. Unknown sections and
keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .dataset import WindowConfig
from .experiments import ExperimentConfig
from .metrics import MetricsConfig
from .simulator import PROFILES, SceneConfig
from .tracker import TrackerConfig
from .training import TrainConfig

SEED_ENV = "TRAJFORGE_SEED"


class ConfigError(ValueError):
    """A config file or override violates a module invariant or names an unknown key."""


@dataclass(frozen=True)
class ForecasterConfig:
    hidden: int = 64
    n_modes: int = 6

    def __post_init__(self):
        if self.hidden < 1 or self.n_modes < 1:
            raise ValueError("hidden and n_modes must be >= 1")


@dataclass(frozen=True)
class DetectorProfilesConfig:
    default: str = "moderate"

    def __post_init__(self):
        if self.default not in PROFILES:
            raise ValueError(f"unknown detector profile {self.default!r}; known: {sorted(PROFILES)}")


@dataclass(frozen=True)
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector_profiles: DetectorProfilesConfig = field(default_factory=DetectorProfilesConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    @property
    def train_config(self) -> TrainConfig:
        """Training config with the forecaster's shape fields applied."""
        return replace(self.train, hidden=self.forecaster.hidden, n_modes=self.forecaster.n_modes)

    def as_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


SECTIONS = tuple(f.name for f in fields(PipelineConfig))


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, frozenset):
        return sorted(obj)
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


def _scalar(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _pairs(text: str) -> list[tuple[str, float]]:
    out = []
    for item in filter(None, (x.strip() for x in text.split(","))):
        name, sep, value = item.partition(":")
        if not sep:
            raise ValueError(f"expected name:value, got {item!r}")
        out.append((name.strip(), float(value)))
    return out


def parse_value(text: str, default: Any, name: str = ""):
    """Parse ``text`` into the type of ``default``."""
    if text.strip().lower() == "none":
        return None
    if isinstance(default, dict):
        return dict(_pairs(text))
    if isinstance(default, tuple) and default and isinstance(default[0], tuple):
        return tuple(_pairs(text))
    if isinstance(default, (tuple, frozenset)):
        items = [x for x in (s.strip() for s in text.split(",")) if x]
        like = next(iter(default), None)
        if like is None:
            like = 0.0
        vals = tuple(_scalar(x, like) for x in items)
        return frozenset(vals) if isinstance(default, frozenset) else vals
    if default is None:
        # optional numeric fields
        return float(text)
    return _scalar(text, default)


def _field_defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def _section_types() -> dict:
    return {f.name: f.default_factory for f in fields(PipelineConfig)}


def _build(raw: dict[str, dict[str, str]], base: PipelineConfig) -> PipelineConfig:
    types = _section_types()
    updated = {}
    for section, values in raw.items():
        if section not in types:
            raise ConfigError(f"unknown config section [{section}]; known: {', '.join(SECTIONS)}")
        cls = types[section]
        defaults = _field_defaults(cls)
        current = getattr(base, section)
        kwargs = {}
        for key, text in values.items():
            name = key.replace("-", "_")
            if name not in defaults:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                kwargs[name] = parse_value(text, defaults[name], name)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
        try:
            updated[section] = replace(current, **kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] invalid value: {exc}") from None
    return replace(base, **updated)


def load_config(path=None, overrides: dict | None = None, env: dict | None = None) -> PipelineConfig:
    """Read an INI file (optional), apply ``section.key`` overrides, then the seed env var.

    ``TRAJFORGE_SEED`` replaces the scene, training and benchmark seeds.
    """
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            raw[section] = dict(parser.items(section))
    for dotted, text in (overrides or {}).items():
        section, sep, key = dotted.partition(".")
        if not sep:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        raw.setdefault(section.replace("-", "_"), {})[key] = text
    cfg = _build(raw, PipelineConfig())
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        cfg = replace(cfg, scene=replace(cfg.scene, seed=seed), train=replace(cfg.train, seed=seed),
                      experiment=replace(cfg.experiment, benchmark_seed=seed))
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    """INI text that :func:`load_config` parses back to an equal config."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for f in fields(getattr(cfg, section)):
            lines.append(f"{f.name} = {_format(getattr(getattr(cfg, section), f.name))}")
        lines.append("")
    return "\n".join(lines)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, dict):
        return ", ".join(f"{k}:{float(x)!r}" for k, x in v.items())
    if isinstance(v, (tuple, frozenset)):
        items = sorted(v) if isinstance(v, frozenset) else v
        if items and isinstance(next(iter(items)), tuple):
            return ", ".join(f"{k}:{float(x)!r}" for k, x in items)
        return ", ".join(_format(x) for x in items)
    if isinstance(v, float):
        return repr(v)
    return str(v)
