"""Experiment configuration: one YAML file with nested sections.

Top-level keys are the run settings (``workers``, ``delta``, ``seed``, ...);
``problem``, ``aggregator``, ``attack`` and ``optimizer`` are nested maps
whose keys are the fields of the matching spec dataclass. Missing keys take
their defaults; unknown keys are rejected.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import types
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..aggregators import CC_DELTA_MAX, AggregatorSpec, byzantine_count
from ..attacks import AttackSpec
from ..core import ConfigError
from ..optimizer import OptimizerSpec
from ..problems import ProblemSpec

SECTIONS = {
    "problem": ProblemSpec,
    "aggregator": AggregatorSpec,
    "attack": AttackSpec,
    "optimizer": OptimizerSpec,
}

STUDIES = ("simulation", "cc-contraction", "momentum-variance")


@dataclass
class ExperimentConfig:
    """A fully specified experiment.

    ``study`` selects what ``run`` executes: the round-by-round simulation
    (the default) or one of the two fixed Monte Carlo studies, which read
    their own knobs from ``study_params``.
    """

    name: str = "run"
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    workers: int = 10
    delta: float = 0.0
    seed: int = 0
    rounds: int = 100
    cadence: int = 1
    output: str = "runs"
    divergence_threshold: float = 1e12
    record_timing: bool = False
    study: str = "simulation"
    study_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}", "study")
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("must be a non-empty string", "name")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "workers")
        if not 0 <= self.delta < 1:
            raise ConfigError("must lie in [0, 1)", "delta")
        if self.seed < 0:
            raise ConfigError("must be >= 0", "seed")
        if self.rounds < 1:
            raise ConfigError("must be >= 1", "rounds")
        if self.cadence < 1:
            raise ConfigError("must be >= 1", "cadence")
        if not self.divergence_threshold > 0:
            raise ConfigError("must be > 0", "divergence_threshold")
        count = byzantine_count(self.delta, self.workers)
        if self.attack.byzantine is not None and len(self.attack.byzantine) != count:
            raise ConfigError(f"expected floor(delta * workers) = {count} indices", "attack.byzantine")
        if self.study == "simulation" and count >= self.workers:
            raise ConfigError("no good workers left", "delta")

    def warnings(self) -> list[str]:
        out = []
        if self.aggregator.rule == "centered-clip" and self.delta > CC_DELTA_MAX:
            out.append(f"delta={self.delta} exceeds the centered-clipping breakdown point {CC_DELTA_MAX}")
        return out

    def to_dict(self) -> dict:
        return to_dict(self)

    def hash(self) -> str:
        return config_hash(self)


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _coerce(value, tp, key):
    """Check ``value`` against the annotated type; ints widen to float."""
    if value is None:
        if typing.get_origin(tp) in (typing.Union, types.UnionType) and type(None) in typing.get_args(tp):
            return None
        raise ConfigError("must not be null", key)
    base = _strip_optional(tp)
    origin = typing.get_origin(base)
    if base is float:
        if isinstance(value, str):
            # YAML 1.1 reads "1e8" (no dot) as a string
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"expected a number, got {value!r}", key) from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key)
        (item,) = typing.get_args(base) or (Any,)
        return [_coerce(v, item, f"{key}[{i}]") if item is not Any else v for i, v in enumerate(value)]
    if base is dict or origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {value!r}", key)
        return dict(value)
    return value


def _build(cls, data, prefix):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", prefix or "config")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError("unknown key", f"{prefix}.{key}" if prefix else str(key))
    kwargs = {}
    for name in names:
        if name not in data:
            continue
        key = f"{prefix}.{name}" if prefix else name
        if not prefix and name in SECTIONS:
            kwargs[name] = _build(SECTIONS[name], data[name], name)
        else:
            kwargs[name] = _coerce(data[name], hints[name], key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), prefix or "config") from exc


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


def to_dict(config: ExperimentConfig) -> dict:
    """Plain nested dict with every default materialized."""
    return dataclasses.asdict(config)


def dumps(config: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(config), sort_keys=False, default_flow_style=False)


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", "config") from exc
    return from_dict(data or {})


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", "config") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}", "config") from exc
    data = data or {}
    if isinstance(data, dict) and "name" not in data:
        data = {"name": path.stem, **data}
    return from_dict(data)


def save(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(dumps(config))
    return path


def config_hash(config: ExperimentConfig) -> str:
    """Stable short digest of the resolved config (output location excluded)."""
    d = to_dict(config)
    d.pop("output", None)
    blob = json.dumps(d, sort_keys=True, default=_json_default, allow_nan=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _json_default(obj):
    raise TypeError(f"not serializable: {type(obj).__name__}")


def get_key(data: dict, dotted: str):
    cur = data
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise ConfigError("axis key not present in the template", dotted)
        cur = cur[part]
    return cur


def set_key(data: dict, dotted: str, value) -> dict:
    """Copy of ``data`` with the dotted key replaced."""
    out = copy.deepcopy(data)
    get_key(out, dotted)
    parts = dotted.split(".")
    cur = out
    for part in parts[:-1]:
        cur = cur[part]
    cur[parts[-1]] = value
    return out


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    data = to_dict(config)
    for key, value in overrides.items():
        data = set_key(data, key.replace("__", "."), value)
    return from_dict(data)


def emit_warnings(config: ExperimentConfig):
    for msg in config.warnings():
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
