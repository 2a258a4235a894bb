"""The shared YAML run configuration and its strict, line-aware loader.

One file configures every subcommand::

    seed: 0
    dataset: data/toy          # directory written by gen-data (optional)
    data: {...}                # synthetic generator settings
    model: {...}               # network settings
    train: {...}               # optimization settings
    eval: {split: val_id}
    relax: {...}
    profile: {radius: 5.0}
    grid: {...}                # ablation grid

Sections may be omitted; omitted fields take their defaults. Unknown keys
and values of the wrong type are reported with the line they appear on.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .analysis.grid import GridSpec
from .datasets.synthetic import SyntheticConfig
from .errors import ConfigError
from .model.config import ModelConfig
from .training.config import TrainConfig
from .training.relax import STEP_RULES


@dataclass(frozen=True)
class EvalSettings:
    split: str = "val_id"
    batch_size: int = 32


@dataclass(frozen=True)
class RelaxSettings:
    split: str = "val_id"
    n_structures: int = 50
    perturbation: float = 0.0
    step_rule: str = "lbfgs"
    max_steps: int = 300
    fmax: float = 0.01
    max_step: float = 0.2
    memory: int = 20
    divergence_patience: int = 10
    reference_fmax: float = 1e-4
    reference_steps: int = 20000

    def __post_init__(self):
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"step_rule must be one of {', '.join(STEP_RULES)}")
        if self.n_structures < 1 or self.max_steps < 0:
            raise ConfigError("n_structures must be >= 1 and max_steps >= 0")
        if not (self.fmax > 0 and self.max_step > 0 and self.reference_fmax > 0):
            raise ConfigError("fmax, max_step and reference_fmax must be positive")
        if self.perturbation < 0:
            raise ConfigError("perturbation must be >= 0")


@dataclass(frozen=True)
class ProfileSettings:
    radius: float = 5.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError("radius must be positive")


SECTIONS = {
    "data": SyntheticConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalSettings,
    "relax": RelaxSettings,
    "profile": ProfileSettings,
}
TOP_LEVEL = {"seed", "dataset", "grid", *SECTIONS}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str | None = None
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSettings = field(default_factory=EvalSettings)
    relax: RelaxSettings = field(default_factory=RelaxSettings)
    profile: ProfileSettings = field(default_factory=ProfileSettings)
    grid: GridSpec | None = None
    raw: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "RunConfig":
        """Apply a seed to every seeded component (command-line ``--seed`` wins over the file)."""
        raw = dict(self.raw)
        raw["seed"] = seed
        return dataclasses.replace(
            self,
            seed=seed,
            data=dataclasses.replace(self.data, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            raw=raw,
        )

    def resolved(self) -> dict:
        out = {"seed": self.seed, "dataset": self.dataset}
        for name in SECTIONS:
            out[name] = dataclasses.asdict(getattr(self, name))
        if self.grid is not None:
            out["grid"] = dataclasses.asdict(self.grid)
        return out


class _Locator:
    """Maps dotted key paths to 1-based source lines using the YAML node tree."""

    def __init__(self, node):
        self.lines = {}
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                sub = path + (str(key.value),)
                self.lines[sub] = key.start_mark.line + 1
                self._walk(value, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self._walk(item, path + (i,))

    def line(self, *path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)


def _error(source, locator, path, message) -> ConfigError:
    line = locator.line(*path)
    where = f"{source}:{line}" if line else str(source)
    dotted = ".".join(str(p) for p in path)
    err = ConfigError(f"{where}: {dotted}: {message}" if dotted else f"{where}: {message}")
    err.line, err.field = line, dotted
    return err


def _type_ok(default, value) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, (tuple, list)):
        return isinstance(value, (list, tuple))
    return True


def _defaults(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _build_section(name, cls, data, source, locator):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise _error(source, locator, (name,), f"expected a mapping, got {type(data).__name__}")
    defaults = _defaults(cls)
    for key, value in data.items():
        if key not in defaults:
            raise _error(source, locator, (name, key), f"unknown key (allowed: {', '.join(sorted(defaults))})")
        if not _type_ok(defaults[key], value):
            raise _error(source, locator, (name, key),
                         f"expected {type(defaults[key]).__name__}, got {type(value).__name__} {value!r}")
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(data)
        return cls(**data)
    except (ConfigError, TypeError, ValueError) as exc:
        message = str(exc)
        # Point at the first field named in the message, else at the section.
        named = [k for k in data if re.search(rf"\b{re.escape(k)}\b", message)]
        return_path = (name, named[0]) if named else (name,)
        raise _error(source, locator, return_path, message) from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        err = ConfigError(f"{source}:{line}: invalid YAML: {exc.problem}")
        err.line, err.field = line, ""
        raise err from None
    locator = _Locator(node)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise _error(source, locator, (), "top level must be a mapping")
    for key in data:
        if key not in TOP_LEVEL:
            raise _error(source, locator, (key,), f"unknown key (allowed: {', '.join(sorted(TOP_LEVEL))})")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise _error(source, locator, ("seed",), f"expected int, got {seed!r}")
    dataset = data.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise _error(source, locator, ("dataset",), "expected a directory path")
    sections = {name: _build_section(name, cls, data.get(name), source, locator) for name, cls in SECTIONS.items()}
    grid = None
    if data.get("grid") is not None:
        try:
            grid = GridSpec.from_dict(data["grid"])
        except (ConfigError, TypeError, ValueError, KeyError) as exc:
            raise _error(source, locator, ("grid",), str(exc)) from None
    # A top-level seed fills in sections that do not set their own.
    for name in ("data", "train"):
        if "seed" in data and "seed" not in (data.get(name) or {}):
            sections[name] = dataclasses.replace(sections[name], seed=seed)
    return RunConfig(seed=seed, dataset=dataset, grid=grid, raw=data, **sections)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        err = ConfigError(f"{path}: cannot read config: {exc.strerror}")
        err.line, err.field = None, ""
        raise err from None
    return parse_config(text, str(path))
