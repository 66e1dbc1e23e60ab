"""
This module contains the configuration for the toolkit: process-level
settings read from the environment, and the experiment file schema with its
named presets.
"""

from __future__ import annotations

import json
import tomllib
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError
from .graphs import GraphSpec
from .optimizers import OPTIMIZERS
from .strategies import KRule

load_dotenv()


class Settings(BaseSettings):
    """
    Process settings loaded from environment variables.
    """

    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )

    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = True
    RESULTS_DIR: str = "results"
    JOBS: int = Field(default=1, ge=1)

    # Cell execution backend
    EXECUTOR: Literal["process", "celery"] = "process"
    REDIS_URL: str = "redis://localhost:6379/0"
    CELERY_RESULT_TIMEOUT: int = 3600

    @field_validator("LOG_JSON", mode="before")
    @classmethod
    def empty_str_to_bool_false(cls, v: Any) -> Any:
        """Converts empty strings to False for boolean fields."""
        if v == "":
            return False
        return v


settings = Settings()

Strategy = Literal["itlw", "fo", "layerwise"]
Initializer = Literal["bilinear", "tqa", "random"]
Mode = Literal["progressive", "direct"]


class ExperimentConfig(BaseModel):
    """
    One experiment: a graph ensemble crossed with strategies, optimizers,
    initializers, k rules and depths.

    `progressive` mode trains bilinear chains from p=3 (records from p_start
    to p_target); `direct` mode initializes every depth independently with
    TQA or random parameters. Adding `itlw` always adds its FO baseline.
    """

    name: str = "custom"
    graphs: list[GraphSpec] = Field(default_factory=list)
    graph_files: list[Path] = Field(default_factory=list)
    mode: Mode = "progressive"
    p_start: int = Field(default=3, ge=1)
    p_target: int = Field(default=8, ge=1)
    k: list[str] = Field(default_factory=lambda: ["1", "2", "3", "half_p"])
    optimizers: list[str] = Field(default_factory=lambda: ["nelder-mead", "l-bfgs-b"])
    initializers: list[Initializer] = Field(default_factory=lambda: ["bilinear"])
    strategies: list[Strategy] = Field(default_factory=lambda: ["itlw", "fo"])
    init_seeds: list[int] = Field(default_factory=lambda: [0])
    escape_k: int = Field(default=3, ge=1)
    seed: int = 0
    output_dir: Path | None = None
    jobs: int | None = Field(default=None, ge=1)

    @field_validator("k", mode="before")
    @classmethod
    def k_as_text(cls, value: Any) -> Any:
        if isinstance(value, (list, tuple)):
            return [str(item) for item in value]
        return value

    @model_validator(mode="after")
    def check_combinations(self) -> "ExperimentConfig":
        problems = []
        if not self.graphs and not self.graph_files:
            problems.append("no graphs: give graph specs or graph files")
        if self.p_target < self.p_start:
            problems.append(f"p_target {self.p_target} is below p_start {self.p_start}")
        for name in self.optimizers:
            if name not in OPTIMIZERS:
                problems.append(f"unknown optimizer {name!r}")
        for rule in self.k:
            try:
                KRule.parse(rule)
            except ValueError as exc:
                problems.append(str(exc))
        trains = {"itlw", "fo"} & set(self.strategies)
        if self.mode == "progressive":
            if self.p_start < 3:
                problems.append("progressive mode starts at p_start >= 3")
            others = [name for name in self.initializers if name != "bilinear"]
            if trains and others:
                problems.append(f"progressive mode needs bilinear initialization, got {others}")
        elif trains and "bilinear" in self.initializers:
            problems.append("bilinear initialization requires progressive mode")
        if trains and not self.initializers:
            problems.append("no initializers")
        if "itlw" in self.strategies and not self.k:
            problems.append("itlw needs at least one k rule")
        if len(set(self.init_seeds)) != len(self.init_seeds):
            problems.append("init_seeds must be distinct")
        keys = [(spec.family, spec.n, spec.degree, spec.prob, spec.seed) for spec in self.graphs]
        if len(set(keys)) != len(keys):
            problems.append("graph specs repeat the same family, shape and seed")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def k_rules(self) -> list[KRule]:
        return [KRule.parse(rule) for rule in self.k]

    def depths(self) -> list[int]:
        return list(range(self.p_start, self.p_target + 1))


def _regular(n: int, degree: int, count: int, seed: int) -> GraphSpec:
    return GraphSpec(family="regular", n=n, degree=degree, count=count, seed=seed)


def _erdos_renyi(n: int, prob: float, count: int, seed: int) -> GraphSpec:
    return GraphSpec(family="erdos-renyi", n=n, prob=prob, count=count, seed=seed)


def _full_ensemble() -> list[GraphSpec]:
    # 6 graphs per class; 3-regular needs even n
    specs = []
    for n in (10, 12):
        specs.append(_regular(n, 3, 3, seed=100 + n))
    for n in (10, 11, 12):
        specs.append(_regular(n, 4, 2, seed=200 + n))
        for prob in (0.3, 0.5, 0.7):
            specs.append(_erdos_renyi(n, prob, 2, seed=300 + n + int(prob * 100)))
    return specs


PRESETS: dict[str, dict[str, Any]] = {
    "desk": {
        "name": "desk",
        "graphs": [
            _regular(10, 3, 4, seed=1),
            _regular(10, 4, 2, seed=11),
            _erdos_renyi(10, 0.3, 2, seed=21),
            _erdos_renyi(10, 0.5, 1, seed=31),
            _erdos_renyi(10, 0.7, 1, seed=41),
        ],
        "mode": "progressive",
        "p_start": 3,
        "p_target": 8,
        "k": ["1", "2", "3", "half_p"],
    },
    "paper": {
        "name": "paper",
        "graphs": _full_ensemble(),
        "mode": "progressive",
        "p_start": 3,
        "p_target": 10,
        "k": ["1", "2", "3", "4", "5", "half_p", "half_p_minus_1"],
    },
    "paper-tqa": {
        "name": "paper-tqa",
        "graphs": _full_ensemble(),
        "mode": "direct",
        "p_start": 1,
        "p_target": 10,
        "k": ["1", "2", "3", "4", "5"],
        "initializers": ["tqa"],
    },
    "iterations": {
        "name": "iterations",
        "graphs": [_regular(6, 3, 1, seed=5)],
        "mode": "direct",
        "p_start": 5,
        "p_target": 5,
        "k": ["5"],
        "optimizers": ["l-bfgs-b"],
        "initializers": ["random"],
        "strategies": ["itlw"],
        "init_seeds": list(range(10)),
    },
}

# aliases for the full-scale ensemble
PRESETS["full"] = {**PRESETS["paper"], "name": "full"}
PRESETS["full-tqa"] = {**PRESETS["paper-tqa"], "name": "full-tqa"}


def _translate(exc: ValidationError, source: str) -> ConfigError:
    parts = []
    for error in exc.errors():
        loc = ".".join(str(item) for item in error["loc"])
        message = error["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {message}" if loc else message)
    return ConfigError(f"{source}: {'; '.join(parts)}")


def preset_config(name: str, **overrides: Any) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    try:
        return ExperimentConfig.model_validate({**PRESETS[name], **overrides})
    except ValidationError as exc:
        raise _translate(exc, f"preset {name}") from exc


def load_experiment_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    """Reads a JSON or TOML experiment file; overrides replace top-level keys."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a keyed object")
    try:
        return ExperimentConfig.model_validate({**raw, **overrides})
    except ValidationError as exc:
        raise _translate(exc, str(path)) from exc
