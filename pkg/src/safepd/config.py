"""Run configuration files: nested YAML, strict keys, line-anchored errors."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError
from .yamlio import LocatedDoc, load_yaml, parse_yaml, validate

CONFIG_VERSION = 1
ALGORITHMS = ("stochastic-primal-dual", "dual-descent", "fixed-weight")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InitialSpec(_Strict):
    kind: Literal["uniform-safe", "fixed", "mixture", "figure"]
    point: Optional[tuple[float, float]] = None
    points: Optional[list[tuple[float, float]]] = None


class ScenarioOverride(_Strict):
    drop: list[str] = []                    # obstacle labels to remove
    goal: Optional[tuple[float, float]] = None
    initial_distribution: Optional[InitialSpec] = None


class TrainingSection(_Strict):
    mode: Literal["episodic", "continuing"] = "continuing"
    gamma: float = Field(0.95, gt=0, lt=1)
    eta_theta: float = Field(0.1, gt=0)
    eta_lambda: float = Field(0.05, gt=0)
    iterations: int = Field(40000, ge=0)
    inner_iterations: int = Field(500, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    estimator: Literal["paper", "full-reinforce"] = "paper"
    batch_size: int = Field(1, ge=1)
    horizon: Optional[int] = Field(None, ge=0)
    horizon_cap: Optional[int] = Field(None, ge=1)
    step_decay: bool = False
    baseline: Optional[float] = None
    grad_clip: Optional[float] = Field(None, gt=0)
    dual_threshold: Literal["fixed", "horizon-matched"] = "fixed"

    @model_validator(mode="after")
    def _episodic_horizon(self):
        if self.mode == "episodic" and self.horizon is None:
            raise ValueError("episodic mode needs 'horizon'")
        return self


class PolicySection(_Strict):
    rbf_spacing: float = Field(0.25, gt=0)
    rbf_sigma: float = Field(0.5, gt=0)
    covariance: tuple[float, float] = (0.5, 0.5)
    feature_cutoff: Optional[float] = Field(None, ge=0)

    @model_validator(mode="after")
    def _positive_cov(self):
        if min(self.covariance) <= 0:
            raise ValueError("covariance entries must be positive")
        return self


class ObstacleConstraint(_Strict):
    delta: Optional[float] = Field(None, gt=0, lt=1)
    t_safe: Optional[int] = Field(None, ge=0)
    c: Optional[float] = None


class ConstraintsSection(_Strict):
    delta: Optional[float] = Field(None, gt=0, lt=1)
    t_safe: Optional[int] = Field(None, ge=0)
    per_obstacle: dict[str, ObstacleConstraint] = {}


class EvaluationSection(_Strict):
    every: int = Field(4000, ge=1)
    rollouts: int = Field(500, ge=1)
    h_eval: int = Field(100, ge=1)
    initial: Literal["scenario", "figure"] = "scenario"
    threads: int = Field(1, ge=1)


class OutputSection(_Strict):
    checkpoint_every: int = Field(4000, ge=1)


class RunConfig(_Strict):
    format_version: Literal[1] = 1
    algorithm: Literal["stochastic-primal-dual", "dual-descent", "fixed-weight"] = "stochastic-primal-dual"
    fixed_lambda: Optional[float] = Field(None, ge=0)
    scenario: str = "default"
    scenario_override: ScenarioOverride = ScenarioOverride()
    training: TrainingSection = TrainingSection()
    policy: PolicySection = PolicySection()
    constraints: ConstraintsSection = ConstraintsSection()
    evaluation: EvaluationSection = EvaluationSection()
    output: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _fixed_weight(self):
        if self.algorithm == "fixed-weight" and self.fixed_lambda is None:
            raise ValueError("algorithm 'fixed-weight' needs 'fixed_lambda'")
        return self


def _resolve_scenario(cfg: RunConfig, doc: LocatedDoc, base: Optional[Path]) -> RunConfig:
    if cfg.scenario == "default" or base is None:
        return cfg
    path = Path(cfg.scenario)
    if not path.is_absolute():
        path = base / path
    if not path.is_file():
        raise doc.error(("scenario",), f"scenario file {str(path)!r} does not exist")
    return cfg.model_copy(update={"scenario": str(path.resolve())})


def config_from_doc(doc: LocatedDoc, base: Optional[Path] = None) -> RunConfig:
    data = {} if doc.data is None else doc.data
    if not isinstance(data, dict):
        raise doc.error((), "a run configuration must be a mapping")
    return _resolve_scenario(validate(doc, RunConfig, data), doc, base)


def load_config(path) -> RunConfig:
    path = Path(path)
    return config_from_doc(load_yaml(path), path.parent)


def parse_config(text: str, source: str = "<string>", base=None) -> RunConfig:
    return config_from_doc(parse_yaml(text, source), None if base is None else Path(base))


def apply_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Apply command-line overrides (``None`` values are ignored) and re-validate."""
    data = cfg.model_dump()
    mapping = {"seed": ("training", "seed"), "algorithm": ("algorithm",),
               "fixed_lambda": ("fixed_lambda",), "h_eval": ("evaluation", "h_eval"),
               "rollouts": ("evaluation", "rollouts"), "threads": ("evaluation", "threads"),
               "iterations": ("training", "iterations"), "scenario": ("scenario",)}
    for key, value in kw.items():
        if value is None:
            continue
        path = mapping[key]
        node = data
        for p in path[:-1]:
            node = node[p]
        node[path[-1]] = value
    try:
        return RunConfig.model_validate(data)
    except Exception as exc:  # pydantic ValidationError
        raise ConfigError(f"invalid command-line override: {exc}") from None
