"""Continuous 2-D navigation among obstacles.

States are points in an axis-aligned box, actions are displacements, and the
next state is ``clamp(s + a)``. The reward is ``-||s - goal||^2``. Each obstacle
defines one constraint whose safe set is the obstacle's complement; obstacle
boundaries count as unsafe. Collisions do not end an episode.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .constraints import ConstraintSpec
from .errors import ConfigError
from .mdp_core import Mode
from .yamlio import LocatedDoc, load_yaml, parse_yaml, validate

SCENARIO_VERSION = 1

FIGURE_STARTS = ((1.0, 9.0), (8.0, 9.5), (0.5, 2.5), (5.0, 6.0))


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def contains(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        d = s - np.asarray(self.center)
        return np.einsum("nd,nd->n", d, d) <= self.radius ** 2

    def intersects_box(self, low, high) -> bool:
        nearest = np.clip(self.center, low, high)
        return float(np.sum((nearest - np.asarray(self.center)) ** 2)) <= self.radius ** 2

    def translated(self, v) -> "Circle":
        return Circle(tuple(np.asarray(self.center) + v), self.radius)


@dataclass(frozen=True)
class Rectangle:
    low: tuple
    high: tuple

    def contains(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        return np.all((s >= np.asarray(self.low)) & (s <= np.asarray(self.high)), axis=1)

    def intersects_box(self, low, high) -> bool:
        return bool(np.all(np.asarray(self.low) <= high) and np.all(np.asarray(self.high) >= low))

    def translated(self, v) -> "Rectangle":
        return Rectangle(tuple(np.asarray(self.low) + v), tuple(np.asarray(self.high) + v))


@dataclass(frozen=True)
class Obstacle:
    label: str
    geometry: Union[Circle, Rectangle]
    delta: Optional[float] = 0.001
    t_safe: int = 100
    c: Optional[float] = None  # raw threshold overrides the slack formulas


def in_safe_set(state, obstacle: Obstacle) -> bool:
    return not bool(obstacle.geometry.contains(np.asarray(state, dtype=float))[0])


def step(state, action, low=(0.0, 0.0), high=(10.0, 10.0)) -> np.ndarray:
    return np.clip(np.asarray(state, dtype=float) + action, low, high)


def reward(state, goal) -> float:
    d = np.asarray(state, dtype=float) - np.asarray(goal, dtype=float)
    return -float(d @ d)


@dataclass(frozen=True)
class InitialDistribution:
    kind: str  # "uniform-safe" | "fixed" | "mixture"
    points: tuple = ()


@dataclass(frozen=True)
class NavScenario:
    low: tuple = (0.0, 0.0)
    high: tuple = (10.0, 10.0)
    goal: tuple = (8.5, 1.5)
    obstacles: tuple = ()
    initial: InitialDistribution = field(default_factory=lambda: InitialDistribution("uniform-safe"))

    def __post_init__(self):
        low, high = np.asarray(self.low), np.asarray(self.high)
        if not np.all(low < high):
            raise ConfigError("domain low corner must be below the high corner")
        if not np.all((np.asarray(self.goal) >= low) & (np.asarray(self.goal) <= high)):
            raise ConfigError(f"goal {self.goal} lies outside the domain")
        for ob in self.obstacles:
            if not ob.geometry.intersects_box(low, high):
                raise ConfigError(f"obstacle {ob.label!r} does not intersect the domain")
        for p in self.initial.points:
            for ob in self.obstacles:
                if ob.geometry.contains(np.asarray(p, dtype=float))[0]:
                    raise ConfigError(f"initial point {p} lies inside obstacle {ob.label!r}")

    @property
    def labels(self) -> list[str]:
        return [ob.label for ob in self.obstacles]

    def without(self, index: int) -> "NavScenario":
        obs = tuple(ob for i, ob in enumerate(self.obstacles) if i != index)
        return replace(self, obstacles=obs)

    def with_initial(self, initial: InitialDistribution) -> "NavScenario":
        return replace(self, initial=initial)

    def constraint_specs(self, mode, gamma: Optional[float] = None,
                         horizon: Optional[int] = None) -> list[ConstraintSpec]:
        """One constraint per obstacle; thresholds from the slack formulas unless ``c`` is set."""
        mode = Mode(mode)
        specs = []
        for i, ob in enumerate(self.obstacles):
            if ob.c is not None:
                specs.append(ConstraintSpec.raw(i, ob.label, ob.c, mode, gamma=gamma,
                                                delta=ob.delta, T=horizon))
            elif mode is Mode.CONTINUING:
                specs.append(ConstraintSpec.discounted(i, ob.label, ob.delta, gamma, ob.t_safe))
            else:
                specs.append(ConstraintSpec.episodic(i, ob.label, ob.delta, horizon))
        return specs

    def to_dict(self) -> dict:
        obs = []
        for ob in self.obstacles:
            g = ob.geometry
            item = {"label": ob.label}
            if isinstance(g, Circle):
                item.update(shape="circle", center=list(g.center), radius=g.radius)
            else:
                item.update(shape="rectangle", min=list(g.low), max=list(g.high))
            item.update(delta=ob.delta, t_safe=ob.t_safe)
            if ob.c is not None:
                item["c"] = ob.c
            obs.append(item)
        init = {"kind": self.initial.kind}
        if self.initial.kind == "fixed":
            init["point"] = list(self.initial.points[0])
        elif self.initial.kind == "mixture":
            init["points"] = [list(p) for p in self.initial.points]
        return {"format_version": SCENARIO_VERSION,
                "domain": {"low": list(self.low), "high": list(self.high)},
                "goal": list(self.goal), "obstacles": obs, "initial_distribution": init}


class NavEnv:
    """Batch environment over a :class:`NavScenario`."""

    def __init__(self, scenario: NavScenario):
        self.scenario = scenario
        self.low = np.asarray(scenario.low, dtype=float)
        self.high = np.asarray(scenario.high, dtype=float)
        self.goal = np.asarray(scenario.goal, dtype=float)
        self.shapes = [ob.geometry for ob in scenario.obstacles]
        self.n_constraints = len(self.shapes)
        circ = [i for i, g in enumerate(self.shapes) if isinstance(g, Circle)]
        rect = [i for i, g in enumerate(self.shapes) if isinstance(g, Rectangle)]
        self._circ = np.array(circ, dtype=int)
        self._centers = np.array([self.shapes[i].center for i in circ], dtype=float).reshape(-1, 2)
        self._r2 = np.array([self.shapes[i].radius ** 2 for i in circ], dtype=float)
        self._rect = np.array(rect, dtype=int)
        self._lo = np.array([self.shapes[i].low for i in rect], dtype=float).reshape(-1, 2)
        self._hi = np.array([self.shapes[i].high for i in rect], dtype=float).reshape(-1, 2)

    def contains(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        return np.all((s >= self.low) & (s <= self.high), axis=1)

    def step(self, states, actions, rng=None) -> np.ndarray:
        return np.clip(states + actions, self.low, self.high)

    def reward(self, states, actions=None) -> np.ndarray:
        d = states - self.goal
        return -np.einsum("nd,nd->n", d, d)

    def safe(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        out = np.ones((s.shape[0], self.n_constraints), dtype=bool)
        if self._circ.size:
            d = s[:, None, :] - self._centers[None]
            out[:, self._circ] = (d * d).sum(axis=2) > self._r2
        if self._rect.size:
            inside = (s[:, None, :] >= self._lo[None]) & (s[:, None, :] <= self._hi[None])
            out[:, self._rect] = ~inside.all(axis=2)
        return out

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        init = self.scenario.initial
        if init.kind == "fixed":
            return np.tile(np.asarray(init.points[0], dtype=float), (n, 1))
        if init.kind == "mixture":
            pts = np.asarray(init.points, dtype=float)
            return pts[rng.integers(len(pts), size=n)]
        out = np.empty((0, self.low.size))
        while out.shape[0] < n:
            cand = rng.uniform(self.low, self.high, size=(2 * n, self.low.size))
            ok = self.safe(cand).all(axis=1) if self.n_constraints else np.ones(2 * n, bool)
            out = np.concatenate([out, cand[ok]])
        return out[:n]


# -- scenario files ------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class _Domain(_Strict):
    low: tuple[float, float] = (0.0, 0.0)
    high: tuple[float, float] = (10.0, 10.0)


class _ObstacleBase(_Strict):
    label: str
    delta: Optional[float] = Field(0.001, gt=0, lt=1)
    t_safe: int = Field(100, ge=0)
    c: Optional[float] = None


class _CircleModel(_ObstacleBase):
    shape: Literal["circle"]
    center: tuple[float, float]
    radius: float = Field(gt=0)


class _RectModel(_ObstacleBase):
    shape: Literal["rectangle"]
    min: tuple[float, float]
    max: tuple[float, float]


class _InitialModel(_Strict):
    kind: Literal["uniform-safe", "fixed", "mixture", "figure"] = "uniform-safe"
    point: Optional[tuple[float, float]] = None
    points: Optional[list[tuple[float, float]]] = None


class ScenarioModel(_Strict):
    format_version: Literal[1] = 1
    domain: _Domain = _Domain()
    goal: tuple[float, float] = (8.5, 1.5)
    obstacles: list[Annotated[Union[_CircleModel, _RectModel], Field(discriminator="shape")]] = []
    initial_distribution: _InitialModel = _InitialModel()


def initial_from_spec(kind: str, point=None, points=None) -> InitialDistribution:
    if kind == "figure":
        return InitialDistribution("mixture", FIGURE_STARTS)
    if kind == "fixed":
        if point is None:
            raise ConfigError("fixed initial distribution needs 'point'")
        return InitialDistribution("fixed", (tuple(point),))
    if kind == "mixture":
        if not points:
            raise ConfigError("mixture initial distribution needs a non-empty 'points' list")
        return InitialDistribution("mixture", tuple(tuple(p) for p in points))
    return InitialDistribution("uniform-safe")


def scenario_from_doc(doc: LocatedDoc, data=None) -> NavScenario:
    model = validate(doc, ScenarioModel, data)
    obstacles = []
    for i, ob in enumerate(model.obstacles):
        if isinstance(ob, _CircleModel):
            geom = Circle(tuple(ob.center), ob.radius)
        else:
            if not all(a < b for a, b in zip(ob.min, ob.max)):
                raise doc.error(("obstacles", i), "rectangle min corner must be below max corner")
            geom = Rectangle(tuple(ob.min), tuple(ob.max))
        if ob.delta is None and ob.c is None:
            raise doc.error(("obstacles", i), "either delta or c must be given")
        obstacles.append(Obstacle(ob.label, geom, ob.delta, ob.t_safe, ob.c))
    init = model.initial_distribution
    try:
        initial = initial_from_spec(init.kind, init.point, init.points)
        return NavScenario(low=tuple(model.domain.low), high=tuple(model.domain.high),
                           goal=tuple(model.goal), obstacles=tuple(obstacles), initial=initial)
    except ConfigError as exc:
        raise doc.error(("initial_distribution",) if "initial" in str(exc) else (), str(exc)) from None


def load_scenario(path) -> NavScenario:
    return scenario_from_doc(load_yaml(path))


def parse_scenario(text: str, source: str = "<string>") -> NavScenario:
    return scenario_from_doc(parse_yaml(text, source))


def default_scenario_text() -> str:
    return resources.files("safepd.data").joinpath("default_scenario.yaml").read_text()


def default_scenario() -> NavScenario:
    return parse_scenario(default_scenario_text(), "default_scenario.yaml")
