"""Ground-truth trail users: attribute sampling, routes and kinematics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .errors import ConfigError, EmptyGraph, InvalidMix, NonPositiveSpeed
from .graph import ParkGraph

ACTIVITIES = ("walk", "jog", "bike")
CATEGORICAL = ("top_color", "bottom_color", "activity", "age_group", "gender", "accessories")
ATTRIBUTES = CATEGORICAL + ("speed",)

# upper speed limits (m/s) for walk and jog; anything faster is a bike
WALK_MAX = 1.8
JOG_MAX = 4.0

DEFAULT_SPEED_BANDS = {"walk": (0.8, 1.8), "jog": (1.9, 4.0), "bike": (4.1, 8.0)}
DEFAULT_PALETTES = {
    "top_color": ("black", "white", "blue", "red", "grey", "green", "yellow", "brown"),
    "bottom_color": ("black", "blue", "grey", "khaki", "white", "brown", "green", "red"),
    "age_group": ("child", "adult", "senior"),
    "gender": ("female", "male"),
    "accessories": ("none", "hat", "backpack", "headphones"),
}


def classify_activity(speed: float) -> str:
    if not speed > 0:
        raise NonPositiveSpeed(f"speed must be positive, got {speed}")
    if speed <= WALK_MAX:
        return "walk"
    if speed <= JOG_MAX:
        return "jog"
    return "bike"


@dataclass(frozen=True)
class AttributeVector:
    """Appearance and motion attributes of one person.

    A ``None`` field means the attribute was not perceived (the observing
    sensor lacks that capability).
    """

    top_color: Optional[str] = None
    bottom_color: Optional[str] = None
    activity: Optional[str] = None
    age_group: Optional[str] = None
    gender: Optional[str] = None
    accessories: Optional[str] = None
    speed: Optional[float] = None

    def get(self, name: str):
        return getattr(self, name)

    def categorical(self, names=CATEGORICAL) -> tuple:
        return tuple(getattr(self, n) for n in names)

    def restricted(self, names) -> "AttributeVector":
        keep = set(names)
        if keep.issuperset(ATTRIBUTES):
            return self
        return AttributeVector(**{a: (getattr(self, a) if a in keep else None) for a in ATTRIBUTES})

    def as_dict(self) -> dict:
        return {a: getattr(self, a) for a in ATTRIBUTES}


@dataclass(frozen=True)
class UserAgent:
    true_id: int
    attributes: AttributeVector
    route: tuple[int, ...]
    spawn_tick: int
    position: tuple[int, float] = (0, 0.0)

    def route_lengths(self, graph: ParkGraph) -> list[float]:
        return [graph.distance(a, b) for a, b in zip(self.route, self.route[1:])]


@dataclass(frozen=True)
class Exited:
    agent: UserAgent


@dataclass(frozen=True)
class Palette:
    values: tuple[str, ...]
    weights: Optional[tuple[float, ...]] = None

    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(len(self.values), 1.0 / len(self.values))
        w = np.asarray(self.weights, dtype=np.float64)
        return w / w.sum()


@dataclass(frozen=True)
class PopulationConfig:
    size: int = 100
    activity_mix: Mapping[str, float] = field(
        default_factory=lambda: {"walk": 0.4, "jog": 0.3, "bike": 0.3}
    )
    palettes: Mapping[str, Palette] = field(
        default_factory=lambda: {k: Palette(v) for k, v in DEFAULT_PALETTES.items()}
    )
    spawn_window_ticks: int = 600
    speed_bands: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SPEED_BANDS)
    )
    # attribute names that must form a distinct tuple for every agent (empty: no constraint)
    distinct_over: tuple[str, ...] = ()
    # every pair of agents differs on at least this many of those attributes
    distinct_margin: int = 1


def activity_counts(size: int, mix: Mapping[str, float]) -> dict[str, int]:
    """Split ``size`` across activities by largest-remainder rounding."""
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9 or any(v < 0 for v in mix.values()):
        raise InvalidMix(f"activity mix must be non-negative and sum to 1, got {dict(mix)}")
    unknown = set(mix) - set(ACTIVITIES)
    if unknown:
        raise InvalidMix(f"unknown activities in mix: {sorted(unknown)}")
    order = [a for a in ACTIVITIES if a in mix]
    quotas = {a: mix[a] * size for a in order}
    counts = {a: int(math.floor(quotas[a])) for a in order}
    left = size - sum(counts.values())
    by_remainder = sorted(order, key=lambda a: (-(quotas[a] - counts[a]), order.index(a)))
    for a in by_remainder[:left]:
        counts[a] += 1
    return counts


def sample_population(
    config: PopulationConfig,
    graph: ParkGraph,
    rng: np.random.Generator,
    route_rng: Optional[np.random.Generator] = None,
) -> list[UserAgent]:
    if not graph.sensors:
        raise EmptyGraph("cannot populate an empty graph")
    counts = activity_counts(config.size, config.activity_mix)
    if config.size == 0:
        return []
    routes = graph.entry_exit_paths()
    if not routes:
        raise EmptyGraph("graph has no path between two distinct entry/exit sensors")
    route_rng = rng if route_rng is None else route_rng

    activities = [a for a in ACTIVITIES for _ in range(counts.get(a, 0))]
    activities = [activities[i] for i in rng.permutation(len(activities))]

    names = tuple(n for n in CATEGORICAL if n != "activity")
    for n in names:
        if n not in config.palettes:
            raise ConfigError(f"no palette for attribute {n!r}")
    # same draw as rng.choice(len(p), p=p), without its per-call overhead
    cdfs = {}
    for n in names:
        cdf = np.cumsum(config.palettes[n].probabilities())
        cdfs[n] = cdf / cdf[-1]

    # Two keys differ in fewer than `margin` places exactly when blanking some
    # margin-1 positions makes them equal, so keep every blanked variant.
    margin = max(1, config.distinct_margin)
    width = len(config.distinct_over)
    masks = list(itertools.combinations(range(width), min(margin - 1, width)))
    taken: set[tuple] = set()

    def variants(key):
        return [tuple(None if i in m else v for i, v in enumerate(key)) for m in masks]
    agents = []
    for true_id, act in enumerate(activities):
        lo, hi = config.speed_bands[act]
        speed = float(rng.uniform(lo, hi))
        for _attempt in range(10_000):
            cats = {n: config.palettes[n].values[int(cdfs[n].searchsorted(rng.random(), side="right"))]
                    for n in names}
            attrs = AttributeVector(activity=act, speed=speed, **cats)
            if not config.distinct_over:
                break
            near = variants(tuple(attrs.get(n) for n in config.distinct_over))
            if taken.isdisjoint(near):
                taken.update(near)
                break
        else:
            raise ConfigError(
                f"cannot draw {config.size} attribute vectors over {config.distinct_over}"
                f" that pairwise differ in {margin} place(s)"
            )
        if classify_activity(speed) != act:
            raise ConfigError(f"speed band {config.speed_bands[act]} disagrees with activity {act!r}")
        route = routes[int(route_rng.integers(len(routes)))]
        spawn = int(rng.integers(config.spawn_window_ticks)) if config.spawn_window_ticks > 0 else 0
        agents.append(UserAgent(true_id, attrs, route, spawn))
    return agents


def advance_user(agent: UserAgent, graph: ParkGraph, dt: float):
    """Move an agent ``speed * dt`` meters along its route.

    Returns the updated agent, or ``Exited`` once the final exit point is
    passed.
    """
    lengths = agent.route_lengths(graph)
    edge, frac = agent.position
    travel = agent.attributes.speed * dt
    remaining = (1.0 - frac) * lengths[edge]
    while travel > remaining:
        if edge == len(lengths) - 1:
            return Exited(agent)
        travel -= remaining
        edge += 1
        frac = 0.0
        remaining = lengths[edge]
    frac += travel / lengths[edge]
    return replace(agent, position=(edge, min(frac, 1.0)))
