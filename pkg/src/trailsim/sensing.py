"""Observation records produced when users pass through a sensor's range."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Union

import numpy as np

from .errors import ConfigError
from .graph import SensorSpec
from .population import CATEGORICAL, DEFAULT_PALETTES, AttributeVector, classify_activity


@dataclass
class Observation:
    sensor_id: int
    obs_id: int
    a: int
    perceived: AttributeVector
    truth_id: int
    depart_tick: Optional[int] = None

    @property
    def speed(self) -> float:
        return self.perceived.speed


@dataclass(frozen=True)
class NoiseModel:
    """Perception error: categorical flips with probability ``p_err`` and a
    multiplicative speed error uniform in ``[1 - sigma, 1 + sigma]``.

    ``p_err`` may be a single probability or a per-attribute mapping.
    """

    p_err: Union[float, Mapping[str, float]] = 0.004
    sigma: float = 0.05

    def __post_init__(self):
        probs = self.p_err.values() if isinstance(self.p_err, Mapping) else [self.p_err]
        for p in probs:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"flip probability {p} outside [0, 1]")
        if not 0.0 <= self.sigma <= 0.5:
            raise ConfigError(f"speed error sigma {self.sigma} outside [0, 0.5]")

    def flip_probability(self, name: str) -> float:
        if type(self.p_err) is float:
            return self.p_err
        if isinstance(self.p_err, Mapping):
            return float(self.p_err.get(name, 0.0))
        return float(self.p_err)

    @functools.cached_property
    def silent(self) -> bool:
        return self.sigma == 0 and all(self.flip_probability(n) == 0 for n in CATEGORICAL)


def perturb(
    attrs: AttributeVector,
    noise: NoiseModel,
    rng: np.random.Generator,
    palettes: Mapping[str, Iterable[str]] = DEFAULT_PALETTES,
) -> AttributeVector:
    """Apply perception noise to a true attribute vector.

    Draws are consumed in a fixed order (one uniform per flippable attribute,
    then one for speed) so the result depends only on the rng state.
    """
    if noise.silent:
        # nothing to draw; activity is still re-read from the speed
        activity = classify_activity(attrs.speed)
        return attrs if attrs.activity == activity else replace(attrs, activity=activity)
    out = {}
    for name in CATEGORICAL:
        if name == "activity":
            continue
        value = attrs.get(name)
        u = rng.random()
        if value is not None and u < noise.flip_probability(name):
            others = [v for v in palettes[name] if v != value]
            if others:
                value = others[int(rng.integers(len(others)))]
        out[name] = value
    factor = 1.0 + noise.sigma * (2.0 * rng.random() - 1.0)
    speed = attrs.speed * factor
    out["speed"] = speed
    out["activity"] = classify_activity(speed)
    return AttributeVector(**out)


class SensorTracker:
    """Range-visit bookkeeping for one sensor.

    A visit opens when a user comes within range and yields a single
    observation the first tick the sensor is awake during that visit.
    """

    __slots__ = ("sensor", "inside")

    def __init__(self, sensor: SensorSpec):
        self.sensor = sensor
        # user index -> Observation, or None while in range but not yet seen
        self.inside: dict[int, Optional[Observation]] = {}

    @property
    def capturing(self) -> bool:
        return any(o is not None for o in self.inside.values())

    def enter(self, user: int) -> None:
        self.inside.setdefault(user, None)

    def leave(self, user: int, tick: int) -> Optional[Observation]:
        obs = self.inside.pop(user, None)
        if obs is not None:
            obs.depart_tick = tick
        return obs

    def unseen(self) -> list[int]:
        return sorted(u for u, o in self.inside.items() if o is None)

    def record(self, user: int, obs: Observation) -> None:
        self.inside[user] = obs


def sense(
    sensor: SensorSpec,
    awake: bool,
    users: Mapping[int, tuple[float, float]],
    tick: int,
    tracker: SensorTracker,
    make_observation: Callable[[int, int], Observation],
) -> tuple[list[Observation], list[Observation]]:
    """Advance one sensor by one tick given current user positions.

    ``users`` maps user index to coordinates for users still in the park.
    Returns (new observations, observations whose user left range this tick).
    """
    gx, gy = sensor.g
    in_range = {u for u, (x, y) in users.items() if math.hypot(x - gx, y - gy) < sensor.rho}
    departed = []
    for u in sorted(set(tracker.inside) - in_range):
        obs = tracker.leave(u, tick)
        if obs is not None:
            departed.append(obs)
    for u in sorted(in_range):
        tracker.enter(u)
    new = []
    if awake:
        for u in tracker.unseen():
            obs = make_observation(u, tick)
            tracker.record(u, obs)
            new.append(obs)
    return new, departed
