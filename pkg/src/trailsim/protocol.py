"""Sensor-to-sensor coordination: attribute selection, arrival estimates,
handoff fan-out and wake scheduling for the energy-saving mode."""
from __future__ import annotations

import bisect
import functools
import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .errors import EmptyInput, NonPositiveSpeed
from .graph import ParkGraph
from .population import CATEGORICAL, AttributeVector

FALLBACK_ORDER = ("top_color", "activity", "age_group", "gender", "bottom_color", "accessories")


def entropy_from_counts(counts: Iterable[int]) -> float:
    counts = tuple(sorted(c for c in counts if c > 0))
    if not counts:
        raise EmptyInput("entropy of an empty multiset")
    return _sorted_entropy(counts)


@functools.lru_cache(maxsize=4096)
def _sorted_entropy(counts: tuple[int, ...]) -> float:
    # summing in sorted order makes the result independent of insertion order
    total = sum(counts)
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log2(p)
    return h + 0.0


def attribute_entropy(values: Iterable) -> float:
    """Shannon entropy, in bits, of the empirical distribution of ``values``."""
    return entropy_from_counts(Counter(values).values())


def select_attributes(
    history: Sequence[AttributeVector],
    k: int,
    direction: str = "lowest",
    catalog: Sequence[str] = CATEGORICAL,
    fallback: Sequence[str] = FALLBACK_ORDER,
    min_history: int = 1,
) -> list[str]:
    """Rank catalog attributes by entropy over ``history`` and keep the first ``k``.

    With fewer than ``min_history`` observations the static fallback order
    (restricted to the catalog) is used instead.
    """
    catalog = [c for c in catalog if c in CATEGORICAL]
    if len(history) < max(min_history, 1):
        ranked = [a for a in fallback if a in catalog] + [a for a in catalog if a not in fallback]
        return ranked[:k]
    counts = {a: Counter() for a in catalog}
    for vec in history:
        for a in catalog:
            v = vec.get(a)
            if v is not None:
                counts[a][v] += 1
    return rank_by_entropy(counts, k, direction, catalog)


def rank_by_entropy(counts: Mapping[str, Counter], k, direction, catalog) -> list[str]:
    if direction not in ("lowest", "highest"):
        raise ValueError(f"direction must be 'lowest' or 'highest', got {direction!r}")
    sign = 1.0 if direction == "lowest" else -1.0
    scored = []
    for pos, a in enumerate(catalog):
        c = counts.get(a)
        present = tuple(sorted(c.values())) if c else ()
        if present and present[0] <= 0:
            present = tuple(v for v in present if v > 0)
        if not present:
            # never perceived here: cannot be compared, rank last
            scored.append((1, 0.0, pos, a))
            continue
        scored.append((0, sign * _sorted_entropy(present), pos, a))
    scored.sort()
    return [a for *_, a in scored[:k]]


class EntropyWindow:
    """Sliding window over the last ``size`` perceived vectors at one sensor,
    with incrementally maintained value counts."""

    def __init__(self, catalog: Sequence[str], size: int = 50):
        self.catalog = [c for c in catalog if c in CATEGORICAL]
        self.size = size
        self.items: deque = deque()
        self.counts = {a: Counter() for a in self.catalog}

    def __len__(self):
        return len(self.items)

    def push(self, vec: AttributeVector) -> None:
        self.items.append(vec)
        for a in self.catalog:
            v = vec.get(a)
            if v is not None:
                self.counts[a][v] += 1
        if len(self.items) > self.size:
            old = self.items.popleft()
            for a in self.catalog:
                v = old.get(a)
                if v is not None:
                    c = self.counts[a]
                    c[v] -= 1
                    if not c[v]:
                        del c[v]

    def select(self, k, direction="lowest", fallback=FALLBACK_ORDER, min_history=10) -> list[str]:
        if len(self.items) < max(min_history, 1):
            return select_attributes((), k, direction, self.catalog, fallback, min_history)
        return rank_by_entropy(self.counts, k, direction, self.catalog)


def estimate_arrival(d: float, speed: float, start_tick: int, tick_seconds: float = 1.0) -> int:
    """Tick at which a user moving at ``speed`` covers ``d`` meters from ``start_tick``."""
    if not speed > 0:
        raise NonPositiveSpeed(f"speed must be positive, got {speed}")
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    return start_tick + math.floor(d / (speed * tick_seconds) + 0.5)


@dataclass(frozen=True)
class WindowPolicy:
    w_min: int = 2
    frac: float = 0.2

    def half_width(self, travel_ticks: float) -> int:
        return max(self.w_min, math.ceil(self.frac * travel_ticks - 1e-9))


@dataclass(frozen=True)
class HandoffMessage:
    origin_sensor: int
    origin_obs_id: int
    target_sensor: int
    selected_attrs: tuple[tuple[str, object], ...]
    speed: float
    eta: int
    window: tuple[int, int]
    emitted: int = 0

    @property
    def attrs(self) -> dict:
        return dict(self.selected_attrs)


def make_handoffs(
    obs,
    graph: ParkGraph,
    selection: Sequence[str],
    policy: WindowPolicy = WindowPolicy(),
    tick_seconds: float = 1.0,
    emitted: Optional[int] = None,
) -> list[HandoffMessage]:
    """One message per neighbor of the observing sensor.

    Arrival is estimated from the tick the user entered the origin's range;
    neighboring ranges are entered the same edge length later.
    """
    speed = obs.perceived.speed
    travel_rate = speed * tick_seconds
    selected = tuple(
        (a, obs.perceived.get(a)) for a in selection if obs.perceived.get(a) is not None
    )
    when = obs.depart_tick if emitted is None else emitted
    out = []
    for target, d in graph.neighbors(obs.sensor_id):
        eta = estimate_arrival(d, speed, obs.a, tick_seconds)
        w = policy.half_width(d / travel_rate)
        out.append(
            HandoffMessage(obs.sensor_id, obs.obs_id, target, selected, speed, eta, (eta - w, eta + w), when)
        )
    return out


class WakeSchedule:
    """Per-sensor wake intervals (inclusive tick ranges), kept merged and sorted.

    In always-on mode, or for always-on sensors, everything is awake and
    added windows are ignored.
    """

    def __init__(self, sensor_ids: Iterable[int], always_on: Iterable[int] = (), horizon: int = 0,
                 mode: str = "duty_cycle"):
        self.mode = mode
        self.horizon = horizon
        self.always_on = frozenset(always_on)
        self.starts: dict[int, list[int]] = {s: [] for s in sensor_ids}
        self.ends: dict[int, list[int]] = {s: [] for s in sensor_ids}

    def intervals(self, sensor_id: int) -> list[tuple[int, int]]:
        return list(zip(self.starts[sensor_id], self.ends[sensor_id]))

    def add(self, sensor_id: int, lo: int, hi: int) -> None:
        if self.horizon:
            lo, hi = max(lo, 0), min(hi, self.horizon - 1)
        if lo > hi:
            return
        starts, ends = self.starts[sensor_id], self.ends[sensor_id]
        # first interval that could touch [lo, hi]
        i = bisect.bisect_left(ends, lo - 1)
        j = i
        while j < len(starts) and starts[j] <= hi + 1:
            lo = min(lo, starts[j])
            hi = max(hi, ends[j])
            j += 1
        starts[i:j] = [lo]
        ends[i:j] = [hi]

    def awake(self, sensor_id: int, tick: int) -> bool:
        if self.mode == "always_on" or sensor_id in self.always_on:
            return True
        starts = self.starts[sensor_id]
        i = bisect.bisect_right(starts, tick) - 1
        return i >= 0 and self.ends[sensor_id][i] >= tick

    def copy(self) -> "WakeSchedule":
        new = WakeSchedule(self.starts, self.always_on, self.horizon, self.mode)
        new.starts = {s: list(v) for s, v in self.starts.items()}
        new.ends = {s: list(v) for s, v in self.ends.items()}
        return new


def schedule_wake(schedule: WakeSchedule, msg: HandoffMessage) -> WakeSchedule:
    """Return a schedule in which ``msg.target_sensor`` is awake over ``msg.window``."""
    if schedule.mode == "always_on":
        return schedule
    out = schedule.copy()
    out.add(msg.target_sensor, *msg.window)
    return out
