"""Park model: sensors as nodes of a graph whose edges are straight trail segments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DisconnectedGraph,
    DuplicateSensorId,
    EdgeDistanceMismatch,
    GraphError,
    NoEntryExitSensor,
    UnknownSensor,
)

EDGE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: int
    g: tuple[float, float]
    rho: float
    capabilities: frozenset[str]
    always_on: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise GraphError(f"sensor {self.sensor_id}: rho must be > 0, got {self.rho}")
        if not self.capabilities:
            raise GraphError(f"sensor {self.sensor_id}: empty capability set")


@dataclass(frozen=True)
class TrailEdge:
    a: int
    b: int
    d: float
    exit: bool = False

    @property
    def endpoints(self) -> frozenset[int]:
        return frozenset((self.a, self.b))

    def other(self, sensor_id: int) -> int:
        return self.b if sensor_id == self.a else self.a


def edge_distance(a, b) -> float:
    """Planar Euclidean distance in meters between two (x, y) points."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class ParkGraph:
    sensors: tuple[SensorSpec, ...]
    edges: tuple[TrailEdge, ...]
    _adj: Mapping[int, tuple[tuple[int, float], ...]] = field(repr=False, compare=False, default=None)
    _by_id: Mapping[int, SensorSpec] = field(repr=False, compare=False, default=None)

    def sensor(self, sensor_id: int) -> SensorSpec:
        try:
            return self._by_id[sensor_id]
        except KeyError:
            raise UnknownSensor(f"unknown sensor {sensor_id}") from None

    @property
    def sensor_ids(self) -> tuple[int, ...]:
        return tuple(s.sensor_id for s in self.sensors)

    @property
    def terminals(self) -> tuple[int, ...]:
        """Entry/exit sensors (the always-on ones), in id order."""
        return tuple(s.sensor_id for s in self.sensors if s.always_on)

    def degree(self, sensor_id: int) -> int:
        return len(self.neighbors(sensor_id))

    def neighbors(self, sensor_id: int) -> tuple[tuple[int, float], ...]:
        try:
            return self._adj[sensor_id]
        except KeyError:
            raise UnknownSensor(f"unknown sensor {sensor_id}") from None

    def distance(self, a: int, b: int) -> float:
        for nb, d in self.neighbors(a):
            if nb == b:
                return d
        raise UnknownSensor(f"no edge between {a} and {b}")

    def coords(self) -> np.ndarray:
        return np.array([s.g for s in self.sensors], dtype=np.float64)

    def index(self, sensor_id: int) -> int:
        return self.sensor_ids.index(sensor_id)

    def simple_paths(self, start: int, end: int) -> list[tuple[int, ...]]:
        """All simple paths from ``start`` to ``end``, in lexicographic order."""
        out = []
        stack = [(start, (start,))]
        while stack:
            node, path = stack.pop()
            if node == end and len(path) > 1:
                out.append(path)
                continue
            for nb, _ in self._adj[node]:
                if nb not in path:
                    stack.append((nb, path + (nb,)))
        return sorted(out)

    def entry_exit_paths(self) -> list[tuple[int, ...]]:
        """Every simple path between two distinct entry/exit sensors."""
        paths = []
        for s in self.terminals:
            for e in self.terminals:
                if s != e:
                    paths.extend(self.simple_paths(s, e))
        return paths


def build_graph(sensors: Iterable[SensorSpec], edges: Iterable[Mapping | TrailEdge]) -> ParkGraph:
    """Validate sensors and edges and assemble an immutable ParkGraph.

    Edges may be given as ``TrailEdge`` or mappings with ``a``, ``b`` and an
    optional ``d``; a missing ``d`` is filled with the endpoint distance. An
    edge's ``exit`` flag defaults to whether either endpoint is always-on.
    """
    sensors = sorted(sensors, key=lambda s: s.sensor_id)
    by_id: dict[int, SensorSpec] = {}
    for s in sensors:
        if s.sensor_id in by_id:
            raise DuplicateSensorId(f"duplicate sensor id {s.sensor_id}")
        by_id[s.sensor_id] = s

    built: list[TrailEdge] = []
    seen: set[frozenset[int]] = set()
    for e in edges:
        built.append(make_edge(by_id, e, seen))

    if not any(s.always_on for s in sensors):
        raise NoEntryExitSensor("no always-on (entry/exit) sensor in graph")

    adj: dict[int, list[tuple[int, float]]] = {sid: [] for sid in by_id}
    for e in built:
        adj[e.a].append((e.b, e.d))
        adj[e.b].append((e.a, e.d))
    adj_t = {sid: tuple(sorted(v)) for sid, v in adj.items()}

    if by_id:
        start = sensors[0].sensor_id
        reached = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for nb, _ in adj_t[node]:
                if nb not in reached:
                    reached.add(nb)
                    frontier.append(nb)
        missing = sorted(set(by_id) - reached)
        if missing:
            raise DisconnectedGraph(f"sensors {missing} are unreachable from sensor {start}")

    return ParkGraph(tuple(sensors), tuple(built), adj_t, by_id)


def make_edge(by_id: Mapping[int, SensorSpec], e, seen: set) -> TrailEdge:
    """Validate one edge against the sensors and the edges accepted so far (``seen``, updated)."""
    if isinstance(e, TrailEdge):
        a, b, d, ex = e.a, e.b, e.d, e.exit
    else:
        a, b = int(e["a"]), int(e["b"])
        d = e.get("d")
        ex = e.get("exit")
    for end in (a, b):
        if end not in by_id:
            raise GraphError(f"edge ({a}, {b}) references unknown sensor {end}")
    if a == b:
        raise GraphError(f"edge ({a}, {b}) is a self-loop")
    key = frozenset((a, b))
    if key in seen:
        raise GraphError(f"duplicate edge between {a} and {b}")
    geo = edge_distance(by_id[a].g, by_id[b].g)
    d = geo if d is None else float(d)
    if not d > 0:
        raise GraphError(f"edge ({a}, {b}) has non-positive length {d}")
    if abs(d - geo) > EDGE_TOLERANCE:
        raise EdgeDistanceMismatch(f"edge ({a}, {b}) length {d} differs from endpoint distance {geo:.6f}")
    if ex is None:
        ex = by_id[a].always_on or by_id[b].always_on
    seen.add(key)
    return TrailEdge(a, b, d, bool(ex))


def neighbors(graph: ParkGraph, sensor_id: int) -> set[tuple[int, float]]:
    return set(graph.neighbors(sensor_id))
