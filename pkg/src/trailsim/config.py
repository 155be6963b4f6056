"""Scenario files: YAML documents with a ``version: 1`` header.

Every validation error carries the file name and the line of the offending
key so it can be fixed without guessing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError, DuplicateSensorId, GraphError, UnknownAttribute
from .graph import ParkGraph, SensorSpec, build_graph, make_edge
from .identity import Tolerance
from .population import (
    ACTIVITIES,
    ATTRIBUTES,
    CATEGORICAL,
    DEFAULT_PALETTES,
    DEFAULT_SPEED_BANDS,
    Palette,
    PopulationConfig,
)
from .protocol import FALLBACK_ORDER, WindowPolicy
from .sensing import NoiseModel

MODES = ("always_on", "duty_cycle")
BUILTIN = ("linear", "nonlinear")


@dataclass(frozen=True)
class ProtocolConfig:
    k: int = 5
    direction: str = "lowest"
    window: WindowPolicy = WindowPolicy()
    energy_window: int = 10
    history: int = 50
    history_min: int = 10
    fallback: tuple[str, ...] = FALLBACK_ORDER
    tolerance: Tolerance = Tolerance()


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    graph: ParkGraph
    population: PopulationConfig = field(default_factory=PopulationConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    catalog: tuple[str, ...] = ("top_color", "bottom_color", "activity", "age_group", "gender")
    mode: str = "duty_cycle"
    tick_seconds: float = 1.0
    horizon_ticks: Optional[int] = None
    source: Optional[str] = None

    @property
    def horizon(self) -> int:
        if self.horizon_ticks is not None:
            return self.horizon_ticks
        paths = self.graph.entry_exit_paths()
        longest = max((sum(self.graph.distance(a, b) for a, b in zip(p, p[1:])) for p in paths), default=0.0)
        v_min = min(lo for lo, _ in self.population.speed_bands.values())
        traverse = math.ceil(longest / (v_min * self.tick_seconds))
        return self.population.spawn_window_ticks + 3 * traverse

    def with_mode(self, mode: str) -> "ScenarioConfig":
        mode = mode.replace("-", "_")
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
        return replace(self, mode=mode)

    def with_catalog(self, catalog) -> "ScenarioConfig":
        catalog = tuple(catalog)
        for name in catalog:
            if name not in CATEGORICAL:
                raise UnknownAttribute(f"unknown attribute {name!r}")
        return replace(self, catalog=catalog)

    def with_eta_gating(self, on: bool) -> "ScenarioConfig":
        tol = replace(self.protocol.tolerance, eta_gating=on)
        return replace(self, protocol=replace(self.protocol, tolerance=tol))

    def with_noise(self, noise: NoiseModel) -> "ScenarioConfig":
        return replace(self, noise=noise)

    def with_population(self, **changes) -> "ScenarioConfig":
        return replace(self, population=replace(self.population, **changes))

    def with_distinct_agents(self) -> "ScenarioConfig":
        """Agents that stay tellable apart whichever k catalog attributes a sensor sends.

        Any two agents differ on at least ``len(catalog) - k + 1`` attributes,
        so every k-subset still holds one difference.
        """
        n = len(self.catalog)
        return self.with_population(distinct_over=self.catalog,
                                    distinct_margin=n - min(self.protocol.k, n) + 1)


# -- YAML with line tracking -------------------------------------------------

class _Doc:
    """Plain data from a YAML node tree plus a path -> line map."""

    def __init__(self, node, source):
        self.source = source
        self.lines: dict[tuple, int] = {}
        self.data = self._convert(node, ())

    def _convert(self, node, path):
        # a mapping key keeps its own line rather than its value's
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                out[key] = self._convert(v, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._convert(v, path + (i,)) for i, v in enumerate(node.value)]
        return yaml.SafeLoader.construct_object(_CONSTRUCTOR, node, deep=True)

    def error(self, path, message, cls=ConfigError):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        dotted = ".".join(str(p) for p in path)
        return cls(f"{dotted}: {message}" if dotted else message, self.source, self.lines.get(path))


class _Ctor(yaml.SafeLoader):
    def __init__(self):
        super().__init__("")


_CONSTRUCTOR = _Ctor()


def _get(doc, section, path, key, kind, default=None, required=False):
    if key not in section:
        if required:
            raise doc.error(path, f"missing required key {key!r}")
        return default
    value = section[key]
    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise doc.error(path + (key,), f"expected {kind.__name__}, got {value!r}") from None


def _section(doc, data, path, key):
    value = data.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise doc.error(path + (key,), "expected a mapping")
    return value


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", source, line) from None
    if node is None:
        raise ConfigError("empty scenario file", source, 1)
    doc = _Doc(node, source)
    data = doc.data
    if not isinstance(data, dict):
        raise doc.error((), "scenario must be a mapping")
    if data.get("version") != 1:
        raise doc.error(("version",), f"unsupported or missing version {data.get('version')!r}; expected 1")

    known_top = {"version", "name", "tick_seconds", "horizon_ticks", "mode", "attributes", "graph",
                 "population", "noise", "protocol"}
    for key in data:
        if key not in known_top:
            raise doc.error((key,), f"unknown key {key!r}")

    name = str(data.get("name", Path(source).stem))
    tick_seconds = _get(doc, data, (), "tick_seconds", float, 1.0)
    if not tick_seconds > 0:
        raise doc.error(("tick_seconds",), "must be positive")
    horizon = _get(doc, data, (), "horizon_ticks", int, None)
    mode = str(data.get("mode", "duty_cycle")).replace("-", "_")
    if mode not in MODES:
        raise doc.error(("mode",), f"unknown mode {mode!r}")

    # attributes
    attrs = _section(doc, data, (), "attributes")
    catalog = tuple(attrs.get("catalog", ("top_color", "bottom_color", "activity", "age_group", "gender")))
    for i, a in enumerate(catalog):
        if a not in CATEGORICAL:
            raise doc.error(("attributes", "catalog", i), f"unknown attribute {a!r}", UnknownAttribute)
    palettes = {k: Palette(tuple(v)) for k, v in DEFAULT_PALETTES.items()}
    for pname, spec in (attrs.get("palettes") or {}).items():
        ppath = ("attributes", "palettes", pname)
        if pname not in DEFAULT_PALETTES:
            raise doc.error(ppath, f"no palette for attribute {pname!r}", UnknownAttribute)
        if isinstance(spec, list):
            values, weights = spec, None
        elif isinstance(spec, dict):
            values, weights = spec.get("values"), spec.get("weights")
        else:
            raise doc.error(ppath, "expected a list of values or {values, weights}")
        if not values:
            raise doc.error(ppath, "palette needs at least one value")
        values = tuple(str(v) for v in values)
        if len(set(values)) != len(values):
            raise doc.error(ppath, "palette values must be distinct")
        if weights is not None:
            if len(weights) != len(values) or any(float(w) < 0 for w in weights) or sum(weights) <= 0:
                raise doc.error(ppath + ("weights",), "weights must be non-negative, one per value, not all zero")
            weights = tuple(float(w) for w in weights)
        palettes[pname] = Palette(values, weights)

    # graph
    g = _section(doc, data, (), "graph")
    raw_sensors = g.get("sensors")
    if not raw_sensors:
        raise doc.error(("graph",), "graph needs a non-empty 'sensors' list")
    sensors = []
    for i, s in enumerate(raw_sensors):
        path = ("graph", "sensors", i)
        if not isinstance(s, dict):
            raise doc.error(path, "sensor entry must be a mapping")
        caps = s.get("capabilities")
        caps = frozenset(caps) if caps is not None else frozenset(catalog) | {"speed"}
        bad = sorted(c for c in caps if c not in ATTRIBUTES)
        if bad:
            raise doc.error(path + ("capabilities",), f"unknown capabilities {bad}", UnknownAttribute)
        try:
            sensors.append(SensorSpec(
                sensor_id=_get(doc, s, path, "id", int, required=True),
                g=(_get(doc, s, path, "x", float, required=True), _get(doc, s, path, "y", float, required=True)),
                rho=_get(doc, s, path, "rho", float, required=True),
                capabilities=caps,
                always_on=_get(doc, s, path, "always_on", bool, False),
            ))
        except GraphError as exc:
            raise doc.error(path, exc.bare_message, type(exc)) from None
        if any(o.sensor_id == sensors[-1].sensor_id for o in sensors[:-1]):
            raise doc.error(path + ("id",), f"duplicate sensor id {sensors[-1].sensor_id}", DuplicateSensorId)
    raw_edges = g.get("edges") or []
    edges = []
    by_id = {s.sensor_id: s for s in sensors}
    seen: set = set()
    for i, e in enumerate(raw_edges):
        path = ("graph", "edges", i)
        if not isinstance(e, dict):
            raise doc.error(path, "edge entry must be a mapping")
        edge = {
            "a": _get(doc, e, path, "a", int, required=True),
            "b": _get(doc, e, path, "b", int, required=True),
            "d": _get(doc, e, path, "d", float, None),
            "exit": _get(doc, e, path, "exit", bool, None),
        }
        # check each edge on its own so a bad one is reported at its own line
        try:
            make_edge(by_id, edge, seen)
        except GraphError as exc:
            raise doc.error(path, exc.bare_message, type(exc)) from None
        edges.append(edge)
    try:
        graph = build_graph(sensors, edges)
    except GraphError as exc:
        raise doc.error(("graph",), exc.bare_message, type(exc)) from None

    # population
    p = _section(doc, data, (), "population")
    mix = p.get("activity_mix", {"walk": 0.4, "jog": 0.3, "bike": 0.3})
    for act in mix:
        if act not in ACTIVITIES:
            raise doc.error(("population", "activity_mix", act), f"unknown activity {act!r}")
    bands = dict(DEFAULT_SPEED_BANDS)
    for act, band in (p.get("speed_bands") or {}).items():
        if act not in ACTIVITIES or len(band) != 2 or not 0 < band[0] <= band[1]:
            raise doc.error(("population", "speed_bands", act), f"bad speed band {band!r}")
        bands[act] = (float(band[0]), float(band[1]))
    distinct = p.get("distinct_attributes", False)
    if distinct is True:
        distinct_over = catalog
    elif not distinct:
        distinct_over = ()
    else:
        distinct_over = tuple(distinct)
    size = _get(doc, p, ("population",), "size", int, 100)
    if size < 0:
        raise doc.error(("population", "size"), "size must be non-negative")
    population = PopulationConfig(
        size=size,
        activity_mix={k: float(v) for k, v in mix.items()},
        palettes=palettes,
        spawn_window_ticks=_get(doc, p, ("population",), "spawn_window_ticks", int, 600),
        speed_bands=bands,
        distinct_over=distinct_over,
    )
    if abs(sum(population.activity_mix.values()) - 1.0) > 1e-9:
        raise doc.error(("population", "activity_mix"), "activity mix must sum to 1")

    # noise
    n = _section(doc, data, (), "noise")
    p_err = n.get("p_err", 0.004)
    if isinstance(p_err, dict):
        for a in p_err:
            if a not in CATEGORICAL:
                raise doc.error(("noise", "p_err", a), f"unknown attribute {a!r}", UnknownAttribute)
        p_err = {k: float(v) for k, v in p_err.items()}
    else:
        p_err = _get(doc, n, ("noise",), "p_err", float, 0.004)
    sigma = _get(doc, n, ("noise",), "sigma", float, 0.05)
    try:
        noise = NoiseModel(p_err, sigma)
    except ConfigError as exc:
        key = "p_err" if "flip" in exc.bare_message else "sigma"
        raise doc.error(("noise", key), exc.bare_message) from None

    # protocol
    pr = _section(doc, data, (), "protocol")
    path = ("protocol",)
    direction = str(pr.get("direction", "lowest"))
    if direction not in ("lowest", "highest"):
        raise doc.error(path + ("direction",), f"direction must be lowest or highest, got {direction!r}")
    k = _get(doc, pr, path, "k", int, 5)
    if k < 1:
        raise doc.error(path + ("k",), "k must be at least 1")
    protocol = ProtocolConfig(
        k=k,
        direction=direction,
        window=WindowPolicy(_get(doc, pr, path, "window_min", int, 2), _get(doc, pr, path, "window_frac", float, 0.2)),
        energy_window=_get(doc, pr, path, "energy_window", int, 10),
        history=_get(doc, pr, path, "history", int, 50),
        history_min=_get(doc, pr, path, "history_min", int, 10),
        tolerance=Tolerance(_get(doc, pr, path, "speed_tolerance", float, 0.10),
                            _get(doc, pr, path, "eta_gating", bool, True)),
    )
    if protocol.energy_window < 1:
        raise doc.error(path + ("energy_window",), "must be at least 1")

    cfg = ScenarioConfig(name, graph, population, noise, protocol, catalog, mode, tick_seconds, horizon, source)
    if distinct is True:
        cfg = cfg.with_distinct_agents()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario from a file path, or one of the bundled names."""
    path = str(path)
    if path in BUILTIN:
        text = resources.files("trailsim.scenarios").joinpath(f"{path}.yaml").read_text()
        return parse_scenario(text, f"{path}.yaml")
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc.strerror}") from None
    return parse_scenario(text, str(p))


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("trailsim.scenarios").joinpath(f"{name}.yaml")))
