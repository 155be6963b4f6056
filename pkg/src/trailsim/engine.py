"""Deterministic tick loop tying together movement, sensing, handoffs and
identity resolution, plus seeded replication."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .config import ScenarioConfig
from .errors import HorizonTooShort, TrailSimError
from .identity import IdentityRegistry, PendingBoard, ingest
from .metrics import AccuracyReport, EnergyLedger, meter, mean_std, saving_percent, score
from .population import ATTRIBUTES, UserAgent, sample_population
from .protocol import EntropyWindow, HandoffMessage, WakeSchedule, make_handoffs
from .sensing import Observation, SensorTracker, perturb

log = logging.getLogger(__name__)

STREAMS = ("population", "noise", "routing")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators for one run."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(c)) for name, c in zip(STREAMS, children)}


@dataclass
class RunResult:
    scenario: str
    seed: int
    mode: str
    horizon: int
    agents: list[UserAgent]
    observations: list[Observation]
    messages: list[HandoffMessage]
    registry: IdentityRegistry
    energy: EnergyLedger
    accuracy: AccuracyReport
    message_fates: dict[str, int]
    catalog: tuple[str, ...] = ()
    # fate of each entry of ``messages``, same order
    fates: list[str] = field(default_factory=list)

    def summary(self) -> "RunSummary":
        a = self.accuracy
        return RunSummary(self.scenario, self.seed, self.mode, a.unique_count, a.true_count,
                          a.count_accuracy, a.falsely_new, a.wrongly_merged, a.trail_exact_fraction,
                          dict(self.energy.units))


@dataclass
class RunSummary:
    scenario: str
    seed: int
    mode: str
    unique_count: int
    true_count: int
    count_accuracy: float
    falsely_new: int
    wrongly_merged: int
    trail_exact_fraction: float
    energy: dict[int, int] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def mean_energy(self) -> float:
        return float(np.mean(list(self.energy.values()))) if self.energy else 0.0


class _Routes:
    """Flattened per-agent route geometry for the kernels."""

    def __init__(self, agents: Sequence[UserAgent], config: ScenarioConfig):
        graph = config.graph
        offs = [0]
        xy, cum = [], []
        for ag in agents:
            total = 0.0
            for i, sid in enumerate(ag.route):
                if i:
                    total += graph.distance(ag.route[i - 1], sid)
                xy.append(graph.sensor(sid).g)
                cum.append(total)
            offs.append(len(cum))
        self.off = np.asarray(offs, dtype=np.int64)
        self.xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        self.cum = np.asarray(cum, dtype=np.float64)


def run(config: ScenarioConfig, seed: int, backend: Optional[str] = None,
        agents: Optional[Sequence[UserAgent]] = None) -> RunResult:
    """Simulate one seeded day on the trail.

    Each tick runs six phases in a fixed order: movement, delivery of
    handoffs sent last tick, wake-state refresh, sensing, handoff emission
    with wake scheduling, and identity ingestion. Stretches with nobody in
    the park are skipped; nothing can happen in them.
    """
    step = kernels.get_step(backend)
    advance = kernels.get_advance(backend)
    streams = rng_streams(seed)
    graph = config.graph
    proto = config.protocol
    horizon = config.horizon
    dt = config.tick_seconds
    if agents is None:
        agents = sample_population(config.population, graph, streams["population"], streams["routing"])
    agents = list(agents)
    noise_rng = streams["noise"]
    palettes = {k: p.values for k, p in config.population.palettes.items()}

    sensor_ids = graph.sensor_ids
    index_of = {sid: j for j, sid in enumerate(sensor_ids)}
    sensor_xy = graph.coords()
    rho = np.array([s.rho for s in graph.sensors], dtype=np.float64)
    # None for sensors that perceive everything, so nothing needs hiding
    caps = [None if s.capabilities.issuperset(ATTRIBUTES) else s.capabilities for s in graph.sensors]
    trackers = [SensorTracker(s) for s in graph.sensors]
    windows = [EntropyWindow([c for c in config.catalog if c in s.capabilities], proto.history)
               for s in graph.sensors]

    n = len(agents)
    m = len(sensor_ids)
    speed = np.array([a.attributes.speed for a in agents], dtype=np.float64)
    spawn = np.array([a.spawn_tick for a in agents], dtype=np.int64)
    state = np.zeros(n, dtype=np.int8)
    hop = np.zeros(n, dtype=np.int64)
    routes = _Routes(agents, config)
    inrange = np.zeros((n, m), dtype=np.bool_)
    ev_agent = np.zeros(max(n * m, 1), dtype=np.int64)
    ev_sensor = np.zeros_like(ev_agent)
    ev_kind = np.zeros_like(ev_agent)

    schedule = WakeSchedule(sensor_ids, graph.terminals, horizon, config.mode)
    board = PendingBoard(proto.tolerance)
    registry = IdentityRegistry()
    observations: list[Observation] = []
    messages: list[HandoffMessage] = []
    outbox: dict[int, list[HandoffMessage]] = {}
    delivered = []
    spawn_ticks = sorted(set(spawn.tolist()))
    spawn_pos = 0
    unseen: set[int] = set()  # sensor indices with an unobserved user in range
    active = 0

    t = 0
    while t < horizon:
        if active == 0:
            while spawn_pos < len(spawn_ticks) and spawn_ticks[spawn_pos] < t:
                spawn_pos += 1
            if spawn_pos == len(spawn_ticks):
                break
            t = max(t, spawn_ticks[spawn_pos])
            if t >= horizon:
                break

        # 1. movement; with nobody waiting to be sensed, jump to the next range event
        if unseen:
            k = step(t, dt, speed, spawn, state, hop, routes.off, routes.xy, routes.cum,
                     sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind)
        else:
            t, k = advance(t, horizon, dt, speed, spawn, state, hop, routes.off, routes.xy, routes.cum,
                           sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind)

        # 2. delivery, expiry
        if outbox and min(outbox) <= t:
            for due in sorted(d for d in outbox if d <= t):
                for msg in outbox.pop(due):
                    delivered.append(board.deliver(msg))
        board.expire(t)

        # 4. sensing (3, wake state, is read through the schedule below)
        departed = []
        for e in range(k):
            i, j = int(ev_agent[e]), int(ev_sensor[e])
            if ev_kind[e] > 0:
                trackers[j].enter(i)
                unseen.add(j)
            else:
                obs = trackers[j].leave(i, t)
                if obs is not None:
                    departed.append(obs)
        new_obs = []
        for j in sorted(unseen):
            tr = trackers[j]
            waiting = tr.unseen()
            if not waiting:
                continue
            sid = sensor_ids[j]
            if not (schedule.awake(sid, t) or tr.capturing):
                continue
            for i in sorted(waiting, key=lambda i: agents[i].true_id):
                perceived = perturb(agents[i].attributes, config.noise, noise_rng, palettes)
                if caps[j] is not None:
                    perceived = perceived.restricted(caps[j])
                obs = Observation(sid, len(observations), t, perceived, agents[i].true_id)
                observations.append(obs)
                tr.record(i, obs)
                windows[j].push(perceived)
                new_obs.append(obs)
        if unseen:
            unseen = {j for j in unseen if trackers[j].unseen()}

        # 5. handoffs for observations whose user just left range
        for obs in sorted(departed, key=lambda o: o.obs_id):
            j = index_of[obs.sensor_id]
            schedule.add(obs.sensor_id, obs.a, obs.depart_tick)
            selection = windows[j].select(proto.k, proto.direction, proto.fallback, proto.history_min)
            for msg in make_handoffs(obs, graph, selection, proto.window, dt, emitted=t):
                outbox.setdefault(t + 1, []).append(msg)
                messages.append(msg)
                schedule.add(msg.target_sensor, *msg.window)

        # 6. identity ingestion
        for obs in new_obs:
            ingest(registry, obs, board.match(obs))

        active = int(np.count_nonzero(state == kernels.ACTIVE))
        t += 1

    exited = int(np.count_nonzero(state == kernels.EXITED))
    if exited < n or active:
        raise HorizonTooShort(n - exited, horizon)

    for due in sorted(outbox):
        for msg in outbox.pop(due):
            delivered.append(board.deliver(msg))
    board.expire(horizon)
    fates = dict(board.counts)
    fates["outstanding"] = board.outstanding
    per_message = [p.fate or "outstanding" for p in delivered]

    first = min((o.a for o in observations), default=None)
    energy = meter(schedule, horizon, proto.energy_window, first, config.mode)
    accuracy = score(registry, agents, observations) if agents else AccuracyReport(1.0, 0, 0, 0, 0, 1.0, 0, 0)
    return RunResult(config.name, seed, config.mode, horizon, agents, observations, messages, registry,
                     energy, accuracy, fates, tuple(config.catalog), per_message)


def _summary_task(args) -> RunSummary:
    config, seed, backend = args
    try:
        return run(config, seed, backend).summary()
    except TrailSimError as exc:
        return RunSummary(config.name, seed, config.mode, 0, 0, float("nan"), 0, 0, float("nan"), {}, str(exc))


def _map(tasks, jobs: int):
    if jobs is None or jobs <= 0:
        jobs = os.cpu_count() or 1
    if jobs == 1 or len(tasks) <= 1:
        return [_summary_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_summary_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


@dataclass
class Aggregate:
    """Per-seed run summaries of one configuration, in seed order."""

    runs: list[RunSummary]

    @property
    def ok(self) -> list[RunSummary]:
        return [r for r in self.runs if r.error is None]

    @property
    def errors(self) -> list[RunSummary]:
        return [r for r in self.runs if r.error is not None]

    def values(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.ok]

    def mean(self, name: str) -> float:
        return mean_std(self.values(name))[0]

    def std(self, name: str) -> float:
        return mean_std(self.values(name))[1]

    def energy_by_sensor(self) -> dict[int, tuple[float, float]]:
        sensors = sorted({s for r in self.ok for s in r.energy})
        return {s: mean_std([r.energy[s] for r in self.ok]) for s in sensors}


def seed_list(n: int, base_seed: int = 0) -> list[int]:
    if n < 1:
        raise ValueError("need at least one replication")
    return [base_seed + i for i in range(n)]


def replicate(config: ScenarioConfig, seeds: Iterable[int], jobs: int = 1, backend: Optional[str] = None) -> Aggregate:
    """Run ``config`` once per seed; results come back in seed order whatever ``jobs`` is."""
    tasks = [(config, int(s), backend) for s in seeds]
    return Aggregate(_map(tasks, jobs))


@dataclass
class EnergyComparison:
    duty: Aggregate
    on: Aggregate

    def paired_savings(self) -> list[tuple[dict[int, Optional[float]], Optional[float]]]:
        """Per-seed (per-sensor saving %, mean saving %) for seeds where both modes ran."""
        on_by_seed = {r.seed: r for r in self.on.ok}
        out = []
        for d in self.duty.ok:
            o = on_by_seed.get(d.seed)
            if o is None:
                continue
            out.append(saving_percent(EnergyLedger(d.energy, "duty_cycle"), EnergyLedger(o.energy, "always_on")))
        return out

    def saving_by_sensor(self) -> dict[int, tuple[float, float]]:
        per = [p for p, _ in self.paired_savings()]
        sensors = sorted({s for p in per for s in p})
        return {s: mean_std([p[s] for p in per]) for s in sensors}

    def mean_saving(self) -> tuple[float, float]:
        return mean_std([m for _, m in self.paired_savings()])


def compare_energy(config: ScenarioConfig, seeds: Sequence[int], jobs: int = 1,
                   backend: Optional[str] = None) -> EnergyComparison:
    seeds = [int(s) for s in seeds]
    duty = config.with_mode("duty_cycle")
    on = config.with_mode("always_on")
    tasks = [(duty, s, backend) for s in seeds] + [(on, s, backend) for s in seeds]
    results = _map(tasks, jobs)
    return EnergyComparison(Aggregate(results[:len(seeds)]), Aggregate(results[len(seeds):]))
