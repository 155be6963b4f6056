"""Central identity resolution: match arriving observations against pending
handoffs and grow per-user sensor trails."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import UnknownOrigin
from .protocol import HandoffMessage
from .sensing import Observation


@dataclass(frozen=True)
class Tolerance:
    speed_rel: float = 0.10
    # When False there are no arrival times: a handoff is just a record of what
    # a neighbor saw, matched on attributes alone and never used up.
    eta_gating: bool = True


@dataclass
class PendingMatch:
    msg: HandoffMessage
    consumed: bool = False
    fate: Optional[str] = None  # fulfilled | superseded | expired


@dataclass(frozen=True)
class MatchDecision:
    same_user: bool
    user_id: Optional[int] = None
    origin_obs_id: Optional[int] = None
    matched: Optional[HandoffMessage] = None


NEW_USER = MatchDecision(False)


def _compatible(obs: Observation, msg: HandoffMessage, tol: Tolerance) -> bool:
    perceived = obs.perceived
    if tol.eta_gating:
        lo, hi = msg.window
        if not lo <= obs.a <= hi:
            return False
        if abs(perceived.speed - msg.speed) > tol.speed_rel * msg.speed:
            return False
    for name, value in msg.selected_attrs:
        seen = getattr(perceived, name)
        if seen is not None and seen != value:
            return False
    return True


def match_observation(obs: Observation, pending: Sequence[PendingMatch], tol: Tolerance = Tolerance()) -> MatchDecision:
    """Decide whether ``obs`` continues a user announced by a pending handoff.

    With arrival gating the chosen handoff is consumed, and among several
    candidates the one whose predicted arrival is closest to ``obs.a`` wins
    (lowest origin observation id on ties). Without gating any earlier
    neighbor record qualifies, used or not, and the most recent one wins.
    """
    best = None
    best_key = None
    for p in pending:
        if p.msg.target_sensor != obs.sensor_id:
            continue
        if p.consumed and (tol.eta_gating or p.fate != "fulfilled"):
            continue
        if not _compatible(obs, p.msg, tol):
            continue
        if tol.eta_gating:
            key = (abs(obs.a - p.msg.eta), p.msg.origin_obs_id)
        else:
            key = (0, -p.msg.origin_obs_id)
        if best_key is None or key < best_key:
            best, best_key = p, key
    if best is None:
        return NEW_USER
    best.consumed = True
    best.fate = "fulfilled"
    return MatchDecision(True, None, best.msg.origin_obs_id, best.msg)


class PendingBoard:
    """Delivered, not yet resolved handoffs, indexed by target sensor.

    With arrival gating, once one handoff of an origin observation is
    fulfilled its siblings are retired, so an observation has at most one
    successor. Without gating handoffs stay on the board as reference records.
    """

    def __init__(self, tol: Tolerance = Tolerance()):
        self.tol = tol
        self.by_target: dict[int, list[PendingMatch]] = {}
        self.by_origin: dict[int, list[PendingMatch]] = {}
        self.counts = {"emitted": 0, "fulfilled": 0, "superseded": 0, "expired": 0}
        self._deadlines: list = []  # heap of (window end, delivery order, pending)

    def deliver(self, msg: HandoffMessage) -> PendingMatch:
        p = PendingMatch(msg)
        self.by_target.setdefault(msg.target_sensor, []).append(p)
        self.by_origin.setdefault(msg.origin_obs_id, []).append(p)
        if self.tol.eta_gating:
            heapq.heappush(self._deadlines, (msg.window[1], self.counts["emitted"], p))
        self.counts["emitted"] += 1
        return p

    def at(self, sensor_id: int) -> list[PendingMatch]:
        return self.by_target.get(sensor_id, [])

    def match(self, obs: Observation) -> MatchDecision:
        if not self.tol.eta_gating:
            items = self.at(obs.sensor_id)
            before = sum(p.fate == "fulfilled" for p in items)
            decision = match_observation(obs, items, self.tol)
            self.counts["fulfilled"] += sum(p.fate == "fulfilled" for p in items) - before
            return decision
        decision = match_observation(obs, self.at(obs.sensor_id), self.tol)
        if decision.same_user:
            self.counts["fulfilled"] += 1
            for sib in self.by_origin.pop(decision.origin_obs_id, ()):
                if not sib.consumed:
                    sib.consumed = True
                    sib.fate = "superseded"
                    self.counts["superseded"] += 1
            self._compact(obs.sensor_id)
        return decision

    def expire(self, tick: int) -> list[PendingMatch]:
        """Drop handoffs whose arrival window closed before ``tick``."""
        heap = self._deadlines
        gone = []
        while heap and heap[0][0] < tick:
            p = heapq.heappop(heap)[2]
            if not p.consumed:
                p.consumed = True
                p.fate = "expired"
                gone.append(p)
        for sensor_id in {p.msg.target_sensor for p in gone}:
            self._compact(sensor_id)
        self.counts["expired"] += len(gone)
        return gone

    def _compact(self, sensor_id):
        self.by_target[sensor_id] = [p for p in self.by_target[sensor_id] if not p.consumed]

    @property
    def outstanding(self) -> int:
        return sum(1 for items in self.by_target.values() for p in items if not p.consumed)


@dataclass
class IdentityRecord:
    user_id: int
    first_obs_id: int
    first_sensor: int
    first_tick: int


@dataclass
class IdentityRegistry:
    unique_users: dict[int, IdentityRecord] = field(default_factory=dict)
    trails: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    obs_assignment: dict[int, int] = field(default_factory=dict)
    # obs_id -> origin obs_id it was linked to (absent for identity-opening observations)
    links: dict[int, int] = field(default_factory=dict)
    trail_obs: dict[int, list[int]] = field(default_factory=dict)


def ingest(registry: IdentityRegistry, obs: Observation, decision: MatchDecision) -> IdentityRegistry:
    """Record ``obs`` as a new identity or append it to the matched identity's trail."""
    if decision.same_user:
        try:
            uid = registry.obs_assignment[decision.origin_obs_id]
        except KeyError:
            raise UnknownOrigin(f"handoff references unknown observation {decision.origin_obs_id}") from None
        registry.links[obs.obs_id] = decision.origin_obs_id
    else:
        uid = len(registry.unique_users)
        registry.unique_users[uid] = IdentityRecord(uid, obs.obs_id, obs.sensor_id, obs.a)
        registry.trails[uid] = []
        registry.trail_obs[uid] = []
    registry.trails[uid].append((obs.sensor_id, obs.a))
    registry.trail_obs[uid].append(obs.obs_id)
    registry.obs_assignment[obs.obs_id] = uid
    return registry


def unique_count(registry: IdentityRegistry) -> int:
    return len(registry.unique_users)


def partition(registry: IdentityRegistry) -> frozenset[frozenset[int]]:
    """The identity partition as a set of obs_id sets."""
    return frozenset(frozenset(ids) for ids in registry.trail_obs.values())


def resolve_stream(observations, messages_for, tol: Tolerance = Tolerance()) -> IdentityRegistry:
    """Replay a finished observation stream through the matcher.

    ``messages_for(obs)`` returns the handoffs that ``obs`` emitted. Handoffs
    become visible the tick after their emission, exactly as in a live run.
    Used to re-check decisions offline (for instance with relabelled truth).
    """
    registry = IdentityRegistry()
    board = PendingBoard(tol)
    events = []
    for o in observations:
        events.append((o.a, 1, o.sensor_id, o.obs_id, o))
    queue = []
    for o in observations:
        for m in messages_for(o):
            queue.append((m.emitted + 1, 0, m.target_sensor, m.origin_obs_id, m))
    for when, kind, _, _, item in sorted(events + queue, key=lambda e: e[:4]):
        board.expire(when)
        if kind == 0:
            board.deliver(item)
        else:
            ingest(registry, item, board.match(item))
    return registry
