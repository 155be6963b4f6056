"""Exhaustive identity oracle for small observation sets.

Enumerates every way of linking observations into chains (each observation
takes at most one predecessor, each predecessor at most one successor) and
keeps a partition with the fewest chains. It shares no code with the online
matcher beyond the window policy value type.
"""
from __future__ import annotations

import math

from .errors import TooLarge
from .graph import ParkGraph
from .identity import Tolerance
from .population import CATEGORICAL
from .protocol import WindowPolicy

MAX_OBSERVATIONS = 12


def _linkable(p, q, graph: ParkGraph, tol: Tolerance, policy: WindowPolicy, tick_seconds: float) -> bool:
    if q.a <= p.a:
        return False
    d = None
    for nb, dist in graph.neighbors(p.sensor_id):
        if nb == q.sensor_id:
            d = dist
    if d is None:
        return False
    for name in CATEGORICAL:
        x, y = p.perceived.get(name), q.perceived.get(name)
        if x is not None and y is not None and x != y:
            return False
    if p.depart_tick is not None and q.a <= p.depart_tick:
        return False
    if tol.eta_gating:
        travel = d / (p.perceived.speed * tick_seconds)
        eta = p.a + math.floor(travel + 0.5)
        w = max(policy.w_min, math.ceil(policy.frac * travel - 1e-9))
        if abs(q.a - eta) > w:
            return False
        if abs(q.perceived.speed - p.perceived.speed) > tol.speed_rel * p.perceived.speed:
            return False
    return True


def brute_force_oracle(observations, graph: ParkGraph, tol: Tolerance = Tolerance(),
                       policy: WindowPolicy = WindowPolicy(), tick_seconds: float = 1.0):
    """Minimal chain partition of ``observations`` as a list of obs_id tuples.

    Ties between minimal partitions go to the lexicographically smallest
    chain-label vector (labels numbered by first appearance in obs_id order).
    """
    obs = sorted(observations, key=lambda o: (o.a, o.obs_id))
    n = len(obs)
    if n > MAX_OBSERVATIONS:
        raise TooLarge(f"{n} observations exceeds the oracle limit of {MAX_OBSERVATIONS}")
    preds = [[i for i in range(j) if _linkable(obs[i], obs[j], graph, tol, policy, tick_seconds)]
             for j in range(n)]

    best = [None, None]  # (chain count, label vector), predecessor assignment
    assign = [None] * n
    used = [False] * n

    def labels():
        root = list(range(n))
        for j in range(n):
            if assign[j] is not None:
                root[j] = root[assign[j]]
        order = sorted(range(n), key=lambda j: obs[j].obs_id)
        names, out = {}, []
        for j in order:
            out.append(names.setdefault(root[j], len(names)))
        return tuple(out)

    def walk(j, chains):
        if best[0] is not None and chains > best[0][0]:
            return
        if j == n:
            key = (chains, labels())
            if best[0] is None or key < best[0]:
                best[0], best[1] = key, list(assign)
            return
        for i in preds[j]:
            if not used[i]:
                used[i] = True
                assign[j] = i
                walk(j + 1, chains)
                used[i] = False
        assign[j] = None
        walk(j + 1, chains + 1)

    walk(0, 0)
    if n == 0:
        return []
    chains: dict[int, list[int]] = {}
    root = list(range(n))
    for j in range(n):
        if best[1][j] is not None:
            root[j] = root[best[1][j]]
        chains.setdefault(root[j], []).append(obs[j].obs_id)
    return sorted(tuple(c) for c in chains.values())
