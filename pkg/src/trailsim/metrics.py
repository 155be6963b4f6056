"""Energy accounting and accuracy scoring against ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ZeroTruth
from .identity import IdentityRegistry, unique_count
from .protocol import WakeSchedule


@dataclass(frozen=True)
class EnergyLedger:
    units: Mapping[int, int]
    mode: str
    window: int = 10

    @property
    def mean_units(self) -> float:
        return float(np.mean(list(self.units.values()))) if self.units else 0.0


def _windows_covered(intervals, lo, hi, W) -> int:
    count = 0
    last = None
    for a, b in intervals:
        a, b = max(a, lo), min(b, hi)
        if a > b:
            continue
        first, final = a // W, b // W
        if last is not None and first <= last:
            first = last + 1
        if final >= first:
            count += final - first + 1
        last = final if last is None else max(last, final)
    return count


def meter(schedule: WakeSchedule, horizon: int, W: int = 10, first_obs: Optional[int] = None,
          mode: Optional[str] = None) -> EnergyLedger:
    """Charge one unit per length-``W`` tick window (aligned at tick 0) a sensor is awake in.

    Always-on sensors, and every sensor in always-on mode, pay for all windows
    from the first observation anywhere in the park to the horizon.
    """
    if W < 1:
        raise ValueError("energy window must be at least one tick")
    mode = schedule.mode if mode is None else mode
    sensors = list(schedule.starts)
    if first_obs is None or first_obs >= horizon:
        return EnergyLedger({s: 0 for s in sensors}, mode, W)
    lo, hi = first_obs, horizon - 1
    full = hi // W - lo // W + 1
    units = {}
    for s in sensors:
        if mode == "always_on" or s in schedule.always_on:
            units[s] = full
        else:
            units[s] = _windows_covered(schedule.intervals(s), lo, hi, W)
    return EnergyLedger(units, mode, W)


def saving_percent(duty: EnergyLedger, on: EnergyLedger) -> tuple[dict[int, Optional[float]], Optional[float]]:
    """Per-sensor percentage saved by duty cycling, and the mean over sensors
    where it is defined (always-on usage of zero leaves it undefined)."""
    per = {}
    for s, u_on in on.units.items():
        per[s] = None if u_on == 0 else 100.0 * (1.0 - duty.units[s] / u_on)
    defined = [v for v in per.values() if v is not None]
    return per, (float(np.mean(defined)) if defined else None)


@dataclass(frozen=True)
class AccuracyReport:
    count_accuracy: float
    falsely_new: int
    wrongly_merged: int
    correctly_merged: int
    correctly_new: int
    trail_exact_fraction: float
    unique_count: int
    true_count: int

    @property
    def observations(self) -> int:
        return self.falsely_new + self.wrongly_merged + self.correctly_merged + self.correctly_new


def score(registry: IdentityRegistry, truth: Sequence, observations: Sequence) -> AccuracyReport:
    """Compare the resolved identities with the ground-truth agents.

    An observation is *falsely new* when it opened an identity although its
    user had been observed before; *wrongly merged* when it joined an
    identity founded by a different user.
    """
    true_count = len(truth)
    if true_count == 0:
        raise ZeroTruth("cannot score a run without agents")
    est = unique_count(registry)
    acc = max(0.0, 1.0 - abs(est - true_count) / true_count)

    by_id = {o.obs_id: o for o in observations}
    founder = {uid: by_id[rec.first_obs_id].truth_id for uid, rec in registry.unique_users.items()}
    seen_truth: set[int] = set()
    falsely_new = wrongly = right = new_ok = 0
    for o in sorted(observations, key=lambda o: (o.a, o.obs_id)):
        uid = registry.obs_assignment[o.obs_id]
        opened = registry.unique_users[uid].first_obs_id == o.obs_id
        if opened:
            if o.truth_id in seen_truth:
                falsely_new += 1
            else:
                new_ok += 1
        elif founder[uid] != o.truth_id:
            wrongly += 1
        else:
            right += 1
        seen_truth.add(o.truth_id)

    exact = 0
    first_obs: dict[int, int] = {}
    for o in sorted(observations, key=lambda o: (o.a, o.obs_id)):
        first_obs.setdefault(o.truth_id, o.obs_id)
    for agent in truth:
        oid = first_obs.get(agent.true_id)
        if oid is None:
            continue
        uid = registry.obs_assignment[oid]
        members = registry.trail_obs[uid]
        if all(by_id[m].truth_id == agent.true_id for m in members) and \
                tuple(s for s, _ in registry.trails[uid]) == tuple(agent.route):
            exact += 1
    return AccuracyReport(acc, falsely_new, wrongly, right, new_ok, exact / true_count, est, true_count)


def feature_importance(config, catalog: Sequence[str], seeds: Sequence[int], jobs: int = 1):
    """Leave-one-out ablation over the comparison attributes.

    Returns ``[(attribute, mean_drop, rank), ...]`` sorted by drop, largest
    first, ties kept in catalog order.
    """
    from .engine import replicate

    base = replicate(config.with_catalog(catalog), seeds, jobs=jobs)
    base_acc = base.mean("count_accuracy")
    drops = []
    for pos, name in enumerate(catalog):
        rest = [c for c in catalog if c != name]
        acc = replicate(config.with_catalog(rest), seeds, jobs=jobs).mean("count_accuracy")
        drops.append((name, base_acc - acc, pos))
    drops.sort(key=lambda r: (-round(r[1], 12), r[2]))
    return [(name, drop, rank) for rank, (name, drop, _) in enumerate(drops, start=1)]


def mean_std(values) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return float("nan"), float("nan")
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std
