"""Per-tick movement and range-test kernels.

Two interchangeable implementations are provided: a numba-compiled loop and a
vectorised numpy version. The numba one is used when numba imports and
``TRAILSIM_DISABLE_NUMBA`` is not set to a truthy value. Both emit range
events in the same (agent, sensor) row-major order.

Agent state codes: 0 not yet spawned, 1 in the park, 2 exited.
"""
from __future__ import annotations

import functools
import os

import numpy as np

PENDING, ACTIVE, EXITED = 0, 1, 2

_DISABLED = os.environ.get("TRAILSIM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False


def step_numpy(t, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
               sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind):
    """Advance all agents to tick ``t`` and report range entries and exits.

    Writes events into the ``ev_*`` buffers (kind +1 enter, -1 leave) and
    returns how many were written. ``state``, ``hop`` and ``inrange`` are
    updated in place.
    """
    state[(state == PENDING) & (spawn == t)] = ACTIVE
    act = np.flatnonzero(state == ACTIVE)
    if act.size == 0:
        return 0
    s = speed[act] * dt * (t - spawn[act])
    off = route_off[act]
    total = route_cum[route_off[act + 1] - 1]
    gone = s > total
    state[act[gone]] = EXITED

    h = hop[act]
    nseg = route_off[act + 1] - off - 1
    while True:
        adv = (h < nseg - 1) & (route_cum[np.minimum(off + h + 1, route_cum.size - 1)] < s)
        if not adv.any():
            break
        h[adv] += 1
    hop[act] = h
    i0 = off + h
    seg = route_cum[i0 + 1] - route_cum[i0]
    frac = np.clip((s - route_cum[i0]) / seg, 0.0, 1.0)
    xy = route_xy[i0] + frac[:, None] * (route_xy[i0 + 1] - route_xy[i0])

    diff = xy[:, None, :] - sensor_xy[None, :, :]
    dist = np.sqrt(diff[..., 0] ** 2 + diff[..., 1] ** 2)
    now = dist < rho[None, :]
    now[gone] = False
    changed = now != inrange[act]
    ai, sj = np.nonzero(changed)
    n = ai.size
    ev_agent[:n] = act[ai]
    ev_sensor[:n] = sj
    ev_kind[:n] = np.where(now[ai, sj], 1, -1)
    inrange[act] = now
    return n


def _step_loop(t, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
               sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind):
    n_agents = speed.shape[0]
    n_sensors = sensor_xy.shape[0]
    n = 0
    for i in range(n_agents):
        if state[i] == PENDING and spawn[i] == t:
            state[i] = ACTIVE
        if state[i] != ACTIVE:
            continue
        s = speed[i] * dt * (t - spawn[i])
        off = route_off[i]
        last = route_off[i + 1] - 1
        gone = s > route_cum[last]
        if gone:
            state[i] = EXITED
            for j in range(n_sensors):
                if inrange[i, j]:
                    inrange[i, j] = False
                    ev_agent[n] = i
                    ev_sensor[n] = j
                    ev_kind[n] = -1
                    n += 1
            continue
        h = hop[i]
        while off + h + 1 < last and route_cum[off + h + 1] < s:
            h += 1
        hop[i] = h
        k = off + h
        seg = route_cum[k + 1] - route_cum[k]
        frac = (s - route_cum[k]) / seg
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        x = route_xy[k, 0] + frac * (route_xy[k + 1, 0] - route_xy[k, 0])
        y = route_xy[k, 1] + frac * (route_xy[k + 1, 1] - route_xy[k, 1])
        for j in range(n_sensors):
            dx = x - sensor_xy[j, 0]
            dy = y - sensor_xy[j, 1]
            inside = np.sqrt(dx * dx + dy * dy) < rho[j]
            if inside != inrange[i, j]:
                inrange[i, j] = inside
                ev_agent[n] = i
                ev_sensor[n] = j
                ev_kind[n] = 1 if inside else -1
                n += 1
    return n


def _busy(state):
    for i in range(state.shape[0]):
        if state[i] != EXITED:
            return True
    return False


def advance_with(step, t, t_end, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
                 sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind):
    """Step from tick ``t`` until a tick produces range events.

    Stops early at ``t_end - 1`` or once every agent has left. Returns the
    last tick stepped and its event count. Ticks without events change
    nothing outside the kernel state, so skipping over them is safe.
    """
    while True:
        k = step(t, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
                 sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind)
        if k > 0 or t + 1 >= t_end or not _busy(state):
            return t, k
        t += 1


if HAVE_NUMBA:
    step_numba = njit(cache=True, nogil=True)(_step_loop)
    _busy_numba = njit(cache=True, nogil=True)(_busy)

    @njit(cache=True, nogil=True)
    def advance_numba(t, t_end, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
                      sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind):
        while True:
            k = step_numba(t, dt, speed, spawn, state, hop, route_off, route_xy, route_cum,
                           sensor_xy, rho, inrange, ev_agent, ev_sensor, ev_kind)
            if k > 0 or t + 1 >= t_end or not _busy_numba(state):
                return t, k
            t += 1
else:  # pragma: no cover
    step_numba = None
    advance_numba = None


def backend_name(prefer: str | None = None) -> str:
    if prefer is not None:
        if prefer == "numba" and not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return prefer
    return "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


def get_step(prefer: str | None = None):
    name = backend_name(prefer)
    if name == "numba":
        return step_numba
    if name == "numpy":
        return step_numpy
    if name == "python":
        return _step_loop
    raise ValueError(f"unknown kernel backend {name!r}")


def get_advance(prefer: str | None = None):
    """Multi-tick stepper for ``backend_name(prefer)``; see ``advance_with``."""
    if backend_name(prefer) == "numba":
        return advance_numba
    return functools.partial(advance_with, get_step(prefer))
