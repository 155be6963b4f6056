"""Small scenario builders shared by the test modules."""
from __future__ import annotations

from dataclasses import replace

import yaml

from trailsim.config import parse_scenario
from trailsim.population import AttributeVector, UserAgent, classify_activity
from trailsim.sensing import NoiseModel


def scenario_yaml(sensors, edges, *, size=1, mix=None, bands=None, spawn=10, p_err=0.0, sigma=0.0,
                  mode="duty_cycle", catalog=None, k=5, distinct=False, horizon=None, eta_gating=True,
                  palettes=None, name="micro"):
    doc = {
        "version": 1,
        "name": name,
        "tick_seconds": 1.0,
        "mode": mode,
        "attributes": {"catalog": list(catalog or ["top_color", "bottom_color", "activity", "age_group", "gender"])},
        "graph": {
            "sensors": [dict(id=i, x=x, y=y, rho=r, always_on=on) for i, x, y, r, on in sensors],
            "edges": [{"a": a, "b": b} for a, b in edges],
        },
        "population": {
            "size": size,
            "activity_mix": mix or {"walk": 0.4, "jog": 0.3, "bike": 0.3},
            "spawn_window_ticks": spawn,
            "distinct_attributes": distinct,
        },
        "noise": {"p_err": p_err, "sigma": sigma},
        "protocol": {"k": k, "eta_gating": eta_gating},
    }
    if palettes:
        doc["attributes"]["palettes"] = palettes
    if bands:
        doc["population"]["speed_bands"] = {a: list(b) for a, b in bands.items()}
    if horizon is not None:
        doc["horizon_ticks"] = horizon
    return yaml.safe_dump(doc, sort_keys=False)


def line_config(n=3, spacing=100.0, rho=5.0, always_on_ends=True, **kw):
    sensors = [(i, i * spacing, 0.0, rho, always_on_ends and i in (0, n - 1)) for i in range(n)]
    edges = [(i, i + 1) for i in range(n - 1)]
    return parse_scenario(scenario_yaml(sensors, edges, **kw), "micro.yaml")


def agent(true_id, route, spawn, speed, **attrs):
    base = dict(top_color="black", bottom_color="blue", age_group="adult", gender="female", accessories="none")
    base.update(attrs)
    return UserAgent(true_id, AttributeVector(activity=classify_activity(speed), speed=speed, **base),
                     tuple(route), spawn)


def silent(config):
    return config.with_noise(NoiseModel(0.0, 0.0))


def distinct(config):
    return config.with_distinct_agents()


def with_size(config, n):
    return replace(config, population=replace(config.population, size=n))
