from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trailsim import load_scenario
from trailsim.errors import InvalidMix, NonPositiveSpeed
from trailsim.population import (
    Exited,
    PopulationConfig,
    activity_counts,
    advance_user,
    classify_activity,
    sample_population,
)

from helpers import agent, line_config


@pytest.mark.parametrize("speed,act", [(1.0, "walk"), (3.0, "jog"), (6.0, "bike")])
def test_classify_activity(speed, act):
    assert classify_activity(speed) == act


def test_classify_rejects_non_positive():
    with pytest.raises(NonPositiveSpeed):
        classify_activity(0.0)


def test_mix_40_30_30_is_exact():
    g = load_scenario("linear").graph
    agents = sample_population(PopulationConfig(size=100), g, np.random.default_rng(1))
    acts = [a.attributes.activity for a in agents]
    assert (acts.count("walk"), acts.count("jog"), acts.count("bike")) == (40, 30, 30)


def test_empty_population():
    g = load_scenario("linear").graph
    assert sample_population(PopulationConfig(size=0), g, np.random.default_rng(1)) == []


def test_same_seed_same_population():
    g = load_scenario("nonlinear").graph
    cfg = PopulationConfig(size=10)
    a = sample_population(cfg, g, np.random.default_rng(7))
    b = sample_population(cfg, g, np.random.default_rng(7))
    assert a == b


def test_largest_remainder():
    assert activity_counts(7, {"walk": 0.4, "jog": 0.3, "bike": 0.3}) == {"walk": 3, "jog": 2, "bike": 2}
    with pytest.raises(InvalidMix):
        activity_counts(10, {"walk": 0.5, "jog": 0.3})
    with pytest.raises(InvalidMix):
        activity_counts(10, {"walk": 0.5, "skate": 0.5})


def test_agents_are_consistent():
    cfg = load_scenario("nonlinear")
    g = cfg.graph
    for ag in sample_population(cfg.population, g, np.random.default_rng(3)):
        assert ag.attributes.activity == classify_activity(ag.attributes.speed)
        assert ag.route[0] in g.terminals and ag.route[-1] in g.terminals
        for a, b in zip(ag.route, ag.route[1:]):
            g.distance(a, b)
        assert len(set(ag.route)) == len(ag.route)


def test_distinct_attribute_vectors():
    cfg = load_scenario("linear")
    pop = replace(cfg.population, distinct_over=cfg.catalog)
    agents = sample_population(pop, cfg.graph, np.random.default_rng(0))
    keys = [tuple(a.attributes.get(n) for n in cfg.catalog) for a in agents]
    assert len(set(keys)) == len(keys)


def _two_edge():
    cfg = line_config(n=3, spacing=100.0)
    return cfg.graph


def test_advance_simple():
    g = _two_edge()
    ag = agent(0, (0, 1, 2), 0, 2.0)
    moved = advance_user(ag, g, 10.0)
    assert moved.position == (0, pytest.approx(0.2))


def test_advance_rollover():
    g = _two_edge()
    ag = replace(agent(0, (0, 1, 2), 0, 2.0), position=(0, 0.95))
    moved = advance_user(ag, g, 10.0)
    assert moved.position[0] == 1
    assert moved.position[1] == pytest.approx(0.15)


def test_advance_exits_on_last_edge():
    g = _two_edge()
    ag = replace(agent(0, (0, 1, 2), 0, 2.0), position=(1, 0.99))
    assert isinstance(advance_user(ag, g, 10.0), Exited)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.8, 8.0), st.floats(0.1, 5.0), st.integers(1, 60))
def test_cumulative_distance(speed, dt, ticks):
    g = line_config(n=6, spacing=200.0).graph
    ag = agent(0, (0, 1, 2, 3, 4, 5), 0, speed)
    total = 1000.0
    for k in range(1, ticks + 1):
        nxt = advance_user(ag, g, dt)
        if isinstance(nxt, Exited):
            assert speed * dt * k > total - 1e-6
            return
        edge, frac = nxt.position
        assert (edge, frac) >= ag.position  # never backward
        assert 0.0 <= frac <= 1.0
        assert 200.0 * edge + 200.0 * frac == pytest.approx(speed * dt * k, abs=1e-6)
        ag = nxt
