import math

import pytest
from hypothesis import given, settings, strategies as st

from trailsim import load_scenario, run
from trailsim.errors import ZeroTruth
from trailsim.identity import NEW_USER, IdentityRegistry, MatchDecision, ingest
from trailsim.metrics import EnergyLedger, feature_importance, mean_std, meter, saving_percent, score
from trailsim.population import AttributeVector
from trailsim.protocol import WakeSchedule
from trailsim.sensing import Observation

from helpers import agent, line_config, with_size


def test_meter_nothing_observed():
    for mode in ("always_on", "duty_cycle"):
        s = WakeSchedule([0, 1, 2], always_on=[0], horizon=1000, mode=mode)
        assert meter(s, 1000, 10, None).units == {0: 0, 1: 0, 2: 0}


def test_meter_always_on_full_horizon():
    s = WakeSchedule([0, 1], always_on=[0], horizon=1000, mode="always_on")
    assert meter(s, 1000, 10, 0).units == {0: 100, 1: 100}


def test_meter_counts_touched_windows():
    s = WakeSchedule([0, 1], always_on=[0], horizon=1000)
    s.add(1, 5, 12)     # windows 0, 1
    s.add(1, 19, 19)    # window 1 again
    s.add(1, 40, 40)    # window 4
    led = meter(s, 1000, 10, 0)
    assert led.units == {0: 100, 1: 3}
    assert meter(s, 1000, 10, 30).units[1] == 1


@pytest.mark.parametrize("duty,on,expected", [(108, 199, 45.7286), (97, 119, 18.4874), (50, 50, 0.0)])
def test_saving_percent(duty, on, expected):
    per, mean = saving_percent(EnergyLedger({1: duty}, "duty_cycle"), EnergyLedger({1: on}, "always_on"))
    assert per[1] == pytest.approx(expected, abs=1e-4)
    assert mean == pytest.approx(expected, abs=1e-4)


def test_saving_undefined_without_usage():
    per, mean = saving_percent(EnergyLedger({1: 0}, "duty_cycle"), EnergyLedger({1: 0}, "always_on"))
    assert per == {1: None} and mean is None


def _fragmented(estimate, true_count):
    """Registry with ``estimate`` singleton identities over ``true_count`` agents."""
    agents = [agent(i, (0, 1), 0, 2.0) for i in range(true_count)]
    reg, obs = IdentityRegistry(), []
    for i in range(estimate):
        o = Observation(0, i, i, AttributeVector(speed=2.0), i % true_count)
        obs.append(o)
        ingest(reg, o, NEW_USER)
    return reg, agents, obs


@pytest.mark.parametrize("est,acc", [(72, 0.72), (150, 0.5), (100, 1.0), (250, 0.0)])
def test_count_accuracy(est, acc):
    assert score(*_fragmented(est, 100)).count_accuracy == pytest.approx(acc)


def test_score_classifies_observations():
    agents = [agent(0, (0, 1, 2), 0, 2.0), agent(1, (0, 1, 2), 0, 2.0)]
    reg, obs = IdentityRegistry(), []

    def add(i, truth, decision):
        o = Observation(i % 3, i, 10 * i, AttributeVector(speed=2.0), truth)
        obs.append(o)
        ingest(reg, o, decision)

    add(0, 0, NEW_USER)                    # correct new
    add(1, 0, MatchDecision(True, None, 0))  # correct merge
    add(2, 0, NEW_USER)                    # falsely new
    add(3, 1, MatchDecision(True, None, 1))  # wrongly merged into user 0's identity
    r = score(reg, agents, obs)
    assert (r.correctly_new, r.correctly_merged, r.falsely_new, r.wrongly_merged) == (1, 1, 1, 1)
    assert r.observations == len(obs)
    assert r.unique_count == 2 and r.count_accuracy == 1.0
    assert r.trail_exact_fraction == 0.0


def test_score_needs_truth():
    with pytest.raises(ZeroTruth):
        score(IdentityRegistry(), [], [])


def test_perfect_run_scores_perfectly():
    cfg = line_config(n=4, spacing=100.0, size=5, distinct=True, spawn=100)
    res = run(cfg, 2)
    a = res.accuracy
    assert (a.count_accuracy, a.falsely_new, a.wrongly_merged, a.trail_exact_fraction) == (1.0, 0, 0, 1.0)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["linear", "nonlinear"]), st.integers(0, 10**6))
def test_partition_identity_and_purity(name, seed):
    res = run(load_scenario(name), seed)
    a = res.accuracy
    assert a.falsely_new + a.wrongly_merged + a.correctly_merged + a.correctly_new == len(res.observations)
    assert score(res.registry, res.agents, res.observations) == a


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["linear", "nonlinear"]), st.integers(0, 10**6))
def test_duty_never_exceeds_always_on(name, seed):
    cfg = load_scenario(name)
    duty = run(cfg.with_mode("duty_cycle"), seed).energy.units
    on = run(cfg.with_mode("always_on"), seed).energy.units
    for s in on:
        assert duty[s] <= on[s]


def test_mean_std():
    assert mean_std([3.0]) == (3.0, 0.0)
    m, s = mean_std([1.0, 2.0, 3.0, None, float("nan")])
    assert m == 2.0 and s == pytest.approx(1.0)
    assert all(math.isnan(v) for v in mean_std([]))


def _const_gender(cfg):
    pal = dict(cfg.population.palettes)
    pal["gender"] = type(pal["gender"])(("female",))
    return cfg.with_population(palettes=pal)


def test_constant_attribute_has_no_importance():
    cfg = _const_gender(with_size(load_scenario("linear"), 40))
    ranked = feature_importance(cfg, cfg.catalog, range(5))
    drops = {name: drop for name, drop, _ in ranked}
    assert drops["gender"] == pytest.approx(0.0, abs=1e-12)
    assert [r for _, _, r in ranked] == [1, 2, 3, 4, 5]
    assert [d for _, d, _ in ranked] == sorted((d for _, d, _ in ranked), reverse=True)


def test_single_attribute_catalog():
    cfg = with_size(load_scenario("linear"), 20)
    ranked = feature_importance(cfg, ["top_color"], range(3))
    assert [(n, r) for n, _, r in ranked] == [("top_color", 1)]


def test_importance_is_deterministic():
    cfg = with_size(load_scenario("nonlinear"), 20)
    assert feature_importance(cfg, cfg.catalog, range(3)) == feature_importance(cfg, cfg.catalog, range(3))
