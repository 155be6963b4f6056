import pytest
from hypothesis import given, settings, strategies as st

from trailsim import load_scenario, run
from trailsim.errors import TooLarge, UnknownOrigin
from trailsim.identity import (
    NEW_USER,
    IdentityRegistry,
    MatchDecision,
    PendingBoard,
    PendingMatch,
    Tolerance,
    ingest,
    match_observation,
    partition,
    resolve_stream,
    unique_count,
)
from trailsim.oracle import MAX_OBSERVATIONS, brute_force_oracle
from trailsim.population import CATEGORICAL, AttributeVector
from trailsim.protocol import HandoffMessage, make_handoffs
from trailsim.sensing import Observation

from helpers import agent, line_config, silent

RED = AttributeVector("red", "blue", "jog", "adult", "male", "hat", 2.0)
GREEN = AttributeVector("green", "blue", "jog", "adult", "male", "hat", 2.0)
SEL = tuple((a, RED.get(a)) for a in CATEGORICAL)


def _obs(obs_id, sensor, a, attrs=RED, truth=0, depart=None):
    return Observation(sensor, obs_id, a, attrs, truth, a + 5 if depart is None else depart)


def _pending(eta, origin=0, target=1, w=10, speed=2.0):
    return PendingMatch(HandoffMessage(0, origin, target, SEL, speed, eta, (eta - w, eta + w)))


def test_no_pending_means_new():
    assert match_observation(_obs(1, 1, 50), []) == NEW_USER


def test_single_match_at_eta():
    p = _pending(50)
    d = match_observation(_obs(1, 1, 50), [p])
    assert d.same_user and d.origin_obs_id == 0
    assert p.consumed and p.fate == "fulfilled"


def test_outside_window_is_new():
    assert match_observation(_obs(1, 1, 61), [_pending(50)]) == NEW_USER


def test_nearest_eta_wins():
    a, b = _pending(54, origin=0), _pending(50, origin=3)
    d = match_observation(_obs(9, 1, 51), [a, b])
    assert d.origin_obs_id == 3
    assert not a.consumed


def test_attribute_or_speed_mismatch_is_new():
    assert match_observation(_obs(1, 1, 50, GREEN), [_pending(50)]) == NEW_USER
    fast = AttributeVector("red", "blue", "jog", "adult", "male", "hat", 2.3)
    assert match_observation(_obs(1, 1, 50, fast), [_pending(50)]) == NEW_USER
    ok = AttributeVector("red", "blue", "jog", "adult", "male", "hat", 2.19)
    assert match_observation(_obs(1, 1, 50, ok), [_pending(50)]).same_user


def test_without_eta_gating_records_are_reused():
    tol = Tolerance(eta_gating=False)
    p = _pending(50)
    first = match_observation(_obs(1, 1, 500), [p], tol)
    second = match_observation(_obs(2, 1, 900), [p], tol)
    assert first.same_user and second.same_user


def test_board_retires_siblings():
    board = PendingBoard()
    for target in (1, 3):
        board.deliver(HandoffMessage(2, 0, target, SEL, 2.0, 50, (40, 60)))
    assert board.match(_obs(1, 1, 50)).same_user
    assert board.counts == {"emitted": 2, "fulfilled": 1, "superseded": 1, "expired": 0}
    assert board.match(_obs(2, 3, 50)) == NEW_USER
    assert board.outstanding == 0


def test_board_expiry():
    board = PendingBoard()
    board.deliver(HandoffMessage(0, 0, 1, SEL, 2.0, 50, (40, 60)))
    assert board.expire(60) == []
    assert len(board.expire(61)) == 1
    assert board.counts["expired"] == 1 and board.outstanding == 0


def test_ingest_first_and_append():
    reg = IdentityRegistry()
    ingest(reg, _obs(0, 0, 0), NEW_USER)
    assert unique_count(reg) == 1 and len(reg.trails[0]) == 1
    ingest(reg, _obs(1, 1, 50), MatchDecision(True, None, 0))
    assert unique_count(reg) == 1 and reg.trails[0] == [(0, 0), (1, 50)]


def test_ingest_unknown_origin():
    with pytest.raises(UnknownOrigin):
        ingest(IdentityRegistry(), _obs(1, 1, 50), MatchDecision(True, None, 42))


def test_no_matches_means_fragmentation():
    reg = IdentityRegistry()
    for i in range(7):
        ingest(reg, _obs(i, i % 3, i), NEW_USER)
    assert unique_count(reg) == 7
    assert unique_count(IdentityRegistry()) == 0


def test_one_user_three_sensors():
    cfg = silent(line_config(n=3, spacing=100.0, size=1))
    res = run(cfg, 0, agents=[agent(0, (0, 1, 2), 0, 2.0)])
    assert unique_count(res.registry) == 1
    assert [s for s, _ in res.registry.trails[0]] == [0, 1, 2]


def test_one_user_six_sensor_line_duty_cycle():
    cfg = silent(line_config(n=6, spacing=200.0, rho=15.0, size=1))
    for speed in (0.9, 2.5, 7.0):
        res = run(cfg, 0, agents=[agent(0, (5, 4, 3, 2, 1, 0), 3, speed)])
        assert res.mode == "duty_cycle"
        assert unique_count(res.registry) == 1
        assert len(res.observations) == 6


def _replay(observations, graph, selection=CATEGORICAL, tol=Tolerance()):
    def messages_for(o):
        return make_handoffs(o, graph, selection, emitted=o.depart_tick)
    return resolve_stream(observations, messages_for, tol)


def test_adversarial_consumption_fixture():
    """Two attribute-identical users arrive inside one window: one handoff, one merge."""
    g = line_config(n=3, spacing=100.0).graph
    obs = [
        _obs(0, 0, 0, truth=0),
        _obs(1, 1, 50, truth=0),
        _obs(2, 1, 52, truth=1),
        _obs(3, 2, 102, truth=1),
    ]
    reg = _replay(obs, g)
    assert unique_count(reg) == 2
    fulfilled_by = {}
    for child, origin in reg.links.items():
        assert origin not in fulfilled_by
        fulfilled_by[origin] = child
    assert reg.obs_assignment[1] == reg.obs_assignment[0]
    assert reg.obs_assignment[2] != reg.obs_assignment[0]
    assert len(brute_force_oracle(obs, g)) == unique_count(reg)


def test_oracle_small_examples():
    g = line_config(n=3, spacing=100.0).graph
    assert brute_force_oracle([_obs(0, 0, 0)], g) == [(0,)]
    assert brute_force_oracle([_obs(0, 0, 0), _obs(1, 1, 50)], g) == [(0, 1)]
    three = [_obs(0, 0, 0), _obs(1, 1, 50), _obs(2, 2, 100, GREEN)]
    assert brute_force_oracle(three, g) == [(0, 1), (2,)]


def test_oracle_refuses_large_inputs():
    g = line_config(n=3).graph
    with pytest.raises(TooLarge):
        brute_force_oracle([_obs(i, 0, i) for i in range(MAX_OBSERVATIONS + 1)], g)


@pytest.mark.parametrize("gating", [True, False])
@pytest.mark.parametrize("name", ["linear", "nonlinear"])
def test_message_fates_are_conserved(name, gating):
    res = run(load_scenario(name).with_eta_gating(gating), 21)
    f = res.message_fates
    assert f["emitted"] == len(res.messages)
    assert f["emitted"] == f["fulfilled"] + f["superseded"] + f["expired"] + f["outstanding"]
    assert sorted(res.fates) == sorted(
        ["fulfilled"] * f["fulfilled"] + ["superseded"] * f["superseded"]
        + ["expired"] * f["expired"] + ["outstanding"] * f["outstanding"])


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["linear", "nonlinear"]), st.integers(0, 10**6))
def test_registry_invariants(name, seed):
    cfg = load_scenario(name)
    res = run(cfg, seed)
    reg, g = res.registry, cfg.graph
    assert set(reg.obs_assignment) == {o.obs_id for o in res.observations}
    assert sum(len(t) for t in reg.trails.values()) == len(res.observations)
    assert len(set(reg.links.values())) == len(reg.links)  # one successor per observation
    for trail in reg.trails.values():
        for (s0, t0), (s1, t1) in zip(trail, trail[1:]):
            assert t1 > t0
            g.distance(s0, s1)
