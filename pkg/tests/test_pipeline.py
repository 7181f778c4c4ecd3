import math

import numpy as np
import pytest
from hypothesis import given, settings

from riskrct.pipeline import (Arm, EligibilityState, PipelineParams, RiskAssessment, RiskKind,
                              TrialLedger, assign_group, eligible, risk_scores, run_trial_day,
                              select_top_k)

from pipeline_properties import check_scenario, edge_lists, gating_problems, scenarios


def test_violator_score_sums_edges_above_threshold():
    a = risk_scores([0, 0, 0], [1, 2, 3], [0.96, 0.99, 0.50], 0.95, 4)
    assert a.violator_score[0] == pytest.approx(1.95)
    assert a.victim_score.tolist() == pytest.approx([0, 0.96, 0.99, 0])


def test_threshold_is_strict():
    a = risk_scores([0], [1], [0.95], 0.95, 2)
    assert a.violator_score.sum() == 0 and a.victim_score.sum() == 0


def test_no_edges():
    a = risk_scores([], [], [], 0.95, 3)
    assert not a.violator_score.any() and not a.victim_score.any()


@pytest.mark.parametrize("bad", [0.0, 1.0, 1.5, -0.2])
def test_threshold_bounds(bad):
    with pytest.raises(ValueError):
        risk_scores([0], [1], [0.5], bad, 2)


def state_with_logins(n, day, login_days):
    s = EligibilityState(n)
    for d in range(day - login_days, day):
        s.record_logins(d, np.arange(n))
    return s


def test_cooldown_examples():
    s = state_with_logins(3, 20, 4)
    s.mark_listed(15, [0])
    s.mark_listed(10, [1])
    assert not eligible(0, s, 20)
    assert eligible(1, s, 20)
    s.penalized[2] = True
    assert not eligible(2, s, 20)


def test_activity_filter():
    assert not eligible(0, state_with_logins(1, 20, 2), 20)
    assert eligible(0, state_with_logins(1, 20, 3), 20)


def test_top_k_examples():
    score = np.linspace(1, 2, 150)
    a = RiskAssessment(0, score, np.zeros(150))
    got = select_top_k(a, np.ones(150, bool), 100)
    assert sorted(got.tolist()) == list(range(50, 150))
    tied = RiskAssessment(0, np.array([0.0, 2.0, 2.0, 1.0]), np.zeros(4))
    assert select_top_k(tied, np.ones(4, bool), 2).tolist() == [1, 2]
    few = RiskAssessment(0, np.r_[np.ones(40), np.zeros(60)], np.zeros(100))
    assert len(select_top_k(few, np.ones(100, bool), 100)) == 40


def test_arm_assignment_is_stable_and_balanced():
    ids = np.arange(20000)
    arms = assign_group(ids, 4)
    assert assign_group(17, 4) == assign_group(17, 4) == Arm(int(arms[17]))
    share = (arms == Arm.intervention).mean()
    assert abs(share - 0.5) < 3 * math.sqrt(0.25 / 20000)


def ledger_day(n, v, w, seed=1):
    s = state_with_logins(n, 10, 7)
    ledger = TrialLedger(seed, n)
    messaged = run_trial_day(10, RiskAssessment(10, v, w), s, ledger)
    return ledger, messaged, s


def test_player_in_both_lists_messaged_once():
    n = 6
    ledger, messaged, _ = ledger_day(n, np.ones(n), np.ones(n))
    c = ledger.columns()
    inter = c["arm"] == Arm.intervention
    ids = np.flatnonzero(ledger.arms == Arm.intervention)
    assert (c["player_id"][inter] == np.repeat(ids[None], 2, 0).ravel()).all() or len(ids) == 0
    assert sorted(messaged.tolist()) == ids.tolist()
    assert c["dispatched"].sum() == len(ids)


def test_control_listing_starts_cooldown_without_message():
    n = 40
    ledger, messaged, s = ledger_day(n, np.ones(n), np.zeros(n))
    control = np.flatnonzero(ledger.arms == Arm.control)
    c = ledger.columns()
    assert not c["dispatched"][c["arm"] == Arm.control].any()
    assert (s.last_listed[control] == 10).all()
    assert not set(control.tolist()) & set(messaged.tolist())


def test_caps_of_one_hundred_per_kind():
    n = 1200
    rng = np.random.default_rng(0)
    ledger, messaged, _ = ledger_day(n, rng.random(n) + 1, rng.random(n) + 1)
    c = ledger.columns()
    for arm in Arm:
        for kind in RiskKind:
            assert ((c["arm"] == arm) & (c["risk_kind"] == kind)).sum() == 100
    assert 100 <= len(messaged) <= 200


def test_days_are_append_only(tmp_path):
    ledger, _, s = ledger_day(10, np.ones(10), np.ones(10))
    with pytest.raises(ValueError):
        run_trial_day(10, RiskAssessment(10, np.ones(10), np.ones(10)), s, ledger)
    ledger.write(tmp_path / "l.csv", {"config_hash": "x"})
    back, header = TrialLedger.read(tmp_path / "l.csv")
    assert back.columns()["player_id"].tolist() == ledger.columns()["player_id"].tolist()
    assert header["config_hash"] == "x"


def test_params_validation():
    with pytest.raises(ValueError):
        PipelineParams(top_k=0).validate()
    with pytest.raises(ValueError):
        PipelineParams(min_login_days=9).validate()


@settings(max_examples=1000, deadline=None)
@given(scenarios())
def test_listing_rules_hold_in_random_scenarios(sc):
    assert check_scenario(sc) == []


@settings(max_examples=1000, deadline=None)
@given(edge_lists)
def test_gating_matches_naive_sum(edges):
    probs = [e[0] for e in edges]
    assert gating_problems(probs, [e[1] for e in edges], [e[2] for e in edges], 0.95) == []
