"""Generative properties of the daily listing rules, shared by the unit and acceptance suites.

Each property replays a random multi-day scenario through the production
pipeline and checks every listing against a naive re-derivation of the rules.
"""
import numpy as np
from hypothesis import given, settings, strategies as st

from riskrct.pipeline import (Arm, EligibilityState, PipelineParams, RiskAssessment, RiskKind,
                              TrialLedger, assign_group, risk_scores, run_trial_day)

# score values include exact ties and values straddling the threshold
SCORE_VALUES = [0.0, 0.0, 0.95, 0.951, 0.96, 0.99, 1.0, 1.5, 1.9, 2.5, 3.0]


@st.composite
def scenarios(draw, max_players=60, max_days=12):
    n = draw(st.integers(2, max_players))
    days = draw(st.integers(1, max_days))
    top_k = draw(st.sampled_from([1, 2, 3, 5, 10, 100]))
    seed = draw(st.integers(0, 2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    login_rate = draw(st.floats(0.2, 1.0))
    pen_rate = draw(st.floats(0.0, 0.3))
    return dict(n=n, days=days, top_k=top_k, trial_seed=seed, rng_seed=seed,
                login=rng.random((days + 7, n)) < login_rate,
                penalized=rng.random(n) < pen_rate,
                penalty_day=rng.integers(0, days + 1, size=n),
                v=rng.choice(SCORE_VALUES, size=(days, n)),
                w=rng.choice(SCORE_VALUES, size=(days, n)))


def replay(sc):
    """Run the scenario; yields per-day inputs and outputs for checking."""
    n = sc["n"]
    params = PipelineParams(top_k=sc["top_k"])
    elig = EligibilityState(n, params)
    ledger = TrialLedger(sc["trial_seed"], n)
    first = 7
    for d in range(0, first):
        elig.record_logins(d, np.flatnonzero(sc["login"][d]))
    history = []
    for i in range(sc["days"]):
        day = first + i
        penalized = sc["penalized"] & (sc["penalty_day"] <= i)
        elig.penalized = penalized
        a = RiskAssessment(day, sc["v"][i], sc["w"][i])
        messaged = run_trial_day(day, a, elig, ledger)
        history.append((day, penalized, a, messaged))
        elig.record_logins(day, np.flatnonzero(sc["login"][day]))
    return ledger, history


def naive_eligible(sc, ledger, day, penalized):
    c = ledger.columns()
    before = c["day"] < day
    ok = np.ones(sc["n"], dtype=bool)
    for pid in range(sc["n"]):
        listed_days = c["day"][before & (c["player_id"] == pid)]
        if len(listed_days) and day - listed_days.max() <= 9:
            ok[pid] = False
        if penalized[pid]:
            ok[pid] = False
        if sc["login"][day - 7:day, pid].sum() < 3:
            ok[pid] = False
    return ok


def naive_list(score, ok, arms, arm, k):
    cands = [p for p in range(len(score)) if ok[p] and arms[p] == arm and score[p] > 0]
    cands.sort(key=lambda p: (-score[p], p))
    return cands[:k]


def check_scenario(sc) -> list[str]:
    """All rule violations found in one scenario (empty when the pipeline is correct)."""
    ledger, history = replay(sc)
    c = ledger.columns()
    arms = assign_group(np.arange(sc["n"]), sc["trial_seed"])
    problems = []
    for day, penalized, a, messaged in history:
        today = c["day"] == day
        ok = naive_eligible(sc, ledger, day, penalized)
        for arm in Arm:
            for kind in RiskKind:
                m = today & (c["arm"] == arm) & (c["risk_kind"] == kind)
                got = c["player_id"][m].tolist()
                want = naive_list(a.score(kind), ok, arms, arm, sc["top_k"])
                if got != want:
                    problems.append(f"day {day} {arm.name}/{kind.name}: {got} != {want}")
                if len(got) > sc["top_k"]:
                    problems.append(f"day {day}: list longer than k")
        disp = c["player_id"][today & c["dispatched"]]
        if np.any(c["arm"][today & c["dispatched"]] != Arm.intervention):
            problems.append(f"day {day}: control-arm dispatch")
        if len(disp) != len(set(disp.tolist())):
            problems.append(f"day {day}: duplicate message")
        want_msg = sorted(set(c["player_id"][today & (c["arm"] == Arm.intervention)].tolist()))
        if sorted(disp.tolist()) != want_msg or messaged.tolist() != want_msg:
            problems.append(f"day {day}: messaged {messaged.tolist()} != {want_msg}")
        if len(disp) > 2 * sc["top_k"]:
            problems.append(f"day {day}: more than 2k messages")
        listed = c["player_id"][today]
        if np.any(penalized[listed]):
            problems.append(f"day {day}: penalized player listed")
    return problems


def gating_problems(probs, actors, targets, threshold) -> list[str]:
    n = 8
    a = risk_scores(actors, targets, probs, threshold, n)
    out = []
    for pid in range(n):
        v = sum(p for p, u in zip(probs, actors) if u == pid and p > threshold)
        w = sum(p for p, t in zip(probs, targets) if t == pid and p > threshold)
        if abs(a.violator_score[pid] - v) > 1e-12 or abs(a.victim_score[pid] - w) > 1e-12:
            out.append(f"player {pid}: ({a.violator_score[pid]}, {a.victim_score[pid]}) != ({v}, {w})")
    return out


edge_lists = st.lists(st.tuples(st.sampled_from([0.5, 0.94, 0.95, 0.950001, 0.97, 0.99, 1.0]),
                                st.integers(0, 7), st.integers(0, 7)), max_size=40)


def run_properties(max_examples: int = 1000) -> dict[str, int]:
    """Run both property families; returns the number of failing cases for each."""
    fails = {"listing rules": 0, "strict gating": 0}
    seen = {"listing rules": 0, "strict gating": 0}

    @settings(max_examples=max_examples, deadline=None, database=None)
    @given(scenarios())
    def listing(sc):
        seen["listing rules"] += 1
        fails["listing rules"] += bool(check_scenario(sc))

    @settings(max_examples=max_examples, deadline=None, database=None)
    @given(edge_lists)
    def gating(edges):
        seen["strict gating"] += 1
        probs = [e[0] for e in edges]
        fails["strict gating"] += bool(gating_problems(probs, [e[1] for e in edges],
                                                       [e[2] for e in edges], 0.95))

    listing()
    gating()
    return {k: (seen[k], fails[k]) for k in fails}
