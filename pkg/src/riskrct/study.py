"""Closed-loop study: warm-up, daily scoring and dispatch, follow-up, replay.

The trial loop alternates between the risk model and the simulator.  On
trial day ``d`` the model scores the events of days ``d-14 .. d-1``, the
pipeline lists and messages players at the start of the day, and then the
simulator generates day ``d`` with the updated intervention history.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .domain import FEATURE_WINDOW_DAYS, EventLog, Population
from .pipeline import (EligibilityState, PipelineParams, RiskAssessment, TrialLedger,
                       risk_scores, run_trial_day)
from .riskmodel import RiskModel, TrainSettings, train_risk_model
from .simulator import SimConfig, WorldState, generate_population, step_day

DEFAULT_MESSAGE = ("Please be careful when talking with people you met online. "
                   "Moderators watch over this space; report anything that makes you uneasy.")
PROB_QUANTILES = (0.5, 0.95, 0.99, 0.999)


@dataclass
class TrialSettings:
    start_day: int = 35
    duration_days: int = 138
    follow_up_days: int = 168
    trial_seed: int = 20220213
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    message: str = DEFAULT_MESSAGE

    @property
    def trial_days(self) -> range:
        return range(self.start_day, self.start_day + self.duration_days)

    @property
    def horizon(self) -> int:
        """Days simulated in total so the last listing gets a full follow-up."""
        return self.start_day + self.duration_days + self.follow_up_days

    def validate(self) -> "TrialSettings":
        if self.start_day < FEATURE_WINDOW_DAYS + 1:
            raise ValueError(f"start_day must be >= {FEATURE_WINDOW_DAYS + 1}, got {self.start_day}")
        if self.duration_days < 1:
            raise ValueError(f"duration_days must be >= 1, got {self.duration_days}")
        if self.follow_up_days < 0:
            raise ValueError(f"follow_up_days must be >= 0, got {self.follow_up_days}")
        self.pipeline.validate()
        return self


@dataclass
class DailyScores:
    """Sparse per-day risk scores, enough to rerun the listing rules."""
    day: int
    violator_ids: np.ndarray
    violator_scores: np.ndarray
    victim_ids: np.ndarray
    victim_scores: np.ndarray
    n_edges: int
    prob_quantiles: np.ndarray
    above_threshold: int

    def assessment(self, n_players: int, threshold: float) -> RiskAssessment:
        v = np.zeros(n_players)
        w = np.zeros(n_players)
        v[self.violator_ids] = self.violator_scores
        w[self.victim_ids] = self.victim_scores
        return RiskAssessment(self.day, v, w, threshold)


@dataclass
class TrialResult:
    ledger: TrialLedger
    population: Population
    events: EventLog
    scores: list

    def score_summary(self) -> dict:
        q = np.array([s.prob_quantiles for s in self.scores])
        edges = sum(s.n_edges for s in self.scores)
        above = sum(s.above_threshold for s in self.scores)
        out = {f"q{p}": float(np.median(q[:, i])) for i, p in enumerate(PROB_QUANTILES)}
        out["share_above_threshold"] = above / edges if edges else 0.0
        return out


class WindowView:
    """The last ``window_days`` daily logs, which is all a scoring day needs."""

    def __init__(self, window_days: int = FEATURE_WINDOW_DAYS):
        self.window_days = window_days
        self.days: dict[int, EventLog] = {}

    def add(self, log: EventLog, day: int) -> None:
        self.days[day] = log
        for old in [d for d in self.days if d < day - self.window_days + 1]:
            del self.days[old]

    def events(self) -> EventLog:
        return EventLog.concat([self.days[d] for d in sorted(self.days)])


def score_day(model: RiskModel, population: Population, events: EventLog, day: int,
              threshold: float) -> DailyScores:
    scored = model.score(population, events, day)
    a = risk_scores(scored.actor, scored.target, scored.probability, threshold, len(population), day)
    vi = np.flatnonzero(a.violator_score)
    wi = np.flatnonzero(a.victim_score)
    p = scored.probability
    qs = np.quantile(p, PROB_QUANTILES) if len(p) else np.full(len(PROB_QUANTILES), np.nan)
    return DailyScores(day, vi, a.violator_score[vi], wi, a.victim_score[wi], len(p), qs,
                       int((p > threshold).sum()))


def warm_up(config: SimConfig, days: int) -> WorldState:
    """Population plus ``days`` free-running days before any intervention."""
    state = generate_population(config)
    for _ in range(days):
        step_day(state)
    return state


def _seed_logins(eligibility: EligibilityState, state: WorldState) -> None:
    lookback = eligibility.params.login_lookback_days
    for log in state.logs[-lookback:]:
        if len(log):
            eligibility.record_logins(int(log.day[0]), np.unique(log.actor))


def run_trial(state: WorldState, model: RiskModel, settings: TrialSettings | None = None,
              progress=None) -> TrialResult:
    """Run the trial from ``state.day`` (== start_day) through the follow-up period."""
    s = (settings or TrialSettings()).validate()
    if state.day != s.start_day:
        raise ValueError(f"world is at day {state.day}, trial starts at day {s.start_day}")
    if state.config.horizon_days < s.horizon:
        raise ValueError(f"horizon_days {state.config.horizon_days} < required {s.horizon}")
    pop = state.population
    n = len(pop)
    params = s.pipeline
    ledger = TrialLedger(s.trial_seed, n, s.message)
    eligibility = EligibilityState(n, params)
    _seed_logins(eligibility, state)
    view = WindowView(model.window_days)
    for i, log in enumerate(state.logs[-model.window_days:], start=state.day - min(len(state.logs), model.window_days)):
        view.add(log, i)
    daily = []
    for day in s.trial_days:
        sc = score_day(model, pop, view.events(), day, params.threshold)
        daily.append(sc)
        eligibility.penalized = pop.penalized_by(day)
        messaged = run_trial_day(day, sc.assessment(n, params.threshold), eligibility, ledger)
        state.history.record(day, messaged)
        log = step_day(state)
        view.add(log, day)
        eligibility.record_logins(day, np.unique(log.actor))
        if progress:
            progress(day)
    while state.day < s.horizon:
        step_day(state)
    return TrialResult(ledger, pop, state.event_log(), daily)


def replay_trial(population: Population, scores, events: EventLog,
                 settings: TrialSettings | None = None) -> TrialLedger:
    """Rerun the listing rules over stored daily scores and the event log.

    Useful for checking a ledger, and for drawing fresh arm assignments when
    the world does not react to messages (``e0 = 0``).
    """
    s = (settings or TrialSettings()).validate()
    n = len(population)
    ledger = TrialLedger(s.trial_seed, n, s.message)
    eligibility = EligibilityState(n, s.pipeline)
    first = s.start_day - s.pipeline.login_lookback_days
    logins = _logins_by_day(events, first, s.start_day + s.duration_days - 1)
    for d in range(first, s.start_day):
        eligibility.record_logins(d, logins.get(d, np.zeros(0, dtype=np.int64)))
    by_day = {sc.day: sc for sc in scores}
    for day in s.trial_days:
        eligibility.penalized = population.penalized_by(day)
        run_trial_day(day, by_day[day].assessment(n, s.pipeline.threshold), eligibility, ledger)
        eligibility.record_logins(day, logins.get(day, np.zeros(0, dtype=np.int64)))
    return ledger


def _logins_by_day(events: EventLog, first: int, last: int) -> dict:
    w = events.window(first, last)
    keys = np.unique(w.day.astype(np.int64) * (1 << 32) + w.actor)
    days, actors = keys >> 32, keys & ((1 << 32) - 1)
    cut = np.flatnonzero(np.diff(days)) + 1
    return {int(d[0]): a for d, a in zip(np.split(days, cut), np.split(actors, cut)) if len(d)}


def rescore_trial(model: RiskModel, population: Population, events: EventLog,
                  settings: TrialSettings | None = None) -> list:
    """Recompute the daily scores of a finished trial from its event log."""
    s = (settings or TrialSettings()).validate()
    return [score_day(model, population, events.window(day - model.window_days, day - 1), day,
                      s.pipeline.threshold) for day in s.trial_days]


# --- full study and replication harnesses --------------------------------------

@dataclass
class StudyResult:
    model: RiskModel
    trial: TrialResult
    train_state_day: int


def train_on_world(config: SimConfig, settings: TrainSettings | None = None):
    """Warm a world up to the evaluation day and train the risk model on it."""
    ts = settings or TrainSettings()
    state = warm_up(config, ts.eval_day)
    return state, train_risk_model(state.population, state.event_log(), ts)


def run_study(config: SimConfig, trial: TrialSettings | None = None,
              train: TrainSettings | None = None, model: RiskModel | None = None,
              progress=None) -> StudyResult:
    """Train (unless a model is given), then run the trial on the same world."""
    t = (trial or TrialSettings()).validate()
    config = config.replace(horizon_days=max(config.horizon_days, t.horizon))
    if model is None:
        state, model = train_on_world(config, train)
        for _ in range(t.start_day - state.day):
            step_day(state)
    else:
        state = warm_up(config, t.start_day)
    return StudyResult(model, run_trial(state, model, t, progress), t.start_day)


def _worker_count(n_tasks: int) -> int:
    return max(1, min(n_tasks, os.cpu_count() or 1))


def map_replications(fn, args_list, processes: int | None = None):
    """Apply ``fn`` to each argument tuple, in parallel when cores allow.

    Results come back in input order, so the output does not depend on
    scheduling.
    """
    procs = processes or _worker_count(len(args_list))
    if procs <= 1:
        return [fn(*a) for a in args_list]
    import multiprocessing as mp
    with mp.get_context("fork").Pool(procs) as pool:
        return pool.starmap(fn, args_list)
