"""Daily operational loop: risk scores, eligibility, top-K listing, arms and dispatch."""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .randomness import keyed_uniform

DEFAULT_THRESHOLD = 0.95
DEFAULT_TOP_K = 100
DEFAULT_COOLDOWN_DAYS = 9
DEFAULT_MIN_LOGIN_DAYS = 3
DEFAULT_LOGIN_LOOKBACK = 7
_S_ARM = 0xA2


class Arm(enum.IntEnum):
    intervention = 0
    control = 1


class RiskKind(enum.IntEnum):
    violator = 0
    victim = 1


@dataclass
class RiskAssessment:
    day: int
    violator_score: np.ndarray   # indexed by player_id
    victim_score: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    def score(self, kind: RiskKind) -> np.ndarray:
        return self.violator_score if kind == RiskKind.violator else self.victim_score


def risk_scores(actor, target, probability, threshold: float = DEFAULT_THRESHOLD,
                n_players: int | None = None, day: int = 0) -> RiskAssessment:
    """Sum of edge probabilities strictly above ``threshold``.

    The violator score of a player sums its outgoing edges, the victim score
    its incoming ones.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    actor = np.asarray(actor, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    p = np.asarray(probability, dtype=np.float64)
    if len(p) and (p.min() < 0 or p.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if n_players is None:
        n_players = int(max(actor.max(initial=-1), target.max(initial=-1))) + 1
    keep = p > threshold
    w = p[keep]
    return RiskAssessment(
        day,
        np.bincount(actor[keep], weights=w, minlength=n_players).astype(np.float64),
        np.bincount(target[keep], weights=w, minlength=n_players).astype(np.float64),
        threshold,
    )


@dataclass
class PipelineParams:
    threshold: float = DEFAULT_THRESHOLD
    top_k: int = DEFAULT_TOP_K
    cooldown_days: int = DEFAULT_COOLDOWN_DAYS
    min_login_days: int = DEFAULT_MIN_LOGIN_DAYS
    login_lookback_days: int = DEFAULT_LOGIN_LOOKBACK

    def validate(self) -> "PipelineParams":
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.cooldown_days < 0:
            raise ValueError(f"cooldown_days must be >= 0, got {self.cooldown_days}")
        if not 0 <= self.min_login_days <= self.login_lookback_days:
            raise ValueError("min_login_days must lie in [0, login_lookback_days]")
        return self


class EligibilityState:
    """Last listing day, penalty flags and login days per player."""

    NEVER = -(10 ** 6)

    def __init__(self, n_players: int, params: PipelineParams | None = None):
        self.params = (params or PipelineParams()).validate()
        self.last_listed = np.full(n_players, self.NEVER, dtype=np.int64)
        self.penalized = np.zeros(n_players, dtype=bool)
        self._login: dict[int, np.ndarray] = {}
        self.n_players = n_players

    def record_logins(self, day: int, player_ids) -> None:
        mask = np.zeros(self.n_players, dtype=bool)
        mask[np.asarray(player_ids, dtype=np.int64)] = True
        self._login[day] = mask
        for old in [d for d in self._login if d < day - 64]:
            del self._login[old]

    def login_days(self, day: int) -> np.ndarray:
        lb = self.params.login_lookback_days
        out = np.zeros(self.n_players, dtype=np.int64)
        for d in range(day - lb, day):
            m = self._login.get(d)
            if m is not None:
                out += m
        return out

    def mark_listed(self, day: int, player_ids) -> None:
        ids = np.asarray(player_ids, dtype=np.int64)
        if np.any(self.last_listed[ids] > day):
            raise ValueError("last listed day cannot be after the current day")
        self.last_listed[ids] = day

    def mask(self, day: int) -> np.ndarray:
        p = self.params
        cooled = self.last_listed < day - p.cooldown_days
        return cooled & ~self.penalized & (self.login_days(day) >= p.min_login_days)


def eligible(player: int, state: EligibilityState, day: int) -> bool:
    """Not listed in the cooldown window, not penalized, enough recent logins."""
    return bool(state.mask(day)[int(player)])


def select_top_k(assessment: RiskAssessment, eligibility, k: int = DEFAULT_TOP_K,
                 risk_kind: RiskKind = RiskKind.violator, candidates=None) -> np.ndarray:
    """Eligible players with positive score, highest first, ties by lower id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    score = assessment.score(RiskKind(risk_kind))
    ok = np.asarray(eligibility, dtype=bool) & (score > 0)
    if candidates is not None:
        ok &= np.asarray(candidates, dtype=bool)
    ids = np.flatnonzero(ok)
    order = np.lexsort((ids, -score[ids]))
    return ids[order[:k]]


def assign_group(player_id, trial_seed: int):
    """Stable 50/50 arm from a hash of (trial_seed, player_id)."""
    u = keyed_uniform(trial_seed, _S_ARM, 0, np.atleast_1d(player_id))
    arms = np.where(u < 0.5, Arm.intervention, Arm.control)
    if np.ndim(player_id) == 0:
        return Arm(int(arms[0]))
    return arms.astype(np.int8)


LEDGER_FIELDS = "day,arm,risk_kind,player_id,score,dispatched"


@dataclass
class TrialLedger:
    trial_seed: int
    n_players: int
    message: str = ""
    day: list = field(default_factory=list)
    arm: list = field(default_factory=list)
    risk_kind: list = field(default_factory=list)
    player_id: list = field(default_factory=list)
    score: list = field(default_factory=list)
    dispatched: list = field(default_factory=list)
    days_recorded: set = field(default_factory=set)

    def __post_init__(self):
        self.arms = assign_group(np.arange(self.n_players), self.trial_seed)

    def __len__(self) -> int:
        return len(self.day)

    def append_day(self, day: int, rows) -> None:
        if day in self.days_recorded:
            raise ValueError(f"day {day} already recorded")
        if self.days_recorded and day < max(self.days_recorded):
            raise ValueError("ledger days must be appended in order")
        self.days_recorded.add(day)
        for arm, kind, pid, score, disp in rows:
            self.day.append(day)
            self.arm.append(int(arm))
            self.risk_kind.append(int(kind))
            self.player_id.append(int(pid))
            self.score.append(float(score))
            self.dispatched.append(bool(disp))

    def columns(self) -> dict:
        return {
            "day": np.asarray(self.day, dtype=np.int64),
            "arm": np.asarray(self.arm, dtype=np.int64),
            "risk_kind": np.asarray(self.risk_kind, dtype=np.int64),
            "player_id": np.asarray(self.player_id, dtype=np.int64),
            "score": np.asarray(self.score, dtype=np.float64),
            "dispatched": np.asarray(self.dispatched, dtype=bool),
        }

    def dispatches(self, day: int | None = None) -> np.ndarray:
        c = self.columns()
        m = c["dispatched"] if day is None else c["dispatched"] & (c["day"] == day)
        return c["player_id"][m]

    def to_text(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k}={v}\n")
        buf.write(f"# trial_seed={self.trial_seed}\n# n_players={self.n_players}\n")
        buf.write(LEDGER_FIELDS + "\n")
        for row in zip(self.day, self.arm, self.risk_kind, self.player_id, self.score, self.dispatched):
            d, a, k, pid, s, disp = row
            buf.write(f"{d},{Arm(a).name},{RiskKind(k).name},{pid},{s!r},{int(disp)}\n")
        return buf.getvalue()

    def write(self, path, header: dict | None = None) -> None:
        Path(path).write_text(self.to_text(header), encoding="utf-8")

    @classmethod
    def read(cls, path) -> tuple["TrialLedger", dict]:
        header, rows = {}, []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    header[k.strip()] = v.strip()
                elif line.strip() and not line.startswith("day,"):
                    rows.append(line.strip().split(","))
        ledger = cls(int(header["trial_seed"]), int(header["n_players"]))
        by_day: dict[int, list] = {}
        for d, a, k, pid, s, disp in rows:
            by_day.setdefault(int(d), []).append((Arm[a], RiskKind[k], int(pid), float(s), disp == "1"))
        for d in sorted(by_day):
            ledger.append_day(d, by_day[d])
        return ledger, header


def run_trial_day(day: int, assessment: RiskAssessment, eligibility: EligibilityState,
                  ledger: TrialLedger, top_k: int | None = None) -> np.ndarray:
    """List top-K violator- and victim-risk players per arm and dispatch messages.

    Eligibility is evaluated once at the start of the day so a player may
    appear in both lists; such a player gets a single message.  Only the
    intervention arm is messaged; every listing starts the cooldown.
    Returns the ids messaged today.
    """
    if day in ledger.days_recorded:
        raise ValueError(f"day {day} already recorded")
    k = top_k or eligibility.params.top_k
    ok = eligibility.mask(day)
    rows, listed, messaged = [], [], set()
    for arm in Arm:
        in_arm = ledger.arms == arm
        for kind in RiskKind:
            chosen = select_top_k(assessment, ok, k, kind, in_arm)
            score = assessment.score(kind)
            for pid in chosen.tolist():
                send = arm == Arm.intervention and pid not in messaged
                if send:
                    messaged.add(pid)
                rows.append((arm, kind, pid, score[pid], send))
            listed.append(chosen)
    ledger.append_day(day, rows)
    if listed:
        eligibility.mark_listed(day, np.unique(np.concatenate(listed)))
    return np.array(sorted(messaged), dtype=np.int64)
