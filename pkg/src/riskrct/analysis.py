"""Windowed trial analysis: effect tables, night usage, balance and calibration."""
from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import numpy as np

from .domain import EventLog, Gender, Layer, Population
from .pipeline import Arm, TrialLedger
from .simulator import NIGHT_HOURS
from .stats import (effect_size, fisher_exact_2x2, pearson_chi_square_2x2, spearman,
                    students_t, wilcoxon_rank_sum)

ANALYSIS_WINDOWS = ((1, 14), (15, 28), (29, 56), (57, 84), (85, 112), (113, 140), (141, 168))
REPEAT_WINDOWS = ANALYSIS_WINDOWS[:3]
OUTCOMES = ("violation", "violated_DM", "violated_AC")
METRICS = ("player", "day")
COHORTS = ("all", "twice", "thrice")
ALPHA = 0.05
NIGHT_PERIOD_DAYS = 84
GENDER_LABEL = {Gender.female: "Women", Gender.male: "Men"}


def window_label(window) -> str:
    return f"{window[0]}-{window[1]} days"


def parse_windows(text: str):
    """``"1-14,15-28"`` -> ((1, 14), (15, 28)); windows must be contiguous."""
    out = []
    for part in text.split(","):
        lo, _, hi = part.strip().partition("-")
        out.append((int(lo), int(hi)))
    validate_windows(out)
    return tuple(out)


def validate_windows(windows) -> None:
    prev = 0
    for lo, hi in windows:
        if lo != prev + 1 or hi < lo:
            raise ValueError(f"windows must be contiguous and non-overlapping, got {windows}")
        prev = hi


@dataclass
class EffectEstimate:
    window: str
    gender: str
    outcome: str
    metric: str
    cohort: str
    n_i: int
    n_c: int
    k_i: int
    k_c: int
    incidents_i: int
    incidents_c: int
    x_i: float
    x_c: float
    effect: float
    p_value: float

    @property
    def significant(self) -> bool:
        return not math.isnan(self.p_value) and self.p_value < ALPHA


# --- cohorts -----------------------------------------------------------------

@dataclass
class Cohort:
    player: np.ndarray
    arm: np.ndarray
    anchor: np.ndarray
    receipts: np.ndarray


def listing_cohort(ledger: TrialLedger, cohort: str = "all") -> Cohort:
    """Listed players with their anchor day.

    ``all`` anchors every listed player at their first listing; ``twice``
    keeps players listed on exactly two days anchored at the second;
    ``thrice`` keeps players listed on three or more days anchored at the
    third.  A control-arm listing counts as a would-be receipt.
    """
    c = ledger.columns()
    if not len(c["day"]):
        z = np.zeros(0, dtype=np.int64)
        return Cohort(z, z, z, z)
    keys = np.unique(c["player_id"] * 100000 + c["day"])
    pid, day = keys // 100000, keys % 100000
    first = np.r_[True, pid[1:] != pid[:-1]]
    start = np.flatnonzero(first)
    counts = np.diff(np.r_[start, len(pid)])
    players = pid[start]
    if cohort == "all":
        sel, nth = np.ones(len(players), dtype=bool), 0
    elif cohort == "twice":
        sel, nth = counts == 2, 1
    elif cohort == "thrice":
        sel, nth = counts >= 3, 2
    else:
        raise ValueError(f"unknown cohort {cohort!r}")
    players = players[sel]
    anchor = day[start[sel] + nth]
    arms = ledger.arms[players].astype(np.int64)
    return Cohort(players, arms, anchor, counts[sel])


def _outcome_keys(events: EventLog, outcome: str, horizon: int) -> np.ndarray:
    v = events.violation
    if outcome == "violation":
        who = events.actor[v]
        day = events.day[v]
    elif outcome in ("violated_DM", "violated_AC"):
        layer = Layer.DM if outcome == "violated_DM" else Layer.AC
        m = v & (events.layer == layer)
        who = events.target[m]
        day = events.day[m]
    else:
        raise ValueError(f"unknown outcome {outcome!r}")
    return np.sort(who.astype(np.int64) * horizon + day)


def _count_in_window(keys, players, lo_day, hi_day, horizon):
    lo = np.searchsorted(keys, players * horizon + lo_day, side="left")
    hi = np.searchsorted(keys, players * horizon + hi_day, side="right")
    return hi - lo


def windowed_effect_table(ledger: TrialLedger, events: EventLog, population: Population,
                          windows=ANALYSIS_WINDOWS, gender: Gender = Gender.female,
                          outcome: str = "violation", metric: str = "player",
                          cohort: str = "all", last_day: int | None = None) -> list[EffectEstimate]:
    """Effect and Fisher p per window for one gender, outcome, metric and cohort.

    ``player`` counts cohort members with at least one outcome in the window;
    ``day`` counts member-days with at least one outcome.  Windows start the
    day after the anchor; members whose window extends past ``last_day``
    are left out of that window.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    last = events.last_day if last_day is None else last_day
    # keys pack (player, day); the stride must exceed every event day
    horizon = max(last, events.last_day) + 2
    co = listing_cohort(ledger, cohort)
    g = population.gender[co.player] == Gender(gender)
    keys = _outcome_keys(events, outcome, horizon)
    day_keys = np.unique(keys)
    out = []
    for window in windows:
        lo, hi = window
        covered = g & (co.anchor + hi <= last)
        counts = {}
        for arm in Arm:
            m = covered & (co.arm == arm)
            p, a = co.player[m], co.anchor[m]
            inc = _count_in_window(keys, p, a + lo, a + hi, horizon)
            hit_days = _count_in_window(day_keys, p, a + lo, a + hi, horizon)
            units = len(p) if metric == "player" else len(p) * (hi - lo + 1)
            k = int((inc > 0).sum()) if metric == "player" else int(hit_days.sum())
            counts[arm] = (units, k, int(inc.sum()))
        (n_i, k_i, inc_i), (n_c, k_c, inc_c) = counts[Arm.intervention], counts[Arm.control]
        x_i = k_i / n_i if n_i else float("nan")
        x_c = k_c / n_c if n_c else float("nan")
        eff = effect_size(x_i, x_c) if n_i and n_c else float("nan")
        try:
            p = fisher_exact_2x2([[k_i, n_i - k_i], [k_c, n_c - k_c]])
        except ValueError:
            p = float("nan")
        out.append(EffectEstimate(window_label(window), GENDER_LABEL[Gender(gender)], outcome,
                                  metric, cohort, n_i, n_c, k_i, k_c, inc_i, inc_c, x_i, x_c,
                                  eff, p))
    return out


def full_effect_report(ledger, events, population, windows=ANALYSIS_WINDOWS,
                       last_day=None) -> list[EffectEstimate]:
    """Every (cohort, metric, outcome, gender) table; repeat cohorts use the first three windows."""
    rows = []
    for cohort in COHORTS:
        ws = windows if cohort == "all" else windows[:3]
        for metric in METRICS:
            for outcome in OUTCOMES:
                for gender in Gender:
                    rows += windowed_effect_table(ledger, events, population, ws, gender,
                                                  outcome, metric, cohort, last_day)
    return rows


def null_cells(rows) -> list[EffectEstimate]:
    """Cells counted for calibration: main cohort, per-player metric, defined p."""
    return [r for r in rows if r.cohort == "all" and r.metric == "player"
            and not math.isnan(r.p_value)]


# --- night usage -------------------------------------------------------------

@dataclass
class NightUsage:
    gender: str
    values_i: np.ndarray
    values_c: np.ndarray
    statistic: float
    p_value: float

    QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)

    def quantiles(self, arm: Arm) -> np.ndarray:
        v = self.values_i if arm == Arm.intervention else self.values_c
        return np.quantile(v, self.QUANTILES) if len(v) else np.full(5, np.nan)

    @property
    def reduced(self) -> bool:
        return len(self.values_i) > 0 and self.values_i.mean() < self.values_c.mean()

    def summary(self) -> "NightSummary":
        return NightSummary(self.gender, self.quantiles(Arm.intervention),
                            self.quantiles(Arm.control), self.p_value)


@dataclass
class NightSummary:
    """Quantile rows of the night-usage table for one gender."""
    gender: str
    q_i: np.ndarray
    q_c: np.ndarray
    p_value: float


def night_windows_per_player(events: EventLog, players, anchors, period_days=NIGHT_PERIOD_DAYS):
    """Mean number of night hourly windows with DM/AC activity per day after the anchor."""
    players = np.asarray(players, dtype=np.int64)
    anchors = np.asarray(anchors, dtype=np.int64)
    night = np.isin(events.hour, NIGHT_HOURS) & (events.layer <= Layer.DM)
    horizon = int(events.last_day) + 2
    keys = np.unique((events.actor[night].astype(np.int64) * horizon + events.day[night]) * 24
                     + events.hour[night])
    lo = np.searchsorted(keys, (players * horizon + anchors + 1) * 24, side="left")
    hi = np.searchsorted(keys, (players * horizon + anchors + period_days + 1) * 24, side="left")
    return (hi - lo) / float(period_days)


def night_usage_metric(events: EventLog, ledger: TrialLedger, population: Population,
                       gender: Gender, period_days: int = NIGHT_PERIOD_DAYS,
                       last_day: int | None = None) -> NightUsage:
    """Per-player mean nightly window count after first listing, arms compared by rank sum."""
    last = events.last_day if last_day is None else last_day
    co = listing_cohort(ledger, "all")
    m = (population.gender[co.player] == Gender(gender)) & (co.anchor + period_days <= last)
    vals = night_windows_per_player(events, co.player[m], co.anchor[m], period_days)
    arm = co.arm[m]
    vi, vc = vals[arm == Arm.intervention], vals[arm == Arm.control]
    if len(vi) and len(vc):
        w, p = wilcoxon_rank_sum(vi, vc)
    else:
        w, p = float("nan"), float("nan")
    return NightUsage(GENDER_LABEL[Gender(gender)], vi, vc, w, p)


# --- calibration and balance -------------------------------------------------

@dataclass
class Calibration:
    bin_edges: np.ndarray
    bin_rates: np.ndarray
    bin_counts: np.ndarray
    spearman: float


def risk_outcome_calibration(scores, outcomes, bins: int = 10) -> Calibration:
    """Outcome rate per score decile and the score/outcome rank correlation."""
    s = np.asarray(scores, dtype=np.float64)
    o = np.asarray(outcomes, dtype=np.float64)
    if len(np.unique(s)) < 2:
        return Calibration(np.array([]), np.array([]), np.array([]), float("nan"))
    edges = np.unique(np.quantile(s, np.linspace(0, 1, bins + 1)))
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(edges) - 2)
    counts = np.bincount(idx, minlength=len(edges) - 1)
    rates = np.bincount(idx, weights=o, minlength=len(edges) - 1) / np.maximum(counts, 1)
    return Calibration(edges, rates, counts, spearman(s, o))


def ledger_calibration(ledger: TrialLedger, events: EventLog, horizon_days: int = 14):
    """Control-arm listings: risk score against outcomes over the next 14 days."""
    c = ledger.columns()
    last = events.last_day
    out = {}
    for kind, outcome in ((0, "violation"), (1, "violated_DM"), (1, "violated_AC")):
        m = (c["arm"] == Arm.control) & (c["risk_kind"] == kind) & (c["day"] + horizon_days <= last)
        h = last + 2
        keys = _outcome_keys(events, outcome, h)
        k = _count_in_window(keys, c["player_id"][m], c["day"][m] + 1, c["day"][m] + horizon_days, h)
        out[outcome] = risk_outcome_calibration(c["score"][m], k > 0)
    return out


@dataclass
class BalanceRow:
    gender: str
    cumulative_i: int
    cumulative_c: int
    unique_i: int
    unique_c: int
    age_i: tuple[float, float]
    age_c: tuple[float, float]
    age_p: float
    usage_i: tuple[float, float]
    usage_c: tuple[float, float]
    usage_p: float
    once_i: float
    once_c: float
    once_p: float
    five_i: float
    five_c: float
    five_p: float


def covariate_balance(ledger: TrialLedger, events: EventLog, population: Population,
                      gender: Gender) -> BalanceRow:
    """Arm comparison of listed players: counts, age, usage days and receipt counts."""
    c = ledger.columns()
    co = listing_cohort(ledger, "all")
    g = population.gender[co.player] == Gender(gender)
    last = events.last_day
    chat = events.layer <= Layer.DM
    h = last + 2
    active_keys = np.unique(events.actor[chat].astype(np.int64) * h + events.day[chat])
    stats_ = {}
    for arm in Arm:
        m = g & (co.arm == arm)
        cov = m & (co.anchor + 14 <= last)
        usage = _count_in_window(active_keys, co.player[cov], co.anchor[cov] + 1,
                                 co.anchor[cov] + 14, h)
        cum = int(((c["arm"] == arm) & (population.gender[c["player_id"]] == Gender(gender))).sum())
        stats_[arm] = dict(cum=cum, players=co.player[m], age=population.age[co.player[m]].astype(float),
                           usage=usage.astype(float), receipts=co.receipts[m])

    def msd(x):
        return (float(np.mean(x)), float(np.std(x, ddof=1))) if len(x) > 1 else (float("nan"),) * 2

    def ttest(key):
        try:
            return students_t(stats_[Arm.intervention][key], stats_[Arm.control][key])[1]
        except ValueError:
            return float("nan")

    def share_test(pred):
        ki = int(pred(stats_[Arm.intervention]["receipts"]).sum())
        kc = int(pred(stats_[Arm.control]["receipts"]).sum())
        ni = len(stats_[Arm.intervention]["receipts"])
        nc = len(stats_[Arm.control]["receipts"])
        try:
            p = pearson_chi_square_2x2([[ki, ni - ki], [kc, nc - kc]])[1]
        except ValueError:
            p = float("nan")
        return (ki / ni if ni else float("nan")), (kc / nc if nc else float("nan")), p

    once = share_test(lambda r: r == 1)
    five = share_test(lambda r: r >= 5)
    si, sc = stats_[Arm.intervention], stats_[Arm.control]
    return BalanceRow(GENDER_LABEL[Gender(gender)], si["cum"], sc["cum"], len(si["players"]),
                      len(sc["players"]), msd(si["age"]), msd(sc["age"]), ttest("age"),
                      msd(si["usage"]), msd(sc["usage"]), ttest("usage"),
                      once[0], once[1], once[2], five[0], five[1], five[2])


# --- rendering ---------------------------------------------------------------

EFFECT_FIELDS = ("window", "gender", "outcome", "metric", "cohort", "n_i", "n_c", "k_i", "k_c",
                 "incidents_i", "incidents_c", "x_i", "x_c", "effect", "p_value")


def fmt_value(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return str(v)


def effects_to_tsv(rows) -> str:
    buf = io.StringIO()
    buf.write("\t".join(EFFECT_FIELDS + ("significant",)) + "\n")
    for r in rows:
        d = asdict(r)
        buf.write("\t".join(fmt_value(d[f]) for f in EFFECT_FIELDS) + f"\t{int(r.significant)}\n")
    return buf.getvalue()


def effects_from_tsv(text: str) -> list[EffectEstimate]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    head = lines[0].split("\t")
    out = []
    ints = {"n_i", "n_c", "k_i", "k_c", "incidents_i", "incidents_c"}
    floats = {"x_i", "x_c", "effect", "p_value"}
    for ln in lines[1:]:
        d = dict(zip(head, ln.split("\t")))
        d.pop("significant", None)
        for k in ints:
            d[k] = int(d[k])
        for k in floats:
            d[k] = float("nan") if d[k] == "NA" else float(d[k])
        out.append(EffectEstimate(**d))
    return out


def _cell(v, digits=4, bold=False):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    s = f"{v:.{digits}f}"
    return f"*{s}*" if bold else s


def render_effect_table(rows, title: str) -> str:
    """Gender rows, window columns; significant effects wrapped in asterisks."""
    windows = list(dict.fromkeys(r.window for r in rows))
    width = max(12, *(len(w) for w in windows)) + 2
    lines = [title, "Gender  Value    " + "".join(w.rjust(width) for w in windows)]
    for gender in ("Women", "Men"):
        g = {r.window: r for r in rows if r.gender == gender}
        if not g:
            continue
        eff = "".join(_cell(g[w].effect, bold=g[w].significant).rjust(width) if w in g else "".rjust(width)
                      for w in windows)
        pv = "".join(_cell(g[w].p_value).rjust(width) if w in g else "".rjust(width) for w in windows)
        lines.append(f"{gender:<8}Effect   {eff}")
        lines.append(f"{'':<8}p-value  {pv}")
    return "\n".join(lines)


TABLE_TITLES = {
    "violation": "Inhibitory effects on violations of high-risk players",
    "violated_DM": "Avoidance effects on being violated in DM",
    "violated_AC": "Avoidance effects on being violated in AC",
}
COHORT_TITLES = {"all": "", "twice": " (players messaged twice)", "thrice": " (players messaged three or more times)"}


def render_report(rows, night: list[NightSummary] | None = None,
                  balance: list[BalanceRow] | None = None, metric: str = "player",
                  header: dict | None = None) -> str:
    out = []
    for k, v in (header or {}).items():
        out.append(f"# {k}={v}")
    out.append("Effects are (x_c - x_i) / x_c; p-values from two-sided Fisher exact tests.")
    out.append(f"Rates use the '{metric}' metric. *x* marks p < {ALPHA}.")
    out.append("")
    if balance:
        out.append("Basic statistics of the trial")
        for b in balance:
            out.append(f"{b.gender}: cumulative {b.cumulative_i}/{b.cumulative_c}, unique {b.unique_i}/{b.unique_c}")
            out.append(f"  avatar age {b.age_i[0]:.3f} (+-{b.age_i[1]:.3f}) vs {b.age_c[0]:.3f} "
                       f"(+-{b.age_c[1]:.3f}), p={_cell(b.age_p, 3)}")
            out.append(f"  usage days {b.usage_i[0]:.3f} (+-{b.usage_i[1]:.3f}) vs {b.usage_c[0]:.3f} "
                       f"(+-{b.usage_c[1]:.3f}), p={_cell(b.usage_p, 3)}")
            out.append(f"  1 time {100 * b.once_i:.2f}% vs {100 * b.once_c:.2f}%, p={_cell(b.once_p, 3)}; "
                       f"5 times or more {100 * b.five_i:.2f}% vs {100 * b.five_c:.2f}%, p={_cell(b.five_p, 3)}")
        out.append("")
    for cohort in COHORTS:
        for outcome in OUTCOMES:
            sel = [r for r in rows if r.cohort == cohort and r.outcome == outcome and r.metric == metric]
            if sel:
                out.append(render_effect_table(sel, TABLE_TITLES[outcome] + COHORT_TITLES[cohort]))
                out.append("")
    if night:
        out.append("Night usage (mean hourly DM/AC windows per day, 20:00-04:59, 84 days)")
        out.append("Gender  Group         " + "".join(f"{q * 100:>8.1f}%" for q in NightUsage.QUANTILES))
        for nu in night:
            for arm in Arm:
                qs = "".join(f"{v:>9.3f}" for v in (nu.q_i if arm == Arm.intervention else nu.q_c))
                label = nu.gender if arm == Arm.intervention else ""
                out.append(f"{label:<8}{arm.name.capitalize():<14}{qs}")
            out.append(f"{'':<8}rank-sum p = {_cell(nu.p_value)}")
        out.append("")
    return "\n".join(out)
