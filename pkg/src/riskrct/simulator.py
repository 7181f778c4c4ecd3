"""Agent-based generator of a synthetic avatar platform.

A population of players with latent traits sits on a static
preferential-attachment friendship backbone.  Each simulated day players
log in, act across the five interaction layers and occasionally commit
grooming-related violations in AC/DM.  Received warning messages lower a
responsive player's violation hazard and shift their chat activity out of
the night hours; the effect decays with time and habituates with repeats.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .domain import CHAT_LAYERS, N_LAYERS, EventLog, Gender, Layer, Population
from .randomness import keyed_uniform

NIGHT_HOURS = np.array([20, 21, 22, 23, 0, 1, 2, 3, 4], dtype=np.int8)
DAY_HOURS = np.arange(5, 20, dtype=np.int8)

# keyed stream identifiers
_S_GENDER, _S_AGE, _S_INSTALL, _S_PRED, _S_PROP, _S_SUSC, _S_RESP = range(1, 8)
_S_ACTIVITY, _S_NIGHT, _S_RATE = 8, 9, 10
_S_LOGIN, _S_COUNT, _S_MODE, _S_PICK, _S_HOUR, _S_HOURPICK, _S_VIOL, _S_DETECT = range(20, 28)
_MAX_PER_LAYER = 1 << 12


@dataclass
class SimConfig:
    population: int = 20000
    female_ratio: float = 0.61
    # avatar age ~ age_min + Gamma with the given mean and sd
    age_min: int = 10
    age_mean: float = 23.5
    age_sd: float = 10.0
    install_span_days: int = 730
    predator_fraction: float = 0.12
    predator_male_share: float = 0.45
    # Beta(mean, concentration) parameters of the latent traits
    predator_propensity_mean: float = 0.35
    background_propensity_mean: float = 0.01
    susceptibility_mean_female: float = 0.45
    susceptibility_mean_male: float = 0.2
    minor_susceptibility_boost: float = 1.5
    responsiveness_female: float = 0.97
    responsiveness_male: float = 0.03
    trait_concentration: float = 8.0
    # daily activity
    login_mean: float = 0.45
    login_concentration: float = 3.0
    rate_ac: float = 1.0
    rate_dm: float = 0.7
    rate_comment: float = 0.35
    rate_follow: float = 0.12
    rate_like: float = 0.7
    rate_dispersion: float = 0.5
    predator_dm_boost: float = 2.0
    backbone_degree: int = 3
    friend_share: float = 0.75
    pursuit_size: int = 6
    pursuit_share: float = 0.6
    # night activity
    night_share: float = 0.3
    predator_night_boost: float = 1.6
    night_multiplier: float = 3.0
    # how strongly a message moves a responsive player's chat out of night hours
    night_shift_gain: float = 3.0
    # violations and moderation
    violation_hazard: float = 0.12
    detection_prob: float = 0.01
    # intervention response: 1 - e0 * h**(n-1) * exp(-days/tau)
    response_e0: float = 0.2
    response_tau: float = 42.0
    response_habituation: float = 0.5
    horizon_days: int = 341
    seed: int = 20220213

    _PROBABILITIES = (
        "female_ratio", "predator_fraction", "predator_male_share",
        "predator_propensity_mean", "background_propensity_mean",
        "susceptibility_mean_female", "susceptibility_mean_male",
        "responsiveness_female", "responsiveness_male", "login_mean",
        "friend_share", "pursuit_share", "night_share", "violation_hazard",
        "detection_prob", "response_e0", "response_habituation",
    )

    def validate(self) -> "SimConfig":
        for name in self._PROBABILITIES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.population < 1:
            raise ValueError(f"population must be >= 1, got {self.population}")
        if self.response_tau <= 0:
            raise ValueError(f"response_tau must be > 0, got {self.response_tau}")
        if self.horizon_days < 1:
            raise ValueError(f"horizon_days must be >= 1, got {self.horizon_days}")
        if self.age_sd <= 0 or self.age_mean <= self.age_min:
            raise ValueError("age distribution needs age_sd > 0 and age_mean > age_min")
        for name in ("trait_concentration", "login_concentration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("rate_ac", "rate_dm", "rate_comment", "rate_follow", "rate_like",
                     "rate_dispersion", "predator_dm_boost", "predator_night_boost",
                     "night_multiplier", "minor_susceptibility_boost", "night_shift_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.backbone_degree < 1 or self.pursuit_size < 1:
            raise ValueError("backbone_degree and pursuit_size must be >= 1")
        return self

    @property
    def layer_rates(self) -> np.ndarray:
        return np.array([self.rate_ac, self.rate_dm, self.rate_comment,
                         self.rate_follow, self.rate_like])

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes).validate()


def intervention_response(days_since_last, repeat_count, e0: float, tau: float,
                          habituation: float):
    """Hazard multiplier after a warning message.

    ``1 - e0 * habituation**(repeat_count-1) * exp(-days_since_last/tau)``;
    equals 1 exactly when e0 == 0 and tends to 1 as days grow.
    """
    days = np.asarray(days_since_last, dtype=np.float64)
    reps = np.asarray(repeat_count, dtype=np.float64)
    out = 1.0 - e0 * np.power(habituation, reps - 1.0) * np.exp(-days / tau)
    return float(out) if out.ndim == 0 else out


class InterventionHistory:
    """Days on which each player received a message."""

    def __init__(self, n_players: int):
        self.last_day = np.full(n_players, -1, dtype=np.int32)
        self.count = np.zeros(n_players, dtype=np.int32)
        self.days: dict[int, list[int]] = {}

    def record(self, day: int, player_ids) -> None:
        ids = np.unique(np.asarray(player_ids, dtype=np.int64))
        if not len(ids):
            return
        if np.any((self.count[ids] > 0) & (self.last_day[ids] >= day)):
            raise ValueError(f"intervention days must be strictly increasing (day {day})")
        self.last_day[ids] = day
        self.count[ids] += 1
        for i in ids.tolist():
            self.days.setdefault(i, []).append(day)

    def response(self, day: int, cfg: SimConfig) -> np.ndarray:
        """Raw response multiplier per player for ``day`` (1 when never messaged)."""
        out = np.ones(len(self.count))
        got = self.count > 0
        out[got] = intervention_response(day - self.last_day[got], self.count[got],
                                         cfg.response_e0, cfg.response_tau,
                                         cfg.response_habituation)
        return out


@dataclass
class WorldState:
    config: SimConfig
    population: Population
    day: int
    backbone_offsets: np.ndarray
    backbone_targets: np.ndarray
    pursuit: np.ndarray
    login_prob: np.ndarray
    night_pref: np.ndarray
    rates: np.ndarray
    history: InterventionHistory
    logs: list = field(default_factory=list)

    def event_log(self) -> EventLog:
        return EventLog.concat(self.logs)


def _beta_ppf(u, mean, conc):
    mean = np.clip(mean, 1e-6, 1 - 1e-6)
    return stats.beta.ppf(u, mean * conc, (1 - mean) * conc)


def _backbone(n: int, m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    # Barabasi-Albert growth; undirected edges stored both ways in CSR form
    rng = np.random.default_rng([seed, 0xBB])
    m = min(m, max(n - 1, 0))
    src, dst = [], []
    pool: list[int] = list(range(m))
    for v in range(m, n):
        chosen: set[int] = set()
        while len(chosen) < m:
            chosen.add(pool[int(rng.integers(len(pool)))])
        for u in chosen:
            src += [u, v]
            dst += [v, u]
        pool.extend(chosen)
        pool.extend([v] * m)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, src + 1, 1)
    return np.cumsum(offsets), dst.astype(np.int32)


def generate_population(config: SimConfig) -> WorldState:
    """Draw players, traits, backbone and per-player behaviour parameters."""
    cfg = config.validate()
    n = cfg.population
    seed = cfg.seed
    ids = np.arange(n, dtype=np.int64)
    u = lambda stream, k=0: keyed_uniform(seed, stream, -1, ids, k)  # noqa: E731

    female = u(_S_GENDER) < cfg.female_ratio
    gender = np.where(female, Gender.female, Gender.male).astype(np.int8)
    shape = ((cfg.age_mean - cfg.age_min) / cfg.age_sd) ** 2
    scale = cfg.age_sd ** 2 / (cfg.age_mean - cfg.age_min)
    age = (cfg.age_min + np.floor(stats.gamma.ppf(u(_S_AGE), shape, scale=scale))).astype(np.int32)
    install = -1 - np.floor(u(_S_INSTALL) * cfg.install_span_days).astype(np.int32)

    # predators split by gender so that the overall fraction is predator_fraction
    p_pred = np.where(female, cfg.predator_fraction * (1 - cfg.predator_male_share) / max(cfg.female_ratio, 1e-12),
                      cfg.predator_fraction * cfg.predator_male_share / max(1 - cfg.female_ratio, 1e-12))
    predator = u(_S_PRED) < np.clip(p_pred, 0, 1)
    conc = cfg.trait_concentration
    prop = np.where(predator, _beta_ppf(u(_S_PROP), cfg.predator_propensity_mean, conc),
                    _beta_ppf(u(_S_PROP), cfg.background_propensity_mean, conc))
    susc_mean = np.where(female, cfg.susceptibility_mean_female, cfg.susceptibility_mean_male)
    susc = _beta_ppf(u(_S_SUSC), susc_mean, conc)
    susc = np.clip(susc * np.where(age < 18, cfg.minor_susceptibility_boost, 1.0), 0.0, 1.0)
    resp_mean = np.where(female, cfg.responsiveness_female, cfg.responsiveness_male)
    resp = _beta_ppf(u(_S_RESP), resp_mean, conc) if conc else resp_mean
    resp = np.where(resp_mean <= 0, 0.0, np.where(resp_mean >= 1, 1.0, resp))

    pop = Population(gender, age, install, np.asarray(prop, float), np.asarray(susc, float),
                     np.asarray(resp, float), np.full(n, -1, dtype=np.int32))

    login = _beta_ppf(u(_S_ACTIVITY), cfg.login_mean, cfg.login_concentration)
    night = np.clip(_beta_ppf(u(_S_NIGHT), cfg.night_share, 6.0)
                    * np.where(predator, cfg.predator_night_boost, 1.0), 0.0, 0.95)
    rates = np.empty((n, N_LAYERS))
    for layer in range(N_LAYERS):
        z = special.ndtri(np.clip(u(_S_RATE, layer), 1e-12, 1 - 1e-12))
        s = cfg.rate_dispersion
        rates[:, layer] = cfg.layer_rates[layer] * np.exp(s * z - s * s / 2)
    boost = np.ones(N_LAYERS)
    boost[Layer.DM] = cfg.predator_dm_boost
    boost[Layer.Follow] = boost[Layer.Like] = 1.5
    rates[predator] *= boost

    offsets, targets = _backbone(n, cfg.backbone_degree, seed)
    rng = np.random.default_rng([seed, 0x9A])
    w = susc ** 2 + 1e-12
    cdf = np.cumsum(w / w.sum())
    pursuit = np.searchsorted(cdf, rng.random((n, cfg.pursuit_size)), side="right")
    pursuit = np.minimum(pursuit, n - 1)
    clash = pursuit == ids[:, None]
    pursuit[clash] = (pursuit[clash] + 1) % n
    pursuit = np.where(predator[:, None], pursuit, -1).astype(np.int32)

    return WorldState(cfg, pop, 0, offsets, targets, pursuit, np.asarray(login, float),
                      np.asarray(night, float), rates, InterventionHistory(n))


def _within_group_index(counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    return np.arange(total) - starts


def step_day(state: WorldState, active_interventions: InterventionHistory | None = None) -> EventLog:
    """Generate one day of events, append them to the state and advance the day."""
    cfg = state.config
    if state.day >= cfg.horizon_days:
        raise ValueError(f"day {state.day} is past the horizon of {cfg.horizon_days} days")
    history = active_interventions if active_interventions is not None else state.history
    pop = state.population
    n = len(pop)
    d = state.day
    seed = cfg.seed
    ids = np.arange(n, dtype=np.int64)

    # effective multiplier: 1 - responsiveness * (1 - raw response)
    effect = 1.0 - pop.responsiveness * (1.0 - history.response(d, cfg))

    active = ids[keyed_uniform(seed, _S_LOGIN, d, ids) < state.login_prob]
    actors, layers, ks = [], [], []
    for layer in range(N_LAYERS):
        lam = state.rates[active, layer]
        c = stats.poisson.ppf(keyed_uniform(seed, _S_COUNT, d, active, layer), lam)
        c = np.minimum(np.nan_to_num(c, nan=0.0), _MAX_PER_LAYER - 1).astype(np.int64)
        actors.append(np.repeat(active, c))
        layers.append(np.full(int(c.sum()), layer, dtype=np.int8))
        ks.append(_within_group_index(c))
    actor = np.concatenate(actors)
    layer = np.concatenate(layers)
    key = layer.astype(np.int64) * _MAX_PER_LAYER + np.concatenate(ks)

    # partner choice: pursuit list, backbone neighbour, or degree-weighted stranger
    u_mode = keyed_uniform(seed, _S_MODE, d, actor, key)
    u_pick = keyed_uniform(seed, _S_PICK, d, actor, key)
    is_pred = state.pursuit[actor, 0] >= 0
    seek = np.where(is_pred, cfg.pursuit_share, 0.0)
    deg = state.backbone_offsets[actor + 1] - state.backbone_offsets[actor]
    friend = (~(u_mode < seek)) & (u_mode < seek + (1 - seek) * cfg.friend_share) & (deg > 0)
    target = np.empty(len(actor), dtype=np.int64)
    pur = u_mode < seek
    slot = np.minimum((u_pick * cfg.pursuit_size).astype(np.int64), cfg.pursuit_size - 1)
    target[pur] = state.pursuit[actor[pur], slot[pur]]
    nb = state.backbone_offsets[actor[friend]] + np.minimum(
        (u_pick[friend] * deg[friend]).astype(np.int64), deg[friend] - 1)
    target[friend] = state.backbone_targets[nb]
    stranger = ~(pur | friend)
    degree_all = np.diff(state.backbone_offsets).astype(np.float64) + 1.0
    cdf = np.cumsum(degree_all)
    target[stranger] = np.minimum(np.searchsorted(cdf, u_pick[stranger] * cdf[-1], side="right"), n - 1)
    clash = target == actor
    target[clash] = (target[clash] + 1) % n

    # hours: night share shrinks for messaged, responsive players
    shift = np.clip(1.0 - cfg.night_shift_gain * (1.0 - effect), 0.0, 1.0)
    night_p = state.night_pref[actor] * shift[actor]
    night = keyed_uniform(seed, _S_HOUR, d, actor, key) < night_p
    u_h = keyed_uniform(seed, _S_HOURPICK, d, actor, key)
    hour = np.where(night, NIGHT_HOURS[np.minimum((u_h * 9).astype(np.int64), 8)],
                    DAY_HOURS[np.minimum((u_h * 15).astype(np.int64), 14)]).astype(np.int8)

    chat = np.isin(layer, [int(x) for x in CHAT_LAYERS])
    night_factor = np.where(night, 1.0 + (cfg.night_multiplier - 1.0) * effect[target], 1.0)
    hazard = (cfg.violation_hazard * pop.predator_propensity[actor]
              * pop.victim_susceptibility[target] * night_factor * effect[actor])
    violation = chat & (keyed_uniform(seed, _S_VIOL, d, actor, key) < np.minimum(hazard, 1.0))

    detected = violation & (keyed_uniform(seed, _S_DETECT, d, actor, key) < cfg.detection_prob)
    caught = np.unique(actor[detected])
    caught = caught[pop.penalty_day[caught] < 0]
    pop.penalty_day[caught] = d + 1

    log = EventLog(np.full(len(actor), d, dtype=np.int32), hour, layer, actor, target,
                   violation, validate=False)
    state.logs.append(log)
    state.day = d + 1
    return log


def simulate(config: SimConfig, days: int | None = None) -> WorldState:
    """Population plus ``days`` (default: the full horizon) of free-running steps."""
    state = generate_population(config)
    for _ in range(config.horizon_days if days is None else days):
        step_day(state)
    return state
