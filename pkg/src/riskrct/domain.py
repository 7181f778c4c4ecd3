"""Players, interaction events, multiplex graphs, node features and labels."""
from __future__ import annotations

import enum
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

FEATURE_WINDOW_DAYS = 14
LABEL_WINDOW_DAYS = 7


class Layer(enum.IntEnum):
    AC = 0
    DM = 1
    Comment = 2
    Follow = 3
    Like = 4

    @classmethod
    def parse(cls, value) -> "Layer":
        if isinstance(value, Layer):
            return value
        if isinstance(value, str):
            try:
                return cls[value]
            except KeyError:
                raise ValueError(f"unknown layer {value!r}") from None
        try:
            return cls(int(value))
        except ValueError:
            raise ValueError(f"unknown layer {value!r}") from None


LAYERS = tuple(Layer)
N_LAYERS = len(LAYERS)
CHAT_LAYERS = (Layer.AC, Layer.DM)


class Gender(enum.IntEnum):
    female = 0
    male = 1


@dataclass(frozen=True)
class PlayerRecord:
    player_id: int
    avatar_gender: Gender
    avatar_age: int
    install_day: int
    penalized: bool = False
    # simulator-only latent traits
    predator_propensity: float = 0.0
    victim_susceptibility: float = 0.0
    responsiveness: float = 0.0

    def __post_init__(self):
        if self.avatar_age < 0:
            raise ValueError("avatar_age must be >= 0")
        for name in ("predator_propensity", "victim_susceptibility", "responsiveness"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class InteractionEvent:
    day: int
    hour: int
    layer: Layer
    actor: int
    target: int
    violation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer", Layer.parse(self.layer))
        if self.actor == self.target:
            raise ValueError("actor and target must differ")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour out of range: {self.hour}")
        if self.violation and self.layer not in CHAT_LAYERS:
            raise ValueError("violations only occur in AC or DM")


@dataclass
class Population:
    """Columnar player table; row ``i`` holds player_id ``i``."""

    gender: np.ndarray
    age: np.ndarray
    install_day: np.ndarray
    predator_propensity: np.ndarray
    victim_susceptibility: np.ndarray
    responsiveness: np.ndarray
    penalty_day: np.ndarray  # -1 when never penalized

    def __len__(self) -> int:
        return len(self.gender)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    @property
    def female(self) -> np.ndarray:
        return self.gender == Gender.female

    def penalized_by(self, day: int) -> np.ndarray:
        return (self.penalty_day >= 0) & (self.penalty_day <= day)

    def record(self, player_id: int, as_of_day: int | None = None) -> PlayerRecord:
        i = int(player_id)
        pd_ = int(self.penalty_day[i])
        penalized = pd_ >= 0 and (as_of_day is None or pd_ <= as_of_day)
        return PlayerRecord(
            i, Gender(int(self.gender[i])), int(self.age[i]), int(self.install_day[i]),
            penalized, float(self.predator_propensity[i]),
            float(self.victim_susceptibility[i]), float(self.responsiveness[i]),
        )

    def records(self, as_of_day: int | None = None) -> list[PlayerRecord]:
        return [self.record(i, as_of_day) for i in range(len(self))]

    @classmethod
    def from_records(cls, records: Sequence[PlayerRecord]) -> "Population":
        records = sorted(records, key=lambda r: r.player_id)
        if [r.player_id for r in records] != list(range(len(records))):
            raise ValueError("player ids must be 0..n-1 and unique")
        return cls(
            np.array([int(r.avatar_gender) for r in records], dtype=np.int8),
            np.array([r.avatar_age for r in records], dtype=np.int32),
            np.array([r.install_day for r in records], dtype=np.int32),
            np.array([r.predator_propensity for r in records], dtype=np.float64),
            np.array([r.victim_susceptibility for r in records], dtype=np.float64),
            np.array([r.responsiveness for r in records], dtype=np.float64),
            np.array([0 if r.penalized else -1 for r in records], dtype=np.int32),
        )

    _FIELDS = ("gender", "age", "install_day", "predator_propensity",
               "victim_susceptibility", "responsiveness", "penalty_day")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Population):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in self._FIELDS)

    def write_csv(self, path, header: dict | None = None) -> None:
        lines = [f"# {k}={v}" for k, v in (header or {}).items()]
        lines.append("player_id," + ",".join(self._FIELDS))
        cols = [getattr(self, f) for f in self._FIELDS]
        for i in range(len(self)):
            lines.append(",".join([str(i)] + [repr(float(c[i])) if c.dtype.kind == "f" else str(int(c[i]))
                                              for c in cols]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read_csv(cls, path) -> tuple["Population", dict]:
        import pandas as pd

        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
        if list(frame["player_id"]) != list(range(len(frame))):
            raise ValueError(f"{path}: player ids must be 0..n-1")
        pop = cls(
            frame["gender"].to_numpy(np.int8), frame["age"].to_numpy(np.int32),
            frame["install_day"].to_numpy(np.int32),
            frame["predator_propensity"].to_numpy(np.float64),
            frame["victim_susceptibility"].to_numpy(np.float64),
            frame["responsiveness"].to_numpy(np.float64),
            frame["penalty_day"].to_numpy(np.int32),
        )
        return pop, read_header(path)


_COLUMNS = ("day", "hour", "layer", "actor", "target", "violation")
_DTYPES = (np.int32, np.int8, np.int8, np.int32, np.int32, np.bool_)


class EventLog:
    """Columnar, day-sorted event storage.

    Rows are kept in nondecreasing ``day`` order so day windows are
    contiguous slices.
    """

    __slots__ = _COLUMNS

    def __init__(self, day=(), hour=(), layer=(), actor=(), target=(), violation=(), *, validate=True):
        cols = [np.ascontiguousarray(np.asarray(c).astype(t, copy=False)) for c, t in
                zip((day, hour, layer, actor, target, violation), _DTYPES)]
        n = len(cols[0])
        if any(len(c) != n for c in cols):
            raise ValueError("event columns differ in length")
        for name, col in zip(_COLUMNS, cols):
            setattr(self, name, col)
        if validate and n:
            self._validate()

    def _validate(self):
        if np.any((self.layer < 0) | (self.layer >= N_LAYERS)):
            bad = self.layer[(self.layer < 0) | (self.layer >= N_LAYERS)][0]
            raise ValueError(f"unknown layer {int(bad)}")
        if np.any(self.actor == self.target):
            raise ValueError("event with actor == target")
        if np.any((self.hour < 0) | (self.hour > 23)):
            raise ValueError("hour out of range")
        if np.any(self.violation & (self.layer > Layer.DM)):
            raise ValueError("violation outside AC/DM")
        if np.any(np.diff(self.day) < 0):
            order = np.argsort(self.day, kind="stable")
            for name in _COLUMNS:
                setattr(self, name, getattr(self, name)[order])

    @classmethod
    def empty(cls) -> "EventLog":
        return cls()

    @classmethod
    def from_events(cls, events: Iterable[InteractionEvent]) -> "EventLog":
        events = list(events)
        return cls(
            [e.day for e in events], [e.hour for e in events],
            [int(Layer.parse(e.layer)) for e in events],
            [e.actor for e in events], [e.target for e in events],
            [bool(e.violation) for e in events],
        )

    @classmethod
    def concat(cls, logs: Sequence["EventLog"]) -> "EventLog":
        logs = [g for g in logs if len(g)]
        if not logs:
            return cls()
        out = cls.__new__(cls)
        for name in _COLUMNS:
            setattr(out, name, np.concatenate([getattr(g, name) for g in logs]))
        if np.any(np.diff(out.day) < 0):
            out._validate()
        return out

    def __len__(self) -> int:
        return len(self.day)

    def __iter__(self) -> Iterator[InteractionEvent]:
        for row in zip(*(getattr(self, c).tolist() for c in _COLUMNS)):
            d, h, layer, a, t, v = row
            yield InteractionEvent(d, h, Layer(layer), a, t, v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in _COLUMNS)

    def take(self, idx) -> "EventLog":
        out = EventLog.__new__(EventLog)
        for name in _COLUMNS:
            setattr(out, name, getattr(self, name)[idx])
        return out

    def window(self, start_day: int, end_day: int) -> "EventLog":
        """Events with start_day <= day <= end_day (inclusive)."""
        lo = np.searchsorted(self.day, start_day, side="left")
        hi = np.searchsorted(self.day, end_day, side="right")
        return self.take(slice(lo, hi))

    @property
    def last_day(self) -> int:
        return int(self.day[-1]) if len(self) else -1

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in _COLUMNS:
            h.update(getattr(self, name).tobytes())
        return h.hexdigest()


# --- event log file format ---------------------------------------------------

EVENT_LOG_FIELDS = "day,hour,layer,actor,target,violation"


def write_event_log(path, log: EventLog, header: dict | None = None) -> None:
    """Write one event per line: day,hour,layer,actor,target,violation.

    ``header`` entries become leading ``# key=value`` lines.
    """
    buf = io.StringIO()
    for k, v in (header or {}).items():
        buf.write(f"# {k}={v}\n")
    buf.write(EVENT_LOG_FIELDS + "\n")
    if len(log):
        names = np.array([layer.name for layer in LAYERS])
        cols = np.column_stack([
            log.day.astype(str), log.hour.astype(str), names[log.layer],
            log.actor.astype(str), log.target.astype(str),
            log.violation.astype(np.int8).astype(str),
        ])
        np.savetxt(buf, cols, fmt="%s", delimiter=",")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_header(path) -> dict:
    header = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    return header


def read_event_log(path) -> tuple[EventLog, dict]:
    import pandas as pd

    header = read_header(path)
    frame = pd.read_csv(path, comment="#", dtype={"layer": str})
    if list(frame.columns) != EVENT_LOG_FIELDS.split(","):
        raise ValueError(f"{path}: unexpected columns {list(frame.columns)}")
    codes = {layer.name: int(layer) for layer in LAYERS}
    layer = frame["layer"].map(codes)
    if layer.isna().any():
        bad = frame["layer"][layer.isna()].iloc[0]
        raise ValueError(f"unknown layer {bad!r}")
    log = EventLog(
        frame["day"].to_numpy(), frame["hour"].to_numpy(), layer.to_numpy(),
        frame["actor"].to_numpy(), frame["target"].to_numpy(),
        frame["violation"].to_numpy().astype(bool),
    )
    return log, header


# --- multiplex graph ---------------------------------------------------------

@dataclass
class LayerEdges:
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class MultiplexGraph:
    nodes: np.ndarray
    window: tuple[int, int]
    layers: dict[Layer, LayerEdges] = field(default_factory=dict)

    def edge_weight(self, layer, actor: int, target: int) -> int:
        e = self.layers[Layer.parse(layer)]
        hit = np.flatnonzero((e.src == actor) & (e.dst == target))
        return int(e.weight[hit[0]]) if len(hit) else 0

    def total_weight(self) -> int:
        return int(sum(int(e.weight.sum()) for e in self.layers.values()))

    def to_bytes(self) -> bytes:
        parts = [np.asarray(self.window, dtype=np.int64).tobytes(), self.nodes.tobytes()]
        for layer in LAYERS:
            e = self.layers[layer]
            parts += [e.src.tobytes(), e.dst.tobytes(), e.weight.tobytes()]
        return b"".join(parts)


def _check_window(window) -> tuple[int, int]:
    start, end = int(window[0]), int(window[1])
    if end < start:
        raise ValueError(f"empty window {window}")
    return start, end


def build_multiplex_graph(events, window) -> MultiplexGraph:
    """Count in-window events per (layer, actor, target) into weighted edges."""
    start, end = _check_window(window)
    log = events if isinstance(events, EventLog) else EventLog.from_events(events)
    log = log.window(start, end)
    if len(log) and (log.layer.min() < 0 or log.layer.max() >= N_LAYERS):
        raise ValueError("event with unknown layer")
    layers = {}
    actor = log.actor.astype(np.int64)
    target = log.target.astype(np.int64)
    span = int(max(actor.max(), target.max())) + 1 if len(log) else 1
    for layer in LAYERS:
        m = log.layer == layer
        keys, counts = np.unique(actor[m] * span + target[m], return_counts=True)
        layers[layer] = LayerEdges(
            (keys // span).astype(np.int32), (keys % span).astype(np.int32),
            counts.astype(np.int32),
        )
    nodes = np.unique(np.concatenate([log.actor, log.target])).astype(np.int32)
    return MultiplexGraph(nodes, (start, end), layers)


# --- node features -----------------------------------------------------------

FEATURE_NAMES = (
    "avatar_age", "gender_female", "gender_male", "friend_count",
    "days_since_install", *(f"rate_{layer.name}" for layer in LAYERS),
    "login_days",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureVector:
    avatar_age: float
    gender_onehot: tuple[float, float]
    friend_count: int
    days_since_install: int
    activity_rates: tuple[float, ...]
    login_days_in_window: int

    def as_array(self) -> np.ndarray:
        return np.array([
            self.avatar_age, *self.gender_onehot, self.friend_count,
            self.days_since_install, *self.activity_rates, self.login_days_in_window,
        ], dtype=np.float64)


def _mutual_follow_counts(log: EventLog, n_players: int) -> np.ndarray:
    # pairs that followed each other within the (already windowed) log
    m = log.layer == Layer.Follow
    a = log.actor[m].astype(np.int64)
    t = log.target[m].astype(np.int64)
    if not len(a):
        return np.zeros(n_players, dtype=np.int64)
    fwd = np.unique(a * n_players + t)
    rev = (fwd % n_players) * n_players + fwd // n_players
    mutual = fwd[np.isin(fwd, rev, assume_unique=True)]
    return np.bincount(mutual // n_players, minlength=n_players)[:n_players]


def feature_matrix(players, events: EventLog, window) -> np.ndarray:
    """Metadata features for every player (rows indexed by player_id)."""
    start, end = _check_window(window)
    n = len(players)
    w = events.window(start, end)
    counts = np.zeros((n, N_LAYERS))
    np.add.at(counts, (w.actor, w.layer), 1.0)
    active = np.unique(w.actor.astype(np.int64) * (end - start + 1) + (w.day - start))
    login_days = np.bincount(active // (end - start + 1), minlength=n)[:n].astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(login_days[:, None] > 0, counts / np.maximum(login_days, 1)[:, None], 0.0)
    friends = _mutual_follow_counts(w, n)
    female = (players.gender == Gender.female).astype(np.float64)
    X = np.column_stack([
        players.age.astype(np.float64), female, 1.0 - female, friends.astype(np.float64),
        np.maximum(end + 1 - players.install_day, 0).astype(np.float64), rates, login_days,
    ])
    return X


def compute_metadata_features(player: PlayerRecord, events, window) -> FeatureVector:
    """Feature vector of one player over ``window``.

    Login days are days with at least one event by the player; a player with
    none gets all-zero rates rather than an error.
    """
    start, end = _check_window(window)
    log = events if isinstance(events, EventLog) else EventLog.from_events(events)
    w = log.window(start, end)
    mine = w.actor == player.player_id
    days = np.unique(w.day[mine])
    login_days = len(days)
    counts = np.bincount(w.layer[mine], minlength=N_LAYERS)
    rates = tuple(float(c) / login_days if login_days else 0.0 for c in counts)
    f = w.layer == Layer.Follow
    out_ = set(w.target[f & (w.actor == player.player_id)].tolist())
    in_ = set(w.actor[f & (w.target == player.player_id)].tolist())
    female = player.avatar_gender == Gender.female
    return FeatureVector(
        avatar_age=float(player.avatar_age),
        gender_onehot=(1.0, 0.0) if female else (0.0, 1.0),
        friend_count=len(out_ & in_),
        days_since_install=max(end + 1 - player.install_day, 0),
        activity_rates=rates,
        login_days_in_window=login_days,
    )


# --- labels ------------------------------------------------------------------

@dataclass(frozen=True)
class LabelSet:
    inference_day: int
    positives: frozenset

    @property
    def window(self) -> tuple[int, int]:
        return self.inference_day - LABEL_WINDOW_DAYS, self.inference_day - 1

    def __getitem__(self, player_id: int) -> bool:
        return player_id in self.positives

    def label(self, player_id: int) -> bool:
        return player_id in self.positives


def label_window(inference_day: int) -> tuple[int, int]:
    if inference_day < LABEL_WINDOW_DAYS + 1:
        raise ValueError(f"inference_day must be >= {LABEL_WINDOW_DAYS + 1}, got {inference_day}")
    return inference_day - LABEL_WINDOW_DAYS, inference_day - 1


def assign_labels(events, inference_day: int) -> LabelSet:
    """Players who committed a violation in the 7 days before ``inference_day``."""
    start, end = label_window(inference_day)
    log = events if isinstance(events, EventLog) else EventLog.from_events(events)
    w = log.window(start, end)
    return LabelSet(inference_day, frozenset(np.unique(w.actor[w.violation]).tolist()))


def violating_pairs(events: EventLog, inference_day: int) -> np.ndarray:
    """Unique (actor, target) rows of violations in the label window."""
    start, end = label_window(inference_day)
    w = events.window(start, end)
    pairs = np.column_stack([w.actor[w.violation], w.target[w.violation]]).astype(np.int64)
    if not len(pairs):
        return pairs.reshape(0, 2)
    return np.unique(pairs, axis=0)
