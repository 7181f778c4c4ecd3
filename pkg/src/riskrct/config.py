"""Run configuration: INI file with one section per stage, validated field by field."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .analysis import ANALYSIS_WINDOWS, METRICS, parse_windows, window_label
from .gnn import TrainHyper
from .pipeline import PipelineParams
from .riskmodel import TrainSettings
from .simulator import SimConfig
from .stacker import GbdtHyper
from .study import DEFAULT_MESSAGE, TrialSettings


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class TrainingSection:
    weak_day: int = 21
    stack_day: int = 28
    eval_day: int = 35
    stack_negative_ratio: int = 1

    def validate(self):
        if not 8 <= self.weak_day <= self.stack_day <= self.eval_day:
            raise ValueError("need 8 <= weak_day <= stack_day <= eval_day")
        if self.weak_day < 15:
            raise ValueError("weak_day must be >= 15 so a full 14-day feature window exists")
        if self.stack_negative_ratio < 1:
            raise ValueError("stack_negative_ratio must be >= 1")
        return self


@dataclass
class TrialSection:
    start_day: int = 35
    duration_days: int = 138
    follow_up_days: int = 168
    trial_seed: int = 20220213
    message: str = DEFAULT_MESSAGE

    def validate(self):
        TrialSettings(self.start_day, self.duration_days, self.follow_up_days,
                      self.trial_seed).validate()
        return self


@dataclass
class AnalysisSection:
    windows: str = ",".join(f"{lo}-{hi}" for lo, hi in ANALYSIS_WINDOWS)
    metric: str = "player"

    def validate(self):
        parse_windows(self.windows)
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        return self


@dataclass
class OutputSection:
    directory: str = "out"

    def validate(self):
        if not self.directory:
            raise ValueError("directory must be nonempty")
        return self


SECTIONS = {
    "simulation": SimConfig,
    "gat": TrainHyper,
    "gbdt": GbdtHyper,
    "training": TrainingSection,
    "pipeline": PipelineParams,
    "trial": TrialSection,
    "analysis": AnalysisSection,
    "output": OutputSection,
}
# sections left out of the config hash: where files go, and analysis choices
# that downstream stages record in their own headers
_UNHASHED = ("output", "analysis")


@dataclass
class RunConfig:
    simulation: SimConfig = field(default_factory=SimConfig)
    gat: TrainHyper = field(default_factory=TrainHyper)
    gbdt: GbdtHyper = field(default_factory=GbdtHyper)
    training: TrainingSection = field(default_factory=TrainingSection)
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    trial: TrialSection = field(default_factory=TrialSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    output: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            section = getattr(self, name)
            try:
                if hasattr(section, "validate"):
                    section.validate()
                elif hasattr(section, "__post_init__"):
                    section.__post_init__()
            except ValueError as exc:
                raise ConfigError(name + "." + _guess_field(section, str(exc)), str(exc)) from None
        need = self.trial.start_day + self.trial.duration_days + self.trial.follow_up_days
        if self.simulation.horizon_days < need:
            raise ConfigError("simulation.horizon_days",
                              f"must be >= trial start + duration + follow-up = {need}")
        if self.training.eval_day > self.trial.start_day:
            raise ConfigError("training.eval_day", "must not exceed trial.start_day")
        return self

    # views used by the stages
    def train_settings(self) -> TrainSettings:
        t = self.training
        return TrainSettings(t.weak_day, t.stack_day, t.eval_day, t.stack_negative_ratio,
                             self.gat, self.gbdt)

    def trial_settings(self) -> TrialSettings:
        t = self.trial
        return TrialSettings(t.start_day, t.duration_days, t.follow_up_days, t.trial_seed,
                             self.pipeline, t.message)

    def windows(self):
        return parse_windows(self.analysis.windows)

    # serialization
    def to_ini(self, include_unhashed: bool = True) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            if not include_unhashed and name in _UNHASHED:
                continue
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in _public_fields(section)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini(include_unhashed=False).encode("utf-8")).hexdigest()[:16]

    def header(self, **extra) -> dict:
        out = {"config_hash": self.config_hash(), "seed": self.simulation.seed,
               "trial_seed": self.trial.trial_seed}
        out.update(extra)
        return out

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply ``section.key`` -> value overrides; values are coerced like file values."""
        cfg = dataclasses.replace(self, **{n: dataclasses.replace(getattr(self, n)) for n in SECTIONS})
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            _assign(cfg, section, key, value)
        return cfg.validate()


def _public_fields(section):
    return [f for f in fields(section) if not f.name.startswith("_")]


def _guess_field(section, message: str) -> str:
    names = [f.name for f in _public_fields(section)]
    hits = [n for n in names if n in message]
    return max(hits, key=len) if hits else "?"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(kind, raw, name):
    text = str(raw).strip()
    try:
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            return float(text)
        if kind in (bool, "bool"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {getattr(kind, '__name__', kind)}") from None
    return str(raw)


def _assign(cfg: RunConfig, section: str, key: str, raw) -> None:
    if section not in SECTIONS:
        raise ConfigError(section, f"unknown section (expected one of {sorted(SECTIONS)})")
    obj = getattr(cfg, section)
    types = {f.name: f.type for f in _public_fields(obj)}
    if key not in types:
        raise ConfigError(f"{section}.{key}", "unknown key")
    object.__setattr__(obj, key, _coerce(types[key], raw, f"{section}.{key}"))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(source, f"malformed config: {exc}") from None
    cfg = RunConfig()
    if cp.defaults():
        raise ConfigError("DEFAULT", "keys outside a section are not allowed")
    for section in cp.sections():
        for key, value in cp[section].items():
            _assign(cfg, section, key, value)
    return cfg.validate()


def load_config(path) -> RunConfig:
    """Read and validate an INI config; unset fields keep their defaults."""
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_ini(), encoding="utf-8")


def describe_windows(cfg: RunConfig) -> list[str]:
    return [window_label(w) for w in cfg.windows()]
