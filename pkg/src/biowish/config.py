"""Run configuration: TOML file -> frozen dataclasses, with a stable digest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .signals import ACTIVITIES, POSITIONS, SIGNAL_KINDS
from .verification import REPRESENTATIONS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FramingSection:
    frame_len_s: float = 5.0
    overlap_fraction: float = 0.8
    rate_hz: float = 60.0
    cutoff_hz: float = 25.0


@dataclass(frozen=True)
class NetworkSection:
    # channel multipliers; the full-size networks are width 1.0
    t_width: float = 1.0
    tf_width: float = 0.125
    dtype: str = "float32"
    dropout: float = 0.0


@dataclass(frozen=True)
class CESection:
    lr: float = 0.01
    batch: int = 16
    epochs: int = 12
    momentum: float = 0.9
    # keep every n-th session-1 frame of each negative subject
    negative_stride: int = 8


@dataclass(frozen=True)
class SiameseSection:
    lr: float = 0.01
    batch: int = 64
    margin: float = 1.0
    epochs: int = 40
    steps_per_epoch: int = 30
    momentum: float = 0.9
    frame_stride: int = 2


@dataclass(frozen=True)
class SvmSection:
    C: float = 1.0
    tol: float = 1e-3
    negative_stride: int = 8


@dataclass(frozen=True)
class ActivitySection:
    lr: float = 0.01
    batch: int = 16
    epochs: int = 4
    momentum: float = 0.9
    frame_stride: int = 4


@dataclass(frozen=True)
class ProtocolSection:
    train_subjects: int = 10
    iterations: int = 5
    enroll_s: float = 90.0
    probe_durations_s: tuple = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    positions: tuple = ("Pulmonary",)
    activities: tuple = ACTIVITIES
    signals: tuple = SIGNAL_KINDS
    representations: tuple = REPRESENTATIONS
    # session-2 frames of training subjects used as the z-norm cohort (every n-th)
    cohort_stride: int = 4
    two_stage_duration_s: float = 20.0
    evaluate_activity: bool = True


SECTIONS = {
    "framing": FramingSection,
    "network": NetworkSection,
    "ce": CESection,
    "siamese": SiameseSection,
    "svm": SvmSection,
    "activity": ActivitySection,
    "protocol": ProtocolSection,
}


@dataclass(frozen=True)
class RunConfig:
    root: str = "data"
    output: str = "results"
    seed: int = 0
    framing: FramingSection = field(default_factory=FramingSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    ce: CESection = field(default_factory=CESection)
    siamese: SiameseSection = field(default_factory=SiameseSection)
    svm: SvmSection = field(default_factory=SvmSection)
    activity: ActivitySection = field(default_factory=ActivitySection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """sha256 of the canonical JSON form; equal digests mean identical configurations."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: RunConfig) -> None:
    f, p = cfg.framing, cfg.protocol
    _check(f.frame_len_s > 0, "framing.frame_len_s must be positive")
    _check(0.0 <= f.overlap_fraction < 1.0, "framing.overlap_fraction must be in [0, 1)")
    _check(f.rate_hz == 60.0 and f.frame_len_s == 5.0,
           "framing.rate_hz = 60 and framing.frame_len_s = 5 are fixed by the network input shapes")
    _check(0 < f.cutoff_hz < f.rate_hz / 2, "framing.cutoff_hz must lie below the Nyquist rate")
    _check(0 < cfg.network.t_width <= 1 and 0 < cfg.network.tf_width <= 1,
           "network widths must be in (0, 1]")
    _check(cfg.network.dtype in ("float32", "float64"), "network.dtype must be float32 or float64")
    _check(0.0 <= cfg.network.dropout < 1.0, "network.dropout must be in [0, 1)")
    for name in ("ce", "siamese", "activity"):
        sec = getattr(cfg, name)
        _check(sec.lr > 0, f"{name}.lr must be positive")
        _check(sec.batch >= 2, f"{name}.batch must be at least 2")
        _check(sec.epochs >= 0, f"{name}.epochs must be non-negative")
        _check(0 <= sec.momentum < 1, f"{name}.momentum must be in [0, 1)")
    _check(cfg.siamese.margin > 0, "siamese.margin must be positive")
    _check(cfg.svm.C > 0 and cfg.svm.tol > 0, "svm.C and svm.tol must be positive")
    for name, value in (("ce.negative_stride", cfg.ce.negative_stride),
                        ("svm.negative_stride", cfg.svm.negative_stride),
                        ("siamese.frame_stride", cfg.siamese.frame_stride),
                        ("activity.frame_stride", cfg.activity.frame_stride),
                        ("protocol.cohort_stride", p.cohort_stride)):
        _check(int(value) >= 1, f"{name} must be at least 1")
    _check(p.train_subjects >= 2, "protocol.train_subjects must be at least 2")
    _check(p.iterations >= 1, "protocol.iterations must be at least 1")
    _check(p.enroll_s >= f.frame_len_s, "protocol.enroll_s must cover at least one frame")
    _check(all(d >= f.frame_len_s for d in p.probe_durations_s),
           "probe durations must cover at least one frame")
    _check(p.two_stage_duration_s >= f.frame_len_s, "protocol.two_stage_duration_s must cover at least one frame")
    _check(set(p.positions) <= set(POSITIONS), f"positions must be drawn from {POSITIONS}")
    _check(set(p.activities) <= set(ACTIVITIES), f"activities must be drawn from {ACTIVITIES}")
    _check(set(p.signals) <= set(SIGNAL_KINDS), f"signals must be drawn from {SIGNAL_KINDS}")
    _check(set(p.representations) <= set(REPRESENTATIONS),
           f"representations must be drawn from {REPRESENTATIONS}")
    _check(len(p.positions) and len(p.activities) and len(p.signals) and len(p.representations),
           "protocol lists must be non-empty")


def _as_float(value, section: str, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number")
    return float(value)


def _section(cls, table: dict, name: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(table) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    values = {}
    for key, value in table.items():
        default = known[key].default
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"[{name}] {key} must be a list")
            if default and isinstance(default[0], float):
                value = [_as_float(v, name, key) for v in value]
            value = tuple(value)
        elif isinstance(default, float):
            value = _as_float(value, name, key)
        elif isinstance(default, bool) != isinstance(value, bool) or not isinstance(value, type(default)):
            raise ConfigError(f"[{name}] {key} must be {type(default).__name__}")
        values[key] = value
    return cls(**values)


def from_dict(data: dict) -> RunConfig:
    top = {}
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            top[key] = _section(SECTIONS[key], value, key)
        elif key in ("root", "output"):
            top[key] = str(value)
        elif key == "seed":
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("seed must be an integer")
            top[key] = value
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    return RunConfig(**top)


def load_config(path) -> RunConfig:
    try:
        data = tomli.loads(Path(path).read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(data)


def dumps(cfg: RunConfig) -> str:
    """TOML text that ``load_config`` reads back to an equal configuration."""
    def fmt(v):
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    d = cfg.to_dict()
    lines = [f"{k} = {fmt(d[k])}" for k in ("root", "output", "seed")]
    for name in SECTIONS:
        lines.append(f"\n[{name}]")
        lines += [f"{k} = {fmt(v)}" for k, v in d[name].items()]
    return "\n".join(lines) + "\n"
