"""Deterministic synthetic SCG/GCG recordings.

Each subject gets a heartbeat rate and, per sensor kind and axis, a pulse
template built from damped sinusoids. Recordings are a jittered beat train
convolved with those templates, modulated by session drift and activity
(posture noise band, template gain, gait bursts while walking), plus white
measurement noise. Nothing here is physiological; it only has to be
learnable in the same ways the real signals are.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .signals import ACTIVITIES, POSITIONS, Recording, RecordingMeta, write_recording

N_COMPONENTS = 2
KIND_SCALE = {"SCG": 0.1, "GCG": 2.0}


@dataclass(frozen=True)
class ActivityStyle:
    gain: float
    noise_level: float
    noise_band: tuple[float, float]
    heart_rate_factor: float
    gait: bool = False
    artifact_factor: float = 1.0


# Sitting and Standing share gain and overlap in noise band: the designed hard pair.
ACTIVITY_STYLES = {
    "Lying": ActivityStyle(1.00, 0.03, (3.0, 5.0), 1.00, artifact_factor=0.5),
    "Sitting": ActivityStyle(0.85, 0.30, (6.0, 10.0), 1.05),
    "Standing": ActivityStyle(0.85, 0.30, (8.5, 12.5), 1.10),
    "Walking": ActivityStyle(0.75, 0.30, (3.0, 8.0), 1.30, gait=True, artifact_factor=1.5),
}


@dataclass(frozen=True)
class SynthConfig:
    rate_hz: float = 120.0
    separability: float = 1.0    # 0: every subject shares the base template
    drift_hz: float = 1.0        # max session-2 resonance shift
    amp_jitter: float = 0.3      # max session-2 relative amplitude change
    beat_jitter: float = 0.03    # per-beat period jitter (fraction)
    measurement_noise: float = 0.02
    activity_noise: float = 1.0  # scales every activity noise level
    gait_gain: float = 3.0
    beat_amp_jitter: float = 0.15   # per-beat relative amplitude spread
    respiration_depth: float = 0.2  # amplitude modulation at the breathing rate
    heart_rate_drift: float = 0.1   # max session-2 relative heart-rate change
    noise_spread: float = 0.3       # subject-specific log-spread of posture noise levels
    band_spread_hz: float = 0.3     # subject-specific shift of posture noise bands
    artifact_level: float = 0.1     # broadband motion artifacts with a random 1 s envelope
    latent_dims: int = 4            # size of the shared morphology factor behind every template
    residual: float = 0.3           # share of template variation not explained by that factor


@dataclass
class SubjectProfile:
    subject_id: str
    heart_rate_hz: float
    # kind -> (3 axes, N_COMPONENTS, [amplitude, frequency_hz, decay_s, phase])
    templates: dict[str, np.ndarray]
    # session -> kind -> (amplitude factors per axis (3,), frequency shift in Hz)
    session_drift: dict[int, dict[str, tuple[np.ndarray, float]]]
    gait_hz: float
    breathing_hz: float = 0.25
    session_heart_factor: dict[int, float] = field(default_factory=lambda: {1: 1.0, 2: 1.0})
    noise_scale: dict[str, float] = field(default_factory=dict)
    band_shift_hz: float = 0.0
    activity_modifiers: dict[str, ActivityStyle] = field(default_factory=lambda: dict(ACTIVITY_STYLES))

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "heart_rate_hz": self.heart_rate_hz,
            "gait_hz": self.gait_hz,
            "breathing_hz": self.breathing_hz,
            "session_heart_factor": {str(k): v for k, v in self.session_heart_factor.items()},
            "noise_scale": dict(self.noise_scale),
            "band_shift_hz": self.band_shift_hz,
            "templates": {k: v.tolist() for k, v in self.templates.items()},
            "session_drift": {
                str(s): {k: [a.tolist(), f] for k, (a, f) in d.items()}
                for s, d in self.session_drift.items()
            },
            "activity_modifiers": {k: asdict(v) for k, v in self.activity_modifiers.items()},
        }


def _key(*parts) -> int:
    return zlib.crc32("/".join(str(p) for p in parts).encode())


def _identity_offsets(base_rng, rng, shape, z, residual):
    """Unit-variance per-parameter offsets: shared latent loadings plus an idiosyncratic part."""
    loading = base_rng.normal(0.0, 1.0 / np.sqrt(len(z)), shape + (len(z),))
    return np.sqrt(1.0 - residual ** 2) * (loading @ z) + residual * rng.normal(size=shape)


def generate_profile(seed: int, subject_id: str, cfg: SynthConfig = SynthConfig()) -> SubjectProfile:
    base_rng = np.random.default_rng([seed, 0])
    rng = np.random.default_rng([seed, _key("subject", subject_id)])
    s = cfg.separability
    # one low-dimensional morphology factor per subject drives both sensor kinds
    z = rng.normal(size=cfg.latent_dims)
    templates = {}
    drift = {1: {}, 2: {}}
    shape = (3, N_COMPONENTS)
    for kind in KIND_SCALE:
        base_amp = base_rng.uniform(0.5, 1.0, shape)
        base_freq = base_rng.uniform(8.0, 16.0, shape)
        base_decay = base_rng.uniform(0.06, 0.10, shape)
        base_phase = base_rng.uniform(0, 2 * np.pi, shape)
        u = [_identity_offsets(base_rng, rng, shape, z, cfg.residual) for _ in range(4)]
        amp = base_amp * np.exp(s * 0.35 * u[0])
        freq = np.clip(base_freq + s * 3.5 * u[1], 5.0, 22.0)
        decay = base_decay * np.exp(s * 0.17 * u[2])
        phase = base_phase + s * 0.87 * u[3]
        templates[kind] = np.stack([amp, freq, decay, phase], axis=-1)
        drift[1][kind] = (np.ones(3), 0.0)
        drift[2][kind] = (1.0 + rng.uniform(-cfg.amp_jitter, cfg.amp_jitter, 3),
                          float(rng.uniform(-cfg.drift_hz, cfg.drift_hz)))
    heart = 1.2 + s * rng.uniform(-0.3, 0.3)
    return SubjectProfile(
        subject_id, float(heart), templates, drift,
        gait_hz=float(rng.uniform(1.5, 2.5)),
        breathing_hz=float(rng.uniform(0.2, 0.33)),
        session_heart_factor={1: 1.0, 2: float(1.0 + rng.uniform(-cfg.heart_rate_drift,
                                                                   cfg.heart_rate_drift))},
        noise_scale={a: float(np.exp(rng.normal(0.0, cfg.noise_spread))) for a in ACTIVITIES},
        band_shift_hz=float(rng.normal(0.0, cfg.band_spread_hz)) if cfg.band_spread_hz else 0.0,
    )


def _template_kernel(params: np.ndarray, rate: float, shift_hz: float, gain: np.ndarray,
                     length_s: float = 0.6) -> np.ndarray:
    """Per-axis pulse shapes, shape (3, n)."""
    t = np.arange(int(length_s * rate)) / rate
    onset = 1.0 - np.exp(-t / 0.01)
    out = np.zeros((3, len(t)))
    for axis in range(3):
        for amp, freq, decay, phase in params[axis]:
            f = min(max(freq + shift_hz, 4.0), 23.0)
            out[axis] += amp * np.exp(-t / decay) * np.sin(2 * np.pi * f * t + phase)
        out[axis] *= onset * gain[axis]
    return out


def _band_noise(rng, n: int, rate: float, band: tuple[float, float]) -> np.ndarray:
    spec = np.fft.rfft(rng.normal(size=(3, n)), axis=1)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spec[:, (freqs < band[0]) | (freqs > band[1])] = 0
    x = np.fft.irfft(spec, n=n, axis=1)
    return x / (x.std(axis=1, keepdims=True) + 1e-12)


def _position_gain(seed: int, subject_id: str, kind: str, position: str) -> np.ndarray:
    rng = np.random.default_rng([seed, _key("position", subject_id, kind, position)])
    return np.exp(rng.normal(0.0, 0.15, 3))


def synthesize_recording(profile: SubjectProfile, session: int, activity: str, position: str,
                         duration_s: float = 120.0, seed: int = 0,
                         cfg: SynthConfig = SynthConfig()) -> tuple[Recording, Recording]:
    """One SCG+GCG recording pair at ``cfg.rate_hz``."""
    if activity not in profile.activity_modifiers:
        raise ValueError(f"unknown activity {activity!r}")
    if session not in profile.session_drift:
        raise ValueError(f"unknown session {session!r}")
    if duration_s < 5.0:
        raise ValueError("duration must cover at least one 5 s frame")
    style = profile.activity_modifiers[activity]
    rate = cfg.rate_hz
    n = int(round(duration_s * rate))
    rng = np.random.default_rng([seed, _key(profile.subject_id, session, activity, position)])

    # jittered heartbeat train shared by both sensor kinds
    hr = profile.heart_rate_hz * style.heart_rate_factor * profile.session_heart_factor[session]
    periods = (1.0 / hr) * (1.0 + rng.uniform(-cfg.beat_jitter, cfg.beat_jitter, int(duration_s * hr) + 4))
    beats = np.cumsum(periods) - rng.uniform(0, 1.0 / hr)
    beats = beats[(beats >= 0) & (beats < duration_s)]
    train = np.zeros(n)
    beat_amp = np.maximum(0.0, 1.0 + cfg.beat_amp_jitter * rng.normal(size=len(beats)))
    beat_amp *= 1.0 + cfg.respiration_depth * np.sin(
        2 * np.pi * profile.breathing_hz * beats + rng.uniform(0, 2 * np.pi))
    train[np.minimum((beats * rate).round().astype(int), n - 1)] = beat_amp

    if style.gait:
        steps = np.arange(rng.uniform(0, 1.0 / profile.gait_hz), duration_s, 1.0 / profile.gait_hz)
        step_train = np.zeros(n)
        step_train[np.minimum((steps * rate).round().astype(int), n - 1)] = 1.0
        pulse = np.hanning(int(0.25 * rate))

    out = []
    for kind, scale in KIND_SCALE.items():
        amp_factor, shift = profile.session_drift[session][kind]
        gain = style.gain * amp_factor * _position_gain(seed, profile.subject_id, kind, position)
        kernel = _template_kernel(profile.templates[kind], rate, shift, gain)
        x = np.stack([np.convolve(train, kernel[a])[:n] for a in range(3)])
        level = cfg.activity_noise * style.noise_level * profile.noise_scale.get(activity, 1.0)
        lo, hi = style.noise_band
        band = (max(0.5, lo + profile.band_shift_hz), max(1.0, hi + profile.band_shift_hz))
        x += level * _band_noise(rng, n, rate, band)
        if cfg.artifact_level:
            env = np.repeat(np.exp(rng.normal(0.0, 0.7, int(np.ceil(duration_s)) + 1)), int(rate))[:n]
            x += cfg.artifact_level * style.artifact_factor * env * _band_noise(rng, n, rate, (1.0, 20.0))
        if style.gait:
            axis_mix = np.array([0.6, 0.3, 1.0]) * cfg.gait_gain
            gait = np.convolve(step_train, pulse)[:n]
            x += axis_mix[:, None] * (gait - gait.mean())
        x += cfg.measurement_noise * rng.normal(size=(3, n))
        meta = RecordingMeta(profile.subject_id, session, activity, position, kind)
        out.append(Recording(scale * x, rate, meta))
    return out[0], out[1]


def subject_ids(n: int) -> list[str]:
    return [f"S{i + 1:02d}" for i in range(n)]


class SyntheticCorpus:
    """In-memory corpus with the same access pattern as an on-disk dataset."""

    def __init__(self, n_subjects: int = 16, seed: int = 0, cfg: SynthConfig = SynthConfig(),
                 duration_s: float = 120.0):
        self.seed = seed
        self.cfg = cfg
        self.duration_s = duration_s
        self.subjects = subject_ids(n_subjects)
        self.sessions = (1, 2)
        self.profiles = {s: generate_profile(seed, s, cfg) for s in self.subjects}

    @lru_cache(maxsize=None)
    def recording(self, subject: str, session: int, activity: str, position: str):
        return synthesize_recording(self.profiles[subject], session, activity, position,
                                    self.duration_s, self.seed, self.cfg)


def write_corpus(root, n_subjects: int = 16, seed: int = 0, cfg: SynthConfig = SynthConfig(),
                 duration_s: float = 120.0, activities=ACTIVITIES, positions=POSITIONS) -> Path:
    """Materialize ``root/<subject>/<session>/<activity>/<position>.csv`` plus ``manifest.json``."""
    root = Path(root)
    corpus = SyntheticCorpus(n_subjects, seed, cfg, duration_s)
    for subject in corpus.subjects:
        for session in corpus.sessions:
            for activity in activities:
                for position in positions:
                    scg, gcg = corpus.recording(subject, session, activity, position)
                    write_recording(root / subject / str(session) / activity / f"{position}.csv",
                                    scg, gcg)
    manifest = {
        "sample_rate_hz": cfg.rate_hz,
        "subjects": corpus.subjects,
        "sessions": list(corpus.sessions),
        "activities": list(activities),
        "positions": list(positions),
        "generator": {"seed": seed, "duration_s": duration_s, **asdict(cfg)},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return root
