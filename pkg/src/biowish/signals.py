"""Recordings, low-pass/resample preprocessing and overlapping framing."""
from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import filtfilt, resample_poly

ACTIVITIES = ("Lying", "Sitting", "Standing", "Walking")
POSITIONS = ("Pulmonary", "Aortic", "Xiphoid", "Mitral", "Tricuspid")
SIGNAL_KINDS = ("SCG", "GCG")
CSV_HEADER = ["t", "ax", "ay", "az", "gx", "gy", "gz"]

TARGET_RATE_HZ = 60.0
CUTOFF_HZ = 25.0
NUM_TAPS = 101


class RecordingError(ValueError):
    """Malformed or unusable recording data."""


class ZeroFramesError(ValueError):
    """Signal shorter than one frame."""


@dataclass(frozen=True)
class RecordingMeta:
    subject_id: str = ""
    session: int = 1
    activity: str = "Lying"
    position: str = "Pulmonary"
    signal_kind: str = "SCG"


@dataclass(frozen=True)
class Recording:
    channels: np.ndarray  # (3, N)
    sample_rate_hz: float
    meta: RecordingMeta = field(default_factory=RecordingMeta)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != 3:
            raise RecordingError(f"channels must have shape (3, N), got {ch.shape}")
        if ch.shape[1] < 1:
            raise RecordingError("recording has no samples")
        if not np.all(np.isfinite(ch)):
            raise RecordingError("recording contains non-finite samples")
        if not self.sample_rate_hz > 2 * CUTOFF_HZ:
            raise RecordingError(
                f"sample rate {self.sample_rate_hz} Hz does not cover the {CUTOFF_HZ} Hz band")
        object.__setattr__(self, "channels", ch)

    @property
    def n_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class PreprocessedSignal:
    channels: np.ndarray  # (3, M)
    sample_rate_hz: float = TARGET_RATE_HZ
    meta: RecordingMeta = field(default_factory=RecordingMeta)

    @property
    def duration_s(self) -> float:
        return self.channels.shape[1] / self.sample_rate_hz


@dataclass(frozen=True)
class FramingConfig:
    frame_len_s: float = 5.0
    overlap_fraction: float = 0.8
    rate_hz: float = TARGET_RATE_HZ

    def __post_init__(self):
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError(f"overlap must lie in [0, 1), got {self.overlap_fraction}")
        if abs(self.frame_len_s * self.rate_hz - self.frame_samples) > 1e-9:
            raise ValueError("frame length times rate must be an integer number of samples")

    @property
    def hop_s(self) -> float:
        return self.frame_len_s * (1.0 - self.overlap_fraction)

    @property
    def frame_samples(self) -> int:
        return int(round(self.frame_len_s * self.rate_hz))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_s * self.rate_hz))


@dataclass(frozen=True)
class Frame:
    phi: np.ndarray  # (3, 300)
    meta: RecordingMeta = field(default_factory=RecordingMeta)
    start: int = 0


# ---------------------------------------------------------------------------
# I/O

def load_recording(path, meta: RecordingMeta | None = None,
                   sample_rate_hz: float | None = None) -> tuple[Recording, Recording]:
    """Read a ``t,ax,ay,az,gx,gy,gz`` CSV into an (SCG, GCG) recording pair.

    The sample rate is inferred from the median timestamp step unless a
    declared rate is given; a declared rate that disagrees with the
    timestamps by more than 1% is rejected.
    """
    path = Path(path)
    meta = meta or RecordingMeta()
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RecordingError(f"{path}: no samples (empty file)")
        if [h.strip() for h in header] != CSV_HEADER:
            raise RecordingError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise RecordingError(
                    f"{path}: row {row_no} (line {row_no + 1}): expected {len(CSV_HEADER)} "
                    f"values, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise RecordingError(f"{path}: row {row_no} (line {row_no + 1}): {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise RecordingError(
                    f"{path}: row {row_no} (line {row_no + 1}): non-finite sample")
            if rows and vals[0] <= rows[-1][0]:
                raise RecordingError(
                    f"{path}: row {row_no} (line {row_no + 1}): timestamps not strictly increasing")
            rows.append(vals)
    if not rows:
        raise RecordingError(f"{path}: no samples")
    data = np.asarray(rows)
    if len(data) < 2:
        if sample_rate_hz is None:
            raise RecordingError(f"{path}: cannot infer sample rate from a single row")
        rate = float(sample_rate_hz)
    else:
        inferred = 1.0 / float(np.median(np.diff(data[:, 0])))
        rate = inferred if sample_rate_hz is None else float(sample_rate_hz)
        if abs(inferred - rate) > 0.01 * rate:
            raise RecordingError(
                f"{path}: declared rate {rate} Hz disagrees with timestamps ({inferred:.3f} Hz)")
    scg = Recording(data[:, 1:4].T.copy(), rate, replace(meta, signal_kind="SCG"))
    gcg = Recording(data[:, 4:7].T.copy(), rate, replace(meta, signal_kind="GCG"))
    return scg, gcg


def write_recording(path, scg: Recording, gcg: Recording) -> None:
    if scg.n_samples != gcg.n_samples or scg.sample_rate_hz != gcg.sample_rate_hz:
        raise RecordingError("SCG and GCG recordings must share length and rate")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(scg.n_samples) / scg.sample_rate_hz
    table = np.column_stack([t, scg.channels.T, gcg.channels.T])
    with path.open("w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        np.savetxt(fh, table, fmt=["%.9f"] + ["%.10g"] * 6, delimiter=",")


# ---------------------------------------------------------------------------
# Filtering and resampling

def design_lowpass(cutoff_hz: float = CUTOFF_HZ, sample_rate_hz: float = 120.0,
                   num_taps: int = NUM_TAPS) -> np.ndarray:
    """Linear-phase Hamming-windowed sinc low-pass kernel with unit DC gain."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={sample_rate_hz / 2} Hz)")
    fc = cutoff_hz / sample_rate_hz
    n = np.arange(num_taps) - (num_taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(num_taps)
    return h / h.sum()


def frequency_response(kernel: np.ndarray, freq_hz, sample_rate_hz: float) -> np.ndarray:
    """Magnitude of the kernel's DTFT at the given frequencies."""
    freq = np.atleast_1d(np.asarray(freq_hz, dtype=float))
    n = np.arange(len(kernel))
    phase = np.exp(-2j * np.pi * np.outer(freq / sample_rate_hz, n))
    return np.abs(phase @ kernel)


def preprocess(rec: Recording, target_rate_hz: float = TARGET_RATE_HZ,
               cutoff_hz: float = CUTOFF_HZ) -> PreprocessedSignal:
    """Zero-phase low-pass at ``cutoff_hz`` then resample to ``target_rate_hz``."""
    rate = rec.sample_rate_hz
    if rate < target_rate_hz:
        raise ValueError(f"unsupported rate {rate} Hz: upsampling to {target_rate_hz} Hz is not implemented")
    h = design_lowpass(cutoff_hz, rate)
    x = rec.channels
    padlen = min(3 * len(h), x.shape[1] - 1)
    y = filtfilt(h, [1.0], x, axis=1, padtype="even", padlen=padlen)
    ratio = rate / target_rate_hz
    if abs(ratio - round(ratio)) < 1e-6:
        y = y[:, :: int(round(ratio))]
    else:
        frac = Fraction(target_rate_hz / rate).limit_denominator(1000)
        y = resample_poly(y, frac.numerator, frac.denominator, axis=1)
    return PreprocessedSignal(np.ascontiguousarray(y), target_rate_hz, rec.meta)


# ---------------------------------------------------------------------------
# Framing

def frame_count(duration_s: float, cfg: FramingConfig = FramingConfig()) -> int:
    """Number of complete frames: floor(1 + (T/L - 1) / (1 - O))."""
    L, O = cfg.frame_len_s, cfg.overlap_fraction
    if duration_s < L - 1e-9:
        raise ZeroFramesError(f"duration {duration_s} s is shorter than one {L} s frame")
    # rounding guards against 1/(1-O) landing a hair below an integer
    return int(math.floor(round(1 + (duration_s / L - 1) / (1 - O), 9)))


def frame_array(sig: PreprocessedSignal, cfg: FramingConfig = FramingConfig()) -> np.ndarray:
    """All frames as a read-only ``(K, 3, frame_samples)`` view of the signal."""
    if abs(sig.sample_rate_hz - cfg.rate_hz) > 1e-9:
        raise ValueError(f"signal rate {sig.sample_rate_hz} Hz differs from framing rate {cfg.rate_hz} Hz")
    n = sig.channels.shape[1]
    size, hop = cfg.frame_samples, cfg.hop_samples
    if n < size:
        raise ZeroFramesError(f"signal of {n} samples is shorter than one {size}-sample frame")
    windows = sliding_window_view(sig.channels, size, axis=1)[:, ::hop]
    return windows.transpose(1, 0, 2)


def frame_signal(sig: PreprocessedSignal, cfg: FramingConfig = FramingConfig()) -> list[Frame]:
    frames = frame_array(sig, cfg)
    return [Frame(phi, sig.meta, i * cfg.hop_samples) for i, phi in enumerate(frames)]
