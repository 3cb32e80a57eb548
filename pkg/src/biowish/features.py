"""Frame representations: the raw time matrix, log-PSD STFT tensor and averaged PSD.

All functions accept a single ``(3, 300)`` frame or a stack ``(N, 3, 300)``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signals import Frame

RATE_HZ = 60
FRAME_SAMPLES = 300
WINDOW = 60          # 1 s -> 1 Hz bin spacing
HOP = 6
N_WINDOWS = (FRAME_SAMPLES - WINDOW) // HOP + 1
N_BINS = 25          # 0..24 Hz
LOG_FLOOR = 1e-12

assert N_WINDOWS == 41, "window/hop must yield 41 STFT columns per frame"

_HAMMING = np.hamming(WINDOW)
_HAMMING.setflags(write=False)
_PSD_SCALE = 1.0 / (RATE_HZ * float(np.sum(_HAMMING ** 2)))


def _phi(frame) -> np.ndarray:
    return frame.phi if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)


def time_matrix(frame) -> np.ndarray:
    return _phi(frame)


def stft_power(frame) -> np.ndarray:
    """Linear one-sided PSD over all 31 DFT bins: shape ``(..., 31, 41, 3)``."""
    phi = _phi(frame)
    win = sliding_window_view(phi, WINDOW, axis=-1)[..., ::HOP, :]  # (..., 3, 41, 60)
    spec = np.fft.rfft(win * _HAMMING, n=WINDOW, axis=-1)
    power = (spec.real ** 2 + spec.imag ** 2) * _PSD_SCALE          # (..., 3, 41, 31)
    return np.moveaxis(power, -3, -1).swapaxes(-3, -2)


def stft_tensor(frame) -> np.ndarray:
    """Log-PSD tensor, shape ``(..., 25, 41, 3)`` (frequency, window, axis)."""
    return np.log(stft_power(frame)[..., :N_BINS, :, :] + LOG_FLOOR)


def avg_psd(frame) -> np.ndarray:
    """Log of the window-averaged linear PSD, axis-major (x bins 0-24, then y, then z)."""
    mean_power = stft_power(frame)[..., :N_BINS, :, :].mean(axis=-2)  # (..., 25, 3)
    return np.log(np.swapaxes(mean_power, -1, -2) + LOG_FLOOR).reshape(
        mean_power.shape[:-2] + (3 * N_BINS,))


def write_feature_dump(path, values: np.ndarray) -> None:
    """Raw dump: three little-endian int64 dimensions then float64 data, row-major."""
    values = np.asarray(values, dtype="<f8")
    if values.ndim > 3:
        raise ValueError(f"feature dumps hold at most 3 dimensions, got {values.ndim}")
    shape = (1,) * (3 - values.ndim) + values.shape
    with Path(path).open("wb") as fh:
        fh.write(np.asarray(shape, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(values).tobytes())


def read_feature_dump(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise ValueError(f"{path}: truncated feature dump")
    shape = tuple(int(v) for v in np.frombuffer(raw[:24], dtype="<i8"))
    data = np.frombuffer(raw[24:], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: header shape {shape} does not match {data.size} values")
    return data.reshape(shape).copy()
