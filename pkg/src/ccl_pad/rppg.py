"""Facial ROI intensity traces under periodic light, GrPPG-style extraction and PSD.

A live trace carries a pulse sinusoid; a periodically lit mask carries a
light sinusoid of the same kind, which a periodicity detector cannot tell
apart from a heartbeat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window

PULSE_BAND = (0.7, 4.0)
LUX_RANGE = (400.0, 1600.0)

# Relative reflectance and pulse strength per colour channel (R, G, B).
CHANNEL_REFLECTANCE = np.array([0.8, 0.6, 0.5])
CHANNEL_PULSE_WEIGHT = np.array([0.5, 1.0, 0.4])


class NyquistError(ValueError):
    pass


@dataclass(frozen=True)
class LightSchedule:
    mode: str = "constant"
    frequency: float = 0.0
    amplitude: float = 0.0
    base_lux: float = 1000.0

    def __post_init__(self):
        if self.mode not in ("constant", "periodic"):
            raise ValueError(f"unknown light mode {self.mode!r}")
        if self.mode == "periodic" and not PULSE_BAND[0] <= self.frequency <= PULSE_BAND[1]:
            raise ValueError(f"periodic light frequency {self.frequency} Hz outside {PULSE_BAND}")
        if not LUX_RANGE[0] <= self.base_lux <= LUX_RANGE[1]:
            raise ValueError(f"base_lux {self.base_lux} outside {LUX_RANGE}")

    @classmethod
    def random(cls, rng: np.random.Generator, amplitude: float = 0.01) -> "LightSchedule":
        return cls("periodic", float(rng.uniform(*PULSE_BAND)), amplitude, float(rng.uniform(*LUX_RANGE)))


@dataclass(frozen=True)
class RoiTrace:
    rgb: np.ndarray  # (3, T) mean intensity per channel
    frame_rate: float
    is_live: bool
    pulse_rate: float

    @property
    def duration(self) -> float:
        return self.rgb.shape[1] / self.frame_rate


def synth_trace(
    is_live: bool,
    pulse_rate: float,
    schedule: LightSchedule,
    duration: float = 10.0,
    frame_rate: float = 30.0,
    noise: float = 0.002,
    rng: np.random.Generator | None = None,
    pulse_amplitude: float = 0.01,
) -> RoiTrace:
    """Baseline x (1 + pulse + light) + white noise, per colour channel.

    ``pulse_amplitude``, ``schedule.amplitude`` and ``noise`` are relative to
    the channel baseline.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if duration < 2.0:
        raise ValueError("need at least 2 s of signal")
    fastest = max(pulse_rate if is_live else 0.0, schedule.frequency if schedule.mode == "periodic" else 0.0)
    if frame_rate < 2.0 * fastest:
        raise NyquistError(f"frame rate {frame_rate} Hz cannot represent {fastest} Hz")
    t = np.arange(int(round(duration * frame_rate))) / frame_rate
    baseline = schedule.base_lux / 10.0 * CHANNEL_REFLECTANCE[:, None]
    modulation = np.zeros((3, t.size))
    if is_live:
        phase = rng.uniform(0, 2 * np.pi)
        modulation += pulse_amplitude * CHANNEL_PULSE_WEIGHT[:, None] * np.sin(2 * np.pi * pulse_rate * t + phase)
    if schedule.mode == "periodic":
        phase = rng.uniform(0, 2 * np.pi)
        modulation += schedule.amplitude * np.sin(2 * np.pi * schedule.frequency * t + phase)
    rgb = baseline * (1.0 + modulation + noise * rng.standard_normal((3, t.size)))
    return RoiTrace(np.clip(rgb, 0.0, None), frame_rate, is_live, pulse_rate if is_live else 0.0)


def extract_rppg(trace: RoiTrace, window_s: float = 1.0) -> np.ndarray:
    """Channel average minus its 1 s moving average."""
    raw = trace.rgb.mean(axis=0)
    size = max(1, int(round(window_s * trace.frame_rate)))
    return raw - uniform_filter1d(raw, size=size, mode="nearest")


def psd(signal: np.ndarray, frame_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Hann periodogram normalised by the window energy.

    ``power.sum()`` equals the energy of the windowed, mean-removed signal
    divided by the window energy.
    """
    x = np.asarray(signal, dtype=np.float64)
    T = x.size
    if T < 4:
        raise ValueError("signal too short for a spectrum")
    w = get_window("hann", T)
    X = np.fft.rfft((x - x.mean()) * w)
    power = np.abs(X) ** 2
    power[1 : (T + 1) // 2] *= 2.0  # fold negative frequencies; DC and Nyquist appear once
    power /= T * np.sum(w**2)
    return np.arange(power.size) * frame_rate / T, power


def periodicity_score(freqs: np.ndarray, power: np.ndarray, band: tuple[float, float] = PULSE_BAND) -> tuple[float, float]:
    """(peak frequency in band, peak power / median in-band power)."""
    if band[1] > freqs[-1] + 1e-12:
        raise ValueError(f"band {band} exceeds Nyquist {freqs[-1]}")
    sel = (freqs >= band[0]) & (freqs <= band[1])
    if not sel.any():
        raise ValueError(f"no frequency bins inside {band}")
    f, p = freqs[sel], power[sel]
    k = int(np.argmax(p))
    median = float(np.median(p))
    score = float(p[k] / median) if median > 0 else (np.inf if p[k] > 0 else 0.0)
    return float(f[k]), score
