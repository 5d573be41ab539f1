"""FMCW chirp synthesis and conditioning of received audio.

The ring transmits one linear up-chirp per frame and restarts it at phase
zero every frame, so a received frame is (to first order) a sum of circularly
delayed copies of the template. Everything downstream relies on that.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInputError, ParameterError

PCM_FULL_SCALE = 32767
TAPER_LEN = 32
TRANSITION_HZ = 500.0


@dataclass(frozen=True)
class ChirpParams:
    f_start: float = 20000.0
    f_end: float = 24000.0
    sample_rate: float = 50000.0
    frame_len: int = 600
    amplitude: float = 1.0
    taper: bool = False

    def __post_init__(self):
        if not 0 < self.f_start < self.f_end < self.sample_rate / 2:
            raise ParameterError(
                f"need 0 < f_start < f_end < sample_rate/2, got "
                f"{self.f_start}, {self.f_end}, {self.sample_rate}"
            )
        if int(self.frame_len) != self.frame_len or self.frame_len < 2:
            raise ParameterError(f"frame_len must be an integer >= 2, got {self.frame_len}")
        if not 0 < self.amplitude <= 1:
            raise ParameterError(f"amplitude must lie in (0, 1], got {self.amplitude}")
        if self.taper and self.frame_len < 2 * TAPER_LEN:
            raise ParameterError("frame too short for the edge taper")

    @property
    def duration(self) -> float:
        return self.frame_len / self.sample_rate


@dataclass(frozen=True, eq=False)
class Waveform:
    """Real-valued samples on a monotonic timeline starting at ``start_time``."""

    samples: np.ndarray
    sample_rate: float
    start_time: float = 0.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ParameterError("sample_rate must be positive")
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ParameterError("samples must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and self.start_time == other.start_time
            and np.array_equal(self.samples, other.samples)
        )


def instantaneous_frequency(params: ChirpParams, t):
    """Instantaneous frequency (Hz) of the chirp at time ``t`` within a frame."""
    slope = (params.f_end - params.f_start) / params.duration
    return params.f_start + slope * np.asarray(t, dtype=np.float64)


def generate_chirp(params: ChirpParams | None = None) -> Waveform:
    """One frame of a linear up-chirp with zero phase at sample 0."""
    params = params or ChirpParams()
    t = np.arange(params.frame_len) / params.sample_rate
    slope = (params.f_end - params.f_start) / params.duration
    phase = 2 * np.pi * (params.f_start * t + 0.5 * slope * t * t)
    samples = params.amplitude * np.sin(phase)
    if params.taper:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(TAPER_LEN) / TAPER_LEN)
        samples[:TAPER_LEN] *= ramp
        samples[-TAPER_LEN:] *= ramp[::-1]
    return Waveform(samples, params.sample_rate)


def transmit(params: ChirpParams | None = None, n_frames: int = 1, start_time: float = 0.0) -> Waveform:
    """Frame-periodic transmission: the chirp repeated ``n_frames`` times."""
    if n_frames < 1:
        raise ParameterError("n_frames must be >= 1")
    frame = generate_chirp(params)
    return Waveform(np.tile(frame.samples, n_frames), frame.sample_rate, start_time)


def bandpass_gain(freqs, lo: float, hi: float, transition: float = TRANSITION_HZ):
    """Zero-phase magnitude response: flat on [lo, hi], raised-cosine skirts outside."""
    f = np.asarray(freqs, dtype=np.float64)
    gain = np.zeros_like(f)
    gain[(f >= lo) & (f <= hi)] = 1.0
    below = (f > lo - transition) & (f < lo)
    gain[below] = 0.5 + 0.5 * np.cos(np.pi * (lo - f[below]) / transition)
    above = (f > hi) & (f < hi + transition)
    gain[above] = 0.5 + 0.5 * np.cos(np.pi * (f[above] - hi) / transition)
    return gain


def _check_band(lo, hi, sample_rate):
    if not 0 < lo < hi < sample_rate / 2:
        raise ParameterError(f"band [{lo}, {hi}] must satisfy 0 < lo < hi < {sample_rate / 2}")


def bandpass_array(x: np.ndarray, sample_rate: float, lo: float, hi: float) -> np.ndarray:
    """Band-pass along the last axis of ``x`` (circular, zero-phase)."""
    _check_band(lo, hi, sample_rate)
    n = x.shape[-1]
    gain = bandpass_gain(np.fft.rfftfreq(n, 1.0 / sample_rate), lo, hi)
    return np.fft.irfft(np.fft.rfft(x, axis=-1) * gain, n=n, axis=-1)


def bandpass(w: Waveform, lo: float = 20000.0, hi: float = 24000.0) -> Waveform:
    """Frequency-domain band-pass filter.

    Content in [lo, hi] passes with unit gain. A 500 Hz raised-cosine skirt
    lies outside each band edge, and anything further out is removed
    entirely. The filter is zero-phase and treats the input as one period
    of a periodic signal.
    """
    _check_band(lo, hi, w.sample_rate)
    if len(w) == 0:
        return w
    return Waveform(bandpass_array(w.samples, w.sample_rate, lo, hi), w.sample_rate, w.start_time)


def split_frames(w: Waveform, frame_len: int = 600) -> list[Waveform]:
    """Cut ``w`` into consecutive non-overlapping frames; the remainder is dropped."""
    if frame_len < 1:
        raise ParameterError("frame_len must be >= 1")
    n = len(w) // frame_len
    if n == 0:
        raise EmptyInputError(f"waveform of {len(w)} samples is shorter than one frame ({frame_len})")
    period = frame_len / w.sample_rate
    return [
        Waveform(w.samples[i * frame_len:(i + 1) * frame_len], w.sample_rate, w.start_time + i * period)
        for i in range(n)
    ]


# -- PCM / CSV exchange ------------------------------------------------------

def quantize(samples) -> np.ndarray:
    """Map amplitudes in [-1, 1] to int16 (round half away from zero, clipped)."""
    x = np.asarray(samples, dtype=np.float64) * PCM_FULL_SCALE
    q = np.sign(x) * np.floor(np.abs(x) + 0.5)
    return np.clip(q, -PCM_FULL_SCALE, PCM_FULL_SCALE).astype("<i2")


def dequantize(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / PCM_FULL_SCALE


def pcm_bytes(w: Waveform) -> bytes:
    return quantize(w.samples).tobytes()


def waveform_from_pcm(data: bytes, sample_rate: float = 50000.0, start_time: float = 0.0) -> Waveform:
    if len(data) % 2:
        raise ParameterError("PCM byte stream has odd length")
    return Waveform(dequantize(np.frombuffer(data, dtype="<i2")), sample_rate, start_time)


def write_pcm(path, w: Waveform) -> None:
    """Write raw mono 16-bit little-endian PCM (no header)."""
    Path(path).write_bytes(pcm_bytes(w))


def read_pcm(path, sample_rate: float = 50000.0) -> Waveform:
    return waveform_from_pcm(Path(path).read_bytes(), sample_rate)


def write_csv(path, w: Waveform) -> None:
    np.savetxt(path, w.samples, fmt="%.17g")


def read_csv(path, sample_rate: float = 50000.0) -> Waveform:
    return Waveform(np.atleast_1d(np.loadtxt(path, dtype=np.float64)), sample_rate)


def frames_per_second(params: ChirpParams | None = None) -> float:
    params = params or ChirpParams()
    return params.sample_rate / params.frame_len


def payload_bitrate(params: ChirpParams | None = None, bits: int = 16) -> float:
    """Raw PCM payload bit rate in bits/s."""
    params = params or ChirpParams()
    return params.sample_rate * bits

