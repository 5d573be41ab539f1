"""Echo frames and echo profiles.

An echo frame is the circular cross-correlation of one received frame with
the transmitted chirp, rotated so that the direct speaker-to-microphone path
sits at pixel 0 and cropped to the near range around the hand. Stacking
frames over time gives the original echo profile; first differences along
time give the differential profile.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import hilbert

from .chirp import Waveform, bandpass_gain
from .errors import EmptyInputError, ParameterError, SequencingError


@dataclass(frozen=True)
class EchoConfig:
    speed_of_sound: float = 343000.0  # mm/s
    sample_rate: float = 50000.0
    frame_len: int = 600
    crop_len: int = 54
    t0_estimation_frames: int = 20
    band: tuple = (20000.0, 24000.0)

    def __post_init__(self):
        if self.crop_len < 1 or self.crop_len > self.frame_len:
            raise ParameterError("need 1 <= crop_len <= frame_len")
        if self.t0_estimation_frames < 1:
            raise ParameterError("t0_estimation_frames must be >= 1")
        if self.speed_of_sound <= 0 or self.sample_rate <= 0:
            raise ParameterError("speed_of_sound and sample_rate must be positive")

    @property
    def pixel_pitch_mm(self) -> float:
        return self.speed_of_sound / (2 * self.sample_rate)

    @property
    def frame_period(self) -> float:
        return self.frame_len / self.sample_rate

    @property
    def crop_range_mm(self) -> float:
        return self.crop_len * self.pixel_pitch_mm


@dataclass(frozen=True, eq=False)
class EchoFrame:
    values: np.ndarray
    frame_index: int = 0
    t0_offset: int = 0

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ParameterError("echo frame values must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class EchoProfile:
    """Two-channel time-range image; rows are pixels, columns are frames."""

    original: np.ndarray
    differential: np.ndarray
    frame_period: float = 0.012
    start_frame_index: int = 0
    start_time: float = 0.0

    def __post_init__(self):
        o = np.array(self.original, dtype=np.float64)
        d = np.array(self.differential, dtype=np.float64)
        if o.ndim != 2 or o.shape != d.shape:
            raise ParameterError(f"channel shapes differ or are not 2-D: {o.shape} vs {d.shape}")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "original", o)
        object.__setattr__(self, "differential", d)

    @property
    def width(self) -> int:
        return self.original.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.original.shape[0]

    def column_times(self) -> np.ndarray:
        """Start time of each column's frame."""
        idx = self.start_frame_index + np.arange(self.width)
        return self.start_time + idx * self.frame_period

    def stacked(self) -> np.ndarray:
        """(2, pixels, width) array with the differential channel first."""
        return np.stack([self.differential, self.original])

    def columns(self, start: int, stop: int) -> "EchoProfile":
        return EchoProfile(
            self.original[:, start:stop],
            self.differential[:, start:stop],
            self.frame_period,
            self.start_frame_index + start,
            self.start_time,
        )

    def __eq__(self, other):
        if not isinstance(other, EchoProfile):
            return NotImplemented
        return (
            np.array_equal(self.original, other.original)
            and np.array_equal(self.differential, other.differential)
            and self.frame_period == other.frame_period
            and self.start_frame_index == other.start_frame_index
            and self.start_time == other.start_time
        )


def _as_array(x):
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def cross_correlate(rx_frame, template) -> np.ndarray:
    """Circular cross-correlation, ``out[k] = sum_n rx[(n + k) % L] * template[n]``."""
    if isinstance(rx_frame, Waveform) and isinstance(template, Waveform):
        if rx_frame.sample_rate != template.sample_rate:
            raise ParameterError("sample rates differ")
    rx = _as_array(rx_frame)
    tp = _as_array(template)
    if rx.shape != tp.shape or rx.ndim != 1:
        raise ParameterError(f"length mismatch: {rx.shape} vs {tp.shape}")
    n = rx.shape[0]
    return np.fft.irfft(np.fft.rfft(rx) * np.conj(np.fft.rfft(tp)), n=n)


def correlation_envelope(corr) -> np.ndarray:
    """Magnitude of the analytic signal of a (circular) correlation vector.

    The correlation of a 20-24 kHz chirp at 50 kHz oscillates with a period
    of about 2.3 samples, so its raw absolute value peaks up to two samples
    away from the true delay. The envelope peaks at the nearest sample.
    """
    corr = np.asarray(corr, dtype=np.float64)
    return np.abs(hilbert(corr, axis=-1))


def peak_pixel(corr) -> int:
    return int(np.argmax(correlation_envelope(corr)))


def estimate_t0(frames: Sequence, cfg: EchoConfig | None = None) -> int:
    """Direct-path pixel: lower median of per-frame envelope peaks over the first frames."""
    cfg = cfg or EchoConfig()
    frames = list(frames)
    if not frames:
        raise EmptyInputError("no correlation frames to estimate t0 from")
    peaks = sorted(peak_pixel(f) for f in frames[:cfg.t0_estimation_frames])
    return peaks[(len(peaks) - 1) // 2]


def crop_frame(corr, t0: int, cfg: EchoConfig | None = None, frame_index: int = 0) -> EchoFrame:
    """Take ``crop_len`` values starting at ``t0``, wrapping circularly."""
    cfg = cfg or EchoConfig()
    corr = np.asarray(corr, dtype=np.float64)
    idx = (int(t0) + np.arange(cfg.crop_len)) % corr.shape[0]
    return EchoFrame(corr[idx], frame_index, int(t0))


def pixel_to_distance(p, cfg: EchoConfig | None = None):
    cfg = cfg or EchoConfig()
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ParameterError("pixel index must be non-negative")
    d = p * cfg.pixel_pitch_mm
    return float(d) if d.ndim == 0 else d


def distance_to_pixel(d, cfg: EchoConfig | None = None):
    cfg = cfg or EchoConfig()
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ParameterError("distance must be non-negative")
    p = np.rint(2 * d * cfg.sample_rate / cfg.speed_of_sound).astype(int)
    return int(p) if p.ndim == 0 else p


def build_profile(
    frames: Sequence[EchoFrame], frame_period: float = 0.012, start_time: float = 0.0
) -> EchoProfile:
    frames = list(frames)
    if not frames:
        raise EmptyInputError("no echo frames")
    lengths = {len(f) for f in frames}
    if len(lengths) != 1:
        raise ParameterError(f"echo frames have differing lengths {sorted(lengths)}")
    for a, b in zip(frames, frames[1:]):
        if b.frame_index != a.frame_index + 1:
            raise SequencingError(f"frame {b.frame_index} does not follow {a.frame_index}")
    original = np.stack([f.values for f in frames], axis=1)
    differential = np.zeros_like(original)
    differential[:, 1:] = original[:, 1:] - original[:, :-1]
    return EchoProfile(original, differential, frame_period, frames[0].frame_index, start_time)


class EchoProcessor:
    """Band-pass, correlate and crop received frames against a fixed template.

    The band-pass gain is folded into the conjugated template spectrum, so
    each frame costs one forward and one inverse real FFT. Batch and
    streaming paths both go through :meth:`correlate_frame`, which keeps
    their outputs bit-identical.
    """

    def __init__(self, template, cfg: EchoConfig | None = None, bandpass: bool = True):
        self.cfg = cfg or EchoConfig()
        tp = _as_array(template)
        if tp.shape != (self.cfg.frame_len,):
            raise ParameterError(f"template must have {self.cfg.frame_len} samples, got {tp.shape}")
        spectrum = np.conj(np.fft.rfft(tp))
        if bandpass:
            lo, hi = self.cfg.band
            freqs = np.fft.rfftfreq(self.cfg.frame_len, 1.0 / self.cfg.sample_rate)
            spectrum = spectrum * bandpass_gain(freqs, lo, hi)
        self._kernel = spectrum
        self.t0 = None

    def correlate_frame(self, samples) -> np.ndarray:
        x = _as_array(samples)
        if x.shape != (self.cfg.frame_len,):
            raise ParameterError(f"frame must have {self.cfg.frame_len} samples, got {x.shape}")
        return np.fft.irfft(np.fft.rfft(x) * self._kernel, n=self.cfg.frame_len)

    def calibrate(self, correlations: Sequence) -> int:
        self.t0 = estimate_t0(correlations, self.cfg)
        return self.t0

    def profile(self, rx: Waveform, t0: int | None = None, first_frame_index: int = 0):
        """Echo profile of a whole recording; returns ``(profile, t0)``."""
        n = len(rx) // self.cfg.frame_len
        if n == 0:
            raise EmptyInputError("recording shorter than one frame")
        x = rx.samples[: n * self.cfg.frame_len].reshape(n, self.cfg.frame_len)
        corrs = [self.correlate_frame(row) for row in x]
        if t0 is None:
            t0 = self.t0 if self.t0 is not None else estimate_t0(corrs, self.cfg)
        frames = [crop_frame(c, t0, self.cfg, first_frame_index + i) for i, c in enumerate(corrs)]
        start = rx.start_time - first_frame_index * self.cfg.frame_period
        return build_profile(frames, self.cfg.frame_period, start), t0


# -- export ------------------------------------------------------------------

def write_profile_csv(profile: EchoProfile, directory) -> list[Path]:
    directory = Path(directory)
    paths = []
    for name in ("original", "differential"):
        path = directory / f"{name}.csv"
        np.savetxt(path, getattr(profile, name), fmt="%.17g", delimiter=",")
        paths.append(path)
    return paths


def read_profile_csv(directory, frame_period: float = 0.012) -> EchoProfile:
    directory = Path(directory)
    o = np.loadtxt(directory / "original.csv", delimiter=",", ndmin=2)
    d = np.loadtxt(directory / "differential.csv", delimiter=",", ndmin=2)
    return EchoProfile(o, d, frame_period)


def to_pgm(image: np.ndarray) -> bytes:
    """Plain (ASCII) 8-bit PGM of ``image``, min-max scaled."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        scaled = np.rint(255 * (image - lo) / (hi - lo)).astype(int)
    else:
        scaled = np.zeros(image.shape, dtype=int)
    rows, cols = scaled.shape
    lines = [f"P2\n{cols} {rows}\n255"]
    lines += [" ".join(map(str, row)) for row in scaled]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_profile_pgm(profile: EchoProfile, directory) -> list[Path]:
    directory = Path(directory)
    paths = []
    for name in ("original", "differential"):
        path = directory / f"{name}.pgm"
        path.write_bytes(to_pgm(getattr(profile, name)))
        paths.append(path)
    return paths
