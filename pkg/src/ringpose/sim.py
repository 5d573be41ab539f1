"""Point-reflector simulation of the ring's received signal.

Each joint of the hand, plus the palm centroid, reflects the transmitted
chirp back to the microphone after a bistatic delay (speaker -> point ->
microphone). Delays are applied as frequency-domain phase shifts on each
frame, which is exact for the frame-periodic transmission.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .chirp import Waveform
from .echo import EchoConfig
from .errors import EmptyInputError, GeometryError, ParameterError
from .hand import FINGER_BASE, PALM_JOINTS, HandPose, palm_basis, to_relative

SPEAKER_MIC_SEPARATION_MM = 5.4
RING_RADIUS_MM = 9.0
N_REFLECTORS = 22
CHUNK_FRAMES = 128


def _vec3(v):
    a = np.array(v, dtype=np.float64)
    if a.shape != (3,):
        raise ParameterError(f"expected a 3-vector, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class RingPlacement:
    """Where the ring sits and where its transducers are.

    Offsets are expressed in the worn segment's local frame: (along the
    segment towards the PIP joint, lateral, palmar). Speaker and microphone
    must be 5.4 mm apart, except in the explicit monostatic approximation
    where both coincide.
    """

    worn_finger: str = "middle"
    along_segment: float = 0.5
    speaker_offset: tuple = (0.0, SPEAKER_MIC_SEPARATION_MM / 2, RING_RADIUS_MM)
    mic_offset: tuple = (0.0, -SPEAKER_MIC_SEPARATION_MM / 2, RING_RADIUS_MM)

    def __post_init__(self):
        if self.worn_finger not in FINGER_BASE:
            raise ParameterError(f"unknown finger {self.worn_finger!r}")
        if not 0 <= self.along_segment <= 1:
            raise ParameterError("along_segment must lie in [0, 1]")
        object.__setattr__(self, "speaker_offset", tuple(_vec3(self.speaker_offset)))
        object.__setattr__(self, "mic_offset", tuple(_vec3(self.mic_offset)))
        sep = self.separation
        if sep != 0 and not math.isclose(sep, SPEAKER_MIC_SEPARATION_MM, abs_tol=1e-9):
            raise ParameterError(f"speaker and mic must be {SPEAKER_MIC_SEPARATION_MM} mm apart, got {sep}")

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(np.subtract(self.speaker_offset, self.mic_offset)))

    @classmethod
    def monostatic(cls, worn_finger="middle", along_segment=0.5, offset=(0.0, 0.0, 0.0)):
        return cls(worn_finger, along_segment, tuple(offset), tuple(offset))


@dataclass(frozen=True)
class SimConfig:
    direct_path_gain: float = 0.5
    attenuation_exponent: float = 2.0
    reflector_coefficient: object = 1.0
    noise_std: float = 0.005
    seed: int = 0
    # applied to the whole received frame (signal and noise); < 1 leaves PCM headroom
    output_gain: float = 1.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ParameterError("noise_std must be >= 0")
        if self.direct_path_gain < 0 or self.attenuation_exponent < 0 or self.output_gain <= 0:
            raise ParameterError("gains and exponent must be non-negative")
        if np.any(np.asarray(self.reflector_coefficient) < 0):
            raise ParameterError("reflector coefficients must be >= 0")


@dataclass(frozen=True)
class PoseSequence:
    poses: tuple
    rate: float = 50000.0 / 600

    def __post_init__(self):
        poses = tuple(self.poses)
        ts = [p.timestamp for p in poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ParameterError("pose timestamps must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "_times", np.array(ts, dtype=np.float64))

    def __len__(self):
        return len(self.poses)

    def nearest(self, t) -> np.ndarray:
        """Index of the pose nearest in time to each ``t`` (earlier pose on ties)."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        times = self._times
        right = np.clip(np.searchsorted(times, t), 1, len(times) - 1) if len(times) > 1 else np.zeros(len(t), int)
        if len(times) == 1:
            return right
        left = right - 1
        return np.where(np.abs(times[right] - t) < np.abs(t - times[left]), right, left)

    @classmethod
    def static(cls, pose: HandPose, duration: float, rate: float = 50000.0 / 600):
        n = max(1, int(round(duration * rate)))
        return cls(tuple(HandPose(pose.joints, i / rate) for i in range(n)), rate)


class ExpectedPeaks(NamedTuple):
    pixels: np.ndarray
    in_crop: np.ndarray
    amplitudes: np.ndarray


def reflector_points(pose: HandPose) -> np.ndarray:
    """22 x 3 reflector positions: the 21 joints then the palm centroid."""
    centroid = pose.joints[list(PALM_JOINTS)].mean(axis=0)
    return np.vstack([pose.joints, centroid])


def ring_frame(pose: HandPose, placement: RingPlacement):
    """Ring centre and the local (along, lateral, palmar) axes of the worn segment."""
    base = FINGER_BASE[placement.worn_finger]
    mcp, pip = pose.joints[base], pose.joints[base + 1]
    seg = pip - mcp
    length = np.linalg.norm(seg)
    if length < 1e-9:
        raise GeometryError(f"{placement.worn_finger} proximal segment has zero length")
    e1 = seg / length
    normal = palm_basis(to_relative(pose)).n
    e3 = normal - np.dot(normal, e1) * e1
    if np.linalg.norm(e3) < 1e-9:
        # segment parallel to the palm normal; fall back to any perpendicular axis
        e3 = np.cross(e1, [1.0, 0.0, 0.0])
        if np.linalg.norm(e3) < 1e-9:
            e3 = np.cross(e1, [0.0, 1.0, 0.0])
    e3 = e3 / np.linalg.norm(e3)
    e2 = np.cross(e3, e1)
    centre = mcp + placement.along_segment * seg
    return centre, np.column_stack([e1, e2, e3])


def ring_position(pose: HandPose, placement: RingPlacement | None = None):
    """World positions ``(speaker, mic)`` in mm for this pose."""
    placement = placement or RingPlacement()
    centre, axes = ring_frame(pose, placement)
    return centre + axes @ np.asarray(placement.speaker_offset), centre + axes @ np.asarray(placement.mic_offset)


def reflector_amplitudes(d_spk, d_mic, cfg: SimConfig, coefficients=None) -> np.ndarray:
    coef = cfg.reflector_coefficient if coefficients is None else coefficients
    spread = (np.asarray(d_spk) / 100.0) * (np.asarray(d_mic) / 100.0)
    with np.errstate(divide="ignore"):
        a = np.asarray(coef, dtype=np.float64) / spread ** (cfg.attenuation_exponent / 2.0)
    return np.minimum(a, 1.0)


def expected_peak_pixels(
    pose: HandPose, placement: RingPlacement | None = None, echo_cfg: EchoConfig | None = None,
    sim_cfg: SimConfig | None = None,
) -> ExpectedPeaks:
    """Pixel of each reflector's echo relative to the direct path, without simulation."""
    placement = placement or RingPlacement()
    echo_cfg = echo_cfg or EchoConfig()
    spk, mic = ring_position(pose, placement)
    pts = reflector_points(pose)
    d_spk = np.linalg.norm(pts - spk, axis=1)
    d_mic = np.linalg.norm(pts - mic, axis=1)
    extra = d_spk + d_mic - placement.separation
    pixels = np.rint(extra * echo_cfg.sample_rate / echo_cfg.speed_of_sound).astype(int)
    amps = reflector_amplitudes(d_spk, d_mic, sim_cfg or SimConfig())
    return ExpectedPeaks(pixels, pixels < echo_cfg.crop_len, amps)


def frame_noise(seed: int, frame_index: int, std: float, n: int) -> np.ndarray:
    """Per-frame Gaussian noise; independent of how frames are batched."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(frame_index)])
    return rng.normal(0.0, std, n)


def render_reflectors(
    template,
    speaker: np.ndarray,
    mic: np.ndarray,
    points: np.ndarray,
    cfg: SimConfig | None = None,
    echo_cfg: EchoConfig | None = None,
    coefficients=None,
    first_frame_index: int = 0,
    start_time: float = 0.0,
    threads: int = 1,
) -> Waveform:
    """Render frames for explicit per-frame transducer and reflector positions.

    ``speaker`` and ``mic`` are (F, 3); ``points`` is (F, R, 3). An empty
    reflector set (R = 0) leaves only the direct path and noise.
    """
    cfg = cfg or SimConfig()
    echo_cfg = echo_cfg or EchoConfig()
    tp = template.samples if isinstance(template, Waveform) else np.asarray(template, dtype=np.float64)
    L = echo_cfg.frame_len
    if tp.shape != (L,):
        raise ParameterError(f"template must have {L} samples")
    speaker = np.atleast_2d(np.asarray(speaker, dtype=np.float64))
    mic = np.atleast_2d(np.asarray(mic, dtype=np.float64))
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    n_frames = speaker.shape[0]
    if n_frames == 0:
        raise EmptyInputError("nothing to render")
    if mic.shape != speaker.shape or points.shape[0] != n_frames:
        raise ParameterError("speaker, mic and points disagree on the frame count")

    spectrum = np.fft.rfft(tp)
    omega = 2 * np.pi * np.fft.rfftfreq(L, 1.0 / echo_cfg.sample_rate)
    c = echo_cfg.speed_of_sound
    out = np.empty((n_frames, L))

    def chunk(lo):
        hi = min(lo + CHUNK_FRAMES, n_frames)
        sep = np.linalg.norm(speaker[lo:hi] - mic[lo:hi], axis=1)
        transfer = cfg.direct_path_gain * np.exp(-1j * np.outer(sep / c, omega))
        if points.shape[1]:
            d_spk = np.linalg.norm(points[lo:hi] - speaker[lo:hi, None], axis=2)
            d_mic = np.linalg.norm(points[lo:hi] - mic[lo:hi, None], axis=2)
            amps = reflector_amplitudes(d_spk, d_mic, cfg, coefficients)
            delays = (d_spk + d_mic) / c
            transfer = transfer + np.einsum("fr,frk->fk", amps, np.exp(-1j * delays[..., None] * omega))
        frames = np.fft.irfft(transfer * spectrum, n=L, axis=1)
        if cfg.noise_std > 0:
            for i in range(hi - lo):
                frames[i] += frame_noise(cfg.seed, first_frame_index + lo + i, cfg.noise_std, L)
        out[lo:hi] = frames * cfg.output_gain

    starts = range(0, n_frames, CHUNK_FRAMES)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(chunk, starts))
    else:
        for lo in starts:
            chunk(lo)
    return Waveform(out.reshape(-1), echo_cfg.sample_rate, start_time)


def render_received(
    tx: Waveform,
    seq: PoseSequence,
    placement: RingPlacement | None = None,
    cfg: SimConfig | None = None,
    echo_cfg: EchoConfig | None = None,
    first_frame_index: int = 0,
    threads: int = 1,
) -> Waveform:
    """Received waveform for a frame-periodic transmission and a pose sequence.

    Each 12 ms frame uses the pose whose timestamp is nearest the frame's
    start time.
    """
    echo_cfg = echo_cfg or EchoConfig()
    placement = placement or RingPlacement()
    if len(seq) == 0:
        raise EmptyInputError("pose sequence is empty")
    L = echo_cfg.frame_len
    n_frames = len(tx) // L
    if n_frames == 0 or len(tx) % L:
        raise ParameterError(f"transmission must be a whole number of {L}-sample frames")
    template = tx.samples[:L]
    times = tx.start_time + np.arange(n_frames) * echo_cfg.frame_period
    idx = seq.nearest(times)
    cache = {}
    spk = np.empty((n_frames, 3))
    mic = np.empty((n_frames, 3))
    pts = np.empty((n_frames, N_REFLECTORS, 3))
    for f, i in enumerate(idx):
        if i not in cache:
            pose = seq.poses[i]
            cache[i] = (*ring_position(pose, placement), reflector_points(pose))
        spk[f], mic[f], pts[f] = cache[i]
    return render_reflectors(
        template, spk, mic, pts, cfg, echo_cfg,
        first_frame_index=first_frame_index, start_time=tx.start_time, threads=threads,
    )
