"""Sensor uplink codec, capture replay and the real-time processing pipeline.

Packet layout (1208 bytes)::

    A5 5A | seq u32 LE | 600 x int16 LE samples | CRC-16/CCITT-FALSE LE

The CRC covers the sequence number and payload. One packet carries exactly
one 12 ms chirp period.
"""

from __future__ import annotations

import binascii
import json
import queue
import struct
import threading
import time
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .chirp import Waveform, dequantize, quantize
from .dataset import LabeledWindow, normalize_window
from .echo import EchoConfig, EchoProcessor, crop_frame, estimate_t0
from .errors import FramingError, IntegrityError, ParameterError, TruncationError
from .estimate import KnnModel, predict_gestures, predict_poses

SYNC = b"\xa5\x5a"
SAMPLES_PER_PACKET = 600
_HEAD = struct.Struct("<2sI")
PACKET_SIZE = _HEAD.size + 2 * SAMPLES_PER_PACKET + 2
FRAME_RATE = 50000.0 / SAMPLES_PER_PACKET


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no final xor)."""
    return binascii.crc_hqx(data, 0xFFFF)


@dataclass(frozen=True, eq=False)
class SensorPacket:
    seq: int
    payload: np.ndarray  # int16 codes

    def __post_init__(self):
        p = np.array(self.payload, dtype="<i2")
        if p.shape != (SAMPLES_PER_PACKET,):
            raise ParameterError(f"payload must hold {SAMPLES_PER_PACKET} samples, got {p.shape}")
        p.setflags(write=False)
        object.__setattr__(self, "payload", p)

    @property
    def samples(self) -> np.ndarray:
        return dequantize(self.payload)

    def __eq__(self, other):
        if not isinstance(other, SensorPacket):
            return NotImplemented
        return self.seq == other.seq and np.array_equal(self.payload, other.payload)


def encode_packet(seq: int, samples) -> bytes:
    """Frame one chirp period. Float samples are quantized; integer arrays are taken as codes."""
    arr = np.asarray(samples)
    if arr.shape != (SAMPLES_PER_PACKET,):
        raise ParameterError(f"need exactly {SAMPLES_PER_PACKET} samples, got {arr.shape}")
    if not 0 <= seq < 2**32:
        raise ParameterError("seq must fit in an unsigned 32-bit integer")
    codes = arr.astype("<i2") if np.issubdtype(arr.dtype, np.integer) else quantize(arr)
    body = struct.pack("<I", seq) + codes.tobytes()
    return SYNC + body + struct.pack("<H", crc16_ccitt_false(body))


def decode_packet(buf: bytes) -> SensorPacket:
    if len(buf) < PACKET_SIZE:
        raise TruncationError(f"packet needs {PACKET_SIZE} bytes, got {len(buf)}")
    buf = bytes(buf[:PACKET_SIZE])
    sync, seq = _HEAD.unpack_from(buf)
    if sync != SYNC:
        raise FramingError(f"bad sync bytes {sync.hex()}")
    body = buf[2:-2]
    (crc,) = struct.unpack_from("<H", buf, PACKET_SIZE - 2)
    if crc16_ccitt_false(body) != crc:
        raise IntegrityError(f"CRC mismatch in packet seq={seq}")
    return SensorPacket(seq, np.frombuffer(body, dtype="<i2", offset=4))


def encode_waveform(samples, first_seq: int = 0) -> bytes:
    """Capture-file bytes for a recording (whole frames only)."""
    x = np.asarray(samples)
    n = len(x) // SAMPLES_PER_PACKET
    return b"".join(
        encode_packet(first_seq + i, x[i * SAMPLES_PER_PACKET:(i + 1) * SAMPLES_PER_PACKET]) for i in range(n)
    )


def waveform_from_capture(data: bytes, sample_rate: float = 50000.0) -> Waveform:
    """Concatenate the payloads of a capture; missing packets become zero frames."""
    rp = Replay(data)
    frames, last = [], None
    for pkt in rp:
        if last is not None:
            frames += [np.zeros(SAMPLES_PER_PACKET)] * (pkt.seq - last - 1)
        frames.append(pkt.samples)
        last = pkt.seq
    samples = np.concatenate(frames) if frames else np.zeros(0)
    return Waveform(samples, sample_rate)


def write_capture(path, samples, first_seq: int = 0) -> None:
    Path(path).write_bytes(encode_waveform(samples, first_seq))


# -- replay ------------------------------------------------------------------

@dataclass(frozen=True)
class GapEvent:
    after_seq: int
    next_seq: int

    @property
    def missing(self) -> int:
        return self.next_seq - self.after_seq - 1


class Replay:
    """Iterate the packets of a capture file, optionally paced in real time.

    ``rate_factor`` scales the 83.33 packets/s device rate; 0 means as fast
    as possible. Sequence discontinuities are recorded in :attr:`gaps`;
    corrupted packets are skipped and counted; a torn final packet ends the
    stream with a warning.
    """

    def __init__(self, source, rate_factor: float = 0.0, clock=time.monotonic, sleep=time.sleep):
        if rate_factor < 0:
            raise ParameterError("rate_factor must be >= 0")
        self.data = source if isinstance(source, (bytes, bytearray, memoryview)) else Path(source).read_bytes()
        self.rate_factor = rate_factor
        self.clock = clock
        self.sleep = sleep
        self.gaps: list[GapEvent] = []
        self.framing_errors = 0
        self.integrity_errors = 0
        self.truncated = False
        self.emitted = 0

    def raw_packets(self) -> Iterator[bytes]:
        data = self.data
        pos = 0
        while pos < len(data):
            if data[pos:pos + 2] != SYNC:
                self.framing_errors += 1
                nxt = bytes(data).find(SYNC, pos + 1)
                if nxt < 0:
                    return
                pos = nxt
                continue
            if len(data) - pos < PACKET_SIZE:
                self.truncated = True
                warnings.warn(f"capture ends with a torn packet ({len(data) - pos} bytes)", RuntimeWarning)
                return
            yield bytes(data[pos:pos + PACKET_SIZE])
            pos += PACKET_SIZE

    def __iter__(self) -> Iterator[SensorPacket]:
        period = None if self.rate_factor == 0 else 1.0 / (FRAME_RATE * self.rate_factor)
        start = self.clock()
        last_seq = None
        for raw in self.raw_packets():
            try:
                pkt = decode_packet(raw)
            except IntegrityError:
                self.integrity_errors += 1
                continue
            if last_seq is not None and pkt.seq != last_seq + 1:
                self.gaps.append(GapEvent(last_seq, pkt.seq))
            last_seq = pkt.seq
            if period is not None:
                delay = start + self.emitted * period - self.clock()
                if delay > 0:
                    self.sleep(delay)
            self.emitted += 1
            yield pkt


def replay(source, rate_factor: float = 0.0) -> Replay:
    return Replay(source, rate_factor)


# -- latency accounting ------------------------------------------------------

STAGES = ("decode_ms", "correlate_ms", "window_ms", "predict_ms", "total_ms")
TABLE_NAMES = {
    "decode_ms": "Packet Decode",
    "correlate_ms": "Echo Profile Calculation",
    "window_ms": "Window Assembly",
    "predict_ms": "Inference",
    "total_ms": "In-process Total",
}


@dataclass
class StageLatency:
    decode_ms: float = 0.0
    correlate_ms: float = 0.0
    window_ms: float = 0.0
    predict_ms: float = 0.0
    total_ms: float = 0.0


class LatencyStats:
    def __init__(self):
        self.samples = {k: [] for k in STAGES}

    def add(self, lat: StageLatency):
        for k in STAGES:
            self.samples[k].append(getattr(lat, k))

    def __len__(self):
        return len(self.samples["total_ms"])

    def mean(self, stage: str) -> float:
        v = self.samples[stage]
        return float(np.mean(v)) if v else 0.0

    def p95(self, stage: str) -> float:
        v = self.samples[stage]
        return float(np.percentile(v, 95)) if v else 0.0

    def report(self) -> dict:
        return {
            "windows": len(self),
            "stages": {
                k: {"table_name": TABLE_NAMES[k], "mean_ms": self.mean(k), "p95_ms": self.p95(k)} for k in STAGES
            },
        }


# -- pipeline ----------------------------------------------------------------

@dataclass
class PipelineConfig:
    echo: EchoConfig = field(default_factory=EchoConfig)
    width: int = 100
    stride: int = 1
    queue_size: int = 64
    threaded: bool = True
    overflow: str = "drop_oldest"  # or "block"
    t0: int | None = None
    time_origin: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.stride < 1 or self.queue_size < 1:
            raise ParameterError("width, stride and queue_size must be >= 1")
        if self.overflow not in ("drop_oldest", "block"):
            raise ParameterError("overflow must be 'drop_oldest' or 'block'")


@dataclass
class PipelineOutput:
    t_last: float
    prediction: object
    latency: StageLatency
    flagged: bool
    window: np.ndarray
    last_frame: int


@dataclass
class _Frame:
    index: int
    samples: np.ndarray
    substituted: bool
    arrival: float
    decode_ms: float


@dataclass
class _Column:
    index: int
    values: np.ndarray
    substituted: bool
    arrival: float
    decode_ms: float
    correlate_ms: float


@dataclass
class _Window:
    data: np.ndarray
    last_frame: int
    flagged: bool
    arrival: float
    decode_ms: float
    correlate_ms: float
    window_ms: float


class _Decoder:
    def __init__(self, pipe):
        self.p = pipe
        self.next_seq = None
        self.first_seq = None

    def process(self, item) -> list:
        t_in = time.perf_counter()
        pkt = decode_packet(item) if isinstance(item, (bytes, bytearray, memoryview)) else item
        samples = pkt.samples
        if self.first_seq is None:
            self.first_seq = self.next_seq = pkt.seq
        if pkt.seq < self.next_seq:
            self.p.stale_packets += 1
            return []
        out = []
        if pkt.seq > self.next_seq:
            self.p.gap_events += 1
            zeros = np.zeros(SAMPLES_PER_PACKET)
            for s in range(self.next_seq, pkt.seq):
                self.p.substituted_frames += 1
                out.append(_Frame(s - self.first_seq, zeros, True, t_in, 0.0))
        dt = 1e3 * (time.perf_counter() - t_in)
        out.append(_Frame(pkt.seq - self.first_seq, samples, False, t_in, dt))
        self.next_seq = pkt.seq + 1
        return out


class _Correlator:
    def __init__(self, pipe):
        self.p = pipe
        self.pending = []
        self.t0 = pipe.cfg.t0

    def _emit(self, fr, corr, dt):
        t1 = time.perf_counter()
        values = crop_frame(corr, self.t0, self.p.cfg.echo, fr.index).values
        dt += 1e3 * (time.perf_counter() - t1)
        col = _Column(fr.index, values, fr.substituted, fr.arrival, fr.decode_ms, dt)
        if self.p.keep_columns:
            self.p.columns.append(values)
        return col

    def process(self, fr: _Frame) -> list:
        t1 = time.perf_counter()
        corr = self.p.processor.correlate_frame(fr.samples)
        dt = 1e3 * (time.perf_counter() - t1)
        if self.t0 is not None:
            return [self._emit(fr, corr, dt)]
        self.pending.append((fr, corr, dt))
        real = [c for f, c, _ in self.pending if not f.substituted]
        if len(real) < self.p.cfg.echo.t0_estimation_frames:
            return []
        return self._release(real)

    def _release(self, real):
        self.t0 = estimate_t0(real, self.p.cfg.echo) if real else 0
        self.p.t0 = self.t0
        out = [self._emit(f, c, dt) for f, c, dt in self.pending]
        self.pending = []
        return out

    def flush(self) -> list:
        if self.t0 is None and self.pending:
            return self._release([c for f, c, _ in self.pending if not f.substituted])
        return []


class _Windower:
    def __init__(self, pipe):
        self.p = pipe
        w = pipe.cfg.width
        self.orig = deque(maxlen=w)
        self.diff = deque(maxlen=w)
        self.subst = deque(maxlen=w)
        self.decode = deque(maxlen=pipe.cfg.stride)
        self.corr = deque(maxlen=pipe.cfg.stride)
        self.prev = None
        self.seen = 0

    def process(self, col: _Column) -> list:
        t1 = time.perf_counter()
        d = np.zeros_like(col.values) if self.prev is None else col.values - self.prev
        self.prev = col.values
        self.orig.append(col.values)
        self.diff.append(d)
        self.subst.append(col.substituted)
        self.decode.append(col.decode_ms)
        self.corr.append(col.correlate_ms)
        self.seen += 1
        cfg = self.p.cfg
        if self.seen < cfg.width or (self.seen - cfg.width) % cfg.stride:
            return []
        raw = np.stack([np.stack(self.diff, axis=1), np.stack(self.orig, axis=1)])
        data = normalize_window(raw).astype(np.float32)
        dt = 1e3 * (time.perf_counter() - t1)
        return [_Window(data, col.index, any(self.subst), col.arrival, sum(self.decode), sum(self.corr), dt)]


class Pipeline:
    """decode -> correlate/crop -> window/normalize -> predict.

    In threaded mode each of the first three stages runs on its own thread
    and hands items over bounded FIFO queues; prediction runs on the
    consuming thread. ``threaded=False`` executes the same stage objects in
    one thread and gives identical outputs.
    """

    def __init__(self, template, cfg: PipelineConfig | None = None, model: KnnModel | None = None,
                 keep_columns: bool = False):
        self.cfg = cfg or PipelineConfig()
        self.processor = EchoProcessor(template, self.cfg.echo)
        self.model = model
        self.keep_columns = keep_columns
        self.columns: list = []
        self.stats = LatencyStats()
        self.t0 = self.cfg.t0
        self.dropped_windows = 0
        self.gap_events = 0
        self.substituted_frames = 0
        self.stale_packets = 0
        self._lock = threading.Lock()

    def _predict(self, win: _Window) -> PipelineOutput:
        t1 = time.perf_counter()
        pred = None
        if self.model is not None:
            x = LabeledWindow(win.data, 0, 0.0)
            if self.model.kind == "gesture":
                pred = predict_gestures(self.model, [x])[0]
            else:
                pred = predict_poses(self.model, [x])[0]
        t_last = self.cfg.time_origin + win.last_frame * self.cfg.echo.frame_period
        if pred is not None and hasattr(pred, "joints"):
            pred = type(pred)(pred.joints, t_last)
        now = time.perf_counter()
        lat = StageLatency(
            decode_ms=win.decode_ms,
            correlate_ms=win.correlate_ms,
            window_ms=win.window_ms,
            predict_ms=1e3 * (now - t1),
            total_ms=1e3 * (now - win.arrival),
        )
        self.stats.add(lat)
        return PipelineOutput(t_last, pred, lat, win.flagged, win.data, win.last_frame)

    def run(self, source: Iterable) -> Iterator[PipelineOutput]:
        if self.cfg.threaded:
            return self._run_threaded(source)
        return self._run_serial(source)

    def _run_serial(self, source):
        dec, cor, win = _Decoder(self), _Correlator(self), _Windower(self)
        for item in source:
            for fr in dec.process(item):
                for col in cor.process(fr):
                    for w in win.process(col):
                        yield self._predict(w)
        for col in cor.flush():
            for w in win.process(col):
                yield self._predict(w)

    def _run_threaded(self, source):
        n = self.cfg.queue_size
        q_frames, q_cols, q_wins = queue.Queue(n), queue.Queue(n), queue.Queue(n)
        done = object()
        errors = []
        stop = threading.Event()

        def put(q, item):
            while not stop.is_set():
                try:
                    q.put(item, timeout=0.1)
                    return
                except queue.Full:
                    continue

        def put_window(item):
            if self.cfg.overflow == "block" or item is done:
                put(q_wins, item)
                return
            while True:
                try:
                    q_wins.put_nowait(item)
                    return
                except queue.Full:
                    try:
                        q_wins.get_nowait()
                        with self._lock:
                            self.dropped_windows += 1
                    except queue.Empty:
                        pass

        def stage_decode():
            dec = _Decoder(self)
            try:
                for item in source:
                    if stop.is_set():
                        break
                    for fr in dec.process(item):
                        put(q_frames, fr)
            except Exception as exc:  # surfaced on the consumer thread
                errors.append(exc)
            finally:
                put(q_frames, done)

        def stage_correlate():
            cor = _Correlator(self)
            try:
                while True:
                    fr = q_frames.get()
                    if fr is done:
                        break
                    for col in cor.process(fr):
                        put(q_cols, col)
                for col in cor.flush():
                    put(q_cols, col)
            except Exception as exc:
                errors.append(exc)
            finally:
                put(q_cols, done)

        def stage_window():
            win = _Windower(self)
            try:
                while True:
                    col = q_cols.get()
                    if col is done:
                        break
                    for w in win.process(col):
                        put_window(w)
            except Exception as exc:
                errors.append(exc)
            finally:
                put_window(done)

        threads = [threading.Thread(target=f, daemon=True) for f in (stage_decode, stage_correlate, stage_window)]
        for t in threads:
            t.start()
        try:
            while True:
                w = q_wins.get()
                if w is done:
                    break
                yield self._predict(w)
        finally:
            stop.set()
            for t in threads:
                t.join(timeout=5)
        if errors:
            raise errors[0]


def run_pipeline(source, template, cfg: PipelineConfig | None = None, model=None) -> Iterator[PipelineOutput]:
    return Pipeline(template, cfg, model).run(source)


# -- benchmark ---------------------------------------------------------------

def benchmark(n_windows: int = 500, width: int = 100, model: KnnModel | None = None, seed: int = 0,
              echo_cfg: EchoConfig | None = None) -> dict:
    """Time each in-process stage for ``n_windows`` independent windows.

    Each window is ``width`` fresh packets: decode them, correlate and crop
    every frame, assemble and normalize the window, then predict.
    """
    from .chirp import generate_chirp

    echo_cfg = echo_cfg or EchoConfig()
    template = generate_chirp()
    proc = EchoProcessor(template, echo_cfg)
    rng = np.random.default_rng(seed)
    base = np.tile(template.samples * 0.3, (width, 1))
    stats = LatencyStats()
    t0 = 1
    for _ in range(n_windows):
        frames = base + rng.normal(0, 0.01, base.shape)
        packets = [encode_packet(i, f) for i, f in enumerate(frames)]
        t_start = time.perf_counter()
        decoded = [decode_packet(p).samples for p in packets]
        t_dec = time.perf_counter()
        cols = [crop_frame(proc.correlate_frame(x), t0, echo_cfg, i).values for i, x in enumerate(decoded)]
        t_cor = time.perf_counter()
        orig = np.stack(cols, axis=1)
        diff = np.zeros_like(orig)
        diff[:, 1:] = orig[:, 1:] - orig[:, :-1]
        data = normalize_window(np.stack([diff, orig])).astype(np.float32)
        t_win = time.perf_counter()
        if model is not None:
            x = LabeledWindow(data, 0, 0.0)
            (predict_gestures if model.kind == "gesture" else predict_poses)(model, [x])
        t_end = time.perf_counter()
        stats.add(StageLatency(
            1e3 * (t_dec - t_start), 1e3 * (t_cor - t_dec), 1e3 * (t_win - t_cor),
            1e3 * (t_end - t_win), 1e3 * (t_end - t_start),
        ))
    report = stats.report()
    report["window_shape"] = [2, echo_cfg.crop_len, width]
    report["reference_ms"] = {"Echo Profile Calculation": 14.7, "Inference": [54.6, 70.4]}
    return report


def throughput(seconds: float = 10.0, width: int = 100, stride: int = 10, threaded: bool = True) -> dict:
    """Real-time factor of the full pipeline fed as fast as possible."""
    from .chirp import generate_chirp

    template = generate_chirp()
    n = int(round(seconds * FRAME_RATE))
    rng = np.random.default_rng(0)
    frames = np.tile(template.samples * 0.3, (n, 1)) + rng.normal(0, 0.01, (n, SAMPLES_PER_PACKET))
    data = b"".join(encode_packet(i, f) for i, f in enumerate(frames))
    cfg = PipelineConfig(width=width, stride=stride, threaded=threaded, overflow="block")
    pipe = Pipeline(template, cfg)
    t1 = time.perf_counter()
    count = sum(1 for _ in pipe.run(Replay(data, 0.0)))
    wall = time.perf_counter() - t1
    return {"audio_seconds": n / FRAME_RATE, "wall_seconds": wall, "realtime_factor": (n / FRAME_RATE) / wall,
            "windows": count}


def write_latency_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=1) + "\n")
