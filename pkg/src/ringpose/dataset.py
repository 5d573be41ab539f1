"""Model-input windows, label synchronization and the RAPD container.

RAPD layout (all little-endian)::

    b"RAPD"  u16 version  u32 header_len  header (UTF-8 JSON)
    repeated `count` times:
        u32 record_len  record  u32 crc32(record)
    record = f64 t_last, f64 label_t, u8 flags, then float32 values:
             input (channels * pixels * width) followed by the label
             (60 pose coordinates, or 1 gesture class id)
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .echo import EchoProfile
from .errors import (
    BadMagicError,
    ChecksumError,
    EmptyInputError,
    ParameterError,
    SyncError,
    TruncationError,
    VersionMismatchError,
)
from .hand import HandPose, PalmBasis, RelativeHandPose, align_to_reference, normalize_size, to_relative

MAGIC = b"RAPD"
VERSION = 1
_RECORD_HEAD = struct.Struct("<ddB")
FLAG_GAP = 1
TIME_EPS = 1e-9


@dataclass(frozen=True)
class WindowSpec:
    width: int = 100
    stride: int = 1
    channels: int = 2

    def __post_init__(self):
        if self.width < 1 or self.stride < 1:
            raise ParameterError("width and stride must be >= 1")
        if self.channels != 2:
            raise ParameterError("windows always carry two channels (differential, original)")

    @classmethod
    def regression(cls, stride: int = 1) -> "WindowSpec":
        return cls(100, stride)

    @classmethod
    def classification(cls) -> "WindowSpec":
        return cls(160, 160)


@dataclass(frozen=True, eq=False)
class LabeledWindow:
    """One model input: channel 0 is the differential profile, channel 1 the original."""

    input: np.ndarray
    label: object
    t_last: float
    flagged: bool = False

    def __post_init__(self):
        x = np.array(self.input, dtype=np.float32)
        if x.ndim != 3 or x.shape[0] != 2:
            raise ParameterError(f"window input must be (2, pixels, width), got {x.shape}")
        x.setflags(write=False)
        object.__setattr__(self, "input", x)
        label = self.label
        if isinstance(label, RelativeHandPose):
            label = RelativeHandPose(label.joints.astype(np.float32).astype(np.float64), label.timestamp)
        elif isinstance(label, (int, np.integer)):
            label = int(label)
        else:
            raise ParameterError(f"label must be a RelativeHandPose or a class id, got {type(label).__name__}")
        object.__setattr__(self, "label", label)

    @property
    def kind(self) -> str:
        return "pose" if isinstance(self.label, RelativeHandPose) else "gesture"

    @property
    def label_time(self) -> float:
        return self.label.timestamp if isinstance(self.label, RelativeHandPose) else self.t_last

    def __eq__(self, other):
        if not isinstance(other, LabeledWindow):
            return NotImplemented
        return (
            self.t_last == other.t_last
            and self.flagged == other.flagged
            and self.label == other.label
            and np.array_equal(self.input, other.input)
        )


def normalize_window(w) -> np.ndarray:
    """Zero-mean, unit-std per channel; near-constant channels become zeros."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros_like(w)
    for c in range(w.shape[0]):
        ch = np.ascontiguousarray(w[c])  # fixed memory order keeps reductions bit-stable
        std = ch.std()
        if std >= 1e-12:
            out[c] = (ch - ch.mean()) / std
    return out


def prepare_label(pose: HandPose, reference: PalmBasis | None = None, hand_length: float | None = None):
    rel = to_relative(pose)
    if reference is not None:
        rel = align_to_reference(rel, reference)
    if hand_length is not None:
        rel = normalize_size(rel, hand_length)
    return rel


def sync_labels(
    profile: EchoProfile,
    poses: Sequence[HandPose],
    reference: PalmBasis | None = None,
    hand_length: float | None = None,
) -> list:
    """Zero-order-hold ground truth per column (``None`` before the first pose)."""
    poses = list(poses)
    if not poses:
        raise SyncError("no ground-truth poses")
    col_t = profile.column_times()
    pose_t = np.array([p.timestamp for p in poses])
    if np.any(np.diff(pose_t) < 0):
        raise ParameterError("poses must be time-ordered")
    if pose_t[0] > col_t[-1] + TIME_EPS or pose_t[-1] < col_t[0] - TIME_EPS:
        raise SyncError(
            f"pose times [{pose_t[0]}, {pose_t[-1]}] do not overlap columns [{col_t[0]}, {col_t[-1]}]"
        )
    idx = np.searchsorted(pose_t, col_t + TIME_EPS, side="right") - 1
    prepared = {}
    labels = []
    for i in idx:
        if i < 0:
            labels.append(None)
            continue
        if i not in prepared:
            prepared[i] = prepare_label(poses[i], reference, hand_length)
        labels.append(prepared[i])
    return labels


def make_windows(
    profile: EchoProfile,
    labels: Sequence,
    spec: WindowSpec = WindowSpec(),
    flags: Sequence[bool] | None = None,
) -> list[LabeledWindow]:
    """Slide a window over the profile; each window takes its last column's label.

    ``labels`` is either one entry per column or a single class id used for
    every column. Windows whose last column is unlabeled are skipped.
    """
    W = profile.width
    if W < spec.width:
        raise EmptyInputError(f"profile has {W} columns, window needs {spec.width}")
    if isinstance(labels, (int, np.integer)):
        labels = [int(labels)] * W
    if len(labels) != W:
        raise ParameterError(f"{len(labels)} labels for {W} columns")
    flags = np.zeros(W, bool) if flags is None else np.asarray(flags, bool)
    stacked = profile.stacked()
    times = profile.column_times()
    out = []
    for s in range(0, W - spec.width + 1, spec.stride):
        last = s + spec.width - 1
        if labels[last] is None:
            continue
        x = normalize_window(stacked[:, :, s:s + spec.width])
        out.append(LabeledWindow(x, labels[last], float(times[last]), bool(flags[s:last + 1].any())))
    return out


def gesture_windows(
    profile: EchoProfile,
    instances: Sequence[tuple],
    spec: WindowSpec = WindowSpec.classification(),
    instance_duration: float = 2.0,
) -> list[LabeledWindow]:
    """One window per gesture instance ``(start_time, class_id)``, centred in the instance."""
    times = profile.column_times()
    margin = max(0.0, (instance_duration - spec.width * profile.frame_period) / 2)
    stacked = profile.stacked()
    out = []
    for t_start, cls in instances:
        s = int(np.searchsorted(times, t_start + margin - TIME_EPS))
        if s + spec.width > profile.width:
            continue
        x = normalize_window(stacked[:, :, s:s + spec.width])
        out.append(LabeledWindow(x, int(cls), float(times[s + spec.width - 1])))
    return out


# -- persistence -------------------------------------------------------------

def _label_values(w: LabeledWindow) -> np.ndarray:
    if w.kind == "pose":
        return w.label.flat()
    return np.array([w.label], dtype=np.float64)


def save_dataset(windows: Sequence[LabeledWindow], path, provenance: dict | None = None) -> None:
    windows = list(windows)
    kinds = {w.kind for w in windows}
    shapes = {w.input.shape for w in windows}
    if len(kinds) > 1 or len(shapes) > 1:
        raise ParameterError("all windows in a dataset must share label kind and shape")
    shape = shapes.pop() if shapes else (2, 0, 0)
    header = {
        "count": len(windows),
        "label_kind": kinds.pop() if kinds else "empty",
        "channels": shape[0],
        "n_pixels": shape[1],
        "width": shape[2],
        "channel_order": ["differential", "original"],
        "provenance": provenance or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(blob)) + blob)
        for w in windows:
            head = _RECORD_HEAD.pack(w.t_last, w.label_time, FLAG_GAP if w.flagged else 0)
            values = np.concatenate([w.input.reshape(-1), _label_values(w).astype(np.float32)])
            record = head + values.astype("<f4").tobytes()
            fh.write(struct.pack("<I", len(record)) + record + struct.pack("<I", zlib.crc32(record)))


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
    return header


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncationError(f"file ends inside {what}")
    return data


def _read_header(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    version, hlen = struct.unpack("<HI", _read_exact(fh, 6, "header"))
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, reader supports {VERSION}")
    return json.loads(_read_exact(fh, hlen, "header").decode("utf-8")), version


def load_dataset(path) -> list[LabeledWindow]:
    with open(path, "rb") as fh:
        header, _ = _read_header(fh)
        shape = (header["channels"], header["n_pixels"], header["width"])
        n_in = int(np.prod(shape))
        kind = header["label_kind"]
        out = []
        for i in range(header["count"]):
            (rlen,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i}"))
            record = _read_exact(fh, rlen, f"record {i}")
            (crc,) = struct.unpack("<I", _read_exact(fh, 4, f"record {i}"))
            if zlib.crc32(record) != crc:
                raise ChecksumError(f"record {i} failed its CRC32 check")
            t_last, label_t, flags = _RECORD_HEAD.unpack_from(record)
            values = np.frombuffer(record, dtype="<f4", offset=_RECORD_HEAD.size)
            x = values[:n_in].reshape(shape)
            lab = values[n_in:].astype(np.float64)
            label = RelativeHandPose.from_flat(lab, label_t) if kind == "pose" else int(lab[0])
            out.append(LabeledWindow(x, label, t_last, bool(flags & FLAG_GAP)))
    return out


def write_label_map(path, labels: dict) -> None:
    Path(path).write_text(json.dumps({str(k): v for k, v in labels.items()}, indent=1) + "\n")


def read_label_map(path) -> dict[int, str]:
    return {int(k): v for k, v in json.loads(Path(path).read_text()).items()}
