"""Hand skeletons, ground-truth normalization and joint-error metrics.

Joint indices follow the 21-point MediaPipe Hands layout: 0 is the wrist,
then four joints per digit from base to tip (thumb 1-4, index 5-8, middle
9-12, ring 13-16, pinky 17-20). Coordinates are millimetres.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, ParameterError, ParseError

N_JOINTS = 21
WRIST = 0
INDEX_MCP = 5
PINKY_MCP = 17
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
# MCP (or thumb CMC) joint index of each finger; its PIP follows at +1.
FINGER_BASE = {"thumb": 1, "index": 5, "middle": 9, "ring": 13, "pinky": 17}
PALM_JOINTS = (0, 5, 9, 13, 17)


def _joints(arr, n):
    a = np.array(arr, dtype=np.float64)
    if a.shape != (n, 3):
        raise ParameterError(f"expected {n} joints of 3 coordinates, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ParameterError("joint coordinates must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HandPose:
    joints: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "joints", _joints(self.joints, N_JOINTS))

    def __eq__(self, other):
        if not isinstance(other, HandPose):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.joints, other.joints)

    def translated(self, offset) -> "HandPose":
        return HandPose(self.joints + np.asarray(offset, dtype=np.float64), self.timestamp)

    def with_timestamp(self, t: float) -> "HandPose":
        return HandPose(self.joints, t)


@dataclass(frozen=True, eq=False)
class RelativeHandPose:
    """Joints 1-20 relative to the wrist; row ``i`` holds joint ``i + 1``."""

    joints: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "joints", _joints(self.joints, N_JOINTS - 1))

    def __eq__(self, other):
        if not isinstance(other, RelativeHandPose):
            return NotImplemented
        return self.timestamp == other.timestamp and np.array_equal(self.joints, other.joints)

    def joint(self, i: int) -> np.ndarray:
        """Coordinates of joint ``i`` in the 21-joint numbering (0 is the origin)."""
        if i == WRIST:
            return np.zeros(3)
        return self.joints[i - 1]

    def flat(self) -> np.ndarray:
        return self.joints.reshape(-1)

    @classmethod
    def from_flat(cls, coords, timestamp: float = 0.0) -> "RelativeHandPose":
        coords = np.asarray(coords, dtype=np.float64)
        if coords.size != 3 * (N_JOINTS - 1):
            raise ParameterError(f"expected 60 coordinates, got {coords.size}")
        return cls(coords.reshape(N_JOINTS - 1, 3), timestamp)


@dataclass(frozen=True)
class PalmBasis:
    u: np.ndarray
    n: np.ndarray
    w: np.ndarray

    def matrix(self) -> np.ndarray:
        """Columns are ``u, n, w``."""
        return np.column_stack([self.u, self.n, self.w])

    @classmethod
    def reference(cls) -> "PalmBasis":
        return cls(np.array([1.0, 0, 0]), np.array([0, 0, 1.0]), np.array([0, 1.0, 0]))


REFERENCE_BASIS = PalmBasis.reference()


def to_relative(p: HandPose) -> RelativeHandPose:
    return RelativeHandPose(p.joints[1:] - p.joints[0], p.timestamp)


def palm_basis(p: RelativeHandPose | HandPose) -> PalmBasis:
    """Palm frame from the wrist->index-MCP and wrist->pinky-MCP vectors."""
    if isinstance(p, HandPose):
        p = to_relative(p)
    a = p.joint(INDEX_MCP)
    b = p.joint(PINKY_MCP)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cross = np.cross(a, b)
    if na == 0 or nb == 0 or np.linalg.norm(cross) < 1e-6 * na * nb:
        raise GeometryError("palm plane is degenerate (index and pinky MCP collinear with wrist)")
    u = a / na
    n = cross / np.linalg.norm(cross)
    return PalmBasis(u, n, np.cross(n, u))


def align_to_reference(p: RelativeHandPose, ref: PalmBasis = REFERENCE_BASIS) -> RelativeHandPose:
    """Rigidly rotate ``p`` so its palm basis coincides with ``ref``."""
    rot = ref.matrix() @ palm_basis(p).matrix().T
    return RelativeHandPose(p.joints @ rot.T, p.timestamp)


def normalize_size(p: RelativeHandPose, measured_len: float) -> RelativeHandPose:
    """Scale uniformly so that |wrist -> pinky MCP| equals ``measured_len``."""
    if measured_len <= 0:
        raise ParameterError("measured_len must be positive")
    length = np.linalg.norm(p.joint(PINKY_MCP))
    if length == 0:
        raise GeometryError("wrist and pinky MCP coincide, hand size is undefined")
    return RelativeHandPose(p.joints * (measured_len / length), p.timestamp)


def _rel_array(p):
    return p.joints if isinstance(p, RelativeHandPose) else np.asarray(p, dtype=np.float64)


def per_joint_errors(pred, gt) -> np.ndarray:
    a, b = _rel_array(pred), _rel_array(gt)
    if a.shape != b.shape:
        raise ParameterError(f"joint count mismatch: {a.shape} vs {b.shape}")
    return np.linalg.norm(a - b, axis=-1)


def mpjpe(pred, gt) -> float:
    return float(np.mean(per_joint_errors(pred, gt)))


def per_finger_errors(pred, gt) -> np.ndarray:
    """Mean error of each finger (thumb, index, middle, ring, pinky)."""
    return per_joint_errors(pred, gt).reshape(5, 4).mean(axis=1)


# -- keypoint ingestion ------------------------------------------------------

def read_keypoints_jsonl(path) -> list[HandPose]:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                poses.append(HandPose(rec["joints"], float(rec["t"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad keypoint record: {exc}", lineno) from exc
    return poses


def write_keypoints_jsonl(path, poses) -> None:
    with open(path, "w") as fh:
        for p in poses:
            fh.write(json.dumps({"t": p.timestamp, "joints": p.joints.tolist()}) + "\n")


def read_keypoints_csv(path) -> list[HandPose]:
    """64 columns per row: timestamp then 21 x (x, y, z). A header row is optional."""
    poses = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError("non-numeric field", lineno)
            if len(values) != 1 + 3 * N_JOINTS:
                raise ParseError(f"expected 64 columns, got {len(values)}", lineno)
            poses.append(HandPose(np.reshape(values[1:], (N_JOINTS, 3)), values[0]))
    return poses


def write_keypoints_csv(path, poses) -> None:
    header = ["t"] + [f"{axis}{i}" for i in range(N_JOINTS) for axis in "xyz"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for p in poses:
            writer.writerow([repr(p.timestamp)] + [repr(float(v)) for v in p.joints.reshape(-1)])


def read_keypoints(path) -> list[HandPose]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_keypoints_csv(path)
    return read_keypoints_jsonl(path)
