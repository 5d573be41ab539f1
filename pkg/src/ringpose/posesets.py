"""Built-in synthetic pose and gesture sets.

The joint coordinates are produced by a small forward-kinematics hand model
(flexion angles per joint, spread per finger) and are approximations of the
named poses drawn by hand for testing. They are not measured data.

Run ``python -m ringpose.posesets`` to regenerate the JSON files under
``ringpose/data``.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .hand import HandPose

SYNTHETIC_NOTE = "SYNTHETIC: generated by ringpose.posesets forward kinematics, not measured data"

# Canonical frame: wrist at the origin, fingers along +y, index on +x,
# palmar side +z (fingers flex towards +z).
MCP = {
    "index": (22.0, 86.0, 0.0),
    "middle": (4.0, 89.0, 0.0),
    "ring": (-13.0, 84.0, 0.0),
    "pinky": (-28.0, 76.0, 0.0),
}
BONES = {
    "index": (40.0, 24.0, 19.0),
    "middle": (44.0, 28.0, 21.0),
    "ring": (41.0, 27.0, 21.0),
    "pinky": (32.0, 20.0, 18.0),
}
SPREAD = {"index": 8.0, "middle": 0.0, "ring": -8.0, "pinky": -17.0}
THUMB_CMC = (19.0, 20.0, 6.0)
THUMB_BONES = (36.0, 31.0, 26.0)

EXT = (0.0, 0.0, 0.0)
FOLD = (88.0, 100.0, 55.0)
CURL = (45.0, 60.0, 35.0)
BENT = (70.0, 20.0, 10.0)
CLAW = (5.0, 85.0, 60.0)
THUMB_OUT = (0.0, 0.0, 5.0, 5.0)  # opposition, abduction-flex, mcp, ip (degrees)
THUMB_SIDE = (15.0, 15.0, 10.0, 10.0)
THUMB_ACROSS = (60.0, 45.0, 40.0, 30.0)
THUMB_WRAP = (60.0, 35.0, 55.0, 45.0)
THUMB_OPPOSE = (70.0, 30.0, 20.0, 15.0)
THUMB_UP = (-10.0, -20.0, 0.0, 0.0)

FINGER_ORDER = ("index", "middle", "ring", "pinky")


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _finger_chain(name, flex, spread_delta=0.0):
    s = np.radians(SPREAD[name] + spread_delta)
    d0 = np.array([np.sin(s), np.cos(s), 0.0])
    z = np.array([0.0, 0.0, 1.0])
    pts = [np.array(MCP[name])]
    phi = 0.0
    for bone, angle in zip(BONES[name], flex):
        phi += np.radians(angle)
        pts.append(pts[-1] + bone * (np.cos(phi) * d0 + np.sin(phi) * z))
    return pts


def _thumb_chain(opposition, abduction, mcp, ip):
    # rest direction points out to +x,+y; opposition swings it into the palm (+z, -x)
    rest = _unit([0.75, 0.66, 0.05])
    towards_palm = _unit([-0.3, 0.6, 0.75])
    o = np.radians(opposition)
    d0 = _unit(np.cos(o) * rest + np.sin(o) * towards_palm)
    bend = _unit(towards_palm - np.dot(towards_palm, d0) * d0)
    pts = [np.array(THUMB_CMC)]
    phi = 0.0
    for bone, angle in zip(THUMB_BONES, (abduction, mcp, ip)):
        phi += np.radians(angle)
        pts.append(pts[-1] + bone * (np.cos(phi) * d0 + np.sin(phi) * bend))
    return pts


def hand_from_angles(fingers: dict, thumb, spread: dict | None = None, scale: float = 1.0) -> np.ndarray:
    """21x3 joint array from per-finger flexion triples and thumb parameters."""
    spread = spread or {}
    joints = [np.zeros(3)]
    joints += _thumb_chain(*thumb)
    for name in FINGER_ORDER:
        joints += _finger_chain(name, fingers[name], spread.get(name, 0.0))
    arr = np.array(joints)
    assert arr.shape == (21, 3)
    return arr * scale


def _pose(index, middle, ring, pinky, thumb, spread=None):
    return {"fingers": {"index": index, "middle": middle, "ring": ring, "pinky": pinky}, "thumb": thumb,
            "spread": spread or {}}


ASL_DIGITS = {
    "ASL0": _pose(CURL, CURL, CURL, CURL, THUMB_OPPOSE),
    "ASL1": _pose(EXT, FOLD, FOLD, FOLD, THUMB_ACROSS),
    "ASL2": _pose(EXT, EXT, FOLD, FOLD, THUMB_ACROSS, {"index": 6.0, "middle": -6.0}),
    "ASL3": _pose(EXT, EXT, FOLD, FOLD, THUMB_OUT, {"index": 6.0, "middle": -6.0}),
    "ASL4": _pose(EXT, EXT, EXT, EXT, THUMB_ACROSS),
    "ASL5": _pose(EXT, EXT, EXT, EXT, THUMB_OUT, {"index": 6.0, "ring": -4.0, "pinky": -8.0}),
    "ASL6": _pose(EXT, EXT, EXT, (60.0, 70.0, 30.0), THUMB_OPPOSE),
    "ASL7": _pose(EXT, EXT, (55.0, 70.0, 30.0), EXT, THUMB_OPPOSE),
    "ASL8": _pose(EXT, (55.0, 65.0, 30.0), EXT, EXT, THUMB_OPPOSE),
    "ASL9": _pose((50.0, 65.0, 30.0), EXT, EXT, EXT, THUMB_OPPOSE),
}

EXTRA_POSES = {
    "Fist": _pose(FOLD, FOLD, FOLD, FOLD, THUMB_WRAP),
    "Shaka": _pose(FOLD, FOLD, FOLD, EXT, THUMB_OUT, {"pinky": -10.0}),
    "ThumbUp": _pose(FOLD, FOLD, FOLD, FOLD, THUMB_UP),
    "Shoot": _pose(EXT, FOLD, FOLD, FOLD, THUMB_UP),
    "ILoveU": _pose(EXT, FOLD, FOLD, EXT, THUMB_OUT, {"pinky": -8.0}),
    "IBent": _pose(BENT, EXT, EXT, EXT, THUMB_SIDE),
    "MBent": _pose(EXT, BENT, EXT, EXT, THUMB_SIDE),
    "RBent": _pose(EXT, EXT, BENT, EXT, THUMB_SIDE),
    "Claw": _pose(CLAW, CLAW, CLAW, CLAW, (30.0, 20.0, 30.0, 40.0)),
    "Pinch": _pose((40.0, 45.0, 25.0), EXT, EXT, EXT, (55.0, 25.0, 15.0, 10.0)),
}

# Thumb-to-index micro gestures: keyframes (normalized time, pose params).
REST = _pose((12.0, 15.0, 8.0), (14.0, 16.0, 8.0), (16.0, 18.0, 10.0), (18.0, 20.0, 10.0),
             (25.0, 15.0, 10.0, 8.0))


def _rest_with(index=None, thumb=None):
    p = json.loads(json.dumps(REST))
    if index is not None:
        p["fingers"]["index"] = index
    if thumb is not None:
        p["thumb"] = thumb
    return p


_TIP_TOUCH = _rest_with(index=(35.0, 40.0, 25.0), thumb=(55.0, 25.0, 15.0, 10.0))
_SIDE_DISTAL = _rest_with(index=(25.0, 30.0, 15.0), thumb=(45.0, 10.0, 5.0, 5.0))
_SIDE_PROXIMAL = _rest_with(index=(25.0, 30.0, 15.0), thumb=(45.0, 30.0, 35.0, 30.0))
_INDEX_FLICK = _rest_with(index=(-10.0, 0.0, 0.0))
_CIRCLE_A = _rest_with(index=(20.0, 30.0, 15.0), thumb=(40.0, 5.0, 15.0, 10.0))
_CIRCLE_B = _rest_with(index=(20.0, 30.0, 15.0), thumb=(60.0, 20.0, 25.0, 15.0))
_CIRCLE_C = _rest_with(index=(20.0, 30.0, 15.0), thumb=(40.0, 35.0, 30.0, 20.0))

MICRO_GESTURES = {
    "Rest": [(0.0, REST), (1.0, REST)],
    "Tap": [(0.0, REST), (0.3, REST), (0.45, _TIP_TOUCH), (0.6, REST), (1.0, REST)],
    "DoubleTap": [(0.0, REST), (0.2, REST), (0.32, _TIP_TOUCH), (0.44, REST), (0.56, _TIP_TOUCH),
                  (0.68, REST), (1.0, REST)],
    "SwipeForward": [(0.0, REST), (0.2, REST), (0.35, _SIDE_PROXIMAL), (0.65, _SIDE_DISTAL),
                     (0.8, REST), (1.0, REST)],
    "SwipeBackward": [(0.0, REST), (0.2, REST), (0.35, _SIDE_DISTAL), (0.65, _SIDE_PROXIMAL),
                      (0.8, REST), (1.0, REST)],
    "Flick": [(0.0, REST), (0.3, REST), (0.4, _TIP_TOUCH), (0.5, _INDEX_FLICK), (0.7, REST), (1.0, REST)],
    "Circle": [(0.0, REST), (0.2, REST), (0.35, _CIRCLE_A), (0.5, _CIRCLE_B), (0.65, _CIRCLE_C),
               (0.8, REST), (1.0, REST)],
}
GESTURE_NAMES = tuple(MICRO_GESTURES)


def _joints_of(params, scale=1.0):
    return hand_from_angles(params["fingers"], params["thumb"], params["spread"], scale)


def build_pose_set(name: str) -> dict:
    if name == "asl-digits":
        table = ASL_DIGITS
    elif name == "study2-20poses":
        table = {**ASL_DIGITS, **EXTRA_POSES}
    else:
        raise KeyError(name)
    return {
        "name": name,
        "note": SYNTHETIC_NOTE,
        "units": "mm",
        "poses": {k: np.round(_joints_of(v), 6).tolist() for k, v in table.items()},
    }


def build_gesture_set() -> dict:
    gestures = {}
    for name, keys in MICRO_GESTURES.items():
        gestures[name] = [{"t": t, "joints": np.round(_joints_of(p), 6).tolist()} for t, p in keys]
    return {
        "name": "micro-7gestures",
        "note": SYNTHETIC_NOTE,
        "units": "mm",
        "duration_s": 2.0,
        "classes": {str(i): n for i, n in enumerate(GESTURE_NAMES)},
        "gestures": gestures,
    }


POSE_SETS = ("asl-digits", "study2-20poses")
GESTURE_SETS = ("micro-7gestures",)


def _load(name):
    text = resources.files("ringpose").joinpath("data", f"{name}.json").read_text()
    return json.loads(text)


def load_pose_set(name: str) -> dict[str, HandPose]:
    """Named built-in static poses as wrist-anchored HandPose objects."""
    if name not in POSE_SETS:
        raise KeyError(f"unknown pose set {name!r}; choose from {POSE_SETS}")
    data = _load(name)
    return {k: HandPose(v) for k, v in data["poses"].items()}


class GestureTemplate:
    """Keyframed joint trajectory over normalized time in [0, 1]."""

    def __init__(self, name, times, joints):
        self.name = name
        self.times = np.asarray(times, dtype=np.float64)
        self.joints = np.asarray(joints, dtype=np.float64)

    def at(self, u) -> np.ndarray:
        """Joints at normalized time ``u`` (smoothstep between keyframes)."""
        u = float(np.clip(u, 0.0, 1.0))
        k = int(np.searchsorted(self.times, u, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        a = 0.0 if t1 == t0 else (u - t0) / (t1 - t0)
        a = a * a * (3 - 2 * a)
        return (1 - a) * self.joints[k] + a * self.joints[k + 1]


def load_gesture_set(name: str = "micro-7gestures") -> list[GestureTemplate]:
    """Gesture templates in class-id order (0 = Rest)."""
    if name not in GESTURE_SETS:
        raise KeyError(f"unknown gesture set {name!r}")
    data = _load(name)
    out = []
    for i in range(len(data["classes"])):
        gname = data["classes"][str(i)]
        keys = data["gestures"][gname]
        out.append(GestureTemplate(gname, [k["t"] for k in keys], [k["joints"] for k in keys]))
    return out


def gesture_label_map(name: str = "micro-7gestures") -> dict[int, str]:
    return {int(k): v for k, v in _load(name)["classes"].items()}


def write_data_files(directory=None) -> list[Path]:
    directory = Path(directory or Path(__file__).parent / "data")
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in POSE_SETS:
        path = directory / f"{name}.json"
        path.write_text(json.dumps(build_pose_set(name), indent=1) + "\n")
        paths.append(path)
    path = directory / "micro-7gestures.json"
    path.write_text(json.dumps(build_gesture_set(), indent=1) + "\n")
    paths.append(path)
    path = directory / "micro-7gestures.labels.json"
    path.write_text(json.dumps({str(i): n for i, n in enumerate(GESTURE_NAMES)}, indent=1) + "\n")
    paths.append(path)
    return paths


if __name__ == "__main__":
    for p in write_data_files():
        print(p)
