"""Nearest-neighbour baselines and the evaluation harness.

The k-NN model stands in for a trained network: it consumes the same
normalized ``[2 x 54 x W]`` windows and produces the same outputs (60 joint
coordinates or a class id), so externally trained models can be scored with
the same reports through :func:`import_predictions`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataset import LabeledWindow
from .errors import ParameterError, ParseError, StateError
from .hand import FINGERS, RelativeHandPose, per_joint_errors

N_GESTURES = 7
_QUERY_CHUNK = 256


@dataclass
class KnnModel:
    k: int = 3
    weighted: bool = False
    exemplars: np.ndarray | None = None
    labels: np.ndarray | None = None
    kind: str | None = None
    input_shape: tuple | None = None
    timestamps: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")

    @property
    def size(self) -> int:
        return 0 if self.exemplars is None else self.exemplars.shape[0]

    def _check_ready(self):
        if self.size == 0:
            raise StateError("model has no exemplars; call fit() first")
        if self.size < self.k:
            raise StateError(f"model holds {self.size} exemplars, fewer than k={self.k}")

    def _queries(self, windows) -> np.ndarray:
        xs = []
        for w in windows:
            x = w.input if isinstance(w, LabeledWindow) else np.asarray(w, dtype=np.float32)
            if x.shape != self.input_shape:
                raise ParameterError(f"window shape {x.shape} does not match model shape {self.input_shape}")
            xs.append(x.reshape(-1))
        return np.asarray(xs, dtype=np.float64).reshape(len(xs), -1)

    def neighbours(self, windows):
        """Indices and Euclidean distances of the k nearest exemplars per query."""
        self._check_ready()
        q = self._queries(windows)
        sq_ex = np.einsum("ij,ij->i", self.exemplars, self.exemplars)
        idx_out, dist_out = [], []
        for lo in range(0, q.shape[0], _QUERY_CHUNK):
            qc = q[lo:lo + _QUERY_CHUNK]
            d2 = np.einsum("ij,ij->i", qc, qc)[:, None] + sq_ex[None, :] - 2.0 * qc @ self.exemplars.T
            d2 = np.maximum(d2, 0.0)
            order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            idx_out.append(order)
            dist_out.append(np.sqrt(np.take_along_axis(d2, order, axis=1)))
        if not idx_out:
            return np.empty((0, self.k), int), np.empty((0, self.k))
        return np.vstack(idx_out), np.vstack(dist_out)


def fit(windows: Sequence[LabeledWindow], k: int = 3, weighted: bool = False) -> KnnModel:
    windows = list(windows)
    model = KnnModel(k=k, weighted=weighted)
    if not windows:
        return model
    kinds = {w.kind for w in windows}
    shapes = {w.input.shape for w in windows}
    if len(kinds) != 1 or len(shapes) != 1:
        raise ParameterError("training windows must share label kind and shape")
    model.kind = kinds.pop()
    model.input_shape = shapes.pop()
    model.exemplars = np.asarray([w.input.reshape(-1) for w in windows], dtype=np.float64)
    if model.kind == "pose":
        model.labels = np.asarray([w.label.flat() for w in windows])
    else:
        model.labels = np.asarray([w.label for w in windows], dtype=int)
    model.timestamps = np.array([w.t_last for w in windows])
    return model


def _weights(dist, weighted):
    if not weighted:
        return np.ones_like(dist)
    return 1.0 / np.maximum(dist, 1e-12)


def predict_poses(model: KnnModel, windows) -> list[RelativeHandPose]:
    if model.kind not in (None, "pose"):
        raise ParameterError("model was fitted on gesture labels")
    idx, dist = model.neighbours(windows)
    out = []
    for w, row, d in zip(windows, idx, dist):
        wt = _weights(d, model.weighted)
        coords = (model.labels[row] * wt[:, None]).sum(axis=0) / wt.sum()
        t = w.t_last if isinstance(w, LabeledWindow) else 0.0
        out.append(RelativeHandPose.from_flat(coords, t))
    return out


def _vote(classes, dist, weighted):
    wt = _weights(dist, weighted)
    tally = {}
    for c, w, d in zip(classes, wt, dist):
        votes, total = tally.get(int(c), (0.0, 0.0))
        tally[int(c)] = (votes + w, total + d)
    best = max(v for v, _ in tally.values())
    tied = [(total, c) for c, (v, total) in tally.items() if v == best]
    return min(tied)[1]


def predict_gestures(model: KnnModel, windows) -> list[int]:
    if model.kind not in (None, "gesture"):
        raise ParameterError("model was fitted on pose labels")
    idx, dist = model.neighbours(windows)
    return [_vote(model.labels[row], d, model.weighted) for row, d in zip(idx, dist)]


def predict_pose(model: KnnModel, window) -> RelativeHandPose:
    return predict_poses(model, [window])[0]


def predict_gesture(model: KnnModel, window) -> int:
    return predict_gestures(model, [window])[0]


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    n: int
    mpjpe_mm: float | None = None
    per_joint_mm: list | None = None
    per_finger_mm: list | None = None
    accuracy: float | None = None
    macro_f1: float | None = None
    confusion: list | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def table(self) -> str:
        lines = [f"instances: {self.n}"]
        if self.mpjpe_mm is not None:
            lines.append(f"MPJPE: {self.mpjpe_mm:.2f} mm")
            lines.append("finger   error (mm)")
            for name, e in zip(FINGERS, self.per_finger_mm):
                lines.append(f"{name:<8} {e:8.2f}")
            lines.append("joint    error (mm)")
            for j, e in enumerate(self.per_joint_mm, 1):
                lines.append(f"{j:<8} {e:8.2f}")
        if self.accuracy is not None:
            lines.append(f"accuracy: {100 * self.accuracy:.2f}%")
            lines.append(f"macro-F1: {self.macro_f1:.4f}")
            lines.append("confusion (rows = truth, cols = prediction):")
            for row in self.confusion:
                lines.append(" ".join(f"{c:4d}" for c in row))
        return "\n".join(lines)


def _pose_arrays(poses):
    return np.asarray([p.joints if isinstance(p, RelativeHandPose) else np.reshape(p, (20, 3)) for p in poses])


def evaluate_pose(preds, gts) -> EvalReport:
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ParameterError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        return EvalReport(n=0)
    errs = per_joint_errors(_pose_arrays(preds), _pose_arrays(gts))
    per_joint = errs.mean(axis=0)
    return EvalReport(
        n=len(preds),
        mpjpe_mm=float(errs.mean()),
        per_joint_mm=per_joint.tolist(),
        per_finger_mm=per_joint.reshape(5, 4).mean(axis=1).tolist(),
    )


def confusion_matrix(preds, gts, n_classes: int = N_GESTURES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    for p, g in zip(preds, gts):
        if not (0 <= g < n_classes and 0 <= p < n_classes):
            raise ParameterError(f"class id out of range: truth {g}, prediction {p}")
        cm[g, p] += 1
    return cm


def macro_f1(cm: np.ndarray) -> float:
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = (tp + fp + fn) > 0
    if not present.any():
        return 0.0
    f1 = 2 * tp[present] / (2 * tp[present] + fp[present] + fn[present])
    return float(f1.mean())


def evaluate_gesture(preds, gts, n_classes: int = N_GESTURES) -> EvalReport:
    preds, gts = [int(p) for p in preds], [int(g) for g in gts]
    if len(preds) != len(gts):
        raise ParameterError(f"{len(preds)} predictions for {len(gts)} ground truths")
    cm = confusion_matrix(preds, gts, n_classes)
    total = cm.sum()
    return EvalReport(
        n=len(preds),
        accuracy=float(np.trace(cm) / total) if total else 0.0,
        macro_f1=macro_f1(cm),
        confusion=cm.tolist(),
    )


# -- prediction exchange -----------------------------------------------------

def write_predictions(path, predictions) -> None:
    """JSON lines of ``{"t", "pose": [60]}`` or ``{"t", "gesture": id}``."""
    with open(path, "w") as fh:
        for t, pred in predictions:
            if isinstance(pred, RelativeHandPose):
                rec = {"t": float(t), "pose": pred.flat().tolist()}
            else:
                rec = {"t": float(t), "gesture": int(pred)}
            fh.write(json.dumps(rec) + "\n")


def read_predictions(path) -> list[tuple]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from exc
            if not isinstance(rec, dict) or "t" not in rec:
                raise ParseError("record needs a 't' field", lineno)
            try:
                t = float(rec["t"])
            except (TypeError, ValueError):
                raise ParseError("'t' is not a number", lineno)
            if "pose" in rec:
                coords = rec["pose"]
                if not isinstance(coords, list) or len(coords) != 60:
                    n = len(coords) if isinstance(coords, list) else "non-list"
                    raise ParseError(f"pose needs 60 coordinates, got {n}", lineno)
                try:
                    out.append((t, RelativeHandPose.from_flat(np.asarray(coords, dtype=np.float64), t)))
                except (TypeError, ValueError) as exc:
                    raise ParseError(f"bad pose coordinates: {exc}", lineno) from exc
            elif "gesture" in rec:
                g = rec["gesture"]
                if not isinstance(g, int) or isinstance(g, bool):
                    raise ParseError("gesture must be an integer class id", lineno)
                out.append((t, g))
            else:
                raise ParseError("record needs 'pose' or 'gesture'", lineno)
    return out


def frame_index(t, frame_period: float = 0.012, origin: float = 0.0):
    """Frame-clock bin of timestamp ``t`` (robust to float round-off at bin edges)."""
    return np.floor((np.asarray(t, dtype=np.float64) - origin) / frame_period + 1e-6).astype(np.int64)


def align_predictions(predictions, gt_times, frame_period: float = 0.012, origin: float = 0.0) -> list:
    """For each ground-truth time, the latest prediction whose frame is not after it.

    Entries are ``None`` where no prediction precedes the ground truth.
    """
    predictions = sorted(predictions, key=lambda p: p[0])
    if not predictions:
        return [None] * len(gt_times)
    pf = frame_index([p[0] for p in predictions], frame_period, origin)
    gf = frame_index(gt_times, frame_period, origin)
    idx = np.searchsorted(pf, gf, side="right") - 1
    return [predictions[i][1] if i >= 0 else None for i in idx]


def import_predictions(path, gt_times=None, frame_period: float = 0.012, origin: float = 0.0):
    """Read a prediction file; align it to ``gt_times`` when given."""
    preds = read_predictions(path)
    if gt_times is None:
        return preds
    return align_predictions(preds, gt_times, frame_period, origin)
