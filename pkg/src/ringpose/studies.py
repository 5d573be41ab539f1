"""Desk-scale synthetic studies: sessions of simulated poses and gestures.

A session is one continuous recording with a fixed ring placement. Sessions
differ in pose order, sensor noise realisation and a small random slide of
the ring along the worn finger, which shifts every echo slightly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .chirp import ChirpParams, generate_chirp, transmit
from .dataset import WindowSpec, gesture_windows, make_windows, sync_labels
from .echo import EchoConfig, EchoProcessor, EchoProfile
from .errors import ParameterError
from .estimate import evaluate_gesture, evaluate_pose, fit, predict_gestures, predict_poses
from .hand import HandPose, read_keypoints, to_relative
from .posesets import load_gesture_set, load_pose_set
from .sim import PoseSequence, RingPlacement, SimConfig, render_received

CAMERA_FPS = 30.0


def smoothstep(a):
    a = np.clip(a, 0.0, 1.0)
    return a * a * (3 - 2 * a)


def pose_trajectory(poses: list[np.ndarray], hold_s: float = 1.6, transition_s: float = 0.4):
    """Joints-at-time function visiting ``poses`` in order (first one is held from t=0)."""
    period = hold_s + transition_s
    stack = np.asarray(poses)

    def joints_at(t: float) -> np.ndarray:
        i = int(np.clip(t // period, 0, len(stack) - 1))
        local = t - i * period
        if i == 0 or local >= transition_s:
            return stack[i]
        a = smoothstep(local / transition_s)
        return (1 - a) * stack[i - 1] + a * stack[i]

    return joints_at, period * len(stack)


@dataclass
class Session:
    profile: EchoProfile
    t0: int
    ground_truth: list
    windows: list = field(default_factory=list)
    placement: RingPlacement | None = None
    rx: object = None


@dataclass(frozen=True)
class StudyConfig:
    n_sessions: int = 12
    noise_std: float = 0.005
    jitter_frac: float = 0.05  # max slide of the ring along the proximal phalanx
    hold_s: float = 1.6
    transition_s: float = 0.4
    stride: int = 8
    seed: int = 2024
    worn_finger: str = "middle"
    output_gain: float = 1.0
    direct_path_gain: float = 0.5
    reference_pose: str | None = "ASL5"  # held at the start of every session, so t0 sees the same scene


def _session_rngs(seed, s):
    return np.random.default_rng([seed, s])


def _render_session(joints_at, duration, placement, sim_cfg, echo_cfg, chirp):
    rate = echo_cfg.sample_rate / echo_cfg.frame_len
    n_frames = int(round(duration * rate))
    frame_t = np.arange(n_frames) / rate
    seq = PoseSequence(tuple(HandPose(joints_at(t), t) for t in frame_t), rate)
    tx = transmit(chirp, n_frames)
    return render_received(tx, seq, placement, sim_cfg, echo_cfg)


def pose_session(
    s: int, cfg: StudyConfig = StudyConfig(), pose_set: str = "study2-20poses",
    echo_cfg: EchoConfig = EchoConfig(), chirp: ChirpParams = ChirpParams(), processor=None,
) -> Session:
    """Simulate session ``s`` of the continuous pose-tracking study."""
    rng = _session_rngs(cfg.seed, s)
    poses = list(load_pose_set(pose_set).values())
    order = list(rng.permutation(len(poses)))
    if cfg.reference_pose is not None:
        names = list(load_pose_set(pose_set))
        order = [names.index(cfg.reference_pose)] + order
    along = 0.5 + rng.uniform(-cfg.jitter_frac, cfg.jitter_frac)
    placement = RingPlacement(cfg.worn_finger, along)
    sim_cfg = SimConfig(
        direct_path_gain=cfg.direct_path_gain, noise_std=cfg.noise_std,
        seed=int(rng.integers(2**63)), output_gain=cfg.output_gain,
    )
    joints_at, duration = pose_trajectory([poses[i].joints for i in order], cfg.hold_s, cfg.transition_s)
    rx = _render_session(joints_at, duration, placement, sim_cfg, echo_cfg, chirp)

    processor = processor or EchoProcessor(generate_chirp(chirp), echo_cfg)
    profile, t0 = processor.profile(rx)
    cam_t = np.arange(0.0, duration, 1.0 / CAMERA_FPS)
    gt = [HandPose(joints_at(t), float(t)) for t in cam_t]
    labels = sync_labels(profile, gt)
    windows = make_windows(profile, labels, WindowSpec(100, cfg.stride))
    return Session(profile, t0, gt, windows, placement, rx)


def leave_one_session_out(sessions, k: int = 1, kind: str = "pose"):
    """Pool held-out predictions over all folds; returns ``(report, preds, truths)``."""
    preds, truths = [], []
    for i, held in enumerate(sessions):
        train = [w for j, s in enumerate(sessions) if j != i for w in s.windows]
        model = fit(train, k=k)
        if kind == "pose":
            preds += predict_poses(model, held.windows)
        else:
            preds += predict_gestures(model, held.windows)
        truths += [w.label for w in held.windows]
    if kind == "pose":
        return evaluate_pose(preds, truths), preds, truths
    return evaluate_gesture(preds, truths), preds, truths


def mean_joint_norm(pose_set: str = "study2-20poses") -> float:
    rel = [to_relative(p).joints for p in load_pose_set(pose_set).values()]
    return float(np.mean(np.linalg.norm(np.asarray(rel), axis=-1)))


def run_pose_study(cfg: StudyConfig = StudyConfig(), k: int = 1):
    sessions = [pose_session(s, cfg) for s in range(cfg.n_sessions)]
    report, _, _ = leave_one_session_out(sessions, k, "pose")
    return report, sessions


# -- gestures ----------------------------------------------------------------

@dataclass(frozen=True)
class GestureStudyConfig:
    n_sessions: int = 9
    repetitions: int = 10
    noise_std: float = 0.005
    jitter_frac: float = 0.01  # re-wear slide; gestures are far more sensitive to it than poses
    onset_jitter_s: float = 0.08
    speed_jitter: float = 0.08
    instance_s: float = 2.0
    seed: int = 7
    worn_finger: str = "middle"
    direct_path_gain: float = 0.5


def gesture_session(s: int, cfg: GestureStudyConfig = GestureStudyConfig(),
                    echo_cfg: EchoConfig = EchoConfig(), chirp: ChirpParams = ChirpParams()) -> Session:
    rng = _session_rngs(cfg.seed, s)
    templates = load_gesture_set()
    classes = np.repeat(np.arange(len(templates)), cfg.repetitions)
    classes = classes[rng.permutation(len(classes))]
    onsets = rng.uniform(-cfg.onset_jitter_s, cfg.onset_jitter_s, len(classes))
    speeds = 1.0 + rng.uniform(-cfg.speed_jitter, cfg.speed_jitter, len(classes))
    along = 0.5 + rng.uniform(-cfg.jitter_frac, cfg.jitter_frac)
    placement = RingPlacement(cfg.worn_finger, along)
    sim_cfg = SimConfig(
        direct_path_gain=cfg.direct_path_gain, noise_std=cfg.noise_std, seed=int(rng.integers(2**63)),
    )
    dur = cfg.instance_s

    def joints_at(t):
        i = int(np.clip(t // dur, 0, len(classes) - 1))
        local = t - i * dur
        # time-warp about the instance centre, then shift by the onset jitter
        u = 0.5 + ((local - onsets[i]) / dur - 0.5) * speeds[i]
        return templates[classes[i]].at(u)

    duration = dur * len(classes)
    rx = _render_session(joints_at, duration, placement, sim_cfg, echo_cfg, chirp)
    profile, t0 = EchoProcessor(generate_chirp(chirp), echo_cfg).profile(rx)
    instances = [(i * dur, int(c)) for i, c in enumerate(classes)]
    windows = gesture_windows(profile, instances, WindowSpec.classification(), dur)
    return Session(profile, t0, instances, windows, placement, rx)


def run_gesture_study(cfg: GestureStudyConfig = GestureStudyConfig(), k: int = 1):
    sessions = [gesture_session(s, cfg) for s in range(cfg.n_sessions)]
    report, _, _ = leave_one_session_out(sessions, k, "gesture")
    return report, sessions


# -- scenario files ------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Declarative simulation recipe, loadable from JSON.

    ``kind`` is ``"poses"`` (hold each named pose in turn) or ``"gestures"``
    (``repetitions`` shuffled instances of every micro-gesture class).
    ``pose_file`` replaces the built-in set with a keypoint file; its poses
    are named ``pose0``, ``pose1``, ... in file order.
    """

    kind: str = "poses"
    pose_set: str = "study2-20poses"
    pose_file: str | None = None
    poses: tuple | None = None
    shuffle: bool = True
    reference_pose: str | None = "ASL5"
    hold_s: float = 1.6
    transition_s: float = 0.4
    repetitions: int = 2
    instance_s: float = 2.0
    worn_finger: str = "middle"
    along_segment: float = 0.5
    noise_std: float = 0.005
    direct_path_gain: float = 0.5
    output_gain: float = 0.04
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("poses", "gestures"):
            raise ParameterError(f"scenario kind must be 'poses' or 'gestures', got {self.kind!r}")
        if self.hold_s <= 0 or self.instance_s <= 0 or self.transition_s < 0 or self.repetitions < 1:
            raise ParameterError("hold_s and instance_s must be > 0, transition_s >= 0, repetitions >= 1")
        if self.poses is not None:
            object.__setattr__(self, "poses", tuple(self.poses))

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["poses"] is not None:
            d["poses"] = list(d["poses"])
        return d


@dataclass
class ScenarioResult:
    rx: object
    ground_truth: list
    instances: list
    placement: RingPlacement


def simulate_scenario(sc: Scenario, echo_cfg: EchoConfig = EchoConfig(), chirp: ChirpParams = ChirpParams(),
                      threads: int = 1) -> ScenarioResult:
    rng = np.random.default_rng(sc.seed)
    placement = RingPlacement(sc.worn_finger, sc.along_segment)
    sim_cfg = SimConfig(direct_path_gain=sc.direct_path_gain, noise_std=sc.noise_std,
                        seed=int(rng.integers(2**63)), output_gain=sc.output_gain)
    instances = []
    if sc.kind == "poses":
        if sc.pose_file is not None:
            table = {f"pose{i}": p for i, p in enumerate(read_keypoints(sc.pose_file))}
        else:
            table = load_pose_set(sc.pose_set)
        names = list(sc.poses) if sc.poses is not None else list(table)
        unknown = [n for n in names + ([sc.reference_pose] if sc.reference_pose else []) if n not in table]
        if unknown:
            raise ParameterError(f"poses not in {sc.pose_file or sc.pose_set}: {unknown}")
        if sc.shuffle:
            names = [names[i] for i in rng.permutation(len(names))]
        if sc.reference_pose is not None:
            names = [sc.reference_pose] + names
        joints_at, duration = pose_trajectory([table[n].joints for n in names], sc.hold_s, sc.transition_s)
        period = sc.hold_s + sc.transition_s
        instances = [(i * period, n) for i, n in enumerate(names)]
    else:
        templates = load_gesture_set()
        classes = np.repeat(np.arange(len(templates)), sc.repetitions)
        if sc.shuffle:
            classes = classes[rng.permutation(len(classes))]
        dur = sc.instance_s

        def joints_at(t):
            i = int(np.clip(t // dur, 0, len(classes) - 1))
            return templates[classes[i]].at((t - i * dur) / dur)

        duration = dur * len(classes)
        instances = [(i * dur, int(c)) for i, c in enumerate(classes)]
    rate = echo_cfg.sample_rate / echo_cfg.frame_len
    n_frames = int(round(duration * rate))
    seq = PoseSequence(tuple(HandPose(joints_at(t), t) for t in np.arange(n_frames) / rate), rate)
    rx = render_received(transmit(chirp, n_frames), seq, placement, sim_cfg, echo_cfg, threads=threads)
    cam_t = np.arange(0.0, duration, 1.0 / CAMERA_FPS)
    gt = [HandPose(joints_at(t), float(t)) for t in cam_t]
    return ScenarioResult(rx, gt, instances, placement)
