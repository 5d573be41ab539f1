"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records one PASS/FAIL line with the measured values and its
runtime; the lines are printed together at the end of the pytest run
(see ``conftest.py``). Criterion 5 compares against ORACLE_MPJPE_MM, computed
once with ``python3 tests/oracles.py`` (brute-force exact pipeline, same
sessions) and frozen here.
"""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

import oracles
from ringpose.augment import AugmentConfig, draw_hshift, draw_vshift, horizontal_shift, max_hshift, pixel_noise, vertical_shift
from ringpose.chirp import frames_per_second, generate_chirp, payload_bitrate
from ringpose.dataset import WindowSpec, make_windows
from ringpose.echo import EchoProcessor, correlation_envelope, cross_correlate, crop_frame, distance_to_pixel, pixel_to_distance
from ringpose.errors import IntegrityError
from ringpose.estimate import fit, predict_poses
from ringpose.hand import RelativeHandPose, align_to_reference, mpjpe, normalize_size
from ringpose.sim import SimConfig, render_reflectors
from ringpose.stream import PACKET_SIZE, Pipeline, PipelineConfig, Replay, benchmark, decode_packet, encode_packet, encode_waveform, waveform_from_capture
from ringpose.studies import GestureStudyConfig, Scenario, StudyConfig, mean_joint_norm, pose_session, run_gesture_study, run_pose_study, simulate_scenario

ORACLE_MPJPE_MM = 18.1722  # python3 tests/oracles.py, 12 sessions, brute-force pipeline

RESULTS = {}
TPL = generate_chirp()


def record(n, checks, started):
    """Store the outcome of criterion ``n``; ``checks`` is a list of (label, ok)."""
    elapsed = time.perf_counter() - started
    ok = all(c for _, c in checks)
    detail = "; ".join(f"{label}{'' if c else ' [X]'}" for label, c in checks)
    RESULTS[n] = (ok, f"{detail} ({elapsed:.1f} s)")
    assert ok, detail


def within(measured, target, rel=0.005):
    return abs(measured - target) <= rel * target


def test_1_constants():
    t = time.perf_counter()
    checks = []
    for label, got, want in [
        ("1 px", pixel_to_distance(1), 3.43),
        ("54 px", pixel_to_distance(54), 185.2),
        ("600 px", pixel_to_distance(600), 2060.0),
        ("frame rate", frames_per_second(), 83.0),
        ("bitrate", payload_bitrate(), 800_000.0),
    ]:
        checks.append((f"{label}={got:.4g}", within(got, want)))
    elapsed = time.perf_counter() - t
    checks.append((f"runtime {elapsed:.3f} s < 1 s", elapsed < 1.0))
    record(1, checks, t)


def test_2_range_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(20)
    cfg = SimConfig(noise_std=0.0)
    z = np.zeros((1, 3))
    proc = EchoProcessor(TPL)
    bg = render_reflectors(TPL, z, z, np.zeros((1, 0, 3)), cfg)
    bg_corr = proc.correlate_frame(bg.samples)
    t0 = int(np.argmax(correlation_envelope(bg_corr)))
    hits = 0
    for d in rng.uniform(20, 180, 100):
        v = rng.normal(size=3)
        pts = (d * v / np.linalg.norm(v))[None, None]
        rx = render_reflectors(TPL, z, z, pts, cfg)
        env = correlation_envelope(proc.correlate_frame(rx.samples) - bg_corr)
        px = int(np.argmax(crop_frame(env, t0).values))
        hits += abs(px - distance_to_pixel(d)) <= 1
    elapsed = time.perf_counter() - t
    record(2, [(f"{hits}/100 within 1 px", hits == 100), (f"t0={t0}", t0 == 0),
               (f"runtime {elapsed:.1f} s < 10 s", elapsed < 10)], t)


def test_3_correlation_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(30)
    worst = 0.0
    for _ in range(50):
        rx, tpl = rng.normal(size=600), rng.normal(size=600)
        direct = oracles.correlate_direct(rx, tpl)
        worst = max(worst, np.linalg.norm(cross_correlate(rx, tpl) - direct) / np.linalg.norm(direct))
    record(3, [(f"max relative error {worst:.1e} <= 1e-6", worst <= 1e-6)], t)


def _random_rel(rng):
    j = rng.normal(0, 40, (20, 3))
    j[4] = [80, 0, 0] + rng.normal(0, 5, 3)
    j[16] = [0, 80, 0] + rng.normal(0, 5, 3)
    return RelativeHandPose(j)


def test_4_geometry():
    t = time.perf_counter()
    rng = np.random.default_rng(40)
    rot_err = rigid_err = idem_err = size_err = 0.0
    for i in range(1000):
        base = align_to_reference(_random_rel(rng))
        R = Rotation.random(random_state=i).as_matrix()
        rotated = RelativeHandPose(base.joints @ R.T)
        once = align_to_reference(rotated)
        rot_err = max(rot_err, np.abs(once.joints - base.joints).max())
        d0 = np.linalg.norm(rotated.joints[:, None] - rotated.joints[None], axis=-1)
        d1 = np.linalg.norm(once.joints[:, None] - once.joints[None], axis=-1)
        rigid_err = max(rigid_err, np.abs(d0 - d1).max(), abs(np.linalg.norm(once.joints, axis=1)
                                                              - np.linalg.norm(rotated.joints, axis=1)).max())
        idem_err = max(idem_err, np.abs(align_to_reference(once).joints - once.joints).max())
        length = rng.uniform(50, 120)
        size_err = max(size_err, abs(np.linalg.norm(normalize_size(once, length).joint(17)) - length))
    axioms = True
    for _ in range(1000):
        p, q, r = _random_rel(rng), _random_rel(rng), _random_rel(rng)
        pq, qp, pr, qr = mpjpe(p, q), mpjpe(q, p), mpjpe(p, r), mpjpe(q, r)
        axioms &= pq > 0 and mpjpe(p, p) == 0 and abs(pq - qp) < 1e-12 and pr <= pq + qr + 1e-9
    record(4, [
        (f"rotation recovery {rot_err:.1e} <= 1e-6", rot_err <= 1e-6),
        (f"rigidity {rigid_err:.1e} <= 1e-9", rigid_err <= 1e-9),
        (f"idempotence {idem_err:.1e} <= 1e-9", idem_err <= 1e-9),
        (f"size normalization {size_err:.1e} <= 1e-9", size_err <= 1e-9),
        ("metric axioms on 1000 pairs", axioms),
    ], t)


@pytest.mark.slow
def test_5_pose_study():
    t = time.perf_counter()
    report, _ = run_pose_study(StudyConfig())
    elapsed = time.perf_counter() - t
    limit_a = 0.2 * mean_joint_norm()
    checks = [(f"MPJPE {report.mpjpe_mm:.2f} mm < 20% of mean joint norm ({limit_a:.2f} mm)",
               report.mpjpe_mm < limit_a)]
    if ORACLE_MPJPE_MM is None:
        checks.append(("oracle threshold not frozen", False))
    else:
        checks.append((f"<= 2x oracle ({2 * ORACLE_MPJPE_MM:.2f} mm)", report.mpjpe_mm <= 2 * ORACLE_MPJPE_MM))
    checks.append((f"runtime {elapsed:.0f} s < 300 s", elapsed < 300))
    record(5, checks, t)


@pytest.mark.slow
def test_6_gesture_study():
    t = time.perf_counter()
    cfg = GestureStudyConfig()
    report, sessions = run_gesture_study(cfg)
    elapsed = time.perf_counter() - t
    cm = np.array(report.confusion)
    truth_counts = np.bincount([w.label for s in sessions for w in s.windows], minlength=7)
    record(6, [
        (f"accuracy {100 * report.accuracy:.2f}% >= 95%", report.accuracy >= 0.95),
        ("confusion row sums = class counts", np.array_equal(cm.sum(axis=1), truth_counts)),
        (f"runtime {elapsed:.0f} s < 180 s", elapsed < 180),
    ], t)


def test_7_augmentation_statistics():
    t = time.perf_counter()
    x = np.random.default_rng(70).uniform(0.5, 2.0, (2, 500, 1000))
    cfg = AugmentConfig(seed=71)
    out = pixel_noise(x, cfg)
    frac = float(np.mean(out != x))
    ratio = out / x
    vs = [draw_vshift(AugmentConfig(seed=s)) for s in range(5000)]
    hs = [draw_hshift(100, AugmentConfig(seed=s)) for s in range(5000)]
    win = np.random.default_rng(72).normal(size=(2, 54, 100))
    det = (np.array_equal(out, pixel_noise(x, cfg))
           and np.array_equal(vertical_shift(win, cfg), vertical_shift(win, cfg))
           and np.array_equal(horizontal_shift(win, cfg), horizontal_shift(win, cfg)))
    record(7, [
        (f"modified fraction {frac:.4f} = 0.80 +- 0.01", abs(frac - 0.80) <= 0.01),
        (f"ratios in [{ratio.min():.4f}, {ratio.max():.4f}]", ratio.min() >= 0.95 and ratio.max() <= 1.05),
        (f"vshift in [{min(vs)}, {max(vs)}]", max(abs(v) for v in vs) <= 3),
        (f"hshift in [{min(hs)}, {max(hs)}]", max(abs(h) for h in hs) <= max_hshift(100) == 13),
        ("deterministic per seed", det),
    ], t)


@pytest.mark.slow
def test_8_performance_and_equivalence():
    t = time.perf_counter()
    rep = benchmark(n_windows=500)
    corr = rep["stages"]["correlate_ms"]["mean_ms"]
    sess = pose_session(0, StudyConfig(output_gain=0.04, stride=4))
    model = fit(sess.windows, k=3)
    res = simulate_scenario(Scenario(hold_s=2.6, transition_s=0.4, seed=8))
    data = encode_waveform(res.rx.samples)
    wf = waveform_from_capture(data)
    profile, t0 = EchoProcessor(TPL).profile(wf)
    batch = make_windows(profile, 0, WindowSpec(100, 1))
    batch_pred = predict_poses(model, batch)
    pipe = Pipeline(TPL, PipelineConfig(stride=1, overflow="block"), model, keep_columns=True)
    outs = list(pipe.run(Replay(data)))
    exact = (
        pipe.t0 == t0
        and np.array_equal(np.stack(pipe.columns, axis=1), profile.original)
        and len(outs) == len(batch)
        and all(np.array_equal(o.window, w.input) for o, w in zip(outs, batch))
        and all(np.array_equal(o.prediction.joints, p.joints) for o, p in zip(outs, batch_pred))
    )
    record(8, [
        (f"correlate+crop {corr:.2f} ms/window <= 14.7 ms over 500 windows", corr <= 14.7),
        (f"offline/online bit-exact over {len(wf.samples) / 50000:.0f} s ({len(outs)} windows)",
         exact and len(wf.samples) >= 60 * 50000),
    ], t)


@pytest.mark.slow
def test_9_codec_integrity():
    t = time.perf_counter()
    rng = np.random.default_rng(90)
    misses = 0
    for _ in range(10_000):
        raw = bytearray(encode_packet(int(rng.integers(2**32)), rng.integers(-2**15, 2**15, 600, dtype=np.int16)))
        bit = int(rng.integers(16, (PACKET_SIZE - 2) * 8))
        raw[bit // 8] ^= 1 << (bit % 8)
        try:
            decode_packet(bytes(raw))
            misses += 1
        except IntegrityError:
            pass
    trips = 0
    for _ in range(10_000):
        seq, codes = int(rng.integers(2**32)), rng.integers(-2**15, 2**15, 600, dtype=np.int16)
        pkt = decode_packet(encode_packet(seq, codes))
        trips += pkt.seq == seq and np.array_equal(pkt.payload, codes)
    blob = b"".join(encode_packet(i, np.zeros(600, np.int16)) for i in range(5000))
    t1 = time.monotonic()
    count = 0
    for _ in Replay(blob, rate_factor=1.0):
        if time.monotonic() - t1 >= 10.0:
            break
        count += 1
    record(9, [
        (f"{misses} undetected of 10^4 bit flips", misses == 0),
        (f"{trips}/10^4 round trips exact", trips == 10_000),
        (f"{count} packets in 10 s (833 +- 1)", abs(count - 833) <= 1),
    ], t)
