"""A miniature version of the desk-scale pose study.

Four simulated sessions of the 20 static poses, each with its own sensor
noise and a small slide of the ring along the middle finger. A 1-NN model
is scored leave-one-session-out. Each fold trains on only three sessions,
so the error is higher than in the full twelve-session version that the
acceptance suite runs.

    python3 demos/pose_study.py
"""

import time

from ringpose.studies import StudyConfig, leave_one_session_out, mean_joint_norm, pose_session

cfg = StudyConfig(n_sessions=4)
t = time.perf_counter()
sessions = [pose_session(s, cfg) for s in range(cfg.n_sessions)]
for i, s in enumerate(sessions):
    print(f"session {i}: ring at {s.placement.along_segment:.3f} of the phalanx, "
          f"t0 = {s.t0}, {len(s.windows)} windows")

report, _, _ = leave_one_session_out(sessions, k=1, kind="pose")
print()
print(report.table().split("joint ")[0].rstrip())
print(f"\nmean joint norm {mean_joint_norm():.1f} mm; elapsed {time.perf_counter() - t:.0f} s")
