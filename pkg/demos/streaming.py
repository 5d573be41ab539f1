"""Replay a packet capture through the threaded pipeline.

A short scenario is simulated, framed into 1208-byte sensor packets, and
two packets are dropped to show gap handling. The pipeline decodes,
correlates, windows and predicts with a k-NN model trained on one study
session, and reports per-stage latency.

    python3 demos/streaming.py
"""

import json

from ringpose.chirp import generate_chirp
from ringpose.estimate import fit
from ringpose.stream import PACKET_SIZE, Pipeline, PipelineConfig, Replay, encode_waveform
from ringpose.studies import Scenario, StudyConfig, pose_session, simulate_scenario

train = pose_session(0, StudyConfig(output_gain=0.04, stride=4))
model = fit(train.windows, k=1)

sc = Scenario(poses=("ASL1", "ASL2", "Fist"), shuffle=False, hold_s=1.2, transition_s=0.3, seed=5)
capture = encode_waveform(simulate_scenario(sc).rx.samples)
# drop packets 300 and 301
capture = capture[:300 * PACKET_SIZE] + capture[302 * PACKET_SIZE:]

source = Replay(capture, rate_factor=0.0)
pipe = Pipeline(generate_chirp(), PipelineConfig(stride=10, overflow="block"), model)
outputs = list(pipe.run(source))

print(f"{len(outputs)} windows, t0 = {pipe.t0}, gaps = {[(g.after_seq, g.next_seq) for g in source.gaps]}")
print(f"{sum(o.flagged for o in outputs)} windows overlap zero-filled frames")
for o in outputs[::12]:
    tip = o.prediction.joint(8)
    print(f"t = {o.t_last:6.3f} s  index tip at ({tip[0]:6.1f}, {tip[1]:6.1f}, {tip[2]:6.1f}) mm"
          f"{'  (gap)' if o.flagged else ''}")
print(json.dumps({k: round(v["mean_ms"], 3) for k, v in pipe.stats.report()["stages"].items()}, indent=1))
