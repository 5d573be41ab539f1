"""From one chirp to an echo frame.

Transmit a 20-24 kHz chirp, bounce it off a single point reflector with a
co-located speaker and microphone, and read the reflector's range off the
correlation envelope. An empty-scene recording serves as the calibration
that removes the direct path.

    python3 demos/range_processing.py
"""

import numpy as np

from ringpose.chirp import generate_chirp
from ringpose.echo import EchoProcessor, correlation_envelope, crop_frame, distance_to_pixel, pixel_to_distance
from ringpose.sim import SimConfig, render_reflectors

template = generate_chirp()
proc = EchoProcessor(template)
quiet = SimConfig(noise_std=0.0)
origin = np.zeros((1, 3))

# Calibration: nothing in front of the ring, only the direct path.
empty = render_reflectors(template, origin, origin, np.zeros((1, 0, 3)), quiet)
bg = proc.correlate_frame(empty.samples)
t0 = int(np.argmax(correlation_envelope(bg)))
print(f"direct path at pixel {t0}")

print(" range (mm)   expected px   measured px")
for d in (30.0, 60.0, 85.75, 120.0, 170.0):
    scene = render_reflectors(template, origin, origin, np.array([[[d, 0.0, 0.0]]]), quiet)
    env = correlation_envelope(proc.correlate_frame(scene.samples) - bg)
    measured = int(np.argmax(crop_frame(env, t0).values))
    print(f"{d:10.2f}   {distance_to_pixel(d):11d}   {measured:11d}")

# Pixels are round-trip samples: 343 m/s over 2 x 50 kHz.
print(f"one pixel = {pixel_to_distance(1):.2f} mm, the 54-pixel crop reaches {pixel_to_distance(54):.1f} mm")
