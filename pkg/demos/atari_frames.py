"""
Atari-style frame preprocessing on synthetic screens
====================================================

No emulator is bundled, so this feeds hand-made 210x160 RGB screens through
the pipeline: grayscale, max over the last two frames, bilinear resize to
84x84 and a stack of the last four observations, with rewards clipped to
[-1, 1] and a life loss ending the step.
"""

import numpy as np

from qra2c.frames import FrameSkipper, grayscale

h, w = 210, 160

def screen(t):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[..., 2] = 60
    y, x = 40 + 6 * t, 20 + 4 * t  # a sprite drifting down and right
    img[y:y + 10, x:x + 6] = (255, 200, 0)
    return img

print("sprite luminance", round(float(grayscale(screen(0))[45, 22]), 4))

skipper = FrameSkipper(skip=4)
state = skipper.reset(screen(0), lives=3)
t = 1
for step in range(3):
    ticks = [(screen(t + k), 2.0, 3) for k in range(4)]
    state, reward, terminal, truncated = skipper.step(ticks)
    t += 4
    print(f"step {step}: clipped reward {reward}, terminal {terminal}, "
          f"planes {state.planes.shape}, newest plane max {state.planes[-1].max():.3f}")

###############################################################################
# Losing a life in the middle of a step ends it early and marks it terminal.

state, reward, terminal, _ = skipper.step([(screen(t), -5.0, 3), (screen(t + 1), 0.0, 2)])
print("life lost -> terminal", terminal, "reward", reward, "frames used", skipper.frames)
