"""
Motion features of a moving square
==================================

The motion decomposer turns a clip of content latents into per-frame motion
features.  At initialisation its depthwise kernels are Dirac deltas and its
1x1 convs are plain projections, so the motion of frame ``k`` is the
difference between frames ``k + 1`` and ``k`` seen through those projections.
Here we use the identity codec (pixels as latents) to watch that happen.
"""

import numpy as np

from dualstream.data import SceneSpec, render
from dualstream.motion import MotionOps, combine, decompose

# a red square moving right by two pixels per frame
video, caption = render(SceneSpec("square", "red", "right", 2, 10, 24, frames=6))
print(caption, video.shape)

# three pixel channels, no channel reduction
ops = MotionOps(3, 1, seed=0, dtype=np.float64)
for conv in (ops.dec_reduce, ops.dec_restore, ops.comb_reduce, ops.comb_restore):
    conv.weight.data = np.eye(3).reshape(3, 3, 1, 1)

motion = decompose(video[None].astype(np.float64), ops).data[0]

# only the leading and trailing edges of the square change between frames
for k, m in enumerate(motion):
    cols = np.nonzero(np.abs(m[0]).max(axis=0))[0]
    print(f"frame {k}: {np.count_nonzero(m[0])} changed red pixels in columns {cols.tolist()}")

# the last motion slot repeats the one before it, keeping the clip length
assert np.array_equal(motion[-1], motion[-2])

# the combiner adds motion back onto content; with the right kernel alone it
# adds each frame's own motion feature, so frame k + motion k = frame k + 1
for conv in (ops.comb_left,):
    conv.weight.data[:] = 0.0
fused = combine(video[None].astype(np.float64), motion[None], ops).data[0]
print("frame 0 + motion 0 == frame 1:", np.array_equal(fused[0], video[1]))
