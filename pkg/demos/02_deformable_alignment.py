"""What the deformable alignment actually does to a feature map.

With zero offsets and unit modulation it is an ordinary 3x3 convolution. With
offsets equal to a known integer displacement it undoes that displacement.
Fractional offsets interpolate between pixels.
"""
import numpy as np

from vsalign import tensor as T
from vsalign.alignment import OffsetModulationField, deformable_align
from vsalign.params import ConvParams
from vsalign.tensor import Tensor

rng = np.random.default_rng(1)


def field(dy, dx, h, w, m=1.0):
    off = np.zeros((1, 18, h, w))
    off[:, 0::2], off[:, 1::2] = dy, dx
    return OffsetModulationField(Tensor(off), Tensor(np.full((1, 9, h, w), m)))


# %% degenerate case: plain convolution
x = rng.standard_normal((1, 4, 8, 8))
k = ConvParams(Tensor(rng.standard_normal((4, 4, 3, 3))), Tensor(rng.standard_normal(4)))
diff = np.abs(deformable_align(x, field(0, 0, 8, 8), k).data - T.conv2d(x, k.w, k.b, pad=1).data).max()
print(f"zero offsets vs conv2d: max diff {diff:.1e}")

# %% undoing a known motion
ident = np.zeros((1, 1, 3, 3))
ident[0, 0, 1, 1] = 1
copy = ConvParams(Tensor(ident), Tensor(np.zeros(1)))
ref = np.zeros((1, 1, 8, 8))
ref[0, 0, 2:4, 2:4] = 1.0
cur = np.roll(ref, (1, 2), axis=(2, 3))  # the square moved down 1, right 2
aligned = deformable_align(cur, field(1, 2, 8, 8), copy).data
print("current frame:\n", cur[0, 0].astype(int))
print("aligned back onto the reference:\n", np.round(aligned[0, 0]).astype(int))
print("matches reference:", np.array_equal(aligned, ref))

# %% half-pixel offsets blend neighbours, modulation scales the result
ramp = np.arange(16.0).reshape(1, 1, 4, 4)
print("ramp shifted half a pixel right:\n", deformable_align(ramp, field(0, 0.5, 4, 4), copy).data[0, 0])
print("same, modulation 0.5:\n", deformable_align(ramp, field(0, 0.5, 4, 4, m=0.5), copy).data[0, 0])
