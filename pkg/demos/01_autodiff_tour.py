"""A short tour of the autodiff core.

Every op appends itself to the active ``Graph``; ``backward`` replays the tape
in reverse once. We differentiate a small convolution + bilinear warp, compare
against finite differences, then run the full gradient suite.
"""
import numpy as np

from vsalign import tensor as T
from vsalign.gradcheck import check_gradients, run_suite
from vsalign.tensor import Graph, StaleGraphError, Tensor

rng = np.random.default_rng(0)

# %% a tiny forward pass on the tape
x = Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
yy, xx = np.mgrid[0:6, 0:6].astype(np.float64)
# sample every pixel a quarter-pixel down and to the right
coords = Tensor(np.stack([yy + 0.25, xx + 0.25], axis=-1)[None], requires_grad=True)

with Graph() as g:
    y = T.conv2d(x, w, pad=1)
    warped = T.bilinear_sample(y, coords)
    loss = T.sum(T.tanh(warped))
print(f"recorded {len(g)} ops, loss = {loss.item():.6f}")
g.backward(loss)
print("grad shapes:", x.grad.shape, w.grad.shape, coords.grad.shape)

# a tape is single-use
try:
    g.backward(loss)
except StaleGraphError as e:
    print("second replay refused:", e)

# %% the same gradients by central differences
for t in (x, w, coords):
    t.grad = None
errs = check_gradients(lambda: T.sum(T.tanh(T.bilinear_sample(T.conv2d(x, w, pad=1), coords))), [x, w, coords])
print("relative errors:", {k: f"{v:.1e}" for k, v in errs.items()})

# %% every differentiable building block of the model
for r in run_suite():
    print(f"  {'ok' if r.passed else 'FAIL':4s} {r.name:28s} {r.worst:.1e}")
