"""Central finite-difference checks against the recorded backward pass."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Graph, Tensor


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros(t.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(1, |a|), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def check_gradients(fn: Callable[[], Tensor], tensors: dict[str, Tensor] | Sequence[Tensor],
                    h: float = 1e-5) -> dict[str, float]:
    """Compare analytic and finite-difference gradients of scalar ``fn``.

    ``fn`` must build its result only from ``tensors`` (and constants). Returns
    the relative error per tensor.
    """
    if not isinstance(tensors, dict):
        tensors = {str(i): t for i, t in enumerate(tensors)}
    for t in tensors.values():
        t.requires_grad = True
        t.zero_grad()
    with Graph() as g:
        out = fn()
    g.backward(out)
    analytic = {k: t.grad.copy() for k, t in tensors.items()}
    return {k: relative_error(analytic[k], numerical_grad(fn, t, h)) for k, t in tensors.items()}


@dataclass
class GradCheckResult:
    name: str
    errors: dict[str, float]
    tol: float

    @property
    def worst(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


# ---------------------------------------------------------------------------
# the suite run by ``vsalign gradcheck``


def _t(rng, *shape, lo=None, hi=None) -> Tensor:
    if lo is None:
        return Tensor(rng.standard_normal(shape))
    return Tensor(rng.uniform(lo, hi, size=shape))


def _projector(rng, shape):
    """Fixed random weights turning a tensor output into a scalar."""
    r = Tensor(rng.standard_normal(shape))
    return lambda y: T.sum(y * r)


def _case_conv2d(rng):
    x, w, b = _t(rng, 2, 3, 6, 7), _t(rng, 4, 3, 3, 3), _t(rng, 4)
    proj = _projector(rng, (2, 4, 6, 7))
    yield "conv2d", {"x": x, "w": w, "b": b}, lambda: proj(T.conv2d(x, w, b, pad=1))
    x2, w2 = _t(rng, 1, 2, 9, 9), _t(rng, 3, 2, 3, 3)
    proj2 = _projector(rng, (1, 3, 3, 3))
    yield "conv2d/stride2-dilation2", {"x": x2, "w": w2}, lambda: proj2(T.conv2d(x2, w2, stride=2, dilation=2))
    # more channels than columns takes the channels-last im2col layout
    x4, w4 = _t(rng, 2, 6, 4, 3), _t(rng, 3, 6, 3, 3)
    proj4 = _projector(rng, (2, 3, 4, 3))
    yield "conv2d/channels-last", {"x": x4, "w": w4}, lambda: proj4(T.conv2d(x4, w4, pad=1))
    x3, w3, b3 = _t(rng, 2, 5, 3, 4), _t(rng, 2, 5, 1, 1), _t(rng, 2)
    proj3 = _projector(rng, (2, 2, 3, 4))
    yield "conv2d/1x1", {"x": x3, "w": w3, "b": b3}, lambda: proj3(T.conv2d(x3, w3, b3))


def _case_bilinear(rng):
    x = _t(rng, 2, 3, 5, 6)
    # keep fractional parts clear of the integer kinks; some taps fall outside
    base = rng.integers(-1, 6, size=(2, 4, 4, 2)).astype(np.float64)
    coords = Tensor(base + rng.uniform(0.1, 0.9, size=base.shape))
    proj = _projector(rng, (2, 3, 4, 4))
    yield "bilinear_sample", {"x": x, "coords": coords}, lambda: proj(T.bilinear_sample(x, coords))


def _case_upsample(rng):
    x = _t(rng, 2, 2, 3, 4)
    proj = _projector(rng, (2, 2, 6, 8))
    yield "upsample2x", {"x": x}, lambda: proj(T.upsample2x(x))


def _case_deformable(rng):
    from .alignment import OffsetModulationField, deformable_align
    from .params import ConvParams

    cur = _t(rng, 1, 3, 5, 5)
    off = Tensor(np.round(rng.uniform(-2, 2, size=(1, 18, 5, 5))) + rng.uniform(0.1, 0.9, size=(1, 18, 5, 5)))
    mod = _t(rng, 1, 9, 5, 5, lo=0.05, hi=0.95)
    kernel = ConvParams(_t(rng, 2, 3, 3, 3), _t(rng, 2))
    proj = _projector(rng, (1, 2, 5, 5))
    fn = lambda: proj(deformable_align(cur, OffsetModulationField(off, mod), kernel))
    yield "deformable_align", {"features": cur, "offsets": off, "modulation": mod,
                               "weight": kernel.w, "bias": kernel.b}, fn


def _case_convlstm(rng):
    from .recurrent import ConvLstmState, convlstm_step, init_convlstm

    params = init_convlstm(rng, 2, 3, np.float64, bias=True)
    for name in ("w_ia", "w_ih", "w_fa", "w_fh", "w_oa", "w_oh", "w_ca", "w_ch"):
        getattr(params, name).data *= 4.0
    params.bias.data[:] = rng.standard_normal(params.bias.shape)
    a, h, c = _t(rng, 1, 2, 4, 4), _t(rng, 1, 3, 4, 4), _t(rng, 1, 3, 4, 4)
    proj_h, proj_c = _projector(rng, (1, 3, 4, 4)), _projector(rng, (1, 3, 4, 4))

    def fn():
        s = convlstm_step(a, ConvLstmState(h, c), params)
        return proj_h(s.h) + proj_c(s.c)

    tensors = {"a": a, "h": h, "c": c, "bias": params.bias}
    tensors.update({n: getattr(params, n) for n in ("w_ia", "w_ih", "w_fa", "w_fh", "w_oa", "w_oh", "w_ca", "w_ch")})
    yield "convlstm_step", tensors, fn


def _case_decode(rng):
    from .recurrent import decode, init_decoder

    params = init_decoder(rng, 3, 4, np.float64)
    for cp in params.convs:
        cp.b.data[:] = rng.uniform(0.1, 0.5, size=cp.b.shape)
    y = _t(rng, 1, 3, 3, 4)
    proj = _projector(rng, (1, 1, 12, 16))
    tensors = {"y": y}
    for i, cp in enumerate(params.convs):
        tensors[f"conv{i}.w"], tensors[f"conv{i}.b"] = cp.w, cp.b
    yield "decode", tensors, lambda: proj(decode(y, params))


def _case_losses(rng):
    from . import losses

    q = np.zeros((2, 5, 6))
    q[0, 1, 2] = q[0, 3, 4] = q[1, 2, 2] = 1.0
    g = rng.uniform(0.05, 1.0, size=(2, 5, 6))
    for name, fn, target in (("loss_nss", losses.loss_nss, q), ("loss_sim", losses.loss_sim, g),
                             ("loss_cc", losses.loss_cc, g), ("loss_kl", losses.loss_kl, g)):
        p = _t(rng, 2, 5, 6, lo=0.05, hi=1.0)
        yield name, {"pred": p}, (lambda fn=fn, p=p, target=target: fn(p, target))


SUITE = (_case_conv2d, _case_bilinear, _case_upsample, _case_deformable, _case_convlstm,
         _case_decode, _case_losses)


def run_suite(tol: float = 1e-4, h: float = 1e-5, seed: int = 0) -> list[GradCheckResult]:
    """Finite-difference check of every differentiable building block, 64-bit."""
    rng = np.random.default_rng(seed)
    results = []
    for make in SUITE:
        for name, tensors, fn in make(rng):
            results.append(GradCheckResult(name, check_gradients(fn, tensors, h), tol))
    return results
