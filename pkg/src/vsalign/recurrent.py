"""Bidirectional ConvLSTM over the aligned features and the saliency decoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .params import ConvParams, he_conv
from . import tensor as T
from .tensor import ShapeError, Tensor

GATES = ("i", "f", "o", "c")


@dataclass
class ConvLstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, n: int, channels: int, height: int, width: int, dtype) -> "ConvLstmState":
        z = np.zeros((n, channels, height, width), dtype=dtype)
        return cls(Tensor(z), Tensor(z.copy()))


@dataclass
class ConvLstmParams:
    """Eight 3×3 kernels: ``w_<gate>a`` acts on the input, ``w_<gate>h`` on the hidden state."""

    w_ia: Tensor
    w_ih: Tensor
    w_fa: Tensor
    w_fh: Tensor
    w_oa: Tensor
    w_oh: Tensor
    w_ca: Tensor
    w_ch: Tensor
    bias: Tensor | None = None   # 4·C_h, gate order i, f, o, c

    @property
    def hidden(self) -> int:
        return self.w_ia.shape[0]

    def stacked(self) -> Tensor:
        """All gate kernels as one (4·C_h)×(C_a + C_h)×3×3 weight."""
        rows = [T.concat([getattr(self, f"w_{g}a"), getattr(self, f"w_{g}h")], axis=1) for g in GATES]
        return T.concat(rows, axis=0)


@dataclass
class DecoderParams:
    convs: list[ConvParams]   # 3×3, 3×3, 1×1 -> 1 channel


def init_convlstm(rng: np.random.Generator, c_in: int, c_h: int, dtype, bias: bool = False) -> ConvLstmParams:
    std = math.sqrt(1.0 / ((c_in + c_h) * 9))
    kw = {}
    for g in GATES:
        kw[f"w_{g}a"] = Tensor((rng.standard_normal((c_h, c_in, 3, 3)) * std).astype(dtype), requires_grad=True)
        kw[f"w_{g}h"] = Tensor((rng.standard_normal((c_h, c_h, 3, 3)) * std).astype(dtype), requires_grad=True)
    if bias:
        kw["bias"] = Tensor(np.zeros(4 * c_h, dtype=dtype), requires_grad=True)
    return ConvLstmParams(**kw)


def init_decoder(rng: np.random.Generator, c_in: int, width: int, dtype) -> DecoderParams:
    return DecoderParams([he_conv(rng, width, c_in, 3, dtype), he_conv(rng, width, width, 3, dtype),
                          he_conv(rng, 1, width, 1, dtype)])


def convlstm_step(a_t, prev: ConvLstmState, params: ConvLstmParams, weight: Tensor | None = None) -> ConvLstmState:
    """One ConvLSTM update. ``weight`` may carry a precomputed ``params.stacked()``."""
    a_t = T.as_tensor(a_t)
    if a_t.shape[0] != prev.h.shape[0] or a_t.shape[2:] != prev.h.shape[2:]:
        raise ShapeError(f"input {a_t.shape} and state {prev.h.shape} differ in N/H/W")
    if a_t.shape[1] != params.w_ia.shape[1]:
        raise ShapeError(f"input has {a_t.shape[1]} channels, kernels expect {params.w_ia.shape[1]}")
    weight = params.stacked() if weight is None else weight
    ch = params.hidden
    z = T.conv2d(T.concat_channels([a_t, prev.h]), weight, params.bias, pad=1)
    zi, zf, zo, zc = T.split_channels(z, [ch] * 4)
    i, f, o = T.sigmoid(zi), T.sigmoid(zf), T.sigmoid(zo)
    c = T.add(T.hadamard(f, prev.c), T.hadamard(i, T.tanh(zc)))
    h = T.hadamard(o, T.tanh(c))
    return ConvLstmState(h, c)


def scan(sequence: list[Tensor], params: ConvLstmParams) -> list[Tensor]:
    """Forward-in-time scan from zero state; returns the hidden states."""
    n, _, hh, ww = sequence[0].shape
    state = ConvLstmState.zeros(n, params.hidden, hh, ww, sequence[0].dtype)
    weight = params.stacked()
    hidden = []
    for a_t in sequence:
        state = convlstm_step(a_t, state, params, weight)
        hidden.append(state.h)
    return hidden


def bidirectional_pass(sequence: list, params_f: ConvLstmParams | None,
                       params_b: ConvLstmParams | None) -> list[Tensor]:
    """Y_t = H_t^f + H_t^b; a missing unit (None) contributes nothing."""
    if not sequence:
        raise ValueError("empty sequence")
    sequence = [T.as_tensor(a) for a in sequence]
    shape = sequence[0].shape
    if any(a.shape != shape for a in sequence):
        raise ShapeError("sequence entries must share one shape")
    if params_f is None and params_b is None:
        raise ValueError("need at least one of the forward and backward units")
    fwd = scan(sequence, params_f) if params_f is not None else None
    bwd = scan(sequence[::-1], params_b)[::-1] if params_b is not None else None
    if fwd is None:
        return bwd
    if bwd is None:
        return fwd
    return [T.add(a, b) for a, b in zip(fwd, bwd)]


def decode(y_t, params: DecoderParams, n_upsample: int = 2) -> Tensor:
    """Conv stack, sigmoid, then ``n_upsample`` bilinear 2x upsamplings."""
    c1, c2, c3 = params.convs
    x = c3(T.relu(c2(T.relu(c1(y_t)))))
    x = T.sigmoid(x)
    for _ in range(n_upsample):
        x = T.upsample2x(x)
    return x


def decoder_upsamples(feature_stride: int = 8, input_to_gt: int = 2) -> int:
    """Number of 2x upsamplings taking stride-8 features to ground-truth scale."""
    ratio = feature_stride // input_to_gt
    n = int(round(math.log2(ratio)))
    if 2 ** n != ratio:
        raise ValueError(f"stride ratio {ratio} is not a power of two")
    return n


def init_recurrent(cfg: ModelConfig, rng: np.random.Generator):
    """Forward unit, backward unit (either may be None) and decoder.

    ``no_bi`` keeps only the forward recursion, Y_t = H_t^f.
    """
    dt = cfg.np_dtype
    use_f = not cfg.no_forward
    use_b = not (cfg.no_backward or cfg.no_bi)
    fwd = init_convlstm(rng, cfg.c_a, cfg.c_h, dt, cfg.lstm_bias) if use_f else None
    bwd = init_convlstm(rng, cfg.c_a, cfg.c_h, dt, cfg.lstm_bias) if use_b else None
    return fwd, bwd, init_decoder(rng, cfg.c_h, cfg.dec_width, dt)
