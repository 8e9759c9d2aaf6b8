"""Siamese VGG-lite encoder producing stride 8/16/32 feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .params import ConvParams, he_conv
from .tensor import Tensor, ShapeError, as_tensor, maxpool2x2, relu


@dataclass
class PyramidFeatures:
    p3: Tensor
    p4: Tensor
    p5: Tensor

    def level(self, name: str) -> Tensor:
        return getattr(self, name)


@dataclass
class EncoderParams:
    stages: list[list[ConvParams]]
    taps: dict[str, ConvParams]


def init_encoder(cfg: ModelConfig, rng: np.random.Generator) -> EncoderParams:
    dt = cfg.np_dtype
    stages = []
    c_in = 3
    for width in cfg.enc_widths:
        stages.append([he_conv(rng, width, c_in, 3, dt), he_conv(rng, width, width, 3, dt)])
        c_in = width
    taps = {
        "p3": he_conv(rng, cfg.c_feat, cfg.enc_widths[2], 1, dt),
        "p4": he_conv(rng, cfg.c_feat, cfg.enc_widths[3], 1, dt),
        "p5": he_conv(rng, cfg.c_feat, cfg.enc_widths[4], 1, dt),
    }
    return EncoderParams(stages, taps)


def encode_pyramid(frames, params: EncoderParams) -> PyramidFeatures:
    """Encode N×3×H×W frames; the same weights serve every frame."""
    x = as_tensor(frames)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"frames must be N×3×H×W, got {x.shape}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"frame size {h}x{w} is not a multiple of 32")
    if x.data.min() < 0 or x.data.max() > 1:
        raise ValueError("pixel values must lie in [0, 1]")
    taps = {}
    for i, (c1, c2) in enumerate(params.stages, start=1):
        x = maxpool2x2(relu(c2(relu(c1(x)))))
        if i >= 3:
            taps[f"p{i}"] = params.taps[f"p{i}"](x)
    return PyramidFeatures(**taps)
