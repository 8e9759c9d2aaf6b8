"""Model assembly, Adam, the clip-sampling training loop and checkpoints."""

from __future__ import annotations

import csv
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from . import vspt
from .alignment import AlignParams, align_clip, init_alignment
from .config import ModelConfig
from .encoder import EncoderParams, encode_pyramid, init_encoder
from .losses import loss_terms
from .params import named_tensors
from .recurrent import (ConvLstmParams, DecoderParams, bidirectional_pass, decode, decoder_upsamples,
                        init_recurrent)
from .tensor import Graph, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"VSPC"
TRACE_FIELDS = ("step", "loss", "nss", "sim", "cc", "kl")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    encoder: EncoderParams
    align: AlignParams
    lstm_f: ConvLstmParams | None
    lstm_b: ConvLstmParams | None
    decoder: DecoderParams


class SaliencyModel:
    """Encoder -> multi-scale alignment -> Bi-ConvLSTM -> decoder."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None):
        self.config = config
        if params is None:
            rng = np.random.default_rng(config.seed)
            enc = init_encoder(config, rng)
            align = init_alignment(config, rng)
            fwd, bwd, dec = init_recurrent(config, rng)
            params = ModelParams(enc, align, fwd, bwd, dec)
        self.params = params
        self.n_upsample = decoder_upsamples()

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(named_tensors(self.params))

    def forward(self, frames) -> Tensor:
        """Saliency maps for F×3×H×W (one clip) or B×F×3×H×W (B clips).

        Returns F×h×w or B×F×h×w with h, w = H/2, W/2.
        """
        x = T.as_tensor(frames)
        single = x.ndim == 4
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 5 or x.shape[2] != 3:
            raise T.ShapeError(f"frames must be F×3×H×W or B×F×3×H×W, got {x.shape}")
        b, f, _, hh, ww = x.shape
        cfg = self.config
        if (hh, ww) != (cfg.height, cfg.width):
            raise ValueError(f"frames are {hh}x{ww} but the model was configured for {cfg.height}x{cfg.width}")
        if x.dtype != cfg.np_dtype:
            x = Tensor(x.data.astype(cfg.np_dtype))
        p = self.params
        pyr = encode_pyramid(T.reshape(x, (b * f, 3, hh, ww)), p.encoder)
        a = align_clip(pyr, p.align, cfg.T, n_clips=b)
        _, c, h, w = a.shape
        a5 = T.reshape(a, (b, f, c, h, w))
        seq = [T.reshape(T.take(a5, [t], axis=1), (b, c, h, w)) for t in range(f)]
        ys = bidirectional_pass(seq, p.lstm_f, p.lstm_b)
        y = T.reshape(T.stack(ys, axis=1), (b * f,) + ys[0].shape[1:])
        maps = decode(y, p.decoder, self.n_upsample)
        out_shape = (f,) if single else (b, f)
        return T.reshape(maps, out_shape + maps.shape[2:])

    __call__ = forward


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              grads: dict[str, np.ndarray] | None = None) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if grads is None:
        grads = {}
        for name, p in params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            grads[name] = p.grad
    missing = set(params) - set(grads)
    if missing:
        raise ValueError(f"missing gradients for {sorted(missing)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
    return state


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values()))
    if max_norm > 0 and total > max_norm:
        for p in params.values():
            p.grad = p.grad * (max_norm / total)
    return total


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: SaliencyModel) -> None:
    cfg_blob = model.config.to_text().encode()
    with open(Path(path), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(cfg_blob)))
        fh.write(cfg_blob)
        tensors = model.named_parameters()
        fh.write(struct.pack("<I", len(tensors)))
        for name, t in tensors.items():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            vspt.write_vspt(fh, t.data)


def load_checkpoint(path) -> SaliencyModel:
    with open(Path(path), "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (n_cfg,) = struct.unpack("<I", fh.read(4))
        cfg = ModelConfig.from_text(fh.read(n_cfg).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        records = {}
        for _ in range(count):
            (n_name,) = struct.unpack("<H", fh.read(2))
            name = fh.read(n_name).decode()
            records[name] = vspt.read_vspt(fh)
    model = SaliencyModel(cfg)
    params = model.named_parameters()
    if set(params) != set(records):
        raise CheckpointError(f"{path}: parameter names do not match the stored config "
                              f"(missing {sorted(set(params) - set(records))[:3]}, "
                              f"extra {sorted(set(records) - set(params))[:3]})")
    for name, t in params.items():
        if records[name].shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {records[name].shape}, expected {t.shape}")
        t.data = records[name].astype(t.dtype)
    return model


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: SaliencyModel
    trace: list[dict] = field(default_factory=list)
    adam: AdamState = field(default_factory=AdamState)

    @property
    def losses(self) -> list[float]:
        return [row["loss"] for row in self.trace]


def _sample_batch(dataset: Sequence, cfg: ModelConfig, rng: np.random.Generator):
    frames, q, g = [], [], []
    for _ in range(cfg.batch_size):
        clip = dataset[int(rng.integers(len(dataset)))]
        n = len(clip)
        if n < cfg.clip_len:
            raise ValueError(f"clip has {n} frames, fewer than clip_len={cfg.clip_len}")
        s = int(rng.integers(0, n - cfg.clip_len + 1))
        frames.append(clip.frames[s:s + cfg.clip_len])
        q.append(clip.Q[s:s + cfg.clip_len])
        g.append(clip.G[s:s + cfg.clip_len])
    return np.stack(frames), np.concatenate(q), np.concatenate(g)


def train_step(model: SaliencyModel, adam: AdamState, frames: np.ndarray, q: np.ndarray, g: np.ndarray) -> dict:
    cfg = model.config
    params = model.named_parameters()
    for p in params.values():
        p.zero_grad()
    nss_frames = np.flatnonzero(q.reshape(len(q), -1).sum(axis=1) > 0)
    with Graph() as graph:
        maps = model(frames)
        maps = T.reshape(maps, (-1,) + maps.shape[-2:])
        terms = loss_terms(maps, q, g, nss_frames=nss_frames)
        loss = terms["nss"] + terms["sim"] + terms["cc"] + terms["kl"]
    row = {"loss": loss.item(), **{k: v.item() for k, v in terms.items()}}
    if not math.isfinite(row["loss"]):
        raise TrainingDiverged(f"loss became {row['loss']}")
    graph.backward(loss)
    if cfg.grad_clip > 0:
        clip_grad_norm(params, cfg.grad_clip)
    adam_step(params, adam, cfg.learning_rate)
    return row


def train_loop(config: ModelConfig, dataset: Sequence, *, steps: int | None = None,
               checkpoint_path=None, trace_path=None,
               callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Train from scratch on clips sampled from ``dataset``.

    Every step draws ``batch_size`` windows of ``clip_len`` frames (random
    clip, random start), runs the full model, averages the loss over frames,
    and takes one Adam step. Deterministic for a fixed ``config.seed``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    model = SaliencyModel(config)
    result = TrainResult(model)
    rng = np.random.default_rng([config.seed, 1])
    n_steps = config.max_steps if steps is None else steps
    for step in range(1, n_steps + 1):
        frames, q, g = _sample_batch(dataset, config, rng)
        row = {"step": step, **train_step(model, result.adam, frames.astype(config.np_dtype), q, g)}
        result.trace.append(row)
        if callback is not None:
            callback(row)
        log.debug("step %d loss %.5f", step, row["loss"])
        if checkpoint_path and config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model)
    if trace_path:
        write_trace(trace_path, result.trace)
    return result


def write_trace(path, trace: list[dict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in TRACE_FIELDS})


def predict(model, clip) -> list[np.ndarray]:
    """One saliency map per frame of ``clip`` (a Clip or an F×3×H×W array)."""
    if not isinstance(model, SaliencyModel):
        model = load_checkpoint(model)
    frames = getattr(clip, "frames", clip)
    frames = np.asarray(frames)
    cfg = model.config
    if frames.ndim != 4 or frames.shape[2:] != (cfg.height, cfg.width):
        raise ValueError(f"clip frames {frames.shape} do not match checkpoint resolution "
                         f"{cfg.height}x{cfg.width}")
    maps = model(frames.astype(cfg.np_dtype)).data
    return [m.copy() for m in maps]
