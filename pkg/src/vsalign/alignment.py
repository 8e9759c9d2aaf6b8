"""Multi-scale deformable alignment of neighbouring frames onto a reference.

A deformable alignment module (DAM) predicts, from the concatenated
(reference, current) features, a per-pixel offset for each of the K = 9 taps
of a 3×3 kernel plus a modulation scalar in (0, 1), then convolves the
current features at the displaced sampling positions. Three DAMs run on the
stride 32/16/8 levels, their outputs are fused coarse to fine, and a final
DAM at stride 8 aligns the fused result against the reference. The aligned
features of a 2T+1 frame window are merged by a 1×1 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .encoder import PyramidFeatures
from .params import ConvParams, he_conv
from . import tensor as T
from .tensor import ShapeError, Tensor

KERNEL = 3
TAPS = KERNEL * KERNEL


@dataclass
class OffsetModulationField:
    offsets: Tensor      # N×2K×H×W, channel 2k is Δy of tap k, 2k+1 is Δx
    modulation: Tensor   # N×K×H×W, sigmoid output


@dataclass
class DamParams:
    kernel: ConvParams
    offset_net: list[ConvParams]
    modulation_net: list[ConvParams]
    deformable: bool = True


@dataclass
class AlignParams:
    dams: dict[str, DamParams]
    lateral: ConvParams
    final: DamParams
    fusion: ConvParams
    ref_fusion: bool = False


def init_dam(rng: np.random.Generator, c_ref: int, c_cur: int, c_out: int, hidden: int, dtype,
             deformable: bool = True) -> DamParams:
    c_in = c_ref + c_cur
    return DamParams(
        kernel=he_conv(rng, c_out, c_cur, KERNEL, dtype),
        # last layers start at zero: offsets 0, modulation 0.5
        offset_net=[he_conv(rng, hidden, c_in, 3, dtype), he_conv(rng, 2 * TAPS, hidden, 3, dtype, zero=True)],
        modulation_net=[he_conv(rng, hidden, c_in, 3, dtype), he_conv(rng, TAPS, hidden, 3, dtype, zero=True)],
        deformable=deformable,
    )


def init_alignment(cfg: ModelConfig, rng: np.random.Generator) -> AlignParams:
    dt = cfg.np_dtype
    deform = not cfg.dconv_as_conv
    dams = {lv: init_dam(rng, cfg.c_feat, cfg.c_feat, cfg.c_feat, cfg.offset_hidden, dt, deform)
            for lv in cfg.levels}
    lateral = he_conv(rng, cfg.c_a, cfg.c_feat * len(cfg.levels), 1, dt)
    c_ref = cfg.c_a if cfg.ref_fusion else cfg.c_feat
    final = init_dam(rng, c_ref, cfg.c_a, cfg.c_a, cfg.offset_hidden, dt, deform)
    fusion = he_conv(rng, cfg.c_a, cfg.c_a * cfg.window, 1, dt)
    return AlignParams(dams, lateral, final, fusion, cfg.ref_fusion)


def predict_offsets_modulation(ref_feat, cur_feat, params: DamParams) -> OffsetModulationField:
    ref_feat, cur_feat = T.as_tensor(ref_feat), T.as_tensor(cur_feat)
    if ref_feat.shape[0] != cur_feat.shape[0] or ref_feat.shape[2:] != cur_feat.shape[2:]:
        raise ShapeError(f"reference {ref_feat.shape} and current {cur_feat.shape} features differ in N/H/W")
    pair = T.concat_channels([ref_feat, cur_feat])
    o1, o2 = params.offset_net
    m1, m2 = params.modulation_net
    # both first layers read the same pair: run them as one convolution
    w1 = T.concat([o1.w, m1.w], axis=0)
    b1 = T.concat([o1.b, m1.b], axis=0) if o1.b is not None and m1.b is not None else None
    if b1 is None and (o1.b is not None or m1.b is not None):
        h_off, h_mod = o1(pair), m1(pair)
    else:
        h_off, h_mod = T.split_channels(T.conv2d(pair, w1, b1, pad=o1.w.shape[-1] // 2),
                                        [o1.w.shape[0], m1.w.shape[0]])
    offsets = o2(T.relu(h_off))
    modulation = T.sigmoid(m2(T.relu(h_mod)))
    return OffsetModulationField(offsets, modulation)


def _tap_grid(h: int, w: int, dtype) -> np.ndarray:
    """Regular sampling positions p + p_k, shape 1×K×H×W×2."""
    r = KERNEL // 2
    ky, kx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    gy = yy[None] + ky.reshape(-1, 1, 1)
    gx = xx[None] + kx.reshape(-1, 1, 1)
    return np.stack([gy, gx], axis=-1)[None].astype(dtype)


def deformable_align(cur_feat, field: OffsetModulationField, kernel: ConvParams) -> Tensor:
    """Modulated deformable 3×3 convolution of ``cur_feat`` (zero padding outside)."""
    cur_feat = T.as_tensor(cur_feat)
    n, c, h, w = cur_feat.shape
    c_out, c_in, kh, kw = kernel.w.shape
    k = kh * kw
    if field.offsets.shape != (n, 2 * k, h, w) or field.modulation.shape != (n, k, h, w):
        raise ShapeError(
            f"field with offsets {field.offsets.shape} / modulation {field.modulation.shape} does not match "
            f"K={k} taps on {n}×{c}×{h}×{w} features")
    if c_in != c:
        raise ShapeError(f"kernel expects {c_in} input channels, features have {c}")
    off = T.transpose(T.reshape(field.offsets, (n, k, 2, h, w)), (0, 1, 3, 4, 2))
    coords = T.reshape(off + _tap_grid(h, w, cur_feat.dtype), (n, k * h, w, 2))
    sampled = T.reshape(T.bilinear_sample(cur_feat, coords), (n, c, k, h, w))
    modulated = sampled * T.reshape(field.modulation, (n, 1, k, h, w))
    cols = T.reshape(modulated, (n, c * k, h, w))
    return T.conv2d(cols, T.reshape(kernel.w, (c_out, c * k, 1, 1)), kernel.b)


def dam(ref_feat, cur_feat, params: DamParams) -> Tensor:
    """One alignment module; with ``deformable=False`` it is a plain 3×3 conv."""
    if not params.deformable:
        return params.kernel(cur_feat, pad=1)
    field = predict_offsets_modulation(ref_feat, cur_feat, params)
    return deformable_align(cur_feat, field, params.kernel)


def fuse_levels(per_level: dict[str, Tensor]) -> Tensor:
    """Coarse-to-fine fusion: upsample, concat with the next finer level, repeat.

    Missing levels are skipped; the result is always at stride 8.
    """
    order = [lv for lv in ("p5", "p4", "p3") if lv in per_level]
    if not order:
        raise ValueError("no pyramid levels to fuse")
    scale = {"p5": 32, "p4": 16, "p3": 8}
    acc = per_level[order[0]]
    stride = scale[order[0]]
    for lv in order[1:]:
        while stride > scale[lv]:
            acc = T.upsample2x(acc)
            stride //= 2
        acc = T.concat_channels([acc, per_level[lv]])
    while stride > 8:
        acc = T.upsample2x(acc)
        stride //= 2
    return acc


def multiscale_align(ref: PyramidFeatures, cur: PyramidFeatures, params: AlignParams) -> Tensor:
    """Align ``cur`` onto ``ref`` over all kept pyramid levels; result at stride 8."""
    for lv in ("p3", "p4", "p5"):
        if ref.level(lv).shape != cur.level(lv).shape:
            raise ShapeError(f"pyramid level {lv}: {ref.level(lv).shape} vs {cur.level(lv).shape}")
    aligned = {lv: dam(ref.level(lv), cur.level(lv), p) for lv, p in params.dams.items()}
    fused = params.lateral(fuse_levels(aligned))
    if params.ref_fusion:
        ref_side = params.lateral(fuse_levels({lv: ref.level(lv) for lv in params.dams}))
    else:
        ref_side = ref.p3
    return dam(ref_side, fused, params.final)


def temporal_fuse(window: list[Tensor], params: AlignParams) -> Tensor:
    """1×1 convolution over the window's features concatenated in temporal order."""
    if not window:
        raise ValueError("empty window")
    expected = params.fusion.w.shape[1] // window[0].shape[1]
    if len(window) != expected or len(window) % 2 == 0:
        raise ValueError(f"window has {len(window)} entries, fusion expects {expected}")
    return params.fusion(T.concat_channels(window))


def window_indices(n_frames: int, t: int, T_half: int) -> list[int]:
    """Indices t-T..t+T clamped to the clip (edge replication)."""
    if n_frames <= 0:
        raise ValueError("empty clip")
    if not 0 <= t < n_frames:
        raise IndexError(f"reference index {t} outside clip of {n_frames} frames")
    return [min(max(i, 0), n_frames - 1) for i in range(t - T_half, t + T_half + 1)]


def _select(feats: PyramidFeatures, idx) -> PyramidFeatures:
    return PyramidFeatures(*(T.take(feats.level(lv), idx) for lv in ("p3", "p4", "p5")))


def align_window(feats: PyramidFeatures, t: int, params: AlignParams, T_half: int) -> list[Tensor]:
    """Aligned features of the 2T+1 window around frame ``t`` (reference included).

    ``feats`` holds the encoded frames of one clip along the batch axis.
    """
    idx = window_indices(feats.p3.shape[0], t, T_half)
    ref = _select(feats, [t] * len(idx))
    cur = _select(feats, idx)
    stacked = multiscale_align(ref, cur, params)
    return [T.take(stacked, [i]) for i in range(len(idx))]


def align_clip(feats: PyramidFeatures, params: AlignParams, T_half: int, n_clips: int = 1) -> Tensor:
    """Fused features A_t for every frame of ``n_clips`` equal-length clips.

    Equivalent to running :func:`align_window` and :func:`temporal_fuse` per
    frame, but each distinct (reference, neighbour) pair is aligned once and
    all pairs share one batched pass.
    """
    total = feats.p3.shape[0]
    if total % n_clips:
        raise ShapeError(f"{total} frames do not split into {n_clips} clips")
    n = total // n_clips
    pairs: dict[tuple[int, int], int] = {}
    slots = []
    for b in range(n_clips):
        for t in range(n):
            for i in window_indices(n, t, T_half):
                key = (b * n + t, b * n + i)
                slots.append(pairs.setdefault(key, len(pairs)))
    ref_idx = [r for r, _ in pairs]
    cur_idx = [c for _, c in pairs]
    aligned = multiscale_align(_select(feats, ref_idx), _select(feats, cur_idx), params)
    _, c, h, w = aligned.shape
    window = T.reshape(T.take(aligned, slots), (total, (2 * T_half + 1) * c, h, w))
    return params.fusion(window)
