"""Synthetic moving-blob clips with fixation ground truth, and clip file I/O.

A clip directory holds ``frame_%04d.ppm`` (binary P6, 8-bit),
``fixations.csv`` with ``frame_idx,x,y`` rows in ground-truth pixel units
(half the frame resolution), and an optional ``meta`` file of ``key=value``
lines (``sigma_g``).
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .config import parse_key_values

log = logging.getLogger(__name__)


class ClipFormatError(ValueError):
    pass


@dataclass
class Clip:
    frames: np.ndarray                   # F×3×H×W, float32 in [0, 1]
    fixations: list[list[tuple[int, int]]]  # per frame (x, y) at ground-truth resolution
    Q: np.ndarray                        # F×h×w binary
    G: np.ndarray                        # F×h×w, peak-normalised blur of Q
    sigma_g: float

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def gt_shape(self) -> tuple[int, int]:
        return self.Q.shape[1:]

    def frames_with_fixations(self) -> np.ndarray:
        return np.flatnonzero(self.Q.reshape(len(self), -1).sum(axis=1) > 0)


@dataclass
class SynthSpec:
    n_blobs: int = 2
    speed_min: float = 1.0
    speed_max: float = 3.0
    blob_radius: float = 5.0
    texture: bool = True
    pan_amplitude: float = 0.0
    sigma_g: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_blobs <= 3:
            raise ValueError("n_blobs must be between 1 and 3")
        if self.speed_min < 0 or self.speed_max < self.speed_min:
            raise ValueError("need 0 <= speed_min <= speed_max")
        if self.blob_radius <= 0 or self.pan_amplitude < 0:
            raise ValueError("blob_radius must be positive and pan_amplitude non-negative")
        if self.sigma_g is not None and self.sigma_g <= 0:
            raise ValueError("sigma_g must be positive")

    @classmethod
    def from_text(cls, text: str) -> "SynthSpec":
        kv = parse_key_values(text)
        types = {"n_blobs": int, "seed": int, "texture": _parse_bool, "sigma_g": float}
        kwargs = {}
        for k, v in kv.items():
            if k not in cls.__dataclass_fields__:
                raise ValueError(f"unknown synth key {k!r}")
            kwargs[k] = types.get(k, float)(v)
        return cls(**kwargs)


def _parse_bool(v: str) -> bool:
    return v.strip().lower() in ("1", "true", "yes", "on")


def default_sigma(gt_h: int, gt_w: int) -> float:
    return min(gt_h, gt_w) / 16


def quantize(frames: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so PPM round-trips are exact."""
    return (np.round(np.clip(frames, 0, 1) * 255).astype(np.uint8) / np.float32(255)).astype(np.float32)


def rasterize(fixations: list[list[tuple[int, int]]], gt_shape: tuple[int, int],
              sigma_g: float) -> tuple[np.ndarray, np.ndarray]:
    """Binary maps Q and their Gaussian blur G, peak-normalised per frame."""
    h, w = gt_shape
    q = np.zeros((len(fixations), h, w), dtype=np.float32)
    for f, pts in enumerate(fixations):
        for x, y in pts:
            q[f, y, x] = 1.0
    g = np.zeros_like(q)
    for f in range(len(q)):
        if q[f].any():
            blurred = gaussian_filter(q[f].astype(np.float64), sigma_g, mode="constant")
            g[f] = blurred / blurred.max()
    return q, g


def _trajectories(spec: SynthSpec, rng: np.random.Generator, n_frames: int, h: int, w: int) -> np.ndarray:
    """Blob centres (n_frames × n_blobs × [y, x]) bouncing inside a margin."""
    margin = spec.blob_radius + 2
    lo = np.array([margin, margin])
    hi = np.array([h - 1 - margin, w - 1 - margin])
    best = None
    for _ in range(200):
        pos = lo + rng.uniform(size=(spec.n_blobs, 2)) * (hi - lo)
        angle = rng.uniform(0, 2 * np.pi, size=spec.n_blobs)
        speed = rng.uniform(spec.speed_min, spec.speed_max, size=spec.n_blobs)
        vel = np.stack([np.sin(angle), np.cos(angle)], axis=1) * speed[:, None]
        out = np.zeros((n_frames, spec.n_blobs, 2))
        for t in range(n_frames):
            out[t] = pos
            pos = pos + vel
            for d in range(2):
                below, above = pos[:, d] < lo[d], pos[:, d] > hi[d]
                pos[below, d] = 2 * lo[d] - pos[below, d]
                pos[above, d] = 2 * hi[d] - pos[above, d]
                vel[below | above, d] *= -1
        if spec.n_blobs == 1:
            return out
        gap = min(np.linalg.norm(out[:, i] - out[:, j], axis=1).min()
                  for i in range(spec.n_blobs) for j in range(i + 1, spec.n_blobs))
        if gap >= 2 * spec.blob_radius + 2:
            return out
        if best is None or gap > best[0]:
            best = (gap, out)
    return best[1]


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    noise = rng.standard_normal((3, h, w))
    smooth = np.stack([gaussian_filter(c, 4.0, mode="wrap") for c in noise])
    smooth /= np.abs(smooth).max() + 1e-12
    return 0.2 + 0.12 * smooth


def synth_clip(spec: SynthSpec, n_frames: int, height: int, width: int) -> Clip:
    """Render bright Gaussian blobs moving over an optional panning texture.

    Fixations sit at the blob centres, at half the frame resolution.
    """
    if height % 32 or width % 32 or height <= 0 or width <= 0:
        raise ValueError(f"frame size {height}x{width} must be positive multiples of 32")
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    rng = np.random.default_rng(spec.seed)
    pad = int(np.ceil(spec.pan_amplitude)) + 1
    background = (_texture(rng, height + 2 * pad, width + 2 * pad) if spec.texture
                  else np.full((3, height + 2 * pad, width + 2 * pad), 0.2))
    colors = rng.uniform(0.75, 1.0, size=(spec.n_blobs, 3))
    centres = _trajectories(spec, rng, n_frames, height, width)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    gh, gw = height // 2, width // 2
    sigma_g = spec.sigma_g if spec.sigma_g is not None else default_sigma(gh, gw)

    yy, xx = np.mgrid[0:height, 0:width]
    frames = np.zeros((n_frames, 3, height, width))
    fixations = []
    for t in range(n_frames):
        # global pan moves the whole scene, blobs included
        dy = spec.pan_amplitude * np.sin(0.3 * t + phase[0])
        dx = spec.pan_amplitude * np.sin(0.2 * t + phase[1])
        oy, ox = int(round(pad + dy)), int(round(pad + dx))
        img = background[:, oy:oy + height, ox:ox + width].copy()
        pts = []
        for b in range(spec.n_blobs):
            cy, cx = centres[t, b] - np.array([oy - pad, ox - pad])
            cy = float(np.clip(cy, 0, height - 1))
            cx = float(np.clip(cx, 0, width - 1))
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (spec.blob_radius / 2) ** 2))
            img = img * (1 - blob) + colors[b][:, None, None] * blob
            pt = (min(int(cx / 2), gw - 1), min(int(cy / 2), gh - 1))
            if pt not in pts:
                pts.append(pt)
        frames[t] = img
        fixations.append(pts)
    q, g = rasterize(fixations, (gh, gw), sigma_g)
    return Clip(quantize(frames), fixations, q, g, float(sigma_g))


# ---------------------------------------------------------------------------
# files


def save_clip(clip: Clip, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        arr = np.round(np.clip(frame, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(d / f"frame_{i:04d}.ppm")
    with open(d / "fixations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_idx", "x", "y"])
        for i, pts in enumerate(clip.fixations):
            for x, y in pts:
                writer.writerow([i, x, y])
    (d / "meta").write_text(f"sigma_g={clip.sigma_g!r}\n")


def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "RGB":
            raise ClipFormatError(f"{path}: expected a binary 8-bit RGB PPM")
        arr = np.asarray(im, dtype=np.uint8)
    return (arr.transpose(2, 0, 1) / np.float32(255)).astype(np.float32)


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit greyscale preview of a map with values in [0, 1]."""
    arr = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path), format="PPM")


def load_clip(directory, sigma_g: float | None = None) -> Clip:
    d = Path(directory)
    paths = sorted(d.glob("frame_*.ppm"))
    if not paths:
        raise ClipFormatError(f"{d}: no frame_%04d.ppm files")
    for i, p in enumerate(paths):
        if p.name != f"frame_{i:04d}.ppm":
            raise ClipFormatError(f"{d}: missing frame_{i:04d}.ppm")
    frames = np.stack([read_ppm(p) for p in paths])
    n, _, h, w = frames.shape
    gh, gw = h // 2, w // 2

    fix_path = d / "fixations.csv"
    if not fix_path.exists():
        raise ClipFormatError(f"{d}: missing fixations.csv")
    fixations: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    with open(fix_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["frame_idx", "x", "y"]:
            raise ClipFormatError(f"{fix_path}: header must be frame_idx,x,y")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                f, x, y = (int(v) for v in row)
            except ValueError:
                raise ClipFormatError(f"{fix_path}: row {row_no} is malformed: {row}") from None
            if not 0 <= f < n:
                raise ClipFormatError(f"{fix_path}: row {row_no} names frame {f}, clip has {n} frames")
            if not (0 <= x < gw and 0 <= y < gh):
                raise ClipFormatError(
                    f"{fix_path}: row {row_no} (frame {f}) fixation ({x}, {y}) outside {gw}x{gh}")
            if (x, y) not in fixations[f]:
                fixations[f].append((x, y))

    if sigma_g is None:
        meta = d / "meta"
        kv = parse_key_values(meta.read_text()) if meta.exists() else {}
        sigma_g = float(kv["sigma_g"]) if "sigma_g" in kv else default_sigma(gh, gw)
    empty = [i for i, pts in enumerate(fixations) if not pts]
    if empty:
        warnings.warn(f"{d}: frames {empty} have no fixations; they are excluded from NSS and AUC",
                      stacklevel=2)
    q, g = rasterize(fixations, (gh, gw), sigma_g)
    return Clip(frames, fixations, q, g, float(sigma_g))
