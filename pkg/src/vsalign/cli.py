"""Command-line entry points: synth, train, predict, eval, gradcheck, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import vspt
from .config import ModelConfig
from .data import SynthSpec, load_clip, save_clip, synth_clip, write_pgm
from .losses import (DegenerateMapError, metric_auc_j, metric_cc, metric_kl, metric_nss, metric_sauc,
                     metric_sim)
from .trainer import load_checkpoint, predict, save_checkpoint, train_loop

log = logging.getLogger("vsalign")

REPORT_FIELDS = ("frame_idx", "nss", "sim", "cc", "kl", "auc_j", "sauc")

ABLATIONS = (
    ("full", {}),
    ("no_bi", {"no_bi": True}),
    ("no_forward", {"no_forward": True}),
    ("no_backward", {"no_backward": True}),
    ("dconv_as_conv", {"dconv_as_conv": True}),
    ("drop_p5", {"drop_p5": True}),
    ("drop_p4_p5", {"drop_p4": True, "drop_p5": True}),
    ("drop_p3", {"drop_p3": True}),
    ("drop_p3_p4", {"drop_p3": True, "drop_p4": True}),
)


def _clip_dirs(root: Path) -> list[Path]:
    """A clip directory, or a directory whose subdirectories are clips."""
    if (root / "frame_0000.ppm").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "frame_0000.ppm").exists())
    if not dirs:
        raise FileNotFoundError(f"{root}: no clip directories found")
    return dirs


def load_dataset(root) -> list:
    return [load_clip(d) for d in _clip_dirs(Path(root))]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    spec = SynthSpec.from_text(Path(args.spec).read_text()) if args.spec else SynthSpec()
    clip = synth_clip(spec, args.frames, args.height, args.width)
    save_clip(clip, args.out)
    print(f"wrote {len(clip)} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.steps is not None:
        cfg = cfg.replace(max_steps=args.steps)
    dataset = load_dataset(args.data)

    def report(row):
        if row["step"] % max(1, cfg.max_steps // 20) == 0 or row["step"] == cfg.max_steps:
            print(f"step {row['step']:5d} loss {row['loss']:.5f} cc {-row['cc']:.4f} nss {-row['nss']:.4f}")

    train_loop(cfg, dataset, checkpoint_path=args.out, trace_path=args.trace, callback=report)
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    clip = load_clip(args.clip)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    maps = predict(model, clip)
    for i, m in enumerate(maps):
        vspt.save(out / f"map_{i:04d}.vspt", m)
        write_pgm(out / f"map_{i:04d}.pgm", m)
    print(f"wrote {len(maps)} maps to {out}")
    return 0


def _safe(fn, *a) -> float:
    try:
        return fn(*a)
    except DegenerateMapError:
        return math.nan


def evaluate(maps: list[np.ndarray], clip) -> list[dict]:
    """Per-frame metrics; frames without fixations get NaN for every metric."""
    if len(maps) != len(clip):
        raise ValueError(f"{len(maps)} prediction maps for a {len(clip)}-frame clip")
    rows = []
    for t, (p, q, g) in enumerate(zip(maps, clip.Q, clip.G)):
        if p.shape != q.shape:
            raise ValueError(f"frame {t}: prediction {p.shape} vs ground truth {q.shape}")
        row = {"frame_idx": t}
        if not q.any():
            row.update({k: math.nan for k in REPORT_FIELDS[1:]})
        else:
            # shuffle negatives: fixations of every other frame
            others = np.delete(clip.Q, t, axis=0).max(axis=0) if len(clip) > 1 else np.zeros_like(q)
            row.update(nss=_safe(metric_nss, p, q), sim=_safe(metric_sim, p, g), cc=_safe(metric_cc, p, g),
                       kl=_safe(metric_kl, p, g), auc_j=_safe(metric_auc_j, p, q),
                       sauc=_safe(metric_sauc, p, q, others))
        rows.append(row)
    return rows


def write_report(path, rows: list[dict]) -> dict:
    mean = {"frame_idx": "mean"}
    for k in REPORT_FIELDS[1:]:
        vals = np.array([r[k] for r in rows], dtype=np.float64)
        mean[k] = float(np.mean(vals[np.isfinite(vals)])) if np.isfinite(vals).any() else math.nan
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for row in rows + [mean]:
            writer.writerow({k: (v if k == "frame_idx" else repr(float(v))) for k, v in row.items()})
    return mean


def cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    paths = sorted(pred_dir.glob("map_*.vspt"))
    if not paths:
        raise FileNotFoundError(f"{pred_dir}: no map_%04d.vspt files")
    maps = [vspt.load(p) for p in paths]
    clip = load_clip(args.gt)
    mean = write_report(args.report, evaluate(maps, clip))
    print(" ".join(f"{k}={mean[k]:.4f}" for k in REPORT_FIELDS[1:]))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(tol=args.tol)
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:28s} worst rel err {r.worst:.2e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def mean_metrics(model, clip) -> dict[str, float]:
    rows = evaluate(predict(model, clip), clip)
    return {k: float(np.nanmean([r[k] for r in rows])) for k in ("cc", "nss", "sim", "kl")}


def run_ablation(cfg: ModelConfig, train_clips: list, held_out, variants=ABLATIONS,
                 steps: int | None = None) -> list[dict]:
    rows = []
    for name, flags in variants:
        vcfg = cfg.replace(**flags)
        log.info("ablation %s", name)
        result = train_loop(vcfg, train_clips, steps=steps)
        row = {"variant": name, "final_loss": result.losses[-1]}
        for prefix, clip in (("train", train_clips[0]), ("held", held_out)):
            for k, v in mean_metrics(result.model, clip).items():
                row[f"{prefix}_{k}"] = v
        rows.append(row)
        print(f"{name:14s} train cc {row['train_cc']:.4f}  held cc {row['held_cc']:.4f}")
    return rows


def cmd_ablate(args) -> int:
    cfg = ModelConfig.load(args.config) if args.config else ModelConfig()
    if args.data:
        train_clips = load_dataset(args.data)
    else:
        train_clips = [synth_clip(SynthSpec(seed=1), cfg.clip_len, cfg.height, cfg.width)]
    if args.held_out:
        held = load_clip(args.held_out)
    else:
        held = synth_clip(SynthSpec(seed=2), cfg.clip_len, cfg.height, cfg.width)
    variants = ABLATIONS
    if args.variants:
        wanted = args.variants.split(",")
        known = dict(ABLATIONS)
        unknown = [v for v in wanted if v not in known]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; choose from {[n for n, _ in ABLATIONS]}")
        variants = [(v, known[v]) for v in wanted]
    rows = run_ablation(cfg, train_clips, held, variants, steps=args.steps)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"comparison written to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsalign", description="Video saliency with deformable alignment.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic moving-blob clip")
    p.add_argument("--spec", help="key=value synth spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=96)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--config", help="key=value model config file")
    p.add_argument("--data", required=True, help="clip directory or directory of clips")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="CSV loss trace path")
    p.add_argument("--steps", type=int, help="override max_steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write saliency maps for a clip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predicted maps against a clip's ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train the ablation variants and compare")
    p.add_argument("--config", help="key=value model config file")
    p.add_argument("--data", help="training clips (default: one synthetic clip)")
    p.add_argument("--held-out", help="held-out clip directory (default: a synthetic clip)")
    p.add_argument("--out", default="ablation.csv")
    p.add_argument("--steps", type=int, help="override max_steps")
    p.add_argument("--variants", help="comma-separated subset of the variant names")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except Exception as e:  # noqa: BLE001 - report and exit 1
        print(f"vsalign {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
