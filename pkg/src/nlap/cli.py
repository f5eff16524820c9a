"""Command-line interface: synth, train, score, eval.

Exit codes: 0 success, 1 I/O or runtime failure, 2 bad configuration,
3 empty dataset, 4 checkpoint version mismatch, 5 evaluation mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import torch

from . import evaluator, plots, scorer, synthbench
from .config import RunConfig, load_run_config
from .errors import (
    CheckpointError,
    ConfigError,
    EmptyDatasetError,
    EvalMismatchError,
    NlapError,
)
from .ingest import load_detections, load_video
from .trainer import fine_tune, gradient_check, load_checkpoint, save_checkpoint, train, write_loss_history_csv
from .triplet import build_triplets

__all__ = ["main"]


def _apply_thread_cap() -> None:
    raw = os.environ.get("NLAP_THREADS")
    if raw is None:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NLAP_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"NLAP_THREADS must be >= 1, got {n}")
    torch.set_num_threads(n)


def _video_dirs(data_dir: Path) -> list[Path]:
    if not data_dir.is_dir():
        raise EmptyDatasetError(f"data directory {data_dir} does not exist")
    dirs = sorted(p for p in data_dir.iterdir() if p.is_dir() and (p / "frame_000000.png").exists())
    if not dirs:
        raise EmptyDatasetError(f"no video directories under {data_dir}")
    return dirs


def _load_dataset(data_dir: Path, cfg: RunConfig):
    """Yield (clip, detections) per video directory, sorted by name."""
    out = []
    for d in _video_dirs(data_dir):
        det_path = d / "detections.jsonl"
        if not det_path.exists():
            raise EmptyDatasetError(f"video {d.name!r}: missing detections file {det_path}")
        clip = load_video(d)
        dets = load_detections(det_path, d.name, conf_threshold=cfg.conf_threshold)
        out.append((clip, dets))
    return out


def _dataset_triplets(data_dir: Path, cfg: RunConfig):
    """All triplets across the dataset plus per-video bookkeeping."""
    videos = _load_dataset(data_dir, cfg)
    triplets = []
    per_video = []
    for clip, dets in videos:
        trips = build_triplets(clip, dets, cfg.triplet)
        triplets.extend(trips)
        per_video.append((clip, trips))
    if not triplets:
        raise EmptyDatasetError(f"no usable triplets in {data_dir}")
    return triplets, per_video


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    out = Path(args.out)
    train_videos, test_videos = synthbench.make_benchmark(
        cfg.scene,
        cfg.synth.train_videos,
        cfg.synth.test_videos,
        cfg.synth.anomaly_kind,
        cfg.synth.anomaly_magnitude,
        cfg.synth.anomaly_length,
        cfg.seed,
        interval_margin=cfg.synth.interval_margin,
    )
    for v in train_videos:
        synthbench.write_synth_video(v, out / "train" / v.clip.id)
    for v in test_videos:
        synthbench.write_synth_video(v, out / "test" / v.clip.id)
    print(
        f"wrote {len(train_videos)} train and {len(test_videos)} test videos "
        f"({cfg.scene.frames_per_video} frames each) to {out}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, ablate=args.ablate)
    if args.k_shot is not None and args.init_from is None:
        raise ConfigError("--k-shot requires --init-from (few-shot adapts an existing checkpoint)")
    if args.init_from is not None and args.ablate is not None:
        raise ConfigError("--ablate applies to fresh training, not to an existing checkpoint")
    triplets, _ = _dataset_triplets(Path(args.data), cfg)
    t0 = time.perf_counter()
    if args.init_from is not None:
        base = load_checkpoint(args.init_from)
        ckpt = fine_tune(base, triplets, args.k_shot, cfg.train, cfg.ssim)
        what = f"fine-tuned from {args.init_from} to epoch {ckpt.epoch}"
    else:
        ckpt = train(triplets, cfg.arch, cfg.train, cfg.ssim)
        what = f"trained {ckpt.epoch} epochs on {len(triplets)} triplets"
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out)
    write_loss_history_csv(ckpt.loss_history, Path(str(out) + ".losses.csv"))
    final = ckpt.loss_history[-1][2] if ckpt.loss_history else float("nan")
    print(f"{what} in {time.perf_counter() - t0:.1f}s, final loss_g={final:.6f}, saved {out}")
    return 0


def cmd_score(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.arch.patch_size_S != cfg.triplet.patch_size_S:
        raise ConfigError(
            f"checkpoint patch size {ckpt.arch.patch_size_S} != configured "
            f"triplet patch size {cfg.triplet.patch_size_S}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, per_video = _dataset_triplets(Path(args.data), cfg)
    for clip, trips in per_video:
        vs = scorer.score_video(
            ckpt.generator, clip.id, len(clip.frames), trips, cfg.ssim, cfg.smooth
        )
        scorer.write_score_csv(vs, out / f"{clip.id}.csv")
        if not args.no_figures:
            labels = None
            labels_path = Path(args.data) / clip.id / f"{clip.id}.labels"
            if labels_path.exists():
                labels = evaluator.load_labels(labels_path, clip.id).labels
            plots.score_timeline_figure(
                clip.id,
                vs.raw.scores,
                vs.smoothed.scores,
                vs.normalized.scores,
                out / f"{clip.id}.png",
                labels=labels,
            )
    print(f"scored {len(per_video)} videos to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    scores_dir = Path(args.scores)
    if not scores_dir.is_dir():
        raise EmptyDatasetError(f"scores directory {scores_dir} does not exist")
    csvs = sorted(scores_dir.glob("*.csv"))
    if not csvs:
        raise EmptyDatasetError(f"no score CSVs under {scores_dir}")
    labels_dir = Path(args.labels)
    series = []
    truths = []
    missing = []
    for path in csvs:
        vid = path.stem
        stages = scorer.read_score_csv(path, vid)
        stage = "smoothed" if cfg.eval.normalize_mode == "global" else "normalized"
        series.append(stages[stage])
        found = None
        for cand in (labels_dir / f"{vid}.labels", labels_dir / vid / f"{vid}.labels"):
            if cand.exists():
                found = cand
                break
        if found is None:
            missing.append(vid)
        else:
            truths.append(evaluator.load_labels(found, vid))
    if missing:
        raise EvalMismatchError(f"no labels found for scored video(s) {missing} under {labels_dir}")
    report = evaluator.evaluate(series, truths, cfg.eval.pooling, cfg.eval.normalize_mode)
    report_path = Path(args.report)
    if report_path.parent != Path(""):
        report_path.parent.mkdir(parents=True, exist_ok=True)
    evaluator.write_report(report, report_path)
    if not args.no_figures:
        plots.roc_figure(report.roc_points, report.pooled_auc, report_path.parent / "roc.png")
    for note in report.notes:
        print(note, file=sys.stderr)
    if report.pooled_auc is None:
        print("AUC=NA")
    else:
        print(f"AUC={report.pooled_auc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .model import ArchConfig
    from .triplet import AppearanceTriplet

    arch = ArchConfig(base_channels=4, levels=2, patch_size_S=16, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    s = arch.patch_size_S
    trip = AppearanceTriplet(
        past=rng.random((s, s), dtype=np.float32),
        current=rng.random((s, s), dtype=np.float32),
        next=rng.random((s, s), dtype=np.float32),
        video_id="gradcheck",
        frame_index_t=0,
        detection_ref=0,
    )
    err = gradient_check(arch, trip, seed=args.seed, coords_per_net=args.coords)
    print(f"max relative error {err:.3e}")
    print(f"tolerance {args.tol:.1e}: {'PASS' if err < args.tol else 'FAIL'}")
    return 0 if err < args.tol else 1


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nlap",
        description="Object-centric video anomaly detection: predict each "
        "object's next appearance and score frames by reconstruction error.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", metavar="FILE", default=None, help="JSON run configuration")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the run seed")

    sp = sub.add_parser("synth", help="generate the synthetic benchmark")
    common(sp)
    sp.add_argument("--out", metavar="DIR", required=True, help="output dataset root")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train a model on a directory of videos")
    common(sp)
    sp.add_argument("--data", metavar="DIR", required=True, help="directory of video folders")
    sp.add_argument("--out", metavar="FILE", required=True, help="checkpoint output path")
    sp.add_argument("--init-from", metavar="FILE", default=None, help="fine-tune from this checkpoint")
    sp.add_argument("--k-shot", type=int, default=None, metavar="K",
                    help="adapt using only K frames per video (with --init-from)")
    sp.add_argument("--ablate", default=None, metavar="NAME",
                    choices=["no-past", "no-current", "no-skip", "no-adv"],
                    help="train an ablated architecture")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score videos with a trained checkpoint")
    common(sp)
    sp.add_argument("--ckpt", metavar="FILE", required=True, help="trained checkpoint")
    sp.add_argument("--data", metavar="DIR", required=True, help="directory of video folders")
    sp.add_argument("--out", metavar="DIR", required=True, help="output directory for score CSVs")
    sp.add_argument("--no-figures", action="store_true", help="skip rendering score timeline figures")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="evaluate score CSVs against frame labels")
    common(sp, seed=False)
    sp.add_argument("--scores", metavar="DIR", required=True, help="directory of score CSVs")
    sp.add_argument("--labels", metavar="DIR", required=True, help="directory of labels files")
    sp.add_argument("--report", metavar="FILE", required=True, help="JSON report output path")
    sp.add_argument("--no-figures", action="store_true", help="skip rendering the ROC figure")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck")  # maintenance command, excluded from help
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--coords", type=int, default=128)
    sp.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        _apply_thread_cap()
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except EmptyDatasetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except EvalMismatchError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except (NlapError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
