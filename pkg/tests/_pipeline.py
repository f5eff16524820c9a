"""Full-scale benchmark pipeline shared by the acceptance gate.

One call runs the complete default experiment for one master seed and one
optional architecture ablation: generate the synthetic benchmark in memory,
train, score the test split, and evaluate.  Results come back as plain data
(loss history, CSV bytes, report, pooled arrays) so callers can cache them
without holding video tensors alive.
"""

from pathlib import Path

import numpy as np
import torch

from nlap.config import load_run_config
from nlap.evaluator import GroundTruth, evaluate
from nlap.scorer import score_video, write_score_csv
from nlap.synthbench import make_benchmark
from nlap.trainer import train
from nlap.triplet import build_triplets


def run_pipeline(seed, ablate=None, scratch_dir=None, observer=None, config_path=None):
    """Benchmark -> train -> score -> evaluate with library defaults.

    The flush-to-zero state is pinned on entry so results do not depend on
    what ran earlier in the process.
    """
    torch.set_flush_denormal(True)
    torch.set_num_threads(1)
    cfg = load_run_config(config_path, seed=seed, ablate=ablate)
    train_videos, test_videos = make_benchmark(
        cfg.scene,
        cfg.synth.train_videos,
        cfg.synth.test_videos,
        cfg.synth.anomaly_kind,
        cfg.synth.anomaly_magnitude,
        cfg.synth.anomaly_length,
        cfg.seed,
        interval_margin=cfg.synth.interval_margin,
    )
    train_triplets = []
    for v in train_videos:
        train_triplets.extend(build_triplets(v.clip, v.detections, cfg.triplet))
    del train_videos
    ckpt = train(train_triplets, cfg.arch, cfg.train, cfg.ssim, observer=observer)
    del train_triplets

    series = []
    truths = []
    csv_bytes = {}
    for v in test_videos:
        trips = build_triplets(v.clip, v.detections, cfg.triplet)
        vs = score_video(
            ckpt.generator, v.clip.id, len(v.clip.frames), trips, cfg.ssim, cfg.smooth
        )
        series.append(vs.normalized)
        truths.append(GroundTruth(v.clip.id, v.labels))
        if scratch_dir is not None:
            path = Path(scratch_dir) / f"{v.clip.id}.csv"
            write_score_csv(vs, path)
            csv_bytes[v.clip.id] = path.read_bytes()
    report = evaluate(series, truths, cfg.eval.pooling, cfg.eval.normalize_mode)

    vids = sorted(s.video_id for s in series)
    by_id = {s.video_id: s for s in series}
    gt_by_id = {t.video_id: t for t in truths}
    pooled_scores = np.concatenate([by_id[v].scores for v in vids])
    pooled_labels = np.concatenate([gt_by_id[v].labels for v in vids])

    return {
        "loss_history": ckpt.loss_history,
        "report": report,
        "csv": csv_bytes,
        "pooled_scores": pooled_scores,
        "pooled_labels": pooled_labels,
    }
