"""End-to-end CLI checks on a miniature dataset, plus exit-code mapping."""

import json

import numpy as np
import pytest
from PIL import Image

from nlap.cli import main
from nlap.evaluator import read_report

MINI_CONFIG = {
    "seed": 5,
    "triplet": {"patch_size_S": 16},
    "arch": {"base_channels": 4, "levels": 2, "patch_size_S": 16},
    "train": {"batch_size": 16, "epochs": 1},
    "scene": {
        "canvas_h": 48,
        "canvas_w": 48,
        "sprite_count": 2,
        "sprite_side": 12,
        "frames_per_video": 40,
    },
    "synth": {
        "train_videos": 2,
        "test_videos": 2,
        "anomaly_length": 8,
        "interval_margin": 6,
    },
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> train -> score -> eval once; tests inspect the artifacts."""
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "run.json"
    config.write_text(json.dumps(MINI_CONFIG))
    data = root / "data"
    ckpt = root / "model.ckpt"
    scores = root / "scores"
    report = root / "report" / "report.json"

    assert main(["synth", "--config", str(config), "--out", str(data)]) == 0
    assert main([
        "train", "--config", str(config),
        "--data", str(data / "train"), "--out", str(ckpt),
    ]) == 0
    assert main([
        "score", "--config", str(config), "--ckpt", str(ckpt),
        "--data", str(data / "test"), "--out", str(scores),
    ]) == 0
    assert main([
        "eval", "--config", str(config), "--scores", str(scores),
        "--labels", str(data / "test"), "--report", str(report),
    ]) == 0
    return {"root": root, "config": config, "data": data, "ckpt": ckpt,
            "scores": scores, "report": report}


class TestPipelineArtifacts:
    def test_synth_layout(self, pipeline):
        data = pipeline["data"]
        for split, n in (("train", 2), ("test", 2)):
            vids = sorted(p.name for p in (data / split).iterdir())
            assert len(vids) == n
        v = data / "train" / "train_000"
        assert (v / "frame_000000.png").exists()
        assert (v / "frame_000039.png").exists()
        assert (v / "detections.jsonl").exists()
        assert (v / "train_000.labels").exists()

    def test_train_labels_all_zero_test_labels_marked(self, pipeline):
        data = pipeline["data"]
        train_labels = (data / "train" / "train_000" / "train_000.labels").read_text()
        assert set(train_labels.split()) == {"0"}
        test_labels = (data / "test" / "test_000" / "test_000.labels").read_text()
        assert "1" in test_labels.split()

    def test_checkpoint_and_loss_log(self, pipeline):
        assert pipeline["ckpt"].stat().st_size > 0
        losses = pipeline["root"] / "model.ckpt.losses.csv"
        lines = losses.read_text().splitlines()
        assert lines[0] == "epoch,step,loss_g,loss_adv_g,loss_adv_d"
        assert len(lines) > 1
        cells = lines[1].split(",")
        assert len(cells) == 5 and all(c for c in cells)

    def test_score_outputs_csv_and_figure_per_video(self, pipeline):
        scores = pipeline["scores"]
        assert sorted(p.name for p in scores.glob("*.csv")) == ["test_000.csv", "test_001.csv"]
        assert sorted(p.name for p in scores.glob("*.png")) == ["test_000.png", "test_001.png"]
        header = (scores / "test_000.csv").read_text().splitlines()[0]
        assert header == "frame_index,raw,smoothed,normalized"
        png = (scores / "test_000.png").read_bytes()
        assert png[:8] == b"\x89PNG\r\n\x1a\n"

    def test_eval_report_and_roc(self, pipeline):
        rep = read_report(pipeline["report"])
        assert rep.n_videos == 2
        assert rep.pooled_auc is None or 0.0 <= rep.pooled_auc <= 1.0
        assert (pipeline["report"].parent / "roc.png").exists()

    def test_eval_prints_auc_line(self, pipeline, capsys):
        assert main([
            "eval", "--config", str(pipeline["config"]),
            "--scores", str(pipeline["scores"]),
            "--labels", str(pipeline["data"] / "test"),
            "--report", str(pipeline["root"] / "again.json"),
            "--no-figures",
        ]) == 0
        out = capsys.readouterr().out
        assert out.startswith("AUC=")
        tail = out.strip().split("=", 1)[1]
        assert tail == "NA" or len(tail.split(".")[1]) == 4

    def test_no_figures_flag(self, pipeline):
        out2 = pipeline["root"] / "scores_nofig"
        assert main([
            "score", "--config", str(pipeline["config"]), "--ckpt", str(pipeline["ckpt"]),
            "--data", str(pipeline["data"] / "test"), "--out", str(out2),
            "--no-figures",
        ]) == 0
        assert list(out2.glob("*.csv")) and not list(out2.glob("*.png"))

    def test_global_normalize_mode_evaluates(self, pipeline, capsys):
        cfg = dict(MINI_CONFIG)
        cfg["eval"] = {"normalize_mode": "global"}
        config2 = pipeline["root"] / "global.json"
        config2.write_text(json.dumps(cfg))
        assert main([
            "eval", "--config", str(config2),
            "--scores", str(pipeline["scores"]),
            "--labels", str(pipeline["data"] / "test"),
            "--report", str(pipeline["root"] / "global.json.report"),
            "--no-figures",
        ]) == 0
        assert capsys.readouterr().out.startswith("AUC=")


class TestRerunDeterminism:
    def test_synth_train_score_reproduce_bytes(self, pipeline):
        root = pipeline["root"]
        data2 = root / "data2"
        ckpt2 = root / "model2.ckpt"
        scores2 = root / "scores2"
        assert main(["synth", "--config", str(pipeline["config"]), "--out", str(data2)]) == 0
        a = (pipeline["data"] / "test" / "test_000" / "frame_000010.png").read_bytes()
        b = (data2 / "test" / "test_000" / "frame_000010.png").read_bytes()
        assert a == b
        assert main([
            "train", "--config", str(pipeline["config"]),
            "--data", str(data2 / "train"), "--out", str(ckpt2),
        ]) == 0
        assert ckpt2.read_bytes() == pipeline["ckpt"].read_bytes()
        assert main([
            "score", "--config", str(pipeline["config"]), "--ckpt", str(ckpt2),
            "--data", str(data2 / "test"), "--out", str(scores2), "--no-figures",
        ]) == 0
        for name in ("test_000.csv", "test_001.csv"):
            assert (scores2 / name).read_bytes() == (pipeline["scores"] / name).read_bytes()


class TestExitCodes:
    def test_bad_config_json(self, tmp_path, capsys):
        bad = tmp_path / "b.json"
        bad.write_text("{nope")
        code = main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_missing_data_dir(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "m.ckpt")])
        assert code == 3

    def test_data_dir_without_videos(self, tmp_path):
        (tmp_path / "empty").mkdir()
        code = main(["train", "--data", str(tmp_path / "empty"), "--out", str(tmp_path / "m.ckpt")])
        assert code == 3

    def test_video_missing_detections(self, tmp_path, capsys):
        vdir = tmp_path / "data" / "clip"
        vdir.mkdir(parents=True)
        Image.fromarray(np.zeros((8, 8), dtype=np.uint8), mode="L").save(vdir / "frame_000000.png")
        code = main(["train", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "m.ckpt")])
        assert code == 3
        assert "clip" in capsys.readouterr().err

    def test_k_shot_without_init_from(self, tmp_path):
        code = main([
            "train", "--data", str(tmp_path), "--out", str(tmp_path / "m.ckpt"),
            "--k-shot", "3",
        ])
        assert code == 2

    def test_ablate_with_init_from(self, tmp_path):
        code = main([
            "train", "--data", str(tmp_path), "--out", str(tmp_path / "m.ckpt"),
            "--init-from", str(tmp_path / "base.ckpt"), "--ablate", "no-adv",
        ])
        assert code == 2

    def test_unknown_ablation_is_an_argparse_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", str(tmp_path), "--out", "x", "--ablate", "no-decoder"])
        assert exc.value.code == 2

    def test_corrupt_checkpoint(self, tmp_path):
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"not a checkpoint at all")
        code = main([
            "score", "--ckpt", str(junk), "--data", str(tmp_path), "--out", str(tmp_path / "s"),
        ])
        assert code == 4

    def test_checkpoint_patch_size_mismatch(self, pipeline, tmp_path, capsys):
        cfg = dict(MINI_CONFIG)
        cfg["triplet"] = {"patch_size_S": 32}
        cfg["arch"] = {"base_channels": 4, "levels": 2, "patch_size_S": 32}
        config = tmp_path / "s32.json"
        config.write_text(json.dumps(cfg))
        code = main([
            "score", "--config", str(config), "--ckpt", str(pipeline["ckpt"]),
            "--data", str(pipeline["data"] / "test"), "--out", str(tmp_path / "s"),
        ])
        assert code == 2
        assert "patch size" in capsys.readouterr().err

    def test_eval_missing_scores_dir(self, tmp_path):
        code = main([
            "eval", "--scores", str(tmp_path / "none"), "--labels", str(tmp_path),
            "--report", str(tmp_path / "r.json"),
        ])
        assert code == 3

    def test_eval_empty_scores_dir(self, tmp_path):
        (tmp_path / "scores").mkdir()
        code = main([
            "eval", "--scores", str(tmp_path / "scores"), "--labels", str(tmp_path),
            "--report", str(tmp_path / "r.json"),
        ])
        assert code == 3

    def test_eval_missing_labels(self, pipeline, tmp_path, capsys):
        empty_labels = tmp_path / "labels"
        empty_labels.mkdir()
        code = main([
            "eval", "--scores", str(pipeline["scores"]), "--labels", str(empty_labels),
            "--report", str(tmp_path / "r.json"), "--no-figures",
        ])
        assert code == 5
        assert "test_000" in capsys.readouterr().err

    def test_thread_cap_rejects_garbage(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NLAP_THREADS", "many")
        code = main(["synth", "--out", str(tmp_path / "d")])
        assert code == 2
        monkeypatch.setenv("NLAP_THREADS", "0")
        code = main(["synth", "--out", str(tmp_path / "d")])
        assert code == 2


class TestGradcheckCommand:
    def test_passes_at_default_tolerance(self, capsys):
        code = main(["gradcheck", "--coords", "16"])
        out = capsys.readouterr().out
        assert code == 0
        assert "PASS" in out and "max relative error" in out
