"""Run configuration parsing: defaults, seed precedence, strictness."""

import json

import pytest

from nlap.config import EvalSettings, RunConfig, SynthSettings, load_run_config
from nlap.errors import ConfigError


def write(tmp_path, payload, name="run.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


class TestDefaults:
    def test_no_file_gives_defaults(self):
        cfg = load_run_config()
        assert cfg.seed == 0
        assert cfg.arch.seed == 0 and cfg.train.seed == 0
        assert cfg.triplet.patch_size_S == cfg.arch.patch_size_S == 64
        assert cfg.train.epochs == 20
        assert cfg.scene.frames_per_video == 300
        assert cfg.synth.train_videos == 10 and cfg.synth.test_videos == 5
        assert cfg.eval.normalize_mode == "per_video" and cfg.eval.pooling == "pooled"
        assert cfg.conf_threshold == 0.5

    def test_empty_file_equals_no_file(self, tmp_path):
        assert load_run_config(write(tmp_path, {})) == load_run_config()


class TestSeedPrecedence:
    def test_file_seed_feeds_arch_and_train(self, tmp_path):
        cfg = load_run_config(write(tmp_path, {"seed": 7}))
        assert cfg.seed == 7 and cfg.arch.seed == 7 and cfg.train.seed == 7

    def test_cli_seed_beats_file_seed(self, tmp_path):
        cfg = load_run_config(write(tmp_path, {"seed": 7}), seed=42)
        assert cfg.seed == 42 and cfg.arch.seed == 42 and cfg.train.seed == 42

    def test_section_seed_beats_run_seed(self, tmp_path):
        payload = {"seed": 7, "arch": {"seed": 3}, "train": {"seed": 4}}
        cfg = load_run_config(write(tmp_path, payload), seed=42)
        assert cfg.seed == 42
        assert cfg.arch.seed == 3 and cfg.train.seed == 4

    def test_non_integer_seed_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="seed must be an integer"):
            load_run_config(write(tmp_path, {"seed": "42"}))


class TestSections:
    def test_values_land_in_their_dataclasses(self, tmp_path):
        payload = {
            "triplet": {"frame_gap_T": 2, "patch_size_S": 32},
            "arch": {"patch_size_S": 32, "base_channels": 16},
            "train": {"batch_size": 8, "epochs": 2},
            "ssim": {"window_size": 7},
            "smooth": {"sigma_frames": 1.0},
            "scene": {"canvas_h": 64, "canvas_w": 64, "sprite_shapes": ["disc"]},
            "synth": {"test_videos": 2, "anomaly_kind": "shape_morph", "anomaly_magnitude": 1.0},
            "eval": {"pooling": "per_video_mean"},
            "conf_threshold": 0.25,
        }
        cfg = load_run_config(write(tmp_path, payload))
        assert cfg.triplet.frame_gap_T == 2
        assert cfg.arch.base_channels == 16
        assert cfg.train.batch_size == 8
        assert cfg.ssim.window_size == 7
        assert cfg.smooth.sigma_frames == 1.0
        assert cfg.scene.sprite_shapes == ("disc",)  # lists become tuples
        assert cfg.synth.anomaly_kind == "shape_morph"
        assert cfg.eval.pooling == "per_video_mean"
        assert cfg.conf_threshold == 0.25

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config section"):
            load_run_config(write(tmp_path, {"optimizer": {}}))

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key 'depth'"):
            load_run_config(write(tmp_path, {"arch": {"depth": 4}}))

    def test_non_object_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="must be a JSON object"):
            load_run_config(write(tmp_path, {"arch": [1, 2]}))

    def test_top_level_must_be_object(self, tmp_path):
        p = tmp_path / "arr.json"
        p.write_text("[1, 2, 3]")
        with pytest.raises(ConfigError, match="top level"):
            load_run_config(p)

    def test_invalid_json_rejected(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_run_config(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config(tmp_path / "absent.json")


class TestAblation:
    def test_ablate_flips_one_axis(self, tmp_path):
        p = write(tmp_path, {})
        assert load_run_config(p, ablate="no-adv").arch.adversarial is False
        assert load_run_config(p, ablate="no-skip").arch.skip_connections is False
        assert load_run_config(p, ablate="no-past").arch.use_past_encoder is False
        assert load_run_config(p, ablate="no-current").arch.use_current_encoder is False

    def test_unknown_ablation_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown ablation"):
            load_run_config(write(tmp_path, {}), ablate="no-decoder")


class TestValidation:
    def test_patch_size_mismatch_caught(self, tmp_path):
        payload = {"triplet": {"patch_size_S": 32}}
        with pytest.raises(ConfigError, match="patch size mismatch"):
            load_run_config(write(tmp_path, payload))

    def test_section_validators_run(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(write(tmp_path, {"train": {"batch_size": 0}}))
        with pytest.raises(ConfigError):
            load_run_config(write(tmp_path, {"synth": {"anomaly_kind": "teleport"}}))

    def test_conf_threshold_bounds(self, tmp_path):
        with pytest.raises(ConfigError, match="conf_threshold"):
            load_run_config(write(tmp_path, {"conf_threshold": 1.5}))

    def test_settings_validate_directly(self):
        SynthSettings().validate()
        EvalSettings().validate()
        RunConfig().validate()
        with pytest.raises(ConfigError):
            SynthSettings(train_videos=-1).validate()
        with pytest.raises(ConfigError):
            EvalSettings(pooling="mode").validate()
