"""
Unit tests for the pipeline stages on a tiny run configuration.
"""

import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from reactive_avatar.ablation import CONDITIONING_ROWS, MASK_ROWS, run_ablation, write_ablation
from reactive_avatar.core.config import ConfigManager
from reactive_avatar.core.errors import ArtifactIOError, ArtifactMismatchError
from reactive_avatar.core.schema import ConditionTriplet
from reactive_avatar.pipeline import Pipeline, pad_condition
from reactive_avatar.utils.csv_out import read_csv


class TestPipeline:
    """End-to-end stages over one temporary artifact directory."""

    def setup_method(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.out = Path(self.temp_dir.name)

    def teardown_method(self):
        self.temp_dir.cleanup()

    def test_generate_data_is_deterministic(self, tiny_run_config):
        """Test that equal configs write byte-identical datasets."""
        first = Pipeline(tiny_run_config, self.out / "a", progress=False).generate_data()
        second = Pipeline(tiny_run_config, self.out / "b", progress=False).generate_data()
        assert first.read_bytes() == second.read_bytes()
        other = Pipeline(ConfigManager.with_seed(tiny_run_config, 9), self.out / "c", progress=False).generate_data()
        assert other.read_bytes() != first.read_bytes()

    def test_missing_artifact(self, tiny_run_config):
        """Test that a stage without its input artifact raises ArtifactIOError."""
        pipeline = Pipeline(tiny_run_config, self.out, progress=False)
        with pytest.raises(ArtifactIOError):
            pipeline.clips()
        with pytest.raises(ArtifactIOError):
            pipeline.load_model("full")

    def test_digest_mismatch_and_force(self, tiny_run_config):
        """Test that artifacts from another config are refused unless forced."""
        Pipeline(tiny_run_config, self.out, progress=False).generate_data()
        other = ConfigManager.with_seed(tiny_run_config, 5)
        with pytest.raises(ArtifactMismatchError):
            Pipeline(other, self.out, progress=False).clips()
        assert len(Pipeline(other, self.out, force=True, progress=False).clips()) == 4

    def test_variant_config(self, tiny_run_config):
        """Test the conditioning of each variant and the mask override."""
        pipeline = Pipeline(tiny_run_config, self.out, progress=False)
        assert not pipeline.variant_config("no-user-motion").model.user_motion
        assert pipeline.variant_config("no-user-motion").model.user_audio
        talking = pipeline.variant_config("talking-only").model
        assert not talking.user_motion and not talking.user_audio
        assert pipeline.variant_config("full", "framewise").model.mask_kind == "framewise"
        assert pipeline.model_path("full", "lookahead").name == "model-full.afck"
        assert pipeline.model_path("full", "blockwise").name == "model-full-blockwise.afck"
        with pytest.raises(ValueError):
            pipeline.variant_config("huge")

    def test_train_stream_evaluate_and_ablate(self, tiny_run_config):
        """Test the stages from data to the ablation table with one trained model."""
        pipeline = Pipeline(tiny_run_config, self.out, progress=False)
        pipeline.generate_data()
        codec_result = pipeline.train_codec()
        assert len(codec_result.losses) == tiny_run_config.codec.steps
        _, result = pipeline.train_model("full")
        assert len(result.losses) == tiny_run_config.train.steps
        assert pipeline.model_path("full").exists()
        trace = read_csv(self.out / "trace-full.csv")
        assert [row["wall_ms"] for row in trace] == ["0.0"] * 3

        streamed = pipeline.stream("full", clip_index=1, frames=10)
        assert streamed.blocks == 3
        assert streamed.motion.shape == (10, 4)
        assert streamed.parameters.shape == (10, 6)
        assert np.isfinite(streamed.parameters).all()
        assert len(read_csv(self.out / "stream-latency.csv")) == 3
        single = pipeline.stream("full", clip_index=0, frames=3)
        assert single.blocks == 1
        assert single.latency is None
        assert [row["block"] for row in read_csv(self.out / "stream-latency.csv")] == ["0"]
        with pytest.raises(IndexError):
            pipeline.stream("full", clip_index=7)

        reports = pipeline.evaluate("full")
        assert set(reports) == {"GT", "full"}
        assert reports["GT"].values["rPCC-Exp"] == 0.0
        assert reports["full"].clips == 4
        assert (self.out / "report-full.csv").exists()

        table = run_ablation(pipeline)
        assert list(table.reports) == [label for label, _, _ in CONDITIONING_ROWS + MASK_ROWS]
        assert sorted(table.absent()) == sorted(
            ["no-user-motion", "full+dpo", "mask-framewise", "mask-blockwise"]
        )
        assert not math.isnan(table.jerk["full"])
        write_ablation(pipeline, table)
        rows = {row["label"]: row for row in read_csv(self.out / "ablation.csv")}
        assert rows["full+dpo"]["status"] == "absent"
        assert rows["mask-lookahead"]["status"] == "ok"
        assert "absent" in (self.out / "ablation.txt").read_text()


def test_pad_condition():
    """Test padding to whole blocks by repeating the last frame."""
    frames = torch.arange(5.0)[:, None]
    condition = ConditionTriplet(
        user_audio=frames.repeat(1, 2),
        user_motion=frames.repeat(1, 3),
        avatar_audio=frames.repeat(1, 2),
    )
    padded = pad_condition(condition, 4)
    assert padded.length == 8
    assert padded.user_motion[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 4.0, 4.0, 4.0]
    assert pad_condition(condition, 5) is condition
