"""
Tests for fine-tuning, evaluation, the recipe and the ablation grid.
"""

import dataclasses
import json
import os

import numpy as np
import pytest

from leaptt.checkpoint import Checkpoint, checkpoint_hash, load_checkpoint
from leaptt.errors import LeapInputError, NumericError, ProvenanceError
from leaptt.logger import MetricsWriter
from leaptt.metrics import WerReport
from leaptt.pipeline import (
    AblationReport,
    AblationRow,
    EarlyStopping,
    Recipe,
    ablate,
    ablation_configs,
    evaluate,
    finetune,
    recipe_hash,
    run_recipe,
    verify_lineage,
)
from leaptt.transducer import batch_loss
from leaptt.types import AblationConfig, FinetuneConfig, StageName

from tests.conftest import make_utterance


@pytest.fixture
def init_checkpoint(tiny_params, tiny_model_config):
    return Checkpoint(params=tiny_params, config=tiny_model_config, seed=0, stage="leap")


class TestEarlyStopping:
    """Tests for EarlyStopping."""

    def test_stops_after_patience(self):
        """Test five non-improving evaluations after the best trigger a stop."""
        stopper = EarlyStopping(patience=5)
        decisions = [stopper.update(x) for x in [3, 2, 2, 2, 2, 2, 2]]
        assert decisions == [False] * 6 + [True]
        assert stopper.best == 2
        assert stopper.best_index == 1

    def test_improvement_resets(self):
        """Test a new best resets the counter."""
        stopper = EarlyStopping(patience=2)
        stopper.update(3.0)
        stopper.update(3.5)
        assert not stopper.update(1.0)
        assert stopper.improved
        assert stopper.bad_evals == 0


class TestFinetune:
    """Tests for finetune()."""

    def test_zero_steps_returns_init(self, init_checkpoint, tiny_batch):
        """Test no updates keep the initial parameters."""
        result = finetune(
            init_checkpoint,
            tiny_batch,
            tiny_batch,
            FinetuneConfig(max_steps=0),
            batch_size=2,
            rng=np.random.default_rng(0),
        )
        np.testing.assert_array_equal(result.params.flatten(), init_checkpoint.params.flatten())
        assert result.stage == "finetune"
        assert result.extra["best_step"] == 0

    def test_validation_schedule(self, init_checkpoint, tiny_batch):
        """Test validation runs at step 0, every eval_every steps and at the last step."""
        metrics = MetricsWriter(None)
        result = finetune(
            init_checkpoint,
            tiny_batch,
            tiny_batch,
            FinetuneConfig(max_steps=3, eval_every=2, patience=5),
            batch_size=2,
            rng=np.random.default_rng(0),
            metrics=metrics,
        )
        valid = [r for r in metrics.records if "valid_loss" in r]
        assert [r["step"] for r in valid] == [0, 2, 3]
        assert [r["step"] for r in metrics.records if "loss" in r] == [1, 2, 3]
        assert result.extra["best_valid_loss"] == min(r["valid_loss"] for r in valid)
        assert result.step == 3

    def test_empty_valid_uses_train(self, init_checkpoint, tiny_batch):
        """Test an empty validation set falls back to the training set."""
        result = finetune(
            init_checkpoint,
            tiny_batch,
            [],
            FinetuneConfig(max_steps=1, eval_every=1),
            batch_size=2,
            rng=np.random.default_rng(0),
        )
        assert np.isfinite(result.extra["best_valid_loss"])

    def test_no_train_data(self, init_checkpoint):
        """Test fine-tuning without data is an input error."""
        with pytest.raises(LeapInputError):
            finetune(init_checkpoint, [], [], FinetuneConfig(), 2, np.random.default_rng(0))

    def test_divergence(self, init_checkpoint, tiny_batch):
        """Test a loss above the divergence threshold raises with the step."""
        with pytest.raises(NumericError) as excinfo:
            finetune(
                init_checkpoint,
                tiny_batch,
                tiny_batch,
                FinetuneConfig(max_steps=3, divergence_threshold=1e-9),
                batch_size=2,
                rng=np.random.default_rng(0),
            )
        assert excinfo.value.step == 1


class TestEvaluate:
    """Tests for evaluate()."""

    def test_per_language_report(self, init_checkpoint, tiny_batch):
        """Test one locale per language with the reference word counts."""
        report = evaluate(init_checkpoint, tiny_batch)
        assert [loc.locale for loc in report.locales] == ["lang0", "lang1"]
        assert [loc.ref_words for loc in report.locales] == [2, 1]
        assert report.overall >= 0

    def test_mean_loss_over_test_set(self, init_checkpoint, tiny_batch):
        """Test the report carries the mean per-utterance transducer loss."""
        report = evaluate(init_checkpoint, tiny_batch)
        config = init_checkpoint.config
        losses = [batch_loss(init_checkpoint.params, [utt], config) for utt in tiny_batch]
        assert report.mean_loss == pytest.approx(np.mean(losses), rel=1e-12)
        assert json.loads(report.to_json())["mean_loss"] == report.mean_loss

    def test_frame_dimension_mismatch(self, init_checkpoint):
        """Test utterances with the wrong frame width are rejected."""
        with pytest.raises(LeapInputError):
            evaluate(init_checkpoint, [make_utterance([0], feature_dim=5)])

    def test_empty(self, init_checkpoint):
        """Test an empty test set is an input error."""
        with pytest.raises(LeapInputError):
            evaluate(init_checkpoint, [])


class TestRecipeHash:
    """Tests for recipe_hash()."""

    def test_ignores_placement(self, tiny_run_config):
        """Test output directory and log level do not change the hash."""
        moved = dataclasses.replace(tiny_run_config, output_dir="elsewhere", log_level="DEBUG")
        assert recipe_hash(moved) == recipe_hash(tiny_run_config)
        assert recipe_hash(tiny_run_config.with_seed(4)) != recipe_hash(tiny_run_config)


class TestRecipe:
    """End-to-end runs of the tiny recipe."""

    @pytest.fixture
    def result(self, tiny_run_config):
        return run_recipe(tiny_run_config, quiet=True)

    def test_artifacts(self, result):
        """Test every stage leaves its files and a COMPLETED status."""
        out = result.output_dir
        for name in [
            "resolved_config.json",
            "status.json",
            "run.log",
            "init.ckpt",
            "ssl.ckpt",
            "leap.ckpt",
            "final.ckpt",
            "ssl_metrics.jsonl",
            "leap_metrics.jsonl",
            "finetune_metrics.jsonl",
            "report.json",
            "report.csv",
        ]:
            assert os.path.exists(os.path.join(out, name)), name
        with open(os.path.join(out, "status.json"), encoding="utf-8") as f:
            status = json.load(f)
        assert {s["state"] for s in status["stages"].values()} == {"COMPLETED"}

    def test_report_file(self, result):
        """Test report.json matches the returned report."""
        with open(os.path.join(result.output_dir, "report.json"), encoding="utf-8") as f:
            stored = WerReport.from_json(f.read())
        assert stored.by_locale() == result.report.by_locale()
        assert list(stored.by_locale()) == ["lang0", "lang1"]
        assert stored.mean_loss is not None
        assert stored.mean_loss == result.report.mean_loss

    def test_lineage(self, result):
        """Test the final checkpoint walks back to init."""
        lineage = verify_lineage(result.checkpoints["finetune"])
        assert [stage_name for stage_name, _ in lineage] == ["finetune", "leap", "ssl", "init"]
        assert lineage[0][1] == checkpoint_hash(result.checkpoints["finetune"])

    def test_tampered_parent(self, result):
        """Test modifying an intermediate checkpoint breaks the chain."""
        with open(result.checkpoints["leap"], "ab") as f:
            f.write(b"\0")
        with pytest.raises(ProvenanceError):
            verify_lineage(result.checkpoints["finetune"])

    def test_deterministic_across_directories(self, tiny_run_config, tmp_path):
        """Test two runs of the same config produce identical checkpoints and reports."""
        first = run_recipe(tiny_run_config, str(tmp_path / "a"), quiet=True)
        second = run_recipe(tiny_run_config, str(tmp_path / "b"), quiet=True)
        for name in ["ssl", "leap", "finetune"]:
            assert checkpoint_hash(first.checkpoints[name]) == checkpoint_hash(
                second.checkpoints[name]
            )
        assert first.report.to_json() == second.report.to_json()

    def test_disabled_stage_passes_through(self, tiny_run_config):
        """Test a disabled SSL stage copies its parent's parameters and is SKIPPED."""
        config = tiny_run_config.with_stages(ssl=False, leap=True, finetune=True)
        result = run_recipe(config, quiet=True)
        init = load_checkpoint(result.checkpoints["init"])
        ssl = load_checkpoint(result.checkpoints["ssl"])
        np.testing.assert_array_equal(ssl.params.flatten(), init.params.flatten())
        assert ssl.extra == {"skipped": True}
        with open(os.path.join(result.output_dir, "status.json"), encoding="utf-8") as f:
            status = json.load(f)
        assert status["stages"]["ssl"]["state"] == "SKIPPED"
        assert verify_lineage(result.checkpoints["finetune"])[-1][0] == "init"

    def test_latest_prefers_newest_checkpoint(self, result, tiny_run_config):
        """Test a resumed stage picks up the most recent earlier checkpoint."""
        recipe = Recipe(tiny_run_config, result.output_dir, quiet=True)
        stage_name, checkpoint = recipe.latest(before=StageName.FINETUNE.value)
        assert stage_name == "leap"
        assert checkpoint.stage == "leap"


class TestAblation:
    """Tests for the lang-ID x pretraining grid."""

    def test_grid(self, tiny_run_config):
        """Test cells per seed, baseline first, and the lang-ID switch."""
        config = dataclasses.replace(
            tiny_run_config, ablation=AblationConfig(seeds=(0, 1), corpus_fraction=0.5)
        )
        cells = ablation_configs(config)
        assert len(cells) == 12
        seed, method, lang_id, cell = cells[0]
        assert (seed, method, lang_id) == (0, "no-pretrain", False)
        assert cell.model.use_lang_id is False
        assert cell.corpus.fraction == 0.5
        assert (cell.stages.ssl, cell.stages.leap, cell.stages.finetune) == (False, False, True)
        assert cells[-1][:3] == (1, "leap-ssl", True)
        assert cells[-1][3].model.use_lang_id is True

    def test_csv(self):
        """Test the CSV has one column per locale and blank missing reductions."""
        report = AblationReport(
            rows=[
                AblationRow(0, "no-pretrain", False, {"lang0": 50.0}, 50.0, 0.0),
                AblationRow(0, "leap-ssl", True, {"lang0": 25.0}, 25.0, None),
            ]
        )
        lines = report.to_csv().splitlines()
        assert lines[0] == "seed,method,lang_id,lang0,overall,relative_reduction"
        assert lines[1] == "0,no-pretrain,false,50.0000,50.0000,0.0000"
        assert lines[2] == "0,leap-ssl,true,25.0000,25.0000,"

    @pytest.mark.slow
    def test_ablate(self, tiny_run_config, tmp_path):
        """Test the grid runs and the baseline row has zero reduction."""
        report = ablate(tiny_run_config, str(tmp_path / "grid"), quiet=True)
        assert len(report.rows) == 6
        baseline = report.rows[0]
        assert (baseline.method, baseline.lang_id) == ("no-pretrain", False)
        assert baseline.relative_reduction in (0.0, None)
        assert os.path.exists(tmp_path / "grid" / "ablation.json")
        assert os.path.exists(tmp_path / "grid" / "ablation.csv")
