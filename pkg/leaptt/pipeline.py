"""
The three-step recipe: SSL pretraining, LEAP meta-initialization and
transducer fine-tuning, followed by greedy-decoding evaluation.

Artifacts in the output directory::

    resolved_config.json  status.json  run.log
    corpus/{train,test}.gmds + manifests
    init.ckpt -> ssl.ckpt -> leap.ckpt -> final.ckpt   (provenance chain)
    ssl_metrics.jsonl  leap_metrics.jsonl  finetune_metrics.jsonl
    report.json  report.csv
"""

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from leaptt import flow
from leaptt.checkpoint import (
    Checkpoint,
    checkpoint_hash,
    load_checkpoint,
    parent_path_of,
    save_checkpoint,
)
from leaptt.data import (
    balanced_batch,
    balanced_sampler,
    corpus_paths,
    gen_corpus,
    load_corpus,
    split_corpus,
    subset_corpus,
)
from leaptt.errors import LeapInputError, NumericError
from leaptt.flow import RunContext, get_run_logger, stage
from leaptt.leap import language_tasks, run_leap
from leaptt.logger import JsonlLogSink, MetricsWriter, RunLogger
from leaptt.metrics import LocaleWer, WerReport, relative_reduction
from leaptt.optim import AdamW
from leaptt.params import init_params
from leaptt.ssl import run_ssl_pretrain
from leaptt.transducer import batch_loss, batch_loss_and_grad, decode_utterance
from leaptt.types import FinetuneConfig, Profile, RunConfig, StageName, Utterance
from leaptt.utils import config_hash, derive_seed, dtype_for_profile, make_rng

CHECKPOINT_FILES = {
    "init": "init.ckpt",
    StageName.SSL.value: "ssl.ckpt",
    StageName.LEAP.value: "leap.ckpt",
    StageName.FINETUNE.value: "final.ckpt",
}
STAGE_ORDER = ["init", StageName.SSL.value, StageName.LEAP.value, StageName.FINETUNE.value]

# Where and how loudly a run happens; not part of what it computes
PLACEMENT_FIELDS = ("output_dir", "log_level")


# ============================================================================
# Fine-tuning
# ============================================================================


class EarlyStopping:
    """
    Patience counter over validation losses.

    ``update`` returns True once ``patience`` consecutive evaluations failed to
    improve on the best loss seen.

    Examples:
        >>> stopper = EarlyStopping(patience=5)
        >>> [stopper.update(x) for x in [3, 2, 2, 2, 2, 2, 2]][-1]
        True
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best: Optional[float] = None
        self.best_index = -1
        self.bad_evals = 0
        self.evals = 0

    def update(self, loss: float) -> bool:
        if self.best is None or loss < self.best:
            self.best = loss
            self.best_index = self.evals
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        self.evals += 1
        return self.should_stop

    @property
    def should_stop(self) -> bool:
        return self.bad_evals >= self.patience

    @property
    def improved(self) -> bool:
        """True if the latest evaluation set a new best."""
        return self.best_index == self.evals - 1


def finetune(
    init: Checkpoint,
    train: Sequence[Utterance],
    valid: Sequence[Utterance],
    ft_config: FinetuneConfig,
    batch_size: int,
    rng: np.random.Generator,
    alpha: float = 0.5,
    dtype=np.float64,
    metrics: Optional[MetricsWriter] = None,
) -> Checkpoint:
    """
    Minimizes the mean transducer loss with AdamW on balanced-sampled batches.

    Validation loss is measured before the first update and every
    ``eval_every`` updates; training stops after ``patience`` evaluations
    without improvement and the best-validation parameters are returned.

    Raises:
        LeapInputError: If there is no training data
        NumericError: If the training loss is non-finite or exceeds the divergence threshold
    """
    logger = get_run_logger()
    if not train:
        raise LeapInputError("Fine-tuning needs labeled training utterances")
    if not valid:
        logger.warning("No validation utterances; validating on the training set")
        valid = train

    config = init.config
    params = init.params.astype(dtype)
    optimizer = AdamW(
        params.size,
        ft_config.learning_rate,
        ft_config.betas,
        ft_config.eps,
        weight_decay=ft_config.weight_decay,
        dtype=dtype,
    )
    flat = params.flatten()

    groups: Dict[int, List[Utterance]] = {}
    for utt in train:
        groups.setdefault(utt.language, []).append(utt)
    groups = dict(sorted(groups.items()))
    sampler = balanced_sampler([len(g) for g in groups.values()], alpha, rng)

    stopper = EarlyStopping(ft_config.patience)
    valid_loss = batch_loss(params, valid, config, dtype=dtype)
    stopper.update(valid_loss)
    best_params, best_step = params, 0
    if metrics is not None:
        metrics.write({"step": 0, "valid_loss": valid_loss, "wall_ms": metrics.elapsed_ms()})

    step = 0
    for step in range(1, ft_config.max_steps + 1):
        batch = balanced_batch(groups, batch_size, sampler, rng)
        try:
            loss, grad = batch_loss_and_grad(params, batch, config, dtype=dtype)
        except NumericError as e:
            raise e.annotate(step=step) from e
        if not np.isfinite(loss) or loss > ft_config.divergence_threshold:
            raise NumericError(f"Fine-tuning diverged (loss {loss})", step=step)

        flat = optimizer.step(flat, grad.flatten())
        params = params.with_flat(flat)
        if metrics is not None:
            metrics.write(
                {
                    "step": step,
                    "loss": loss,
                    "lr": ft_config.learning_rate,
                    "wall_ms": metrics.elapsed_ms(),
                }
            )

        if step % ft_config.eval_every == 0 or step == ft_config.max_steps:
            valid_loss = batch_loss(params, valid, config, dtype=dtype)
            stop = stopper.update(valid_loss)
            if stopper.improved:
                best_params, best_step = params, step
            if metrics is not None:
                metrics.write(
                    {"step": step, "valid_loss": valid_loss, "wall_ms": metrics.elapsed_ms()}
                )
            logger.debug(f"finetune step {step} valid loss {valid_loss:.4f}")
            if stop:
                logger.info(f"Early stopping at step {step}; best step {best_step}")
                break

    return Checkpoint(
        params=best_params,
        config=config,
        seed=init.seed,
        step=step,
        stage=StageName.FINETUNE.value,
        extra={"best_step": best_step, "best_valid_loss": stopper.best},
    )


# ============================================================================
# Evaluation
# ============================================================================


def locale_name(language: int) -> str:
    return f"lang{language}"


def evaluate(
    checkpoint: Checkpoint,
    test: Sequence[Utterance],
    dtype=np.float64,
    max_symbols_per_frame: int = 4,
) -> WerReport:
    """
    Greedy-decodes every test utterance and scores per-language WER.

    The report also carries the mean transducer loss of the test set, with
    utterance losses summed in corpus order.

    Raises:
        LeapInputError: If the corpus frame dimension does not match the model
    """
    if not test:
        raise LeapInputError("Evaluation needs at least one test utterance")
    config = checkpoint.config
    locales: Dict[int, LocaleWer] = {}
    for utt in test:
        if utt.frames.shape[1] != config.feature_dim:
            raise LeapInputError(
                f"Utterance {utt.id} has {utt.frames.shape[1]}-d frames, "
                f"the model expects {config.feature_dim}"
            )
        hyp = decode_utterance(checkpoint.params, utt, config, dtype, max_symbols_per_frame)
        locales.setdefault(utt.language, LocaleWer(locale_name(utt.language))).add(
            list(utt.labels), hyp
        )
    mean_loss = batch_loss(checkpoint.params, test, config, dtype=dtype)
    return WerReport(locales=[locales[lang] for lang in sorted(locales)], mean_loss=mean_loss)


# ============================================================================
# Recipe
# ============================================================================


def recipe_hash(config: RunConfig) -> str:
    """Config hash recorded in checkpoints; ignores the output directory and log level."""
    resolved = config.to_dict()
    for name in PLACEMENT_FIELDS:
        resolved.pop(name, None)
    return config_hash(resolved)


@dataclass
class CorpusSplits:
    train: List[Utterance]
    valid: List[Utterance]
    test: List[Utterance]


@dataclass
class RecipeResult:
    final: Checkpoint
    report: Optional[WerReport]
    output_dir: str
    checkpoints: Dict[str, str] = field(default_factory=dict)


class Recipe:
    """
    Runs the recipe stages for one RunConfig inside one output directory.

    Each stage method reads its parent checkpoint, writes its own and records
    the parent's hash, so the chain init -> ssl -> leap -> final verifies on
    load. Disabled stages pass their parent's parameters through unchanged.
    """

    def __init__(
        self,
        config: RunConfig,
        output_dir: Optional[str] = None,
        logger: Optional[RunLogger] = None,
        quiet: bool = False,
    ):
        self.config = config
        self.output_dir = output_dir or config.output_dir
        self.dtype = dtype_for_profile(Profile(config.profile).value)
        self.deterministic = config.profile == Profile.TEST
        self.config_hash = recipe_hash(config)
        self.logger = logger or RunLogger(
            sink=JsonlLogSink(os.path.join(self.output_dir, "run.log")),
            min_level=config.log_level,
            quiet=quiet,
        )
        self._splits: Optional[CorpusSplits] = None

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def context(self) -> RunContext:
        stages = list(StageName)
        return RunContext(self.output_dir, self.logger, [s.value for s in stages])

    def write_resolved_config(self) -> str:
        os.makedirs(self.output_dir, exist_ok=True)
        path = self.path("resolved_config.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.config.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        return path

    def metrics(self, name: str) -> MetricsWriter:
        return MetricsWriter(self.path(f"{name}_metrics.jsonl"), deterministic=self.deterministic)

    # ------------------------------------------------------------------ data

    @stage(StageName.CORPUS.value)
    def prepare_corpus(self) -> CorpusSplits:
        """Loads corpus/ from the output directory, generating it on first use."""
        corpus_dir = self.path("corpus")
        cfg = self.config.corpus
        seed = self.config.seed
        if os.path.exists(corpus_paths(corpus_dir, "train")[1]):
            train_corpus = load_corpus(corpus_dir, "train")
            if train_corpus.manifest.seed != seed:
                raise LeapInputError(
                    f"Corpus in {corpus_dir} was generated with seed "
                    f"{train_corpus.manifest.seed}, config says {seed}"
                )
        else:
            train_corpus = gen_corpus(cfg, seed, "train", out_dir=corpus_dir)

        if os.path.exists(corpus_paths(corpus_dir, "test")[1]):
            test_corpus = load_corpus(corpus_dir, "test")
        else:
            test_corpus = gen_corpus(cfg, seed, "test", out_dir=corpus_dir)

        utterances = subset_corpus(train_corpus.utterances, cfg.fraction)
        train, valid = split_corpus(utterances, cfg.valid_fraction)
        self.logger.info(
            f"Corpus: {len(train)} train, {len(valid)} valid, {len(test_corpus)} test utterances"
        )
        return CorpusSplits(train=train, valid=valid, test=list(test_corpus))

    @property
    def splits(self) -> CorpusSplits:
        if self._splits is None:
            self._splits = self.prepare_corpus()
        return self._splits

    # ----------------------------------------------------------- checkpoints

    def save(
        self, checkpoint: Checkpoint, stage_name: str, parent_stage: Optional[str] = None
    ) -> str:
        """
        Writes a stage checkpoint linked to its parent's file.

        ``parent_stage`` defaults to the preceding stage of the recipe; "init"
        has no parent.
        """
        index = STAGE_ORDER.index(stage_name)
        checkpoint = dataclasses.replace(checkpoint, config_hash=self.config_hash)
        if index > 0:
            parent = CHECKPOINT_FILES[parent_stage or STAGE_ORDER[index - 1]]
            checkpoint = dataclasses.replace(
                checkpoint, parent=parent, parent_hash=checkpoint_hash(self.path(parent))
            )
        path = self.path(CHECKPOINT_FILES[stage_name])
        save_checkpoint(checkpoint, path)
        self.logger.info(f"Wrote {path}")
        return path

    def load(self, stage_name: str) -> Checkpoint:
        return load_checkpoint(
            self.path(CHECKPOINT_FILES[stage_name]),
            expected_config=self.config.model,
            verify_parent=True,
        )

    def latest(self, before: str) -> Tuple[str, Checkpoint]:
        """Most recent checkpoint on disk from the stages preceding ``before``."""
        candidates = STAGE_ORDER
        if before in STAGE_ORDER:
            candidates = STAGE_ORDER[: STAGE_ORDER.index(before)]
        for name in reversed(candidates):
            if os.path.exists(self.path(CHECKPOINT_FILES[name])):
                return name, self.load(name)
        return "init", self.initial_checkpoint()

    def initial_checkpoint(self) -> Checkpoint:
        """Seeded initialization, written as the root of the provenance chain."""
        params = init_params(
            self.config.model, derive_seed(self.config.seed, "init"), dtype=self.dtype
        )
        checkpoint = Checkpoint(
            params=params, config=self.config.model, seed=self.config.seed, stage="init"
        )
        self.save(checkpoint, "init")
        return checkpoint

    def passthrough(self, parent: Checkpoint, stage_name: str) -> Checkpoint:
        return Checkpoint(
            params=parent.params,
            config=parent.config,
            seed=parent.seed,
            step=0,
            stage=stage_name,
            extra={"skipped": True},
        )

    # ---------------------------------------------------------------- stages

    @stage(StageName.SSL.value)
    def run_ssl(self, parent: Checkpoint, parent_stage: Optional[str] = None) -> Checkpoint:
        with self.metrics("ssl") as metrics:
            checkpoint = run_ssl_pretrain(
                self.splits.train,
                parent,
                self.config.ssl,
                self.config.batch_size,
                make_rng(self.config.seed, "ssl"),
                dtype=self.dtype,
                metrics=metrics,
            )
        self.save(checkpoint, StageName.SSL.value, parent_stage)
        return checkpoint

    @stage(StageName.LEAP.value)
    def run_leap(self, parent: Checkpoint, parent_stage: Optional[str] = None) -> Checkpoint:
        tasks = language_tasks(
            self.splits.train,
            parent.config,
            parent.params.layout,
            self.config.batch_size,
            self.config.leap,
            dtype=self.dtype,
        )
        with self.metrics("leap") as metrics:
            checkpoint = run_leap(
                parent,
                tasks,
                self.config.leap,
                make_rng(self.config.seed, "leap"),
                metrics=metrics,
                alpha=self.config.corpus.balance_alpha,
            )
        self.save(checkpoint, StageName.LEAP.value, parent_stage)
        return checkpoint

    @stage(StageName.FINETUNE.value)
    def run_finetune(self, parent: Checkpoint, parent_stage: Optional[str] = None) -> Checkpoint:
        with self.metrics("finetune") as metrics:
            checkpoint = finetune(
                parent,
                self.splits.train,
                self.splits.valid,
                self.config.finetune,
                self.config.batch_size,
                make_rng(self.config.seed, "finetune"),
                alpha=self.config.corpus.balance_alpha,
                dtype=self.dtype,
                metrics=metrics,
            )
        self.save(checkpoint, StageName.FINETUNE.value, parent_stage)
        return checkpoint

    def skip(self, parent: Checkpoint, stage_name: str) -> Checkpoint:
        if flow.CONTEXT is not None:
            flow.CONTEXT.skip(stage_name)
        checkpoint = self.passthrough(parent, stage_name)
        self.save(checkpoint, stage_name)
        return checkpoint

    @stage(StageName.EVALUATE.value)
    def run_evaluation(self, checkpoint: Checkpoint) -> WerReport:
        report = evaluate(checkpoint, self.splits.test, dtype=self.dtype)
        with open(self.path("report.json"), "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
        with open(self.path("report.csv"), "w", encoding="utf-8", newline="") as f:
            f.write(report.to_csv())
        self.logger.info(f"Overall WER {report.overall:.2f}%")
        return report

    def run(self, with_evaluation: bool = True) -> RecipeResult:
        """Runs every stage in order; disabled stages pass the checkpoint through."""
        toggles = self.config.stages
        self.write_resolved_config()
        with self.context():
            checkpoint = self.initial_checkpoint()
            self._splits = self.prepare_corpus()

            steps = [
                (StageName.SSL.value, toggles.ssl, self.run_ssl),
                (StageName.LEAP.value, toggles.leap, self.run_leap),
                (StageName.FINETUNE.value, toggles.finetune, self.run_finetune),
            ]
            for stage_name, enabled, runner in steps:
                checkpoint = runner(checkpoint) if enabled else self.skip(checkpoint, stage_name)

            report = self.run_evaluation(checkpoint) if with_evaluation else None

        return RecipeResult(
            final=checkpoint,
            report=report,
            output_dir=self.output_dir,
            checkpoints={name: self.path(CHECKPOINT_FILES[name]) for name in STAGE_ORDER},
        )


def run_recipe(config: RunConfig, output_dir: Optional[str] = None, quiet: bool = False):
    """Runs SSL -> LEAP -> fine-tune -> evaluate for one config."""
    return Recipe(config, output_dir, quiet=quiet).run()


def verify_lineage(path: str) -> List[Tuple[str, str]]:
    """
    Walks a checkpoint's provenance chain back to its root.

    Returns:
        (stage, file sha256) pairs from the given checkpoint to the root

    Raises:
        ProvenanceError: If any parent is missing or was modified
    """
    lineage = []
    current: Optional[str] = path
    while current is not None:
        checkpoint = load_checkpoint(current, verify_parent=True)
        lineage.append((checkpoint.stage, checkpoint_hash(current)))
        current = parent_path_of(current, checkpoint)
    return lineage


# ============================================================================
# Ablation
# ============================================================================

ABLATION_METHODS = {
    "no-pretrain": (False, False, True),
    "ssl-only": (True, False, True),
    "leap-ssl": (True, True, True),
}
BASELINE_METHOD = "no-pretrain"


@dataclass
class AblationRow:
    seed: int
    method: str
    lang_id: bool
    wer: Dict[str, float]
    overall: float
    relative_reduction: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "method": self.method,
            "lang_id": self.lang_id,
            "wer": self.wer,
            "overall": self.overall,
            "relative_reduction": self.relative_reduction,
        }


@dataclass
class AblationReport:
    """{lang-ID off/on} x {no-pretrain, ssl-only, leap-ssl} rows per seed."""

    rows: List[AblationRow] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "baseline": f"{BASELINE_METHOD}/lang_id=false",
            "rows": [row.to_dict() for row in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        locales = sorted({loc for row in self.rows for loc in row.wer})
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["seed", "method", "lang_id"] + locales + ["overall", "relative_reduction"])
        for row in self.rows:
            reduction = "" if row.relative_reduction is None else f"{row.relative_reduction:.4f}"
            writer.writerow(
                [row.seed, row.method, str(row.lang_id).lower()]
                + [f"{row.wer[loc]:.4f}" for loc in locales]
                + [f"{row.overall:.4f}", reduction]
            )
        return buffer.getvalue()


def ablation_configs(config: RunConfig) -> List[Tuple[int, str, bool, RunConfig]]:
    """Every (seed, method, lang_id, config) cell of the grid, baseline first per seed."""
    corpus = dataclasses.replace(config.corpus, fraction=config.ablation.corpus_fraction)
    base = dataclasses.replace(config, corpus=corpus)
    cells = []
    for seed in config.ablation.seeds:
        for lang_id in (False, True):
            for method, (ssl, leap, ft) in ABLATION_METHODS.items():
                cell = base.with_seed(seed).with_lang_id(lang_id).with_stages(ssl, leap, ft)
                cells.append((seed, method, lang_id, cell))
    return cells


def ablate(
    config: RunConfig, output_dir: Optional[str] = None, quiet: bool = False
) -> AblationReport:
    """
    Runs the lang-ID x pretraining grid and writes ablation.json / ablation.csv.

    Relative reductions are against the no-pretrain, lang-ID-off row of the
    same seed; they are null when that baseline's WER is 0.
    """
    out = output_dir or config.output_dir
    logger = get_run_logger()
    report = AblationReport()
    baselines: Dict[int, float] = {}

    for seed, method, lang_id, cell in ablation_configs(config):
        cell_dir = os.path.join(out, f"seed{seed}", f"{method}-lang{'on' if lang_id else 'off'}")
        logger.info(f"Ablation cell seed={seed} method={method} lang_id={lang_id}")
        result = run_recipe(cell, cell_dir, quiet=quiet)
        overall = result.report.overall
        if method == BASELINE_METHOD and not lang_id:
            baselines[seed] = overall
        baseline = baselines.get(seed)
        reduction = (
            relative_reduction(baseline, overall) if baseline is not None and baseline > 0 else None
        )
        report.rows.append(
            AblationRow(seed, method, lang_id, result.report.by_locale(), overall, reduction)
        )

    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "ablation.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json() + "\n")
    with open(os.path.join(out, "ablation.csv"), "w", encoding="utf-8", newline="") as f:
        f.write(report.to_csv())
    return report
