"""
Type definitions for leaptt.

This module provides the enums, frozen configuration dataclasses and the
shared data records passed between the data, model and training modules.
Every config block accepts partial dictionaries through ``from_dict`` and
materializes all defaults through ``to_dict``.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

import numpy as np

from leaptt.errors import ConfigError, LeapInputError
from leaptt.utils import (
    validate_int,
    validate_positive,
    validate_probability,
    validate_range,
)

# ============================================================================
# Enums
# ============================================================================


class Profile(str, Enum):
    """Numeric profiles."""

    TEST = "test"
    FAST = "fast"


class StageName(str, Enum):
    """Stages of the training recipe, in execution order."""

    CORPUS = "corpus"
    SSL = "ssl"
    LEAP = "leap"
    FINETUNE = "finetune"
    EVALUATE = "evaluate"


class StageState(str, Enum):
    """Lifecycle states of a recipe stage."""

    PENDING = "PENDING"
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"


class CorpusMode(str, Enum):
    """Synthetic corpus flavours."""

    STANDARD = "standard"
    # languages share one codebook under label permutations
    CONFLICT = "conflict"


class TaskDistribution(str, Enum):
    """How LEAP draws languages into a meta-batch."""

    UNIFORM = "uniform"
    BALANCED = "balanced"


class MetaOptimizer(str, Enum):
    ADAM = "adam"
    SGD = "sgd"


class MetaAlgorithm(str, Enum):
    """Meta-gradient rule applied to each task trajectory."""

    LEAP = "leap"
    REPTILE = "reptile"


C = TypeVar("C")


def _config_from_dict(cls: Type[C], data: Optional[Dict[str, Any]], section: str) -> C:
    """Builds a flat config dataclass from a (possibly partial) dictionary."""
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown field")

    # JSON has no tuples
    for f in dataclasses.fields(cls):
        if f.name in data and isinstance(data[f.name], list):
            data[f.name] = tuple(data[f.name])

    return cls(**data)


def _config_to_dict(config: Any) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = _config_to_dict(value)
        elif isinstance(value, Enum):
            out[f.name] = value.value
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


# ============================================================================
# Model Configuration
# ============================================================================


@dataclass(frozen=True)
class ModelConfig:
    """
    Sizes of the toy Transformer-transducer.

    Attributes:
        feature_dim: Dimension of one input frame
        num_languages: Number of languages L (length of the language one-hot)
        use_lang_id: Append the language one-hot to every input frame
        conv_channels: Channels of both stride-2 convolutions
        num_blocks: Number of relative-position Transformer blocks
        model_dim: Width of the encoder
        num_heads: Attention heads; must divide model_dim
        ff_dim: Hidden width of the feed-forward sublayer
        rel_clip: Largest relative offset with its own learned bias
        predictor_dim: Width of the label predictor's recurrent state
        joint_dim: Hidden width of the joint network
        vocab_size: Number of labels V, excluding the blank
    """

    feature_dim: int = 8
    num_languages: int = 1
    use_lang_id: bool = True
    conv_channels: int = 16
    num_blocks: int = 2
    model_dim: int = 16
    num_heads: int = 2
    ff_dim: int = 32
    rel_clip: int = 8
    predictor_dim: int = 16
    joint_dim: int = 16
    vocab_size: int = 6

    def __post_init__(self):
        validate_int("model.feature_dim", self.feature_dim, minimum=1)
        validate_int("model.num_languages", self.num_languages, minimum=1)
        validate_int("model.conv_channels", self.conv_channels, minimum=1)
        validate_int("model.num_blocks", self.num_blocks, minimum=0)
        validate_int("model.model_dim", self.model_dim, minimum=1)
        validate_int("model.num_heads", self.num_heads, minimum=1)
        validate_int("model.ff_dim", self.ff_dim, minimum=1)
        validate_int("model.rel_clip", self.rel_clip, minimum=1)
        validate_int("model.predictor_dim", self.predictor_dim, minimum=1)
        validate_int("model.joint_dim", self.joint_dim, minimum=1)
        validate_int("model.vocab_size", self.vocab_size, minimum=1)
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                "model.num_heads",
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}",
            )

    @property
    def input_dim(self) -> int:
        """Width of a featurized frame."""
        if self.use_lang_id:
            return self.feature_dim + self.num_languages
        return self.feature_dim

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def blank(self) -> int:
        """Index of the blank symbol (the last output column)."""
        return self.vocab_size

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ModelConfig":
        """Create a ModelConfig from a (possibly partial) dictionary."""
        return _config_from_dict(cls, data, "model")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


# ============================================================================
# Self-Supervised Pretraining Configuration
# ============================================================================


@dataclass(frozen=True)
class MaskSpec:
    """
    Span masking of subsampled latents.

    Attributes:
        mask_prob: Probability that a position starts a masked span
        span_len: Length of each masked span
        force_min_one: Force one random span when sampling masked nothing
    """

    mask_prob: float = 0.065
    span_len: int = 10
    force_min_one: bool = True

    def __post_init__(self):
        validate_probability("ssl.mask.mask_prob", self.mask_prob)
        validate_int("ssl.mask.span_len", self.span_len, minimum=1)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "MaskSpec":
        return _config_from_dict(cls, data, "ssl.mask")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


@dataclass(frozen=True)
class ContrastiveConfig:
    """
    Contrastive objective settings.

    Attributes:
        num_negatives: Negatives K drawn per masked position
        temperature: Softmax temperature applied to cosine similarities
    """

    num_negatives: int = 10
    temperature: float = 0.1

    def __post_init__(self):
        validate_int("ssl.contrastive.num_negatives", self.num_negatives, minimum=1)
        validate_positive("ssl.contrastive.temperature", self.temperature)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ContrastiveConfig":
        return _config_from_dict(cls, data, "ssl.contrastive")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


@dataclass(frozen=True)
class SSLConfig:
    """
    Settings for masked-contrastive pretraining (Adam with warm-up and linear decay).
    """

    steps: int = 500
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_fraction: float = 0.05
    feed_lang_id: bool = True
    log_every: int = 1
    mask: MaskSpec = field(default_factory=MaskSpec)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    def __post_init__(self):
        validate_int("ssl.steps", self.steps, minimum=0)
        validate_positive("ssl.learning_rate", self.learning_rate, allow_zero=True)
        validate_probability("ssl.warmup_fraction", self.warmup_fraction)
        validate_int("ssl.log_every", self.log_every, minimum=1)
        _validate_betas("ssl.betas", self.betas)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "SSLConfig":
        data = dict(data or {})
        mask = MaskSpec.from_dict(data.pop("mask", None))
        contrastive = ContrastiveConfig.from_dict(data.pop("contrastive", None))
        flat = _config_from_dict(cls, data, "ssl")
        return dataclasses.replace(flat, mask=mask, contrastive=contrastive)

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


# ============================================================================
# LEAP Configuration
# ============================================================================


@dataclass(frozen=True)
class LeapConfig:
    """
    Meta-learning settings.

    Attributes:
        inner_lr: SGD learning rate eta of every task rollout
        inner_steps: Rollout length K per task
        meta_lr: Learning rate of the meta optimizer
        meta_steps: Number of meta updates
        p: Exponent of the pull-forward distance (1 or 2)
        loss_scale: Weight of the loss coordinate inside each trajectory point
        meta_batch_size: Tasks rolled out per meta update
        task_distribution: How tasks are drawn into a meta-batch
        meta_optimizer: Adam, or plain SGD for analytic checks
        meta_algorithm: LEAP pull-forward gradient or the Reptile difference
        workers: Threads used for rollouts within one meta-batch
        path_eval_steps: Rollout length used to measure path length
    """

    inner_lr: float = 0.05
    inner_steps: int = 8
    meta_lr: float = 1e-3
    meta_steps: int = 200
    p: int = 2
    loss_scale: float = 1.0
    meta_batch_size: int = 4
    task_distribution: TaskDistribution = TaskDistribution.UNIFORM
    meta_optimizer: MetaOptimizer = MetaOptimizer.ADAM
    meta_algorithm: MetaAlgorithm = MetaAlgorithm.LEAP
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    workers: int = 1
    path_eval_steps: int = 20

    def __post_init__(self):
        validate_positive("leap.inner_lr", self.inner_lr, allow_zero=True)
        validate_int("leap.inner_steps", self.inner_steps, minimum=1)
        validate_positive("leap.meta_lr", self.meta_lr, allow_zero=True)
        validate_int("leap.meta_steps", self.meta_steps, minimum=0)
        if self.p not in (1, 2):
            raise ConfigError("leap.p", f"must be 1 or 2, got: {self.p}")
        validate_positive("leap.loss_scale", self.loss_scale, allow_zero=True)
        validate_int("leap.meta_batch_size", self.meta_batch_size, minimum=1)
        validate_int("leap.workers", self.workers, minimum=1)
        validate_int("leap.path_eval_steps", self.path_eval_steps, minimum=1)
        _validate_betas("leap.betas", self.betas)
        # JSON delivers plain strings
        for name, enum_cls in (
            ("task_distribution", TaskDistribution),
            ("meta_optimizer", MetaOptimizer),
            ("meta_algorithm", MetaAlgorithm),
        ):
            value = _enum(f"leap.{name}", enum_cls, getattr(self, name))
            object.__setattr__(self, name, value)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "LeapConfig":
        return _config_from_dict(cls, data, "leap")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


# ============================================================================
# Fine-tuning Configuration
# ============================================================================


@dataclass(frozen=True)
class FinetuneConfig:
    """
    AdamW fine-tuning on the transducer loss with early stopping.

    Attributes:
        learning_rate: AdamW learning rate
        weight_decay: Decoupled weight decay
        patience: Validation evaluations without improvement before stopping
        eval_every: Updates between validation evaluations
        max_steps: Hard cap on updates
        divergence_threshold: Loss above this counts as divergence
    """

    learning_rate: float = 3e-3
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    patience: int = 5
    eval_every: int = 50
    max_steps: int = 600
    divergence_threshold: float = 1e6

    def __post_init__(self):
        validate_positive("finetune.learning_rate", self.learning_rate, allow_zero=True)
        validate_positive("finetune.weight_decay", self.weight_decay, allow_zero=True)
        validate_int("finetune.patience", self.patience, minimum=1)
        validate_int("finetune.eval_every", self.eval_every, minimum=1)
        validate_int("finetune.max_steps", self.max_steps, minimum=0)
        validate_positive("finetune.divergence_threshold", self.divergence_threshold)
        _validate_betas("finetune.betas", self.betas)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "FinetuneConfig":
        return _config_from_dict(cls, data, "finetune")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


# ============================================================================
# Corpus Configuration
# ============================================================================

# utterance counts per language, proportional to the training hours of the
# six-language production set
DEFAULT_LANGUAGE_COUNTS = (569, 805, 306, 833, 693, 1032)


@dataclass(frozen=True)
class CorpusConfig:
    """
    Synthetic corpus description.

    Attributes:
        counts: Training utterances per language (one entry per language)
        test_counts: Held-out test utterances per language
        vocab_size: Labels V per language
        feature_dim: Frame dimension
        noise_std: Gaussian noise sigma added to every frame
        label_range: Inclusive range of labels per utterance
        repeat_range: Inclusive range of frames per label
        mode: "standard" (rotated codebooks) or "conflict" (permuted labels)
        balance_alpha: Exponent of the balanced language sampler
        valid_fraction: Share of training utterances routed to validation
        fraction: Share of the training data kept (hash-based subset)
    """

    counts: Tuple[int, ...] = DEFAULT_LANGUAGE_COUNTS
    test_counts: int = 20
    vocab_size: int = 6
    feature_dim: int = 8
    noise_std: float = 0.1
    label_range: Tuple[int, int] = (2, 8)
    repeat_range: Tuple[int, int] = (4, 8)
    mode: CorpusMode = CorpusMode.STANDARD
    balance_alpha: float = 0.5
    valid_fraction: float = 0.1
    fraction: float = 1.0

    def __post_init__(self):
        if not self.counts:
            raise ConfigError("corpus.counts", "must name at least one language")
        for count in self.counts:
            validate_int("corpus.counts", count, minimum=1)
        validate_int("corpus.test_counts", self.test_counts, minimum=0)
        validate_int("corpus.vocab_size", self.vocab_size, minimum=1)
        validate_int("corpus.feature_dim", self.feature_dim, minimum=1)
        if self.vocab_size > self.feature_dim:
            raise ConfigError(
                "corpus.vocab_size",
                f"orthonormal codebooks need vocab_size <= feature_dim ({self.feature_dim})",
            )
        validate_positive("corpus.noise_std", self.noise_std, allow_zero=True)
        validate_range("corpus.label_range", self.label_range, 1, 12)
        validate_range("corpus.repeat_range", self.repeat_range, 4, 64)
        validate_probability("corpus.balance_alpha", self.balance_alpha)
        validate_probability("corpus.valid_fraction", self.valid_fraction)
        validate_probability("corpus.fraction", self.fraction)
        if self.fraction == 0:
            raise ConfigError("corpus.fraction", "must be > 0")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "mode", _enum("corpus.mode", CorpusMode, self.mode))

    @property
    def num_languages(self) -> int:
        return len(self.counts)

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "CorpusConfig":
        return _config_from_dict(cls, data, "corpus")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


@dataclass(frozen=True)
class StageToggles:
    """Which recipe stages run; disabled stages pass their input checkpoint through."""

    ssl: bool = True
    leap: bool = True
    finetune: bool = True

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "StageToggles":
        return _config_from_dict(cls, data, "stages")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


@dataclass(frozen=True)
class AblationConfig:
    """Settings for the lang-ID x pretraining grid."""

    seeds: Tuple[int, ...] = (0,)
    corpus_fraction: float = 1.0

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("ablation.seeds", "must list at least one seed")
        validate_probability("ablation.corpus_fraction", self.corpus_fraction)
        if self.corpus_fraction == 0:
            raise ConfigError("ablation.corpus_fraction", "must be > 0")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "AblationConfig":
        return _config_from_dict(cls, data, "ablation")

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)


# ============================================================================
# Run Configuration
# ============================================================================


@dataclass(frozen=True)
class RunConfig:
    """
    Fully seeded experiment description.

    Every stochastic component derives its seed from ``seed`` and its stage
    name (see ``leaptt.utils.derive_seed``). ``batch_size`` is shared by the
    LEAP inner loops and fine-tuning.
    """

    seed: int = 0
    profile: Profile = Profile.TEST
    batch_size: int = 8
    use_lang_id: bool = True
    output_dir: str = "runs/default"
    log_level: str = "INFO"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    ssl: SSLConfig = field(default_factory=SSLConfig)
    leap: LeapConfig = field(default_factory=LeapConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    stages: StageToggles = field(default_factory=StageToggles)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def __post_init__(self):
        validate_int("seed", self.seed, minimum=0)
        validate_int("batch_size", self.batch_size, minimum=1)
        if self.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError("log_level", f"unknown level {self.log_level!r}")
        object.__setattr__(self, "profile", _enum("profile", Profile, self.profile))

        if self.model.feature_dim != self.corpus.feature_dim:
            raise ConfigError("model.feature_dim", "must equal corpus.feature_dim")
        if self.model.vocab_size != self.corpus.vocab_size:
            raise ConfigError("model.vocab_size", "must equal corpus.vocab_size")
        if self.model.num_languages != self.corpus.num_languages:
            raise ConfigError("model.num_languages", "must equal the number of corpus languages")
        if self.model.use_lang_id != self.use_lang_id:
            raise ConfigError("model.use_lang_id", "must equal the top-level use_lang_id flag")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "RunConfig":
        """
        Create a RunConfig from a (possibly partial) dictionary.

        Model sizes that must agree with the corpus (feature_dim, vocab_size,
        num_languages) and the lang-ID flag are filled in from the corpus block
        and the top-level flag when the model block leaves them out.
        """
        data = dict(data or {})
        corpus = CorpusConfig.from_dict(data.pop("corpus", None))
        use_lang_id = bool(data.get("use_lang_id", True))

        model_data = dict(data.pop("model", None) or {})
        model_data.setdefault("feature_dim", corpus.feature_dim)
        model_data.setdefault("vocab_size", corpus.vocab_size)
        model_data.setdefault("num_languages", corpus.num_languages)
        model_data.setdefault("use_lang_id", use_lang_id)

        nested = {
            "corpus": corpus,
            "model": ModelConfig.from_dict(model_data),
            "ssl": SSLConfig.from_dict(data.pop("ssl", None)),
            "leap": LeapConfig.from_dict(data.pop("leap", None)),
            "finetune": FinetuneConfig.from_dict(data.pop("finetune", None)),
            "stages": StageToggles.from_dict(data.pop("stages", None)),
            "ablation": AblationConfig.from_dict(data.pop("ablation", None)),
        }
        known = {f.name for f in dataclasses.fields(cls)} - set(nested)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        return cls(**data, **nested)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a RunConfig from a JSON document on disk."""
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as e:
            raise LeapInputError(f"Cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("<document>", f"{path} is not valid JSON: {e}") from e

        if not isinstance(data, dict):
            raise ConfigError("<document>", "top level must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return _config_to_dict(self)

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy of this config with a different global seed."""
        return dataclasses.replace(self, seed=seed)

    def with_lang_id(self, use_lang_id: bool) -> "RunConfig":
        """Copy with the lang-ID flag switched in both places that carry it."""
        return dataclasses.replace(
            self,
            use_lang_id=use_lang_id,
            model=dataclasses.replace(self.model, use_lang_id=use_lang_id),
        )

    def with_stages(self, ssl: bool, leap: bool, finetune: bool) -> "RunConfig":
        return dataclasses.replace(self, stages=StageToggles(ssl=ssl, leap=leap, finetune=finetune))


def _validate_betas(name: str, betas: Tuple[float, float]) -> None:
    if len(betas) != 2 or not all(0.0 <= b < 1.0 for b in betas):
        raise ConfigError(name, f"must be two values in [0, 1), got: {betas!r}")


def _enum(name: str, enum_cls: Type[Enum], value: Any) -> Any:
    try:
        return enum_cls(value)
    except ValueError as e:
        allowed = ", ".join(member.value for member in enum_cls)
        raise ConfigError(name, f"must be one of {allowed}, got: {value!r}") from e


# ============================================================================
# Data Records
# ============================================================================


@dataclass(frozen=True, eq=False)
class Utterance:
    """
    One labeled sample of a language task.

    Attributes:
        frames: T x feature_dim feature matrix
        labels: Label sequence of length U, values in [0, V)
        language: Language index
        id: Stable identifier, unique within a corpus
    """

    frames: np.ndarray
    labels: Tuple[int, ...]
    language: int
    id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise LeapInputError(f"Utterance {self.id!r}: frames must be a matrix")
        if self.num_frames < 4 * len(self.labels):
            raise LeapInputError(
                f"Utterance {self.id!r}: {self.num_frames} frames cannot carry "
                f"{len(self.labels)} labels (need T >= 4U)"
            )
        if not np.isfinite(self.frames).all():
            raise LeapInputError(f"Utterance {self.id!r}: non-finite frame values")

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def subsampled_length(self) -> int:
        """Encoder length after two stride-2 layers."""
        return math.ceil(self.num_frames / 4)


@dataclass(frozen=True)
class CorpusManifest:
    """
    Bookkeeping for one corpus record file.

    Attributes:
        counts: Utterances stored per language
        offsets: Byte offset of every record, in file order
        seed: Seed the corpus was generated from
        generator_version: Version of the record layout and generator
        feature_dim: Frame dimension
        vocab_size: Labels per language
        mode: Corpus mode the codebooks were built in
    """

    counts: Tuple[int, ...]
    offsets: Tuple[int, ...]
    seed: int
    generator_version: int
    feature_dim: int
    vocab_size: int
    mode: str = CorpusMode.STANDARD.value
    ids: Tuple[str, ...] = ()

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CorpusManifest":
        """Create a CorpusManifest from its JSON form."""
        return cls(
            counts=tuple(data["counts"]),
            offsets=tuple(data["offsets"]),
            seed=data["seed"],
            generator_version=data["generator_version"],
            feature_dim=data["feature_dim"],
            vocab_size=data["vocab_size"],
            mode=data.get("mode", CorpusMode.STANDARD.value),
            ids=tuple(data.get("ids", [])),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "counts": list(self.counts),
            "offsets": list(self.offsets),
            "seed": self.seed,
            "generator_version": self.generator_version,
            "feature_dim": self.feature_dim,
            "vocab_size": self.vocab_size,
            "mode": self.mode,
            "ids": list(self.ids),
        }


# ============================================================================
# Type Aliases
# ============================================================================

# A mini-batch of utterances
Batch = List[Utterance]
