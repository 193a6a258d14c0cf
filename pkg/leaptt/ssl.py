"""
Masked-contrastive pretraining of the encoder.

Subsampled latents are mapped linearly to targets before masking; masked
spans of the latents are replaced by the learned mask vector and the encoder
must pick the true target of each masked position out of K negatives drawn
from the same utterance.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from leaptt import autodiff as ad
from leaptt.autodiff import Tensor
from leaptt.checkpoint import Checkpoint
from leaptt.errors import LeapInputError, NumericError
from leaptt.flow import get_run_logger
from leaptt.logger import MetricsWriter
from leaptt.model import Params, encode, featurize, ssl_targets, subsample
from leaptt.optim import Adam, warmup_linear_decay
from leaptt.params import SSL_PREFIXES, ParamVector
from leaptt.types import ContrastiveConfig, MaskSpec, ModelConfig, SSLConfig, Utterance

NORM_EPS = 1e-8


def sample_mask(length: int, spec: MaskSpec, rng: np.random.Generator) -> List[int]:
    """
    Samples masked positions as overlapping spans.

    Each index starts a span with probability ``mask_prob``; a span covers
    ``span_len`` positions clipped at the end. With ``force_min_one`` an empty
    draw is replaced by one span at a uniformly random start.

    Returns:
        Sorted masked indices in [0, length)

    Examples:
        >>> rng = np.random.default_rng(0)
        >>> sample_mask(5, MaskSpec(mask_prob=1.0), rng)
        [0, 1, 2, 3, 4]
    """
    if length < 1:
        raise LeapInputError(f"Cannot mask a sequence of length {length}")

    starts = np.flatnonzero(rng.random(length) < spec.mask_prob)
    if starts.size == 0 and spec.force_min_one:
        starts = np.array([rng.integers(length)])

    masked = np.zeros(length, dtype=bool)
    for start in starts:
        masked[start : min(start + spec.span_len, length)] = True
    return np.flatnonzero(masked).tolist()


def sample_negatives(
    mask_positions: Sequence[int], length: int, num_negatives: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Draws K negative target positions for every masked position.

    Candidates are the other masked positions; when fewer than K exist, any
    other position of the utterance. With fewer than K candidates of either
    kind, draws are made with replacement.

    Returns:
        len(mask_positions) x K index array

    Raises:
        LeapInputError: If the utterance has a single position
    """
    if length < 2:
        raise LeapInputError("Contrastive negatives need at least two positions")

    positions = list(mask_positions)
    rows = []
    for t in positions:
        candidates = [i for i in positions if i != t]
        if len(candidates) < num_negatives:
            candidates = [i for i in range(length) if i != t]
        replace = len(candidates) < num_negatives
        rows.append(rng.choice(candidates, size=num_negatives, replace=replace))
    return np.asarray(rows, dtype=np.int64).reshape(len(positions), num_negatives)


def _smoothed_norm(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis plus NORM_EPS."""
    raw = np.sqrt(np.sum(x.value * x.value, axis=-1, keepdims=True))
    norm = raw + NORM_EPS
    active = raw > 0.0
    safe = np.where(active, raw, 1.0)
    xv = x.value

    def vjp(g):
        return (np.where(active, g / safe, 0.0) * xv,)

    return x.tape.record("norm", (x,), norm, vjp)


def contrastive_loss(
    context: Tensor,
    targets: Tensor,
    mask_positions: Sequence[int],
    cfg: ContrastiveConfig,
    rng: Optional[np.random.Generator] = None,
    negatives: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Mean InfoNCE loss over masked positions with cosine similarity.

    Args:
        context: T' x D encoder outputs
        targets: T' x D target vectors
        mask_positions: Masked indices (at least one)
        cfg: Number of negatives and temperature
        rng: Draws negatives when ``negatives`` is not given
        negatives: Explicit len(mask) x K index array

    Raises:
        LeapInputError: If nothing is masked or shapes disagree
        NumericError: If a context vector and a compared target both have zero norm

    Examples:
        A positive with cosine 1 and ten orthogonal negatives at temperature 0.1
        gives ln(1 + 10 e^-10), about 4.54e-4.
    """
    positions = np.asarray(list(mask_positions), dtype=np.int64)
    if positions.size == 0:
        raise LeapInputError("contrastive_loss needs at least one masked position")
    if context.shape != targets.shape or context.ndim != 2:
        raise LeapInputError(
            f"Context and targets must both be T' x D, got {context.shape} and {targets.shape}"
        )
    if negatives is None:
        if rng is None:
            raise LeapInputError("Pass either an rng or explicit negatives")
        negatives = sample_negatives(positions, context.shape[0], cfg.num_negatives, rng)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(positions.size, -1)

    candidates = np.concatenate([positions[:, None], negatives], axis=1)
    c_zero = ~np.any(context.value[positions] != 0, axis=-1)
    q_zero = ~np.any(targets.value[candidates] != 0, axis=-1)
    if np.any(c_zero[:, None] & q_zero):
        raise NumericError("Cosine similarity between two zero vectors")

    c = ad.take(context, positions)  # M x D
    q = ad.take(targets, candidates)  # M x (K+1) x D
    width = c.shape[1]
    c_rows = c.reshape(positions.size, 1, width)

    dots = ad.sum(c_rows * q, axis=-1)
    cos = dots / (_smoothed_norm(c) * _smoothed_norm(q).reshape(q.shape[0], q.shape[1]))
    logits = cos * (1.0 / cfg.temperature)

    positive = ad.take(logits.transpose(1, 0), [0]).reshape(positions.size)
    per_position = ad.logsumexp(logits, axis=-1) - positive
    return ad.mean(per_position)


# ============================================================================
# Pretraining loop
# ============================================================================


def _ssl_features(utterance: Utterance, config: ModelConfig, feed_lang_id: bool) -> np.ndarray:
    features = featurize(utterance.frames, utterance.language, config)
    if config.use_lang_id and not feed_lang_id:
        features = features.copy()
        features[:, config.feature_dim :] = 0.0
    return features


def ssl_batch_loss(
    p: Params,
    batch: Sequence[Utterance],
    config: ModelConfig,
    ssl_config: SSLConfig,
    rng: np.random.Generator,
) -> Tuple[Tensor, int, int]:
    """
    Mean contrastive loss over a batch on the tape of ``p``.

    Returns:
        (loss tensor, masked positions, encoder positions)
    """
    tape = next(iter(p.values())).tape
    losses = []
    masked = 0
    total = 0
    for utterance in batch:
        features = tape.constant(_ssl_features(utterance, config, ssl_config.feed_lang_id))
        latent = subsample(features, p)
        targets = ssl_targets(latent, p)
        positions = sample_mask(latent.shape[0], ssl_config.mask, rng)
        context = encode(latent, p, config, mask_positions=positions)
        losses.append(contrastive_loss(context, targets, positions, ssl_config.contrastive, rng))
        masked += len(positions)
        total += latent.shape[0]
    loss = ad.stack(losses).sum() * (1.0 / len(losses))
    return loss, masked, total


def run_ssl_pretrain(
    corpus: Sequence[Utterance],
    init: Checkpoint,
    ssl_config: SSLConfig,
    batch_size: int,
    rng: np.random.Generator,
    dtype=np.float64,
    metrics: Optional[MetricsWriter] = None,
) -> Checkpoint:
    """
    Pretrains subsampler, encoder, target map and mask vector with Adam.

    The learning rate warms up linearly over ``warmup_fraction`` of the steps
    and then decays linearly to zero.

    Args:
        corpus: Training utterances (labels are ignored)
        init: Starting checkpoint
        ssl_config: Steps, optimizer and masking settings
        batch_size: Utterances per update
        rng: Stage generator (batches, masks, negatives)
        metrics: Receives {step, loss, lr, masked_frac, wall_ms} per logged step

    Returns:
        Checkpoint of stage "ssl"; with 0 steps its parameters equal ``init``'s

    Raises:
        LeapInputError: If no utterance is long enough for contrastive negatives
        NumericError: If the loss becomes non-finite (annotated with the step)
    """
    logger = get_run_logger()
    usable = [utt for utt in corpus if utt.subsampled_length >= 2]
    if not usable:
        raise LeapInputError("SSL pretraining needs a non-empty corpus")
    if len(usable) < len(corpus):
        logger.warning(f"Skipping {len(corpus) - len(usable)} utterances too short for SSL")

    config = init.config
    params = init.params.astype(dtype)
    trainable = [name for name in params if name.startswith(SSL_PREFIXES)]
    optimizer = Adam(
        params.size, ssl_config.learning_rate, ssl_config.betas, ssl_config.eps, dtype=dtype
    )
    flat = params.flatten()

    for step in range(ssl_config.steps):
        picks = rng.integers(len(usable), size=batch_size)
        batch = [usable[i] for i in picks]

        stats = {"masked": 0, "total": 1}

        def builder(p: Params) -> Tensor:
            loss, masked, total = ssl_batch_loss(p, batch, config, ssl_config, rng)
            stats.update(masked=masked, total=total)
            return loss

        try:
            loss, grads = ad.value_and_grad(
                builder, params.as_dict(), dtype=dtype, requires_grad=trainable
            )
        except NumericError as e:
            raise e.annotate(step=step) from e

        grad = ParamVector(
            {name: grads.get(name, np.zeros_like(value)) for name, value in params.items()}
        ).flatten()
        lr = ssl_config.learning_rate * warmup_linear_decay(
            step, ssl_config.steps, ssl_config.warmup_fraction
        )
        flat = optimizer.step(flat, grad, lr=lr)
        params = params.with_flat(flat)

        if metrics is not None and step % ssl_config.log_every == 0:
            metrics.write(
                {
                    "step": step,
                    "loss": loss,
                    "lr": lr,
                    "masked_frac": stats["masked"] / stats["total"],
                    "wall_ms": metrics.elapsed_ms(),
                }
            )
        if step % max(1, ssl_config.steps // 10) == 0:
            logger.debug(f"ssl step {step} loss {loss:.4f}")

    return Checkpoint(
        params=params,
        config=config,
        seed=init.seed,
        step=ssl_config.steps,
        stage="ssl",
        extra={"ssl_steps": ssl_config.steps},
    )
