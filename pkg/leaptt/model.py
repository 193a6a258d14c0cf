"""
The toy Transformer-transducer.

Pipeline for one utterance::

    frames (T x d) --featurize--> T x (d + L)
                   --subsample--> T' x model_dim        T' = ceil(T / 4)
                   --encode-----> T' x model_dim        (relative-position blocks)
    labels (U)     --predictor--> (U + 1) x predictor_dim
    joint(enc, pred)            -> T' x (U + 1) x (V + 1) logits

All functions build ops on the tape of the parameter tensors passed in, so
the same code serves training (gradients recorded) and decoding
(``Tape(grad_enabled=False)``).
"""

import math
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from leaptt import autodiff as ad
from leaptt.autodiff import Tape, Tensor
from leaptt.errors import LeapInputError
from leaptt.params import ParamVector
from leaptt.types import ModelConfig

Params = Dict[str, Tensor]


def bind_params(tape: Tape, params: ParamVector, requires_grad: bool = True) -> Params:
    """Registers every parameter section as a named leaf on the tape."""
    return {name: tape.leaf(name, value, requires_grad) for name, value in params.items()}


def _tape(p: Params) -> Tape:
    return next(iter(p.values())).tape


# ============================================================================
# Featurizer and subsampler
# ============================================================================


def featurize(frames: np.ndarray, lang: int, config: ModelConfig) -> np.ndarray:
    """
    Appends the language one-hot to every frame.

    Args:
        frames: T x feature_dim array
        lang: Language index in [0, num_languages)
        config: Model configuration

    Returns:
        A new T x (feature_dim + L) array, or the frames unchanged when
        ``use_lang_id`` is off

    Raises:
        LeapInputError: If lang is out of range or frames have the wrong width

    Examples:
        >>> cfg = ModelConfig(feature_dim=3, num_languages=4)
        >>> featurize(np.zeros((2, 3)), 2, cfg)[0].tolist()
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
    """
    if not 0 <= lang < config.num_languages:
        raise LeapInputError(
            f"Language index {lang} out of range for {config.num_languages} languages"
        )
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != config.feature_dim:
        raise LeapInputError(
            f"Expected frames of shape (T, {config.feature_dim}), got {frames.shape}"
        )
    if not config.use_lang_id:
        return frames

    one_hot = np.zeros((frames.shape[0], config.num_languages), dtype=frames.dtype)
    one_hot[:, lang] = 1.0
    return np.concatenate([frames, one_hot], axis=1)


def subsampled_length(num_frames: int) -> int:
    """Encoder length T' = ceil(T / 4) after two stride-2 convolutions."""
    half = -(-num_frames // 2)
    return -(-half // 2)


def _conv_stride2(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """
    Kernel-3, stride-2 convolution over rows with GELU.

    One zero row is padded on the left, one more on the right for odd T, so
    the output has ceil(T / 2) rows.
    """
    rows = x.shape[0]
    out_rows = -(-rows // 2)
    padded = ad.pad_rows(x, 1, 2 * out_rows - rows)
    windows = 2 * np.arange(out_rows)[:, None] + np.arange(3)[None, :]
    patches = ad.take(padded, windows).reshape(out_rows, 3 * x.shape[1])
    return ad.gelu(patches @ weight + bias)


def subsample(features: Tensor, p: Params) -> Tensor:
    """
    Two stride-2 convolutions followed by a linear map to model_dim.

    Raises:
        LeapInputError: If the input has no frames
    """
    if features.ndim != 2 or features.shape[0] < 1:
        raise LeapInputError(f"subsample needs a non-empty T x d input, got {features.shape}")
    h = _conv_stride2(features, p["subsample.conv1.weight"], p["subsample.conv1.bias"])
    h = _conv_stride2(h, p["subsample.conv2.weight"], p["subsample.conv2.bias"])
    return h @ p["subsample.proj.weight"] + p["subsample.proj.bias"]


# ============================================================================
# Relative-position encoder
# ============================================================================


def relative_offsets(length: int, clip: int) -> np.ndarray:
    """Index table [i, j] -> clip(j - i, -clip, clip) + clip."""
    positions = np.arange(length)
    return np.clip(positions[None, :] - positions[:, None], -clip, clip) + clip


def relative_bias(table: Tensor, length: int, clip: int) -> Tensor:
    """
    Expands a per-head bias table (H x (2 clip + 1)) to H x T x T attention biases.

    Entry [h, i, j] is table[h, clip(j - i)], so it depends on the offset only.
    """
    gathered = ad.take(table.transpose(1, 0), relative_offsets(length, clip))
    return gathered.transpose(2, 0, 1)


def apply_mask(latent: Tensor, mask_positions: Iterable[int], embedding: Tensor) -> Tensor:
    """
    Replaces the rows at mask_positions with the learned mask vector.

    Raises:
        LeapInputError: If a position is outside [0, T')
    """
    length = latent.shape[0]
    positions = sorted(set(int(i) for i in mask_positions))
    if not positions:
        return latent
    if positions[0] < 0 or positions[-1] >= length:
        raise LeapInputError(f"Mask position out of range for length {length}: {positions}")

    indicator = np.zeros((length, 1))
    indicator[positions] = 1.0
    tape = latent.tape
    keep = tape.constant(1.0 - indicator)
    return latent * keep + tape.constant(indicator) * embedding


def _attention(x: Tensor, p: Params, prefix: str, config: ModelConfig) -> Tensor:
    length = x.shape[0]
    heads, head_dim = config.num_heads, config.head_dim

    def split(t: Tensor) -> Tensor:
        return t.reshape(length, heads, head_dim).transpose(1, 0, 2)

    q = split(x @ p[f"{prefix}.attn.query"])
    k = split(x @ p[f"{prefix}.attn.key"])
    v = split(x @ p[f"{prefix}.attn.value"])

    logits = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(head_dim))
    logits = logits + relative_bias(p[f"{prefix}.attn.rel_bias"], length, config.rel_clip)
    context = ad.softmax(logits, axis=-1) @ v
    merged = context.transpose(1, 0, 2).reshape(length, config.model_dim)
    return merged @ p[f"{prefix}.attn.out"] + p[f"{prefix}.attn.out_bias"]


def _block(x: Tensor, p: Params, b: int, config: ModelConfig) -> Tensor:
    prefix = f"encoder.blocks.{b}"
    x = ad.layer_norm(
        x + _attention(x, p, prefix, config), p[f"{prefix}.norm1.gain"], p[f"{prefix}.norm1.bias"]
    )
    hidden = ad.gelu(x @ p[f"{prefix}.ff.in_weight"] + p[f"{prefix}.ff.in_bias"])
    ff = hidden @ p[f"{prefix}.ff.out_weight"] + p[f"{prefix}.ff.out_bias"]
    return ad.layer_norm(x + ff, p[f"{prefix}.norm2.gain"], p[f"{prefix}.norm2.bias"])


def encode(
    latent: Tensor,
    p: Params,
    config: ModelConfig,
    mask_positions: Optional[Iterable[int]] = None,
) -> Tensor:
    """
    Runs the relative-position Transformer stack.

    Args:
        latent: T' x model_dim subsampled latents
        p: Bound parameters
        config: Model configuration
        mask_positions: Rows to replace with the mask vector before the first block

    Returns:
        T' x model_dim context vectors
    """
    x = latent
    if mask_positions is not None:
        x = apply_mask(x, mask_positions, p["encoder.mask_embedding"])
    for b in range(config.num_blocks):
        x = _block(x, p, b, config)
    return x


def encoder_forward(
    frames: np.ndarray,
    lang: int,
    p: Params,
    config: ModelConfig,
    mask_positions: Optional[Iterable[int]] = None,
) -> Tensor:
    """featurize, subsample and encode in one call."""
    features = _tape(p).constant(featurize(frames, lang, config))
    return encode(subsample(features, p), p, config, mask_positions)


# ============================================================================
# Label predictor and joint network
# ============================================================================


def gru_cell(x: Tensor, h: Tensor, p: Params) -> Tensor:
    """One gated recurrent update; x and h are 1 x predictor_dim rows."""

    def gate(name: str, hidden: Tensor) -> Tensor:
        base = f"predictor.gru.{name}"
        return x @ p[f"{base}.input"] + hidden @ p[f"{base}.hidden"] + p[f"{base}.bias"]

    update = ad.sigmoid(gate("update", h))
    reset = ad.sigmoid(gate("reset", h))
    candidate = ad.tanh(gate("candidate", reset * h))
    return (1.0 - update) * candidate + update * h


def initial_state(p: Params) -> Tensor:
    width = p["predictor.embedding"].shape[1]
    return _tape(p).constant(np.zeros((1, width)))


def predictor_step(h: Tensor, symbol: int, p: Params) -> Tensor:
    """Consumes one symbol (the blank acts as start symbol) and returns the new state."""
    embedded = ad.take(p["predictor.embedding"], [symbol])
    return gru_cell(embedded, h, p)


def check_labels(labels: Sequence[int], config: ModelConfig) -> np.ndarray:
    index = np.asarray(labels, dtype=np.int64).reshape(-1)
    if index.size and (index.min() < 0 or index.max() >= config.vocab_size):
        raise LeapInputError(
            f"Label out of vocabulary [0, {config.vocab_size}): {index.tolist()}"
        )
    return index


def predictor_states(labels: Sequence[int], p: Params, config: ModelConfig) -> Tensor:
    """
    Runs the predictor over blank-start followed by the labels.

    Returns:
        (U + 1) x predictor_dim states; row u has consumed u labels
    """
    index = check_labels(labels, config)
    h = initial_state(p)
    states = []
    for symbol in [config.blank] + index.tolist():
        h = predictor_step(h, symbol, p)
        states.append(h)
    return ad.concat(states, axis=0)


def joint(enc: Tensor, pred: Tensor, p: Params) -> Tensor:
    """
    Joint network over every (t, u) pair.

    Returns:
        T' x (U + 1) x (V + 1) logits
    """
    frames = enc.shape[0]
    states = pred.shape[0]
    width = p["joint.bias"].shape[0]
    enc_proj = (enc @ p["joint.encoder_weight"]).reshape(frames, 1, width)
    pred_proj = (pred @ p["joint.predictor_weight"] + p["joint.bias"]).reshape(1, states, width)
    hidden = ad.tanh(enc_proj + pred_proj)
    return hidden @ p["joint.out_weight"] + p["joint.out_bias"]


def transducer_forward(
    enc: Tensor, labels: Sequence[int], p: Params, config: ModelConfig
) -> Tensor:
    """
    Logit lattice for one utterance.

    Raises:
        LeapInputError: If a label is outside [0, V)
    """
    return joint(enc, predictor_states(labels, p, config), p)


def ssl_targets(latent: Tensor, p: Params) -> Tensor:
    """Linear contrastive targets computed from the unmasked latents."""
    return latent @ p["ssl.target.weight"] + p["ssl.target.bias"]
