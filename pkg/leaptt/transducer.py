"""
Transducer loss, its brute-force oracle and greedy decoding.

The loss is one fused tape op: alpha/beta recursions run in numpy log space
and the backward rule returns the exact posterior-occupancy gradient with
respect to the log-probability lattice.
"""

import itertools
from typing import List, Sequence, Tuple

import numpy as np

from leaptt import autodiff as ad
from leaptt.autodiff import Tape, Tensor
from leaptt.errors import LeapInputError
from leaptt.model import (
    Params,
    bind_params,
    encoder_forward,
    initial_state,
    joint,
    predictor_step,
    transducer_forward,
)
from leaptt.params import ParamVector
from leaptt.types import ModelConfig, Utterance

ORACLE_MAX_FRAMES = 6
ORACLE_MAX_LABELS = 4
NORMALIZATION_TOL = 1e-9


def lattice_log_probs(logits: Tensor) -> Tensor:
    """Log-softmax over the vocabulary axis: logits -> LogLattice."""
    return ad.log_softmax(logits, axis=-1)


def check_lattice_normalized(log_probs: np.ndarray, tol: float = NORMALIZATION_TOL) -> bool:
    """True when every (t, u) cell of the lattice sums to probability one."""
    peak = log_probs.max(axis=-1, keepdims=True)
    totals = peak[..., 0] + np.log(np.exp(log_probs - peak).sum(axis=-1))
    return bool(np.all(np.abs(totals) <= tol))


def _check_lattice(log_probs: np.ndarray, labels: Sequence[int]) -> np.ndarray:
    index = np.asarray(labels, dtype=np.int64).reshape(-1)
    if log_probs.ndim != 3:
        raise LeapInputError(f"Lattice must be T' x (U+1) x (V+1), got shape {log_probs.shape}")
    frames, states, symbols = log_probs.shape
    if frames < 1:
        raise LeapInputError("Lattice needs at least one frame")
    if states != index.size + 1:
        raise LeapInputError(
            f"Lattice has room for {states - 1} labels but {index.size} were given"
        )
    if index.size and (index.min() < 0 or index.max() >= symbols - 1):
        raise LeapInputError(f"Label outside [0, {symbols - 1}): {index.tolist()}")
    return index


def _alpha_beta(log_probs: np.ndarray, index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    frames, states, symbols = log_probs.shape
    blank = symbols - 1
    num_labels = states - 1
    blank_lp = log_probs[:, :, blank]
    emit_lp = log_probs[:, np.arange(num_labels), index] if num_labels else np.zeros((frames, 0))

    alpha = np.full((frames, states), -np.inf)
    alpha[0, 0] = 0.0
    for t in range(frames):
        for u in range(states):
            if t == 0 and u == 0:
                continue
            stay = alpha[t - 1, u] + blank_lp[t - 1, u] if t > 0 else -np.inf
            move = alpha[t, u - 1] + emit_lp[t, u - 1] if u > 0 else -np.inf
            alpha[t, u] = np.logaddexp(stay, move)

    beta = np.full((frames, states), -np.inf)
    beta[frames - 1, num_labels] = blank_lp[frames - 1, num_labels]
    for t in range(frames - 1, -1, -1):
        for u in range(num_labels, -1, -1):
            if t == frames - 1 and u == num_labels:
                continue
            stay = beta[t + 1, u] + blank_lp[t, u] if t < frames - 1 else -np.inf
            move = beta[t, u + 1] + emit_lp[t, u] if u < num_labels else -np.inf
            beta[t, u] = np.logaddexp(stay, move)

    return alpha, beta


def transducer_nll(log_probs: np.ndarray, labels: Sequence[int]) -> float:
    """Negative log-likelihood of labels under a lattice, without a tape."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    index = _check_lattice(log_probs, labels)
    alpha, _ = _alpha_beta(log_probs, index)
    frames, states, _ = log_probs.shape
    return float(-(alpha[frames - 1, states - 1] + log_probs[frames - 1, states - 1, -1]))


def rnnt_loss(log_probs: Tensor, labels: Sequence[int]) -> Tensor:
    """
    Exact transducer loss as a single differentiable op.

    Args:
        log_probs: T' x (U+1) x (V+1) LogLattice (blank is the last symbol)
        labels: The U target labels

    Returns:
        Scalar tensor -(alpha(T'-1, U) + log P_blank(T'-1, U))

    Raises:
        LeapInputError: If the lattice shape does not fit the labels

    Examples:
        >>> tape = Tape()
        >>> lattice = tape.constant(np.log(np.full((2, 2, 2), 0.5)))
        >>> round(rnnt_loss(lattice, [0]).item(), 4)
        1.3863
    """
    lp = log_probs.value
    index = _check_lattice(lp, labels)
    frames, states, _ = lp.shape
    num_labels = states - 1

    alpha, beta = _alpha_beta(lp, index)
    log_z = beta[0, 0]
    loss = -log_z

    def vjp(g):
        grad = np.zeros_like(lp)
        blank_lp = lp[:, :, -1]
        # blank transitions (t, u) -> (t + 1, u); the last frame exits the lattice
        next_beta = np.vstack([beta[1:], np.full((1, states), -np.inf)])
        next_beta[frames - 1, num_labels] = 0.0
        grad[:, :, -1] = -np.exp(alpha + blank_lp + next_beta - log_z)
        for u in range(num_labels):
            occupancy = np.exp(alpha[:, u] + lp[:, u, index[u]] + beta[:, u + 1] - log_z)
            grad[:, u, index[u]] -= occupancy
        return (g * grad,)

    return log_probs.tape.record("rnnt_loss", (log_probs,), np.asarray(loss), vjp)


def rnnt_loss_oracle(log_probs: np.ndarray, labels: Sequence[int]) -> float:
    """
    Transducer loss by enumerating every monotone alignment.

    Each alignment interleaves the U label emissions with T' - 1 blanks and
    ends with the blank that leaves cell (T'-1, U); there are C(T'-1+U, U).

    Raises:
        LeapInputError: If T' > 6 or U > 4
    """
    log_probs = np.asarray(log_probs, dtype=np.float64)
    index = _check_lattice(log_probs, labels)
    frames, states, _ = log_probs.shape
    num_labels = states - 1
    if frames > ORACLE_MAX_FRAMES or num_labels > ORACLE_MAX_LABELS:
        raise LeapInputError(
            f"Oracle enumeration is limited to T' <= {ORACLE_MAX_FRAMES}, "
            f"U <= {ORACLE_MAX_LABELS}; got T'={frames}, U={num_labels}"
        )

    path_scores = [
        _path_log_prob(log_probs, index, set(emits))
        for emits in alignment_emit_positions(frames, num_labels)
    ]
    scores = np.array(path_scores)
    peak = scores.max()
    return float(-(peak + np.log(np.exp(scores - peak).sum())))


def alignment_emit_positions(frames: int, num_labels: int) -> List[Tuple[int, ...]]:
    """Positions of the label emissions among the first T'-1+U moves of each alignment."""
    return list(itertools.combinations(range(frames - 1 + num_labels), num_labels))


def _path_log_prob(log_probs: np.ndarray, index: np.ndarray, emits: set) -> float:
    frames, states, _ = log_probs.shape
    t = u = 0
    total = 0.0
    for move in range(frames - 1 + states - 1):
        if move in emits:
            total += log_probs[t, u, index[u]]
            u += 1
        else:
            total += log_probs[t, u, -1]
            t += 1
    return total + log_probs[t, u, -1]


# ============================================================================
# Decoding and utterance losses
# ============================================================================


def greedy_decode(
    enc: Tensor, p: Params, config: ModelConfig, max_symbols_per_frame: int = 4
) -> List[int]:
    """
    Greedy transducer search.

    At frame t the most likely symbol is emitted (ties go to the lowest index).
    A label advances the predictor and stays at t, at most
    ``max_symbols_per_frame`` times; a blank moves to t + 1.

    Args:
        enc: T' x model_dim encoder output on the same tape as ``p``
        p: Bound parameters
        config: Model configuration

    Returns:
        The decoded label sequence
    """
    blank = config.blank
    h = predictor_step(initial_state(p), blank, p)
    decoded: List[int] = []
    for t in range(enc.shape[0]):
        frame = ad.take(enc, [t])
        for _ in range(max_symbols_per_frame):
            logits = joint(frame, h, p).value.reshape(-1)
            symbol = int(np.argmax(logits))
            if symbol == blank:
                break
            decoded.append(symbol)
            h = predictor_step(h, symbol, p)
    return decoded


def decode_utterance(
    params: ParamVector,
    utterance: Utterance,
    config: ModelConfig,
    dtype=np.float64,
    max_symbols_per_frame: int = 4,
) -> List[int]:
    """Encodes and greedily decodes one utterance without recording gradients."""
    tape = Tape(dtype=dtype, grad_enabled=False)
    p = bind_params(tape, params, requires_grad=False)
    enc = encoder_forward(utterance.frames, utterance.language, p, config)
    return greedy_decode(enc, p, config, max_symbols_per_frame)


def utterance_loss(utterance: Utterance, p: Params, config: ModelConfig) -> Tensor:
    """Transducer loss of one utterance on the tape of ``p``."""
    enc = encoder_forward(utterance.frames, utterance.language, p, config)
    logits = transducer_forward(enc, utterance.labels, p, config)
    return rnnt_loss(lattice_log_probs(logits), utterance.labels)


def _batch_builder(batch: Sequence[Utterance], config: ModelConfig):
    if not batch:
        raise LeapInputError("Cannot compute a loss over an empty batch")

    def builder(p: Params) -> Tensor:
        losses = [utterance_loss(utt, p, config) for utt in batch]
        return ad.stack(losses).sum() * (1.0 / len(losses))

    return builder


def batch_loss(
    params: ParamVector, batch: Sequence[Utterance], config: ModelConfig, dtype=np.float64
) -> float:
    """Mean transducer loss over a batch, value only."""
    return ad.evaluate(_batch_builder(batch, config), params.as_dict(), dtype=dtype)


def batch_loss_and_grad(
    params: ParamVector, batch: Sequence[Utterance], config: ModelConfig, dtype=np.float64
) -> Tuple[float, ParamVector]:
    """
    Mean transducer loss over a batch and its gradient per parameter section.

    Utterance losses are summed in batch order on one tape.
    """
    value, grads = ad.value_and_grad(_batch_builder(batch, config), params.as_dict(), dtype=dtype)
    return value, ParamVector({name: grads[name] for name in params})
