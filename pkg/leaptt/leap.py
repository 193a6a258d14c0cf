"""
LEAP meta-initialization.

Every task is rolled out from the shared initialization with plain SGD. The
rollout's points gamma_i = (theta_i, s * f(theta_i)) trace a path on the task
manifold; the initialization is pulled forward along each path by
descending the pull-forward distance

    sum_i || gamma_bar_{i+1} - gamma_i ||^p

with the rollout itself frozen as the baseline and d theta_i / d theta_0
taken as the identity.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from leaptt.checkpoint import Checkpoint
from leaptt.data import sampling_probabilities
from leaptt.errors import LeapInputError, NumericError, UsageError
from leaptt.flow import get_run_logger
from leaptt.logger import MetricsWriter
from leaptt.optim import AdamState, adam_update
from leaptt.params import ParamVector
from leaptt.transducer import batch_loss_and_grad
from leaptt.types import (
    LeapConfig,
    MetaAlgorithm,
    MetaOptimizer,
    ModelConfig,
    TaskDistribution,
    Utterance,
)

SEED_BOUND = 2**63


# ============================================================================
# Tasks
# ============================================================================


class Task:
    """
    One language task: an objective over flat parameters plus its SGD rule.

    Subclasses implement ``loss_and_grad``; the batch seed selects the
    mini-batch so rollouts replay bit-exactly.

    Attributes:
        language: Language index of the task
        inner_lr: SGD learning rate eta
        inner_steps: Rollout length K
    """

    def __init__(self, language: int, inner_lr: float, inner_steps: int):
        if inner_steps < 1:
            raise LeapInputError(f"Task rollouts need at least one step, got {inner_steps}")
        if inner_lr < 0:
            raise LeapInputError(f"Inner learning rate must be >= 0, got {inner_lr}")
        self.language = language
        self.inner_lr = inner_lr
        self.inner_steps = inner_steps

    @property
    def size(self) -> int:
        """Amount of data behind the task (used by the balanced distribution)."""
        return 1

    def loss_and_grad(self, theta: np.ndarray, batch_seed: int) -> Tuple[float, np.ndarray]:
        raise NotImplementedError


class QuadraticTask(Task):
    """
    f(theta) = 1/2 (theta - c)^T A (theta - c), independent of the batch.

    Examples:
        >>> task = QuadraticTask(center=[0.0], matrix=[[1.0]], inner_lr=0.5, inner_steps=2)
        >>> task.loss_and_grad(np.array([1.0]), 0)
        (0.5, array([1.]))
    """

    def __init__(
        self,
        center: Sequence[float],
        matrix: Sequence[Sequence[float]],
        inner_lr: float,
        inner_steps: int,
        language: int = 0,
    ):
        super().__init__(language, inner_lr, inner_steps)
        self.center = np.asarray(center, dtype=np.float64)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        if self.matrix.shape != (self.center.size, self.center.size):
            raise LeapInputError(
                f"Quadratic task matrix {self.matrix.shape} does not fit center {self.center.shape}"
            )

    def loss_and_grad(self, theta: np.ndarray, batch_seed: int) -> Tuple[float, np.ndarray]:
        delta = theta - self.center
        grad = self.matrix @ delta
        return float(0.5 * delta @ grad), grad


class LanguageTask(Task):
    """Mini-batch transducer loss over one language's utterances."""

    def __init__(
        self,
        language: int,
        utterances: Sequence[Utterance],
        config: ModelConfig,
        layout: List[Tuple[str, Tuple[int, ...]]],
        batch_size: int,
        inner_lr: float,
        inner_steps: int,
        dtype=np.float64,
    ):
        super().__init__(language, inner_lr, inner_steps)
        if not utterances:
            raise LeapInputError(f"Language {language} has no utterances")
        self.utterances = list(utterances)
        self.config = config
        self.layout = layout
        self.batch_size = batch_size
        self.dtype = dtype

    @property
    def size(self) -> int:
        return len(self.utterances)

    def batch(self, batch_seed: int) -> List[Utterance]:
        rng = np.random.default_rng(batch_seed)
        picks = rng.integers(len(self.utterances), size=self.batch_size)
        return [self.utterances[i] for i in picks]

    def loss_and_grad(self, theta: np.ndarray, batch_seed: int) -> Tuple[float, np.ndarray]:
        params = ParamVector.from_flat(self.layout, theta)
        loss, grad = batch_loss_and_grad(
            params, self.batch(batch_seed), self.config, dtype=self.dtype
        )
        return loss, grad.flatten()


# ============================================================================
# Trajectories and distances
# ============================================================================


@dataclass
class Trajectory:
    """
    Points (theta_i, f(theta_i)) of one SGD rollout, i = 0..K.

    Attributes:
        params: K + 1 flat parameter vectors; params[0] is the shared initialization
        losses: Loss at each point
        grads: Loss gradient at each point (replay data for the meta-gradient)
        batch_seeds: Mini-batch seed used at each point
        language: Language index of the task
    """

    params: List[np.ndarray]
    losses: List[float]
    grads: List[np.ndarray] = field(default_factory=list)
    batch_seeds: List[int] = field(default_factory=list)
    language: int = 0

    @property
    def steps(self) -> int:
        return len(self.params) - 1

    @property
    def points(self) -> List[Tuple[np.ndarray, float]]:
        return list(zip(self.params, self.losses))

    def gamma(self, i: int, loss_scale: float = 1.0) -> np.ndarray:
        """Point i on the task manifold: parameters with the scaled loss appended."""
        return np.append(self.params[i], loss_scale * self.losses[i])


def inner_rollout(
    init: np.ndarray,
    task: Task,
    rng: np.random.Generator,
    steps: Optional[int] = None,
) -> Trajectory:
    """
    Rolls a task out from ``init`` with SGD.

    theta_{i+1} = theta_i - eta * grad f(theta_i), each step on a fresh seeded
    mini-batch. The loss and gradient are recorded at every point including
    the last.

    Args:
        init: Shared initialization
        task: Task to roll out
        rng: Draws the per-step batch seeds
        steps: Override of the task's rollout length

    Raises:
        NumericError: If a loss is non-finite, annotated with step and task
    """
    steps = task.inner_steps if steps is None else steps
    if steps < 1:
        raise LeapInputError(f"Rollouts need at least one step, got {steps}")

    theta = np.array(init, copy=True)
    trajectory = Trajectory(params=[], losses=[], language=task.language)
    for i in range(steps + 1):
        seed = int(rng.integers(SEED_BOUND))
        try:
            loss, grad = task.loss_and_grad(theta, seed)
        except NumericError as e:
            raise e.annotate(step=i, task=task.language) from e
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise NumericError("Non-finite loss during task rollout", step=i, task=task.language)

        trajectory.params.append(theta)
        trajectory.losses.append(float(loss))
        trajectory.grads.append(grad)
        trajectory.batch_seeds.append(seed)
        if i < steps:
            theta = theta - task.inner_lr * grad
    return trajectory


def _check_pair(candidate: Trajectory, baseline: Trajectory) -> None:
    if len(candidate.params) != len(baseline.params):
        raise LeapInputError(
            f"Trajectory lengths differ: {len(candidate.params)} vs {len(baseline.params)}"
        )


def pull_forward_terms(
    candidate: Trajectory, baseline: Trajectory, loss_scale: float = 1.0
) -> Tuple[float, float]:
    """
    Squared pull-forward distance split into parameter and loss coordinates.

    Returns:
        (sum_i ||theta_bar_{i+1} - theta_i||^2, sum_i s^2 (f_bar_{i+1} - f_i)^2)
    """
    _check_pair(candidate, baseline)
    param_term = 0.0
    loss_term = 0.0
    for i in range(candidate.steps):
        delta = baseline.params[i + 1] - candidate.params[i]
        param_term += float(delta @ delta)
        loss_term += (loss_scale * (baseline.losses[i + 1] - candidate.losses[i])) ** 2
    return param_term, loss_term


def pull_forward_distance(
    candidate: Trajectory, baseline: Trajectory, p: int = 2, loss_scale: float = 1.0
) -> float:
    """
    sum_{i<K} ||gamma_bar_{i+1} - gamma_i||^p.

    Raises:
        LeapInputError: If lengths differ or p is not 1 or 2

    Examples:
        >>> task = QuadraticTask([0.0], [[1.0]], inner_lr=0.5, inner_steps=2)
        >>> traj = inner_rollout(np.array([1.0]), task, np.random.default_rng(0))
        >>> round(pull_forward_distance(traj, traj), 6)
        0.461914
    """
    if p not in (1, 2):
        raise LeapInputError(f"Distance exponent must be 1 or 2, got {p}")
    _check_pair(candidate, baseline)
    if p == 2:
        return float(sum(pull_forward_terms(candidate, baseline, loss_scale)))

    total = 0.0
    for i in range(candidate.steps):
        delta = baseline.gamma(i + 1, loss_scale) - candidate.gamma(i, loss_scale)
        total += float(np.linalg.norm(delta))
    return total


def meta_gradient(trajectory: Trajectory, p: int = 2, loss_scale: float = 1.0) -> np.ndarray:
    """
    Identity-Jacobian gradient of the pull-forward distance w.r.t. theta_0.

    For p = 2 each step contributes
    2 [(theta_i - theta_{i+1}) + s^2 (f_i - f_{i+1}) grad f(theta_i)];
    for p = 1 the same vector divided by the step's distance (zero when the
    points coincide).

    Raises:
        UsageError: If the trajectory lacks the recorded gradients
        LeapInputError: If p is not 1 or 2
    """
    if p not in (1, 2):
        raise LeapInputError(f"Distance exponent must be 1 or 2, got {p}")
    if trajectory.steps < 1:
        raise LeapInputError("meta_gradient needs at least one rollout step")
    if len(trajectory.grads) < trajectory.steps:
        raise UsageError("Trajectory has no recorded gradients to replay")

    total = np.zeros_like(trajectory.params[0])
    for i in range(trajectory.steps):
        step_delta = trajectory.params[i] - trajectory.params[i + 1]
        loss_delta = trajectory.losses[i] - trajectory.losses[i + 1]
        direction = step_delta + loss_scale**2 * loss_delta * trajectory.grads[i]
        if p == 2:
            total = total + 2.0 * direction
        else:
            distance = np.sqrt(step_delta @ step_delta + (loss_scale * loss_delta) ** 2)
            if distance > 0:
                total = total + direction / distance
    return total


def reptile_gradient(trajectory: Trajectory) -> np.ndarray:
    """theta_0 - theta_K: the Reptile meta-gradient."""
    return trajectory.params[0] - trajectory.params[-1]


def gradient_path_length(trajectory: Trajectory, loss_scale: float = 1.0) -> float:
    """Length sum_i ||gamma_{i+1} - gamma_i|| of the path a rollout traces."""
    return float(
        sum(
            np.linalg.norm(trajectory.gamma(i + 1, loss_scale) - trajectory.gamma(i, loss_scale))
            for i in range(trajectory.steps)
        )
    )


def mean_path_length(
    init: np.ndarray,
    tasks: Sequence[Task],
    steps: int,
    rng: np.random.Generator,
    loss_scale: float = 1.0,
) -> float:
    """Mean gradient path length of ``steps``-step rollouts of every task from ``init``."""
    if not tasks:
        raise LeapInputError("mean_path_length needs at least one task")
    lengths = [
        gradient_path_length(inner_rollout(init, task, rng, steps=steps), loss_scale)
        for task in tasks
    ]
    return float(np.mean(lengths))


# ============================================================================
# Meta loop
# ============================================================================


@dataclass
class MetaState:
    """
    Shared initialization and meta-optimizer state.

    Attributes:
        theta: Flat initialization theta_0
        adam: Moments of the meta optimizer (same length as theta)
        meta_lr: Meta learning rate beta
        step: Meta updates applied
        last_distances: Pull-forward distance of every task of the last meta-batch
        last_languages: Languages of the last meta-batch
        grad_norm: Norm of the last averaged meta-gradient
    """

    theta: np.ndarray
    adam: AdamState
    meta_lr: float
    step: int = 0
    last_distances: List[float] = field(default_factory=list)
    last_languages: List[int] = field(default_factory=list)
    grad_norm: float = 0.0

    @classmethod
    def initial(cls, theta: np.ndarray, meta_lr: float) -> "MetaState":
        theta = np.array(theta, copy=True)
        adam = AdamState.zeros(theta.size, dtype=theta.dtype)
        return cls(theta=theta, adam=adam, meta_lr=meta_lr)

    @property
    def expected_distance(self) -> float:
        if not self.last_distances:
            return 0.0
        return float(np.mean(self.last_distances))


def sample_meta_batch(
    tasks: Sequence[Task],
    config: LeapConfig,
    rng: np.random.Generator,
    alpha: float = 0.5,
) -> List[Task]:
    """
    Draws ``meta_batch_size`` tasks uniformly, or by the balanced sampler's
    n^alpha weights.
    """
    if not tasks:
        raise LeapInputError("LEAP needs at least one task")
    if config.task_distribution == TaskDistribution.BALANCED:
        probs = sampling_probabilities([task.size for task in tasks], alpha)
        picks = rng.choice(len(tasks), size=config.meta_batch_size, p=probs)
    else:
        picks = rng.integers(len(tasks), size=config.meta_batch_size)
    return [tasks[i] for i in picks]


def _rollout_terms(
    task: Task, theta: np.ndarray, seed: int, config: LeapConfig
) -> Tuple[np.ndarray, float]:
    trajectory = inner_rollout(theta, task, np.random.default_rng(seed))
    distance = pull_forward_distance(trajectory, trajectory, config.p, config.loss_scale)
    if config.meta_algorithm == MetaAlgorithm.REPTILE:
        return reptile_gradient(trajectory), distance
    return meta_gradient(trajectory, config.p, config.loss_scale), distance


def leap_meta_step(
    state: MetaState,
    batch: Sequence[Task],
    config: LeapConfig,
    rng: np.random.Generator,
) -> MetaState:
    """
    One meta update of the shared initialization.

    Every task of the batch is rolled out from ``state.theta``; meta-gradients
    are summed in batch order, divided by |B| and applied with Adam (or SGD).

    Raises:
        LeapInputError: If the batch is empty
        NumericError: From a rollout, annotated with the task's language
    """
    if not batch:
        raise LeapInputError("Meta-batch must contain at least one task")

    seeds = [int(rng.integers(SEED_BOUND)) for _ in batch]
    jobs: List[Callable[[], Tuple[np.ndarray, float]]] = [
        (lambda task=task, seed=seed: _rollout_terms(task, state.theta, seed, config))
        for task, seed in zip(batch, seeds)
    ]
    if config.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda job: job(), jobs))
    else:
        results = [job() for job in jobs]

    grad = np.zeros_like(state.theta)
    for gradient, _ in results:
        grad = grad + gradient
    grad = grad / len(batch)

    if config.meta_optimizer == MetaOptimizer.SGD:
        theta, adam = state.theta - state.meta_lr * grad, state.adam
    else:
        theta, adam = adam_update(
            state.theta, grad, state.adam, state.meta_lr, config.betas, config.eps
        )

    return dataclasses.replace(
        state,
        theta=theta,
        adam=adam,
        step=state.step + 1,
        last_distances=[distance for _, distance in results],
        last_languages=[task.language for task in batch],
        grad_norm=float(np.linalg.norm(grad)),
    )


def run_leap_loop(
    theta: np.ndarray,
    tasks: Sequence[Task],
    config: LeapConfig,
    rng: np.random.Generator,
    metrics: Optional[MetricsWriter] = None,
    alpha: float = 0.5,
) -> MetaState:
    """
    Repeats leap_meta_step ``config.meta_steps`` times on flat parameters.

    Each meta step logs {meta_step, expected_distance, per_task_distance,
    grad_norm, wall_ms}.
    """
    if not tasks:
        raise LeapInputError("LEAP needs at least one task")
    logger = get_run_logger()
    state = MetaState.initial(theta, config.meta_lr)

    for meta_step in range(config.meta_steps):
        batch = sample_meta_batch(tasks, config, rng, alpha)
        state = leap_meta_step(state, batch, config, rng)
        if metrics is not None:
            metrics.write(
                {
                    "meta_step": meta_step,
                    "expected_distance": state.expected_distance,
                    "per_task_distance": state.last_distances,
                    "grad_norm": state.grad_norm,
                    "wall_ms": metrics.elapsed_ms(),
                }
            )
        if meta_step % max(1, config.meta_steps // 10) == 0:
            logger.debug(
                f"leap meta step {meta_step} expected distance {state.expected_distance:.6f}"
            )
    return state


def run_leap(
    init: Checkpoint,
    tasks: Sequence[Task],
    config: LeapConfig,
    rng: np.random.Generator,
    metrics: Optional[MetricsWriter] = None,
    alpha: float = 0.5,
) -> Checkpoint:
    """
    Meta-learns the initialization and returns it as a "leap" checkpoint.

    With 0 meta steps the parameters equal the input checkpoint's.
    """
    state = run_leap_loop(init.params.flatten(), tasks, config, rng, metrics, alpha)
    return Checkpoint(
        params=init.params.with_flat(state.theta),
        config=init.config,
        seed=init.seed,
        step=state.step,
        stage="leap",
        extra={"meta_steps": state.step},
    )


def language_tasks(
    utterances: Sequence[Utterance],
    config: ModelConfig,
    layout: List[Tuple[str, Tuple[int, ...]]],
    batch_size: int,
    leap_config: LeapConfig,
    dtype=np.float64,
) -> List[LanguageTask]:
    """One task per language present in the corpus, in language order."""
    by_language = {}
    for utt in utterances:
        by_language.setdefault(utt.language, []).append(utt)
    return [
        LanguageTask(
            language,
            by_language[language],
            config,
            layout,
            batch_size,
            leap_config.inner_lr,
            leap_config.inner_steps,
            dtype=dtype,
        )
        for language in sorted(by_language)
    ]
