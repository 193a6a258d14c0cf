# leaptt/flow.py

import functools
import json
import os
import traceback
from typing import Any, Callable, Dict, Iterable, Optional, TypeVar

from leaptt.errors import StageError
from leaptt.logger import RunLogger
from leaptt.types import StageState

R = TypeVar("R")

# The active run context, set by RunContext.activate()
CONTEXT: Optional["RunContext"] = None
_DEFAULT_LOGGER: Optional[RunLogger] = None

STATUS_FILE = "status.json"


class RunContext:
    """
    Lifecycle of the stages of one run.

    Every stage moves PENDING -> RUNNING -> COMPLETED | FAILED, or PENDING ->
    SKIPPED when disabled. ``status.json`` in the output directory is rewritten
    after every transition, so a failed run leaves its partial state on disk.
    """

    def __init__(
        self,
        output_dir: Optional[str],
        logger: RunLogger,
        stages: Iterable[str] = (),
    ):
        """
        Initialize the context.

        Args:
            output_dir: Directory receiving status.json; None keeps state in memory
            logger: Logger returned by get_run_logger() while active
            stages: Stage names known up front (all start PENDING)
        """
        self.output_dir = output_dir
        self.logger = logger
        self.states: Dict[str, StageState] = {str(name): StageState.PENDING for name in stages}
        self.messages: Dict[str, str] = {}

    def __enter__(self) -> "RunContext":
        self.activate()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.deactivate()

    def activate(self) -> None:
        global CONTEXT
        CONTEXT = self
        self._persist()

    def deactivate(self) -> None:
        global CONTEXT
        if CONTEXT is self:
            CONTEXT = None

    @property
    def status_path(self) -> Optional[str]:
        if self.output_dir is None:
            return None
        return os.path.join(self.output_dir, STATUS_FILE)

    def set_state(self, stage: str, state: StageState, message: Optional[str] = None) -> None:
        """Records a transition and persists status.json."""
        stage = str(stage)
        self.states[stage] = state
        if message is not None:
            self.messages[stage] = message
        self._persist()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "stages": {
                name: {"state": state.value, "message": self.messages.get(name)}
                for name, state in self.states.items()
            }
        }

    def _persist(self) -> None:
        path = self.status_path
        if path is None:
            return
        os.makedirs(self.output_dir, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True, indent=2)
            f.write("\n")

    def skip(self, stage: str) -> None:
        self.logger.info(f"Stage '{stage}' disabled, passing the checkpoint through.")
        self.set_state(stage, StageState.SKIPPED)

    def run(self, stage: str, func: Callable[..., R], *args, **kwargs) -> R:
        """
        Runs one stage under the lifecycle.

        Raises:
            StageError: Wrapping whatever the stage raised
        """
        stage = str(stage)
        self.set_state(stage, StageState.RUNNING)
        self.logger.info(f"Stage '{stage}' started.")
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            self.logger.error(f"Stage '{stage}' failed. Error: {e}\n{traceback.format_exc()}")
            self.set_state(stage, StageState.FAILED, message=str(e))
            if isinstance(e, StageError):
                raise
            raise StageError(stage, e) from e

        self.set_state(stage, StageState.COMPLETED)
        self.logger.info(f"Stage '{stage}' finished successfully.")
        return result


def stage(name: str) -> Callable[[Callable[..., R]], Callable[..., R]]:
    """
    Decorator placing a function under the active run's stage lifecycle.

    Outside an active RunContext the function is called directly.

    Example:
        >>> @stage("ssl")
        ... def pretrain(corpus):
        ...     get_run_logger().info("pretraining")
    """

    def decorator(func: Callable[..., R]) -> Callable[..., R]:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            if CONTEXT is None:
                return func(*args, **kwargs)
            return CONTEXT.run(name, func, *args, **kwargs)

        wrapper.stage_name = name  # type: ignore[attr-defined]
        return wrapper

    return decorator


def get_run_logger() -> RunLogger:
    """
    Returns the logger of the active run, or a console-only logger outside a run.

    Example:
        >>> logger = get_run_logger()
        >>> logger.info("SSL step 10 loss 2.31")
    """
    global _DEFAULT_LOGGER
    if CONTEXT is not None:
        return CONTEXT.logger
    if _DEFAULT_LOGGER is None:
        _DEFAULT_LOGGER = RunLogger()
    return _DEFAULT_LOGGER
