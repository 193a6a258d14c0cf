# leaptt/__init__.py

__version__ = "0.1.0"

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import LeapError, LeapInputError, NumericError
from .flow import get_run_logger, stage
from .metrics import WerReport, edit_distance, relative_reduction, weighted_overall_wer
from .pipeline import Recipe, ablate, evaluate, finetune, run_recipe, verify_lineage
from .types import ModelConfig, RunConfig, Utterance

__all__ = [
    # Recipe
    "run_recipe",
    "Recipe",
    "finetune",
    "evaluate",
    "ablate",
    "verify_lineage",
    # Checkpoints
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    # Metrics
    "WerReport",
    "edit_distance",
    "weighted_overall_wer",
    "relative_reduction",
    # Runtime
    "get_run_logger",
    "stage",
    # Types
    "RunConfig",
    "ModelConfig",
    "Utterance",
    # Errors
    "LeapError",
    "LeapInputError",
    "NumericError",
]
