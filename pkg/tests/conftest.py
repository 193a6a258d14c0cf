"""
Pytest configuration and shared fixtures for leaptt tests.
"""

import numpy as np
import pytest
from unittest.mock import Mock

from leaptt.logger import RunLogger
from leaptt.params import init_params
from leaptt.types import ModelConfig, RunConfig, Utterance


def make_utterance(labels, language=0, repeat=4, feature_dim=4, seed=0, utt_id="u"):
    """Utterance whose frames are random noise, ``repeat`` frames per label."""
    rng = np.random.default_rng(seed)
    frames = rng.normal(size=(max(1, len(labels)) * repeat, feature_dim))
    return Utterance(frames=frames, labels=tuple(labels), language=language, id=utt_id)


@pytest.fixture
def rng():
    """Seeded numpy generator."""
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model_config():
    """A model small enough for finite-difference checks."""
    return ModelConfig(
        feature_dim=4,
        num_languages=2,
        use_lang_id=True,
        conv_channels=3,
        num_blocks=1,
        model_dim=4,
        num_heads=2,
        ff_dim=6,
        rel_clip=2,
        predictor_dim=3,
        joint_dim=4,
        vocab_size=3,
    )


@pytest.fixture
def tiny_params(tiny_model_config):
    """Seeded parameters of the tiny model."""
    return init_params(tiny_model_config, seed=7)


@pytest.fixture
def tiny_batch():
    """Two short utterances in two languages."""
    return [
        make_utterance([0, 2], language=0, seed=1, utt_id="a"),
        make_utterance([1], language=1, seed=2, utt_id="b"),
    ]


@pytest.fixture
def tiny_run_dict(tmp_path):
    """Config document of a recipe that runs in seconds."""
    return {
        "seed": 3,
        "batch_size": 2,
        "output_dir": str(tmp_path / "run"),
        "corpus": {
            "counts": [8, 5],
            "test_counts": 3,
            "vocab_size": 3,
            "feature_dim": 4,
            "noise_std": 0.05,
            "label_range": [2, 2],
            "repeat_range": [4, 5],
            "valid_fraction": 0.25,
        },
        "model": {
            "conv_channels": 3,
            "num_blocks": 1,
            "model_dim": 4,
            "num_heads": 2,
            "ff_dim": 6,
            "rel_clip": 2,
            "predictor_dim": 3,
            "joint_dim": 4,
        },
        "ssl": {
            "steps": 2,
            "mask": {"mask_prob": 0.3, "span_len": 1},
            "contrastive": {"num_negatives": 2},
        },
        "leap": {"meta_steps": 2, "inner_steps": 2, "meta_batch_size": 2, "meta_lr": 0.01},
        "finetune": {"max_steps": 3, "eval_every": 2, "patience": 2},
    }


@pytest.fixture
def tiny_run_config(tiny_run_dict):
    """RunConfig built from ``tiny_run_dict``."""
    return RunConfig.from_dict(tiny_run_dict)


@pytest.fixture
def quiet_logger():
    """RunLogger with console output suppressed."""
    return RunLogger(quiet=True)


@pytest.fixture
def mock_logger():
    """Create a mock logger for testing."""
    return Mock(spec=RunLogger)
