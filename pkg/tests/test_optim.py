"""
Tests for the flat-vector optimizers and the learning-rate schedule.
"""

import numpy as np
import pytest

from leaptt.errors import ShapeError
from leaptt.optim import SGD, Adam, AdamState, AdamW, adam_update, warmup_linear_decay


class TestSGD:
    """Tests for SGD."""

    def test_step(self):
        """Test theta - lr * grad."""
        out = SGD(0.5).step(np.array([1.0, 2.0]), np.array([2.0, -2.0]))
        np.testing.assert_array_equal(out, [0.0, 3.0])

    def test_lr_override(self):
        """Test a per-step learning rate."""
        out = SGD(0.5).step(np.array([1.0]), np.array([1.0]), lr=0.25)
        np.testing.assert_array_equal(out, [0.75])


class TestAdam:
    """Tests for Adam and AdamW."""

    def test_first_step_moves_by_lr(self):
        """Test the bias-corrected first step is lr * sign(grad)."""
        out = Adam(2, lr=0.1).step(np.zeros(2), np.array([3.0, -0.5]))
        np.testing.assert_allclose(out, [-0.1, 0.1], rtol=1e-6)

    def test_state_advances(self):
        """Test the step counter and moments advance."""
        opt = Adam(1, lr=0.1)
        opt.step(np.zeros(1), np.ones(1))
        opt.step(np.zeros(1), np.ones(1))
        assert opt.state.step == 2
        assert opt.state.m[0] == pytest.approx(0.19)

    def test_adam_update_is_pure(self):
        """Test adam_update leaves its inputs untouched."""
        state = AdamState.zeros(2)
        params = np.ones(2)
        adam_update(params, np.ones(2), state, lr=0.1)
        assert state.step == 0
        np.testing.assert_array_equal(params, [1.0, 1.0])

    def test_shape_mismatch(self):
        """Test mismatched shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            adam_update(np.ones(2), np.ones(3), AdamState.zeros(2), lr=0.1)

    def test_adamw_decoupled_decay(self):
        """Test AdamW with a zero gradient only applies the decay term."""
        out = AdamW(1, lr=0.1, weight_decay=0.01).step(np.array([2.0]), np.zeros(1))
        assert out[0] == pytest.approx(2.0 - 0.1 * 0.01 * 2.0)

    def test_adam_has_no_decay(self):
        """Test plain Adam does not decay parameters."""
        out = Adam(1, lr=0.1).step(np.array([2.0]), np.zeros(1))
        assert out[0] == 2.0


class TestWarmupLinearDecay:
    """Tests for warmup_linear_decay()."""

    def test_warmup(self):
        """Test the multiplier ramps up over the warm-up steps."""
        assert warmup_linear_decay(0, 100, 0.05) == pytest.approx(0.2)
        assert warmup_linear_decay(4, 100, 0.05) == pytest.approx(1.0)

    def test_decay_to_zero(self):
        """Test the multiplier decays linearly after warm-up."""
        assert warmup_linear_decay(5, 100, 0.05) == pytest.approx(1.0)
        assert warmup_linear_decay(99, 100, 0.05) == pytest.approx(1.0 / 95)
        assert warmup_linear_decay(100, 100, 0.05) == 0.0

    def test_no_steps(self):
        """Test a zero-length run."""
        assert warmup_linear_decay(0, 0) == 0.0
