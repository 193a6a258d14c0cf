"""
Tests for the reverse-mode autodiff engine.
"""

import numpy as np
import pytest

from leaptt import autodiff as ad
from leaptt.autodiff import Tape
from leaptt.errors import LeapInputError, NumericError, ShapeError, UsageError


class TestForward:
    """Tests for forward()."""

    def test_sum_of_squares(self):
        """Test f(x) = sum(x * x) at [1, 2] is 5."""
        out, _ = ad.forward(lambda p: ad.sum(p["x"] * p["x"]), {"x": np.array([1.0, 2.0])})
        assert out.item() == 5.0

    def test_sum_of_zeros(self):
        """Test f(x) = sum(x) at zeros(3) is 0."""
        out, _ = ad.forward(lambda p: ad.sum(p["x"]), {"x": np.zeros(3)})
        assert out.item() == 0.0

    def test_softmax_rows_sum_to_one(self, rng):
        """Test sum(softmax(Wx)) equals the number of rows."""
        w = rng.normal(size=(3, 4, 5))
        x = rng.normal(size=(3, 5, 2))

        def builder(p):
            return ad.sum(ad.softmax(p["w"] @ p["x"], axis=1))

        out, _ = ad.forward(builder, {"w": w, "x": x})
        assert out.item() == pytest.approx(3 * 2, abs=1e-12)

    def test_non_scalar_output_raises(self):
        """Test that builders must return a scalar."""
        with pytest.raises(ShapeError, match="forward"):
            ad.forward(lambda p: p["x"] * 2.0, {"x": np.ones(2)})

    def test_shape_mismatch_names_op_and_shapes(self):
        """Test that shape errors carry the op name and the offending shapes."""
        with pytest.raises(ShapeError) as excinfo:
            ad.forward(
                lambda p: ad.sum(p["a"] @ p["b"]), {"a": np.ones((2, 3)), "b": np.ones((2, 3))}
            )
        assert excinfo.value.op == "matmul"
        assert (2, 3) in excinfo.value.shapes

    def test_non_finite_intermediate_reports_node(self):
        """Test that a non-finite intermediate raises NumericError with a node id."""
        with pytest.raises(NumericError) as excinfo:
            ad.forward(lambda p: ad.sum(ad.exp(p["x"])), {"x": np.array([1000.0])})
        assert excinfo.value.node_id is not None

    def test_log_of_zero_raises(self):
        """Test that log(0) is surfaced, not propagated."""
        with pytest.raises(NumericError):
            ad.forward(lambda p: ad.sum(ad.log(p["x"])), {"x": np.array([0.0, 1.0])})

    def test_non_finite_input_raises(self):
        """Test that non-finite inputs are rejected on the tape."""
        with pytest.raises(NumericError):
            ad.forward(lambda p: ad.sum(p["x"]), {"x": np.array([np.nan])})

    def test_bit_identical_rerun(self, rng):
        """Test that identical inputs give identical values and gradients."""
        x = rng.normal(size=(4, 3))
        w = rng.normal(size=(3, 2))

        def builder(p):
            return ad.sum(ad.tanh(p["x"] @ p["w"]))

        first = ad.value_and_grad(builder, {"x": x, "w": w})
        second = ad.value_and_grad(builder, {"x": x, "w": w})
        assert first[0] == second[0]
        assert np.array_equal(first[1]["w"], second[1]["w"])

    def test_tape_ids_increase(self):
        """Test that tape node ids strictly increase."""
        _, tape = ad.forward(lambda p: ad.sum(ad.exp(p["x"]) * 2.0), {"x": np.ones(2)})
        ids = [node.id for node in tape.nodes]
        assert ids == sorted(ids)
        assert len(set(ids)) == len(ids)


class TestBackward:
    """Tests for backward()."""

    def test_square_gradient(self):
        """Test d/dx sum(x * x) = 2x."""
        _, grads = ad.value_and_grad(lambda p: ad.sum(p["x"] * p["x"]), {"x": np.array([1.0, 2.0])})
        np.testing.assert_array_equal(grads["x"], [2.0, 4.0])

    def test_constant_gives_zero_gradient(self):
        """Test that a constant output gives a zero gradient."""
        _, grads = ad.value_and_grad(lambda p: 3.0, {"x": np.array([1.0, 2.0])})
        np.testing.assert_array_equal(grads["x"], [0.0, 0.0])

    def test_gradient_shapes_match_inputs(self, rng):
        """Test every gradient has its input's shape."""
        inputs = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,))}

        def builder(p):
            return ad.sum(ad.gelu(np.ones((4, 3)) @ p["w"] + p["b"]))

        _, grads = ad.value_and_grad(builder, inputs)
        assert grads["w"].shape == (3, 2)
        assert grads["b"].shape == (2,)

    def test_requires_grad_subset(self):
        """Test that only requested inputs receive gradients."""
        _, grads = ad.value_and_grad(
            lambda p: ad.sum(p["x"] * p["y"]),
            {"x": np.ones(2), "y": np.ones(2)},
            requires_grad=["x"],
        )
        assert set(grads) == {"x"}

    def test_consumed_tape_raises(self):
        """Test that a tape can only be consumed once."""
        _, tape = ad.forward(lambda p: ad.sum(p["x"]), {"x": np.ones(2)})
        ad.backward(tape)
        with pytest.raises(UsageError, match="consumed"):
            ad.backward(tape)

    def test_tape_without_output_raises(self):
        """Test backward on a tape that forward() did not produce."""
        with pytest.raises(UsageError):
            ad.backward(Tape())

    def test_gradient_disabled_tape_raises(self):
        """Test that evaluation-only tapes cannot be differentiated."""
        _, tape = ad.forward(lambda p: ad.sum(p["x"]), {"x": np.ones(2)}, grad_enabled=False)
        with pytest.raises(UsageError):
            ad.backward(tape)

    def test_least_squares_matches_finite_differences(self, rng):
        """Test ||Wx - y||^2 gradients against central differences."""
        inputs = {
            "w": rng.normal(size=(3, 4)),
            "x": rng.normal(size=(4, 1)),
        }
        y = rng.normal(size=(3, 1))

        def builder(p):
            return ad.sum(ad.square(p["w"] @ p["x"] - y))

        assert ad.grad_check(builder, inputs) <= 1e-6

    def test_fan_out_sums_in_ascending_consumer_order(self):
        """Test a reused input adds its consumers' contributions by ascending node id."""

        def builder(p):
            x = p["x"]
            return ad.sum(x * 1.0 + x * 1e16 + x * -1e16)

        _, grads = ad.value_and_grad(builder, {"x": np.array([1.0])})
        # 1.0 is absorbed by 1e16 first; the reverse order would keep it
        assert grads["x"][0] == (1.0 + 1e16) + -1e16
        assert grads["x"][0] != (-1e16 + 1e16) + 1.0

    def test_linearity(self, rng):
        """Test backward(a f + b g) == a backward(f) + b backward(g)."""
        x = rng.normal(size=(5,))

        def f(p):
            return ad.sum(ad.tanh(p["x"]))

        def g(p):
            return ad.sum(ad.square(p["x"]))

        _, gf = ad.value_and_grad(f, {"x": x})
        _, gg = ad.value_and_grad(g, {"x": x})
        _, combined = ad.value_and_grad(lambda p: f(p) * 2.0 + g(p) * -3.0, {"x": x})
        np.testing.assert_allclose(combined["x"], 2.0 * gf["x"] - 3.0 * gg["x"], atol=1e-12)


class TestGradCheck:
    """Tests for grad_check() and per-op gradient rules."""

    def test_quadratic(self):
        """Test f(x) = x^2 at 3: analytic gradient 6, error below 1e-8."""
        _, grads = ad.value_and_grad(lambda p: ad.sum(ad.square(p["x"])), {"x": np.array(3.0)})
        assert grads["x"] == pytest.approx(6.0)
        assert ad.grad_check(lambda p: ad.sum(ad.square(p["x"])), {"x": np.array(3.0)}) <= 1e-8

    def test_rejects_non_positive_step(self):
        """Test that eps must be positive."""
        with pytest.raises(LeapInputError):
            ad.grad_check(lambda p: ad.sum(p["x"]), {"x": np.ones(1)}, eps=0.0)

    def test_rejects_non_finite_params(self):
        """Test that parameters must be finite."""
        with pytest.raises(LeapInputError):
            ad.grad_check(lambda p: ad.sum(p["x"]), {"x": np.array([np.inf])})

    def test_non_finite_perturbed_loss_raises(self):
        """Test that a perturbation producing a non-finite loss raises NumericError."""
        with pytest.raises(NumericError):
            ad.grad_check(lambda p: ad.sum(ad.log(p["x"])), {"x": np.array([1e-6])}, eps=1e-5)

    @pytest.mark.parametrize("seed", range(20))
    def test_elementwise_ops(self, seed):
        """Test the gradient rules of the elementwise ops on random inputs."""
        rng = np.random.default_rng(seed)
        inputs = {
            "a": rng.normal(size=(2, 3)),
            "b": rng.uniform(0.5, 2.0, size=(2, 3)),
        }

        def builder(p):
            a, b = p["a"], p["b"]
            terms = [
                ad.exp(a * 0.3),
                ad.log(b),
                ad.sqrt(b),
                ad.tanh(a),
                ad.sigmoid(a),
                ad.gelu(a),
                a / b,
                -a - b,
            ]
            return ad.sum(ad.stack(terms))

        assert ad.grad_check(builder, inputs) <= 1e-6

    @pytest.mark.parametrize("seed", range(20))
    def test_structural_ops(self, seed):
        """Test matmul, reshape, transpose, concat, take, pad_rows and the reductions."""
        rng = np.random.default_rng(seed)
        inputs = {
            "x": rng.normal(size=(4, 3)),
            "w": rng.normal(size=(3, 2)),
            "g": rng.normal(size=(3,)),
            "c": rng.normal(size=(3,)),
        }

        def builder(p):
            h = ad.layer_norm(p["x"], p["g"], p["c"]) @ p["w"]
            h = ad.concat([h, ad.take(h, [3, 0, 0])], axis=0)
            h = ad.pad_rows(h, 1, 2).transpose(1, 0).reshape(2, 5, 2)
            scores = ad.log_softmax(h, axis=-1) + ad.softmax(h, axis=1)
            return ad.mean(scores * scores) + ad.sum(ad.logsumexp(h, axis=1))

        assert ad.grad_check(builder, inputs) <= 1e-6

    def test_batched_matmul_broadcast(self, rng):
        """Test matmul broadcasting a 2-D weight over a batch."""
        inputs = {"x": rng.normal(size=(2, 3, 4)), "w": rng.normal(size=(4, 2))}
        assert ad.grad_check(lambda p: ad.sum(ad.tanh(p["x"] @ p["w"])), inputs) <= 1e-6


class TestTensorOps:
    """Tests for op-level error handling."""

    def test_take_out_of_range(self):
        """Test that take rejects out-of-range indices."""
        tape = Tape()
        x = tape.leaf("x", np.ones((2, 2)))
        with pytest.raises(LeapInputError):
            ad.take(x, [2])

    def test_mixing_tapes_raises(self):
        """Test that tensors from different tapes cannot be combined."""
        a = Tape().leaf("a", np.ones(2))
        b = Tape().leaf("b", np.ones(2))
        with pytest.raises(UsageError):
            a + b

    def test_duplicate_leaf_raises(self):
        """Test that an input name can only be registered once."""
        tape = Tape()
        tape.leaf("x", np.ones(1))
        with pytest.raises(UsageError):
            tape.leaf("x", np.ones(1))

    def test_dtype_follows_tape(self):
        """Test that values are stored in the tape's dtype."""
        tape = Tape(dtype=np.float32)
        x = tape.leaf("x", np.ones(2))
        assert (x * 2.0).value.dtype == np.float32
