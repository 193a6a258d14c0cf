"""
Dense tensors with a reverse-mode gradient tape.

A ``Tape`` records every op applied to its ``Tensor`` values as an
append-only list of nodes with strictly increasing ids. ``backward`` walks
the nodes in decreasing id order (a valid reverse topological order) and
accumulates vector-Jacobian products into the leaves. A node with several
consumers sums their contributions in ascending consumer id.

Every op checks its output for NaN/Inf and raises ``NumericError`` with the
node id instead of propagating the value.

Examples:
    >>> from leaptt import autodiff as ad
    >>> def builder(inputs):
    ...     x = inputs["x"]
    ...     return ad.sum(x * x)
    >>> out, tape = forward(builder, {"x": np.array([1.0, 2.0])})
    >>> out.item()
    5.0
    >>> backward(tape)["x"]
    array([2., 4.])
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from leaptt.errors import LeapInputError, NumericError, ShapeError, UsageError

ArrayLike = Union[np.ndarray, float, int]
# maps the output gradient to one gradient per input (None = no contribution)
VJP = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_GELU_K = math.sqrt(2.0 / math.pi)


@dataclass
class TapeNode:
    """
    One recorded op.

    Attributes:
        id: Position on the tape; strictly increasing
        op: Op kind, e.g. "matmul"
        inputs: Node ids of the operands
        value: Cached forward value
        vjp: Local gradient rule, None for leaves and constants
    """

    id: int
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    vjp: Optional[VJP] = None
    requires_grad: bool = False


class Tape:
    """
    Append-only record of one forward pass.

    A tape is single-threaded. Use one tape per thread over separate parameter
    copies when evaluating in parallel.

    Args:
        dtype: Floating dtype of every value on the tape (float64 in the test profile)
        grad_enabled: When False, ops compute values without recording gradient rules
    """

    def __init__(self, dtype: Union[np.dtype, type] = np.float64, grad_enabled: bool = True):
        self.dtype = np.dtype(dtype)
        self.grad_enabled = grad_enabled
        self.nodes: List[TapeNode] = []
        self.leaves: Dict[str, int] = {}
        self.output: Optional[int] = None
        self.consumed = False
        self._next_id = 0

    def __len__(self) -> int:
        return self._next_id

    def _append(self, node: TapeNode) -> None:
        if self.grad_enabled:
            self.nodes.append(node)

    def leaf(self, name: str, value: ArrayLike, requires_grad: bool = True) -> "Tensor":
        """Registers a named input."""
        if name in self.leaves:
            raise UsageError(f"Input '{name}' is already on the tape")

        array = np.array(value, dtype=self.dtype)
        node_id = self._new_id()
        if not np.isfinite(array).all():
            raise NumericError(f"Non-finite value in input '{name}'", node_id=node_id)

        node = TapeNode(node_id, "leaf", (), array, None, requires_grad and self.grad_enabled)
        self._append(node)
        self.leaves[name] = node_id
        return Tensor(self, node_id, array, node.requires_grad)

    def constant(self, value: ArrayLike) -> "Tensor":
        """Wraps a value that never receives a gradient."""
        array = np.array(value, dtype=self.dtype)
        node_id = self._new_id()
        if not np.isfinite(array).all():
            raise NumericError("Non-finite constant", node_id=node_id)
        self._append(TapeNode(node_id, "constant", (), array))
        return Tensor(self, node_id, array, False)

    def record(
        self,
        op: str,
        inputs: Sequence["Tensor"],
        value: np.ndarray,
        vjp: VJP,
    ) -> "Tensor":
        """
        Appends the result of an op.

        Args:
            op: Op kind, used in error messages
            inputs: Operand tensors (all on this tape)
            value: Forward result
            vjp: Function from the output gradient to one gradient per input

        Raises:
            NumericError: If value contains NaN or Inf
        """
        for tensor in inputs:
            if tensor.tape is not self:
                raise UsageError(f"Op '{op}' mixes tensors from different tapes")

        value = np.asarray(value, dtype=self.dtype)
        node_id = self._new_id()
        if not np.isfinite(value).all():
            raise NumericError(f"Non-finite value produced by '{op}'", node_id=node_id)

        requires_grad = self.grad_enabled and any(t.requires_grad for t in inputs)
        node = TapeNode(
            node_id,
            op,
            tuple(t.node_id for t in inputs),
            value,
            vjp if requires_grad else None,
            requires_grad,
        )
        self._append(node)
        return Tensor(self, node_id, value, requires_grad)

    def _new_id(self) -> int:
        node_id = self._next_id
        self._next_id += 1
        return node_id


class Tensor:
    """A value on a tape. Arithmetic operators record ops on the owning tape."""

    __slots__ = ("tape", "node_id", "value", "requires_grad")

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, tape: Tape, node_id: int, value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.node_id = node_id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return int(self.value.size)

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError("item", [self.shape], "only scalars convert to float")
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def __repr__(self) -> str:
        return f"Tensor(id={self.node_id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)


# ============================================================================
# Helpers
# ============================================================================


def _lift(x: Union[Tensor, ArrayLike], tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tape.constant(x)


def _tape_of(*operands) -> Tape:
    for operand in operands:
        if isinstance(operand, Tensor):
            return operand.tape
    raise UsageError("At least one operand must be a Tensor")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sums a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(op, [a.shape, b.shape]) from None


# ============================================================================
# Elementwise arithmetic
# ============================================================================


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        "add",
        (a, b),
        a.value + b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        "sub",
        (a, b),
        a.value - b.value,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return tape.record(
        "mul",
        (a, b),
        av * bv,
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _broadcast_shape("div", a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericError("Division by zero in 'div'", node_id=len(tape))
    out = av / bv
    return tape.record(
        "div",
        (a, b),
        out,
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return a.tape.record("neg", (a,), -a.value, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return a.tape.record("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    av = a.value
    if np.any(av <= 0):
        raise NumericError("Logarithm of a non-positive value", node_id=len(a.tape))
    return a.tape.record("log", (a,), np.log(av), lambda g: (g / av,))


def sqrt(a: Tensor) -> Tensor:
    av = a.value
    if np.any(av <= 0):
        raise NumericError("Square root of a non-positive value", node_id=len(a.tape))
    out = np.sqrt(av)
    return a.tape.record("sqrt", (a,), out, lambda g: (g * 0.5 / out,))


def square(a: Tensor) -> Tensor:
    av = a.value
    return a.tape.record("square", (a,), av * av, lambda g: (2.0 * g * av,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return a.tape.record("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so exp never overflows
    av = a.value
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return a.tape.record("sigmoid", (a,), out, lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.value
    inner = _GELU_K * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        d_inner = _GELU_K * (1.0 + 3.0 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return a.tape.record("gelu", (a,), out, vjp)


# ============================================================================
# Linear algebra and shape ops
# ============================================================================


def matmul(a, b) -> Tensor:
    """
    Matrix product over the last two axes; leading axes broadcast.

    Both operands must have at least two dimensions.
    """
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", [a.shape, b.shape])
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError("matmul", [a.shape, b.shape]) from None

    av, bv = a.value, b.value

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return (_unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape))

    return tape.record("matmul", (a, b), out, vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", [a.shape, shape]) from None
    original = a.shape
    return a.tape.record("reshape", (a,), out, lambda g: (g.reshape(original),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", [a.shape], f"bad axes {axes}")
    inverse = tuple(np.argsort(axes))
    return a.tape.record(
        "transpose", (a,), np.transpose(a.value, axes), lambda g: (np.transpose(g, inverse),)
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise UsageError("concat needs at least one tensor")
    tape = tensors[0].tape
    try:
        out = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", [t.shape for t in tensors]) from None

    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return tape.record("concat", tuple(tensors), out, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else len(shape) + axis + 1, 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def take(a: Tensor, indices: Union[np.ndarray, Sequence[int]], axis: int = 0) -> Tensor:
    """
    Gathers slices of ``a`` along axis 0 (rows), e.g. embedding lookup.

    The result has shape ``indices.shape + a.shape[1:]``.
    """
    if axis != 0:
        raise UsageError("take gathers along axis 0 only; transpose first")
    index = np.asarray(indices, dtype=np.int64)
    rows = a.shape[0]
    if index.size and (index.min() < -rows or index.max() >= rows):
        raise LeapInputError(f"take: index out of range for {rows} rows")

    shape = a.shape

    def vjp(g):
        grad = np.zeros(shape, dtype=g.dtype)
        np.add.at(grad, index, g)
        return (grad,)

    return a.tape.record("take", (a,), a.value[index], vjp)


def pad_rows(a: Tensor, before: int, after: int) -> Tensor:
    """Zero-pads a tensor along axis 0."""
    if before == 0 and after == 0:
        return a
    parts = []
    if before:
        parts.append(a.tape.constant(np.zeros((before,) + a.shape[1:])))
    parts.append(a)
    if after:
        parts.append(a.tape.constant(np.zeros((after,) + a.shape[1:])))
    return concat(parts, axis=0)


# ============================================================================
# Reductions and normalizations
# ============================================================================


Axis = Optional[Union[int, Tuple[int, ...]]]


def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record("sum", (a,), out, vjp)


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def _stable_logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(x, axis=axis, keepdims=True)
    return peak + np.log(np.sum(np.exp(x - peak), axis=axis, keepdims=True))


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Log-sum-exp with max subtraction; never returns -inf for finite input."""
    lse = _stable_logsumexp(a.value, axis)
    weights = np.exp(a.value - lse)
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return a.tape.record("logsumexp", (a,), out, vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = np.exp(a.value - _stable_logsumexp(a.value, axis))

    def vjp(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return a.tape.record("softmax", (a,), out, vjp)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    out = a.value - _stable_logsumexp(a.value, axis)
    probs = np.exp(out)

    def vjp(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return a.tape.record("log_softmax", (a,), out, vjp)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalizes over the last axis, then applies a learned gain and bias."""
    if gain.shape != (a.shape[-1],) or bias.shape != (a.shape[-1],):
        raise ShapeError("layer_norm", [a.shape, gain.shape, bias.shape])

    x = a.value
    centered = x - x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt((centered**2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * rstd
    gv = gain.value
    out = xhat * gv + bias.value

    def vjp(g):
        gxhat = g * gv
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return (gx, np.sum(g * xhat, axis=lead), np.sum(g, axis=lead))

    return a.tape.record("layer_norm", (a, gain, bias), out, vjp)


# ============================================================================
# Forward / backward drivers
# ============================================================================

GraphBuilder = Callable[[Dict[str, Tensor]], Tensor]


def forward(
    builder: GraphBuilder,
    inputs: Dict[str, ArrayLike],
    dtype: Union[np.dtype, type] = np.float64,
    requires_grad: Optional[Iterable[str]] = None,
    grad_enabled: bool = True,
) -> Tuple[Tensor, Tape]:
    """
    Runs a graph builder on named inputs and records the tape.

    Args:
        builder: Function from named input tensors to a scalar loss tensor
        inputs: Named input arrays
        dtype: Value dtype (float64 for the test profile)
        requires_grad: Names that receive gradients; defaults to all inputs
        grad_enabled: Record gradient rules (False for evaluation-only passes)

    Returns:
        (scalar output tensor, tape)

    Raises:
        ShapeError: If the builder returns a non-scalar
        NumericError: If any intermediate value is non-finite
    """
    tape = Tape(dtype=dtype, grad_enabled=grad_enabled)
    wanted = set(inputs) if requires_grad is None else set(requires_grad)
    named = {name: tape.leaf(name, value, name in wanted) for name, value in inputs.items()}

    out = builder(named)
    if not isinstance(out, Tensor):
        out = tape.constant(out)
    if out.size != 1:
        raise ShapeError("forward", [out.shape], "builder must return a scalar")

    tape.output = out.node_id
    return out, tape


def backward(tape: Tape) -> Dict[str, np.ndarray]:
    """
    Reverse pass over a tape produced by ``forward``.

    Returns:
        Gradient for every input that requires one, each shaped like its input;
        inputs the output does not depend on get zeros.

    Raises:
        UsageError: If the tape was already consumed or has no scalar output
    """
    if tape.consumed:
        raise UsageError("Tape already consumed by a previous backward pass")
    if tape.output is None:
        raise UsageError("Tape has no output; build it with forward()")
    if not tape.grad_enabled:
        raise UsageError("Tape was recorded with gradients disabled")
    tape.consumed = True

    by_id = {node.id: node for node in tape.nodes}
    output = by_id[tape.output]
    # contributions per node, appended in decreasing consumer id
    pending: Dict[int, List[np.ndarray]] = {tape.output: [np.ones_like(output.value)]}

    def total(node_id: int) -> Optional[np.ndarray]:
        parts = pending.pop(node_id, None)
        if not parts:
            return None
        summed = np.array(parts[-1], dtype=tape.dtype)
        for part in reversed(parts[:-1]):
            summed = summed + part
        return summed

    for node in reversed(tape.nodes):
        if node.vjp is None:
            continue
        g = total(node.id)
        if g is None:
            continue
        for input_id, input_grad in zip(node.inputs, node.vjp(g)):
            if input_grad is None or not by_id[input_id].requires_grad:
                continue
            pending.setdefault(input_id, []).append(input_grad)

    result: Dict[str, np.ndarray] = {}
    for name, node_id in tape.leaves.items():
        node = by_id[node_id]
        if not node.requires_grad:
            continue
        g = total(node_id)
        result[name] = g if g is not None else np.zeros_like(node.value)

    # drop cached values; the tape cannot be replayed
    tape.nodes = []
    return result


def evaluate(builder: GraphBuilder, inputs: Dict[str, ArrayLike], dtype=np.float64) -> float:
    """Forward value only, without recording gradient rules."""
    out, _ = forward(builder, inputs, dtype=dtype, grad_enabled=False)
    return out.item()


def value_and_grad(
    builder: GraphBuilder,
    inputs: Dict[str, ArrayLike],
    dtype=np.float64,
    requires_grad: Optional[Iterable[str]] = None,
) -> Tuple[float, Dict[str, np.ndarray]]:
    out, tape = forward(builder, inputs, dtype=dtype, requires_grad=requires_grad)
    return out.item(), backward(tape)


def grad_check(
    builder: GraphBuilder,
    params: Dict[str, ArrayLike],
    eps: float = 1e-5,
) -> float:
    """
    Compares analytic gradients with central finite differences.

    Returns:
        max over every coordinate of |analytic - numeric| / max(1, |numeric|)

    Raises:
        LeapInputError: If eps is not positive or params are non-finite
        NumericError: If the loss is non-finite at a perturbed point
    """
    if eps <= 0:
        raise LeapInputError(f"grad_check step must be > 0, got: {eps}")

    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    for name, value in base.items():
        if not np.isfinite(value).all():
            raise LeapInputError(f"grad_check: parameter '{name}' is not finite")

    _, analytic = value_and_grad(builder, base)

    worst = 0.0
    for name, value in base.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            try:
                flat[i] = original + eps
                plus = evaluate(builder, base)
                flat[i] = original - eps
                minus = evaluate(builder, base)
            except NumericError as e:
                raise NumericError(
                    f"grad_check: non-finite loss perturbing '{name}'[{i}]: {e.base_message}",
                    node_id=e.node_id,
                ) from e
            finally:
                flat[i] = original

            numeric = (plus - minus) / (2.0 * eps)
            error = abs(grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, error)

    return worst
