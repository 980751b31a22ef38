"""Test tensors, differentiable operations and AdamW."""

from __future__ import annotations

import math
from typing import TYPE_CHECKING

import numpy as np
import pytest

from wadi import enums, exceptions
from wadi.autodiff import Tensor, is_grad_enabled, no_grad
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.optim import AdamW, MissingGradientError, OptimizerState, adamw_step
from wadi.autodiff.tensor import (
    AssignmentError,
    GraphReleasedError,
    NonScalarBackwardError,
    UnsupportedDTypeError,
    dtype_of,
)

if TYPE_CHECKING:
    from collections.abc import Callable


def test_matmul_identity(rng: np.random.Generator) -> None:
    """Test the identity is neutral."""
    m = rng.standard_normal((2, 2))
    out = F.matmul(Tensor(np.eye(2)), Tensor(m))
    np.testing.assert_array_equal(out.data, m)


def test_matmul_hand_arithmetic() -> None:
    """Test a product computed by hand."""
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_gradient(rng: np.random.Generator, numeric_grad: Callable[..., np.ndarray]) -> None:
    """Test the gradient of sum(a @ b) in a against ones @ b.T and finite differences."""
    a_data = rng.standard_normal((5, 4))
    b_data = rng.standard_normal((4, 3))
    a = Tensor(a_data, requires_grad=True)
    b = Tensor(b_data, requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.matmul(a, b)).backward()

    assert a.grad is not None
    assert b.grad is not None
    np.testing.assert_allclose(a.grad.data, np.ones((5, 3)) @ b_data.T, rtol=1e-12)
    expected = numeric_grad(lambda x: float(np.sum(x @ b_data)), a_data)
    np.testing.assert_allclose(a.grad.data, expected, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(b.grad.data, a_data.T @ np.ones((5, 3)), rtol=1e-12)


def test_matmul_shape_mismatch() -> None:
    """Test the error names both shapes."""
    with pytest.raises(F.ShapeMismatchError, match=r"\(2, 3\) and \(2, 3\)"):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_shape_mismatch_is_bad_parameter() -> None:
    """Test shape errors belong to the bad-parameter category."""
    with pytest.raises(exceptions.BadParameterError):
        F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))


@pytest.mark.parametrize(
    ("op", "expected"),
    [
        pytest.param(enums.EwOp.sin, 0.0, id="sin"),
        pytest.param(enums.EwOp.cos, 1.0, id="cos"),
        pytest.param(enums.EwOp.square, 0.0, id="square"),
    ],
)
def test_ew_unary_at_zero(op: enums.EwOp, expected: float) -> None:
    """Test unary element-wise operations at zero."""
    out = F.ew(op, Tensor(np.zeros((3, 2))))
    np.testing.assert_array_equal(out.data, np.full((3, 2), expected))


def test_ew_binary() -> None:
    """Test binary element-wise operations by name."""
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    np.testing.assert_array_equal(F.ew(enums.EwOp.add, a, b).data, [4.0, 7.0])
    np.testing.assert_array_equal(F.ew(enums.EwOp.sub, a, b).data, [-2.0, -3.0])
    np.testing.assert_array_equal(F.ew(enums.EwOp.mul, a, b).data, [3.0, 10.0])
    np.testing.assert_array_equal(F.ew(enums.EwOp.scale, a, 0.5).data, [0.5, 1.0])


def test_ew_arity() -> None:
    """Test operand counts are checked."""
    with pytest.raises(F.ArityError, match="sin takes 1 operand"):
        F.ew(enums.EwOp.sin, Tensor([1.0]), Tensor([1.0]))


def test_mul_gradient(rng: np.random.Generator, numeric_grad: Callable[..., np.ndarray]) -> None:
    """Test d(a * b)/da = b."""
    a_data = rng.standard_normal((3, 3))
    b_data = rng.standard_normal((3, 3))
    a = Tensor(a_data, requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.mul(a, Tensor(b_data))).backward()

    assert a.grad is not None
    np.testing.assert_allclose(a.grad.data, b_data, rtol=1e-12)
    expected = numeric_grad(lambda x: float(np.sum(x * b_data)), a_data)
    np.testing.assert_allclose(a.grad.data, expected, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize(
    ("fn", "reference"),
    [
        pytest.param(F.sin, np.sin, id="sin"),
        pytest.param(F.cos, np.cos, id="cos"),
        pytest.param(F.square, np.square, id="square"),
        pytest.param(F.silu, lambda x: x / (1 + np.exp(-x)), id="silu"),
    ],
)
def test_unary_gradients(
    fn: Callable[[Tensor], Tensor],
    reference: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator,
    numeric_grad: Callable[..., np.ndarray],
) -> None:
    """Test unary gradients against finite differences."""
    data = rng.standard_normal((4, 3))
    x = Tensor(data, requires_grad=True)
    F.reduce(enums.ReduceOp.sum, fn(x)).backward()

    assert x.grad is not None
    expected = numeric_grad(lambda v: float(np.sum(reference(v))), data)
    np.testing.assert_allclose(x.grad.data, expected, rtol=1e-5, atol=1e-8)


def test_broadcast_error() -> None:
    """Test shapes that are neither equal nor scalar are rejected."""
    with pytest.raises(F.BroadcastError, match=r"\(2, 3\) and \(3, 2\)"):
        F.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_scalar_operand_gradient() -> None:
    """Test a 0-d operand receives the summed gradient."""
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    c = Tensor(2.0, requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.mul(x, c)).backward()

    assert c.grad is not None
    assert c.grad.shape == ()
    assert c.grad.item() == 6.0


def test_python_scalar_operands() -> None:
    """Test python floats combine with tensors on either side."""
    x = Tensor([1.0, 2.0])
    np.testing.assert_array_equal((x + 1.0).data, [2.0, 3.0])
    np.testing.assert_array_equal((1.0 - x).data, [0.0, -1.0])
    np.testing.assert_array_equal((2.0 * x).data, [2.0, 4.0])
    np.testing.assert_array_equal((x / 2.0).data, [0.5, 1.0])
    np.testing.assert_array_equal((-x).data, [-1.0, -2.0])


def test_dtype_mismatch() -> None:
    """Test float32 and float64 do not mix."""
    a = Tensor(np.ones(2, dtype=np.float32))
    b = Tensor(np.ones(2))
    assert a.dtype is enums.DType.float32
    with pytest.raises(F.DTypeMismatchError):
        F.add(a, b)


def test_unsupported_dtype() -> None:
    """Test integer storage is rejected by name."""
    with pytest.raises(UnsupportedDTypeError, match="int64"):
        dtype_of(np.array([1, 2], dtype=np.int64))


@pytest.mark.parametrize(
    ("op", "axis", "expected"),
    [
        pytest.param(enums.ReduceOp.sum, None, 10.0, id="sum"),
        pytest.param(enums.ReduceOp.mean, None, 2.5, id="mean"),
        pytest.param(enums.ReduceOp.l2norm, None, math.sqrt(30.0), id="l2norm"),
        pytest.param(enums.ReduceOp.sum, 0, [4.0, 6.0], id="sum-axis-0"),
        pytest.param(enums.ReduceOp.l2norm, 0, [math.sqrt(10.0), math.sqrt(20.0)], id="l2norm-axis-0"),
    ],
)
def test_reduce_values(op: enums.ReduceOp, axis: int | None, expected: float | list[float]) -> None:
    """Test reductions over all elements and over one axis."""
    out = F.reduce(op, Tensor([[1.0, 2.0], [3.0, 4.0]]), axis)
    np.testing.assert_allclose(out.data, expected, rtol=1e-15)


@pytest.mark.parametrize("op", list(enums.ReduceOp))
@pytest.mark.parametrize("axis", [None, 0, 1, -1])
def test_reduce_gradients(
    op: enums.ReduceOp,
    axis: int | None,
    rng: np.random.Generator,
    numeric_grad: Callable[..., np.ndarray],
) -> None:
    """Test reduction gradients against finite differences."""
    data = rng.standard_normal((3, 4))
    weights = rng.standard_normal(F.reduce(op, Tensor(data), axis).shape)

    def value(x: np.ndarray) -> float:
        return float(np.sum(F.reduce(op, Tensor(x), axis).data * weights))

    x = Tensor(data, requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.mul(F.reduce(op, x, axis), Tensor(weights))).backward()

    assert x.grad is not None
    np.testing.assert_allclose(x.grad.data, numeric_grad(value, data), rtol=1e-5, atol=1e-8)


def test_l2norm_of_zeros_has_zero_gradient() -> None:
    """Test the norm gradient is zero, not NaN, at the origin."""
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    F.reduce(enums.ReduceOp.l2norm, x).backward()

    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, np.zeros((2, 3)))


def test_reduce_invalid_axis() -> None:
    """Test out-of-range axes are rejected."""
    with pytest.raises(F.InvalidAxisError, match="axis 2 is out of range"):
        F.reduce(enums.ReduceOp.sum, Tensor(np.zeros((2, 2))), 2)


def test_gradients_accumulate() -> None:
    """Test two backward passes add into the leaf gradient."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        F.reduce(enums.ReduceOp.sum, F.scale(x, 3.0)).backward()

    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, [6.0, 6.0])


def test_shared_subexpression() -> None:
    """Test a tensor used twice receives both contributions."""
    x = Tensor([3.0], requires_grad=True)
    y = F.mul(x, x)
    F.reduce(enums.ReduceOp.sum, F.add(y, x)).backward()

    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, [7.0])


def test_backward_needs_scalar() -> None:
    """Test backward refuses non-scalar outputs."""
    with pytest.raises(NonScalarBackwardError):
        F.scale(Tensor([1.0, 2.0], requires_grad=True), 2.0).backward()


def test_backward_releases_graph() -> None:
    """Test a second backward through a released history fails, unless retained."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = F.reduce(enums.ReduceOp.sum, F.square(x))
    loss.backward(retain_graph=True)
    loss.backward()

    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, [4.0, 8.0])
    with pytest.raises(GraphReleasedError):
        loss.backward()


def test_released_intermediate_in_new_graph() -> None:
    """Test reusing an intermediate of a released history fails instead of dropping its gradient."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = F.square(x)
    F.reduce(enums.ReduceOp.sum, y).backward()
    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, [2.0, 4.0])

    with pytest.raises(GraphReleasedError):
        F.reduce(enums.ReduceOp.sum, F.scale(y, 3.0)).backward()
    np.testing.assert_array_equal(x.grad.data, [2.0, 4.0])


def test_no_grad() -> None:
    """Test nothing is recorded inside no_grad."""
    x = Tensor([1.0], requires_grad=True)
    assert is_grad_enabled()
    with no_grad():
        assert not is_grad_enabled()
        y = F.sin(x)
    assert is_grad_enabled()
    assert not y.requires_grad
    assert y.is_leaf


def test_tensors_are_read_only() -> None:
    """Test tensor storage cannot be written in place."""
    x = Tensor([1.0, 2.0])
    with pytest.raises(ValueError, match="read-only"):
        x.data[0] = 5.0


def test_assign_bumps_version() -> None:
    """Test assignment replaces values and counts versions."""
    x = Tensor([1.0, 2.0])
    x.assign_([3.0, 4.0])
    assert x.version == 1
    np.testing.assert_array_equal(x.numpy(), [3.0, 4.0])
    with pytest.raises(AssignmentError):
        x.assign_([1.0])


def test_take_accumulates_repeated_rows() -> None:
    """Test gathering the same row twice doubles its gradient."""
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.take(table, [0, 0, 2])).backward()

    assert table.grad is not None
    np.testing.assert_array_equal(table.grad.data, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_interleave_rows_gradient(rng: np.random.Generator) -> None:
    """Test interleaving routes gradients back to the right rows."""
    even = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    odd = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    out = F.interleave_rows(even, odd)
    np.testing.assert_array_equal(out.data[0::2], even.data)
    np.testing.assert_array_equal(out.data[1::2], odd.data)

    weights = np.arange(12.0).reshape(4, 3)
    F.reduce(enums.ReduceOp.sum, F.mul(out, Tensor(weights))).backward()
    assert even.grad is not None
    assert odd.grad is not None
    np.testing.assert_array_equal(even.grad.data, weights[0::2])
    np.testing.assert_array_equal(odd.grad.data, weights[1::2])


def test_broadcast_to_gradient() -> None:
    """Test broadcasting sums gradients over the repeated axis."""
    x = Tensor([[1.0, 2.0, 3.0]], requires_grad=True)
    F.reduce(enums.ReduceOp.sum, F.broadcast_to(x, (4, 3))).backward()

    assert x.grad is not None
    np.testing.assert_array_equal(x.grad.data, [[4.0, 4.0, 4.0]])
    with pytest.raises(F.BroadcastError):
        F.broadcast_to(x, (4, 2))


def test_concat_gradient() -> None:
    """Test concatenation splits gradients by part."""
    a = Tensor(np.ones((1, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    out = F.concat([a, b], axis=0)
    assert out.shape == (3, 2)
    F.reduce(enums.ReduceOp.sum, F.mul(out, Tensor(np.arange(6.0).reshape(3, 2)))).backward()

    assert a.grad is not None
    assert b.grad is not None
    np.testing.assert_array_equal(a.grad.data, [[0.0, 1.0]])
    np.testing.assert_array_equal(b.grad.data, [[2.0, 3.0], [4.0, 5.0]])


def test_mse() -> None:
    """Test the mean squared error over all elements."""
    out = F.mse(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor(np.zeros((2, 2))))
    assert out.item() == 7.5


def test_adamw_matches_hand_computation() -> None:
    """Test one AdamW step against the closed form."""
    p = Tensor([1.0], requires_grad=True)
    optimizer = AdamW({"p": p}, lr=0.1, weight_decay=0.01)
    F.reduce(enums.ReduceOp.sum, F.scale(p, 0.5)).backward()
    optimizer.step()

    m_hat = (0.1 * 0.5) / 0.1
    v_hat = (0.001 * 0.25) / 0.001
    expected = 1.0 - 0.1 * 0.01 * 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert p.item() == pytest.approx(expected, rel=1e-12)
    assert optimizer.state.step == 1


def test_adamw_two_steps() -> None:
    """Test bias correction over two steps with a constant gradient."""
    state = OptimizerState(lr=0.01)
    p = Tensor([0.0, 1.0])
    for step in (1, 2):
        p.grad = Tensor([1.0, -2.0])
        adamw_step({"p": p}, state)
        assert state.step == step

    # constant gradients make the bias-corrected ratio exactly sign(g)
    np.testing.assert_allclose(p.data, [-0.02, 1.02], rtol=1e-6)
    assert set(state.exp_avg) == {"p"}


def test_adamw_missing_gradient() -> None:
    """Test parameters without gradients are reported by name."""
    optimizer = AdamW({"weight": Tensor([1.0], requires_grad=True)}, lr=0.1)
    with pytest.raises(MissingGradientError, match="weight"):
        optimizer.step()
    assert optimizer.state.step == 0


def test_adamw_zero_grad() -> None:
    """Test clearing gradients."""
    p = Tensor([1.0], requires_grad=True)
    optimizer = AdamW({"p": p}, lr=0.1)
    F.reduce(enums.ReduceOp.sum, p).backward()
    optimizer.zero_grad()
    assert p.grad is None
