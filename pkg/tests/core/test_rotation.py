"""Test per-column block rotations."""

from __future__ import annotations

import itertools
from typing import TYPE_CHECKING

import numpy as np
import pytest

from wadi import enums
from wadi.adapters import LoRaDAdapter, OddDimensionError, lorad_angles, rotate_fast, rotate_reference
from wadi.adapters.rotation import rotation_matrix
from wadi.autodiff import Tensor
from wadi.autodiff import functional as F  # noqa: N812
from wadi.autodiff.optim import AdamW

if TYPE_CHECKING:
    from collections.abc import Callable

SHAPES = list(itertools.product([2, 4, 8, 64], [1, 5, 33]))


def _fast(weight: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return rotate_fast(Tensor(weight), Tensor(theta)).data


def _random_case(rng: np.random.Generator, d: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal((d, k)), rng.uniform(-np.pi, np.pi, size=(d // 2, k))


def _relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs(actual - expected)) / max(np.max(np.abs(expected)), 1e-300))


@pytest.mark.parametrize(("d", "k"), SHAPES)
def test_fast_matches_reference(d: int, k: int, rng: np.random.Generator) -> None:
    """Test the element-wise path against explicit block-diagonal matrices."""
    for _ in range(17):
        weight, theta = _random_case(rng, d, k)
        assert _relative_error(_fast(weight, theta), rotate_reference(weight, theta)) < 1e-12


def test_hand_rotation() -> None:
    """Test a quarter turn of one column."""
    out = _fast(np.array([[1.0], [0.0]]), np.array([[np.pi / 2]]))
    np.testing.assert_allclose(out, [[0.0], [1.0]], atol=1e-15)


def test_rotation_matrix_is_orthogonal(rng: np.random.Generator) -> None:
    """Test the explicit rotation is block-diagonal and orthogonal."""
    rotation = rotation_matrix(rng.uniform(-np.pi, np.pi, size=4))
    np.testing.assert_allclose(rotation @ rotation.T, np.eye(8), atol=1e-14)
    assert rotation[0, 2] == 0.0


@pytest.mark.parametrize(("d", "k"), SHAPES)
def test_zero_angles_are_identity(d: int, k: int, rng: np.random.Generator) -> None:
    """Test zero angles leave the weight bit-identical."""
    weight = rng.standard_normal((d, k))
    np.testing.assert_array_equal(_fast(weight, np.zeros((d // 2, k))), weight)


def test_inverse(rng: np.random.Generator) -> None:
    """Test rotating by -theta undoes rotating by theta."""
    for _ in range(100):
        weight, theta = _random_case(rng, 8, 5)
        np.testing.assert_allclose(_fast(_fast(weight, theta), -theta), weight, rtol=0, atol=1e-10)


def test_additivity(rng: np.random.Generator) -> None:
    """Test consecutive rotations compose by adding angles."""
    for _ in range(100):
        weight, theta_1 = _random_case(rng, 8, 5)
        theta_2 = rng.uniform(-np.pi, np.pi, size=theta_1.shape)
        np.testing.assert_allclose(
            _fast(_fast(weight, theta_1), theta_2),
            _fast(weight, theta_1 + theta_2),
            rtol=0,
            atol=1e-10,
        )


def test_periodicity(rng: np.random.Generator) -> None:
    """Test angles are periodic in 2 pi."""
    for _ in range(100):
        weight, theta = _random_case(rng, 8, 5)
        np.testing.assert_allclose(_fast(weight, theta + 2 * np.pi), _fast(weight, theta), rtol=0, atol=1e-10)


@pytest.mark.parametrize(("d", "k"), SHAPES)
def test_norm_preservation(d: int, k: int, rng: np.random.Generator) -> None:
    """Test column norms and row-pair norms survive any rotation."""
    weight, theta = _random_case(rng, d, k)
    rotated = _fast(weight, theta)

    np.testing.assert_allclose(np.linalg.norm(rotated, axis=0), np.linalg.norm(weight, axis=0), rtol=1e-9)
    pairs = np.hypot(weight[0::2], weight[1::2])
    np.testing.assert_allclose(np.hypot(rotated[0::2], rotated[1::2]), pairs, rtol=1e-9)


def test_norm_preservation_during_training(rng: np.random.Generator) -> None:
    """Test the merged weight keeps its column norms over 1000 optimizer updates."""
    weight = rng.standard_normal((8, 5))
    adapter = LoRaDAdapter(weight, 2, rng=rng)
    optimizer = AdamW(adapter.parameters(), lr=0.05, weight_decay=0.01)
    base_norms = np.linalg.norm(weight, axis=0)

    for step in range(1000):
        for param in adapter.parameters().values():
            param.grad = Tensor(rng.standard_normal(param.shape))
        optimizer.step()
        if step % 100 == 99:
            merged = adapter.merge()
            np.testing.assert_allclose(np.linalg.norm(merged, axis=0), base_norms, rtol=1e-9)

    assert optimizer.state.step == 1000
    assert np.any(adapter.merge() != weight)


def test_lorad_gradients(rng: np.random.Generator, numeric_grad: Callable[..., np.ndarray]) -> None:
    """Test dA and dB of a rotated-layer MSE against central finite differences."""
    for _ in range(20):
        d, k, r, n = 6, 4, 2, 5
        weight = rng.standard_normal((d, k))
        a0 = rng.standard_normal((d // 2, r))
        b0 = rng.standard_normal((r, k))
        x = rng.standard_normal((k, n))
        y = rng.standard_normal((d, n))

        adapter = LoRaDAdapter(weight, r, rng=rng)
        adapter.load_state({"A": a0, "B": b0})
        F.mse(adapter.forward(Tensor(x)), Tensor(y)).backward()

        def loss(a: np.ndarray, b: np.ndarray) -> float:
            return float(np.mean((rotate_reference(weight, a @ b) @ x - y) ** 2))

        expected_a = numeric_grad(lambda a: loss(a, b0), a0)  # noqa: B023
        expected_b = numeric_grad(lambda b: loss(a0, b), b0)  # noqa: B023
        assert adapter.A.grad is not None
        assert adapter.B.grad is not None
        for actual, expected in ((adapter.A.grad.data, expected_a), (adapter.B.grad.data, expected_b)):
            assert np.linalg.norm(actual - expected) / np.linalg.norm(expected) < 1e-5


def test_angles_are_low_rank(rng: np.random.Generator) -> None:
    """Test the angle matrix is the product of the factors."""
    a = Tensor(rng.standard_normal((4, 2)))
    b = Tensor(rng.standard_normal((2, 7)))
    theta = lorad_angles(a, b)
    assert theta.shape == (4, 7)
    assert np.linalg.matrix_rank(theta.data) == 2


def test_odd_rows() -> None:
    """Test odd row counts cannot be paired."""
    with pytest.raises(OddDimensionError, match="got 3"):
        rotate_reference(np.zeros((3, 2)), np.zeros((1, 2)))
    with pytest.raises(OddDimensionError):
        rotate_fast(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))))


def test_angle_shape_mismatch() -> None:
    """Test the angle matrix must be (d/2, k)."""
    with pytest.raises(F.ShapeMismatchError, match=r"\(4, 2\) and \(2, 3\)"):
        rotate_fast(Tensor(np.zeros((4, 2))), Tensor(np.zeros((2, 3))))


def test_float32_rotation(rng: np.random.Generator) -> None:
    """Test single precision stays single precision."""
    weight, theta = _random_case(rng, 4, 3)
    out = rotate_fast(Tensor(weight.astype(np.float32)), Tensor(theta.astype(np.float32)))
    assert out.dtype is enums.DType.float32
    np.testing.assert_allclose(out.data, rotate_reference(weight, theta), rtol=1e-5, atol=1e-5)
