"""Test sample-based distribution metrics."""

from __future__ import annotations

import numpy as np
import pytest

from wadi.distill.metrics import SampleCountMismatchError, coverage, eval_distribution, mmd, wasserstein2


def test_w2_of_identical_sets(rng: np.random.Generator) -> None:
    """Test a set is at distance zero from itself."""
    points = rng.standard_normal((50, 2))
    assert wasserstein2(points, points) == 0.0
    assert wasserstein2(points, points[::-1]) == 0.0


def test_w2_of_translation(rng: np.random.Generator) -> None:
    """Test a translated copy is exactly the translation length away."""
    points = rng.standard_normal((40, 2))
    assert wasserstein2(points, points + [3.0, 4.0]) == pytest.approx(5.0, rel=1e-12)


def test_w2_sample_counts(rng: np.random.Generator) -> None:
    """Test unequal set sizes and empty sets."""
    with pytest.raises(SampleCountMismatchError, match="got 3 and 4"):
        wasserstein2(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)))
    assert wasserstein2(np.zeros((0, 2)), np.zeros((0, 2))) == 0.0


def test_mmd(rng: np.random.Generator) -> None:
    """Test MMD is zero for equal sets and grows with separation."""
    points = rng.standard_normal((60, 2))
    assert mmd(points, points) == 0.0
    near = mmd(points, rng.standard_normal((60, 2)) + 0.1)
    far = mmd(points, rng.standard_normal((60, 2)) + 3.0)
    assert near < far
    assert mmd(points, np.zeros((0, 2))) == 0.0


@pytest.mark.parametrize(
    ("threshold", "expected"),
    [
        pytest.param(0.01, 0.5, id="one-percent"),
        pytest.param(0.005, 1.0, id="half-percent"),
    ],
)
def test_coverage(threshold: float, expected: float, rng: np.random.Generator) -> None:
    """Test modes count only when they receive the threshold share of samples."""
    modes = np.array([[0.0, 0.0], [10.0, 0.0]])
    samples = 0.1 * rng.standard_normal((200, 2))
    samples[0] = [10.0, 0.0]
    assert coverage(samples, modes, threshold) == expected


def test_coverage_of_nothing() -> None:
    """Test an empty sample set covers no mode."""
    assert coverage(np.zeros((0, 2)), np.zeros((3, 2))) == 0.0


def test_eval_distribution(rng: np.random.Generator) -> None:
    """Test coverage is only reported when modes are given."""
    points = rng.standard_normal((20, 2))
    metrics = eval_distribution(points, points)
    assert metrics.w2 == 0.0
    assert metrics.coverage is None
    assert eval_distribution(points, points, modes=np.zeros((1, 2))).coverage == 1.0
