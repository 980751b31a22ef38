"""Sample-based distances between point sets."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from wadi import exceptions
from wadi.diffusion.datasets import assign_modes
from wadi.schemas.reports import DistributionMetrics

if TYPE_CHECKING:
    from wadi.autodiff.tensor import Array

COVERAGE_THRESHOLD = 0.01


class SampleCountMismatchError(exceptions.MismatchError):
    def __init__(self, *, n_a: int, n_b: int) -> None:
        super().__init__(f"W2 needs equally many samples on both sides, got {n_a} and {n_b}")


def wasserstein2(samples_a: Array, samples_b: Array) -> float:
    """Exact 2-Wasserstein distance between two equally sized empirical measures.

    Raises:
        SampleCountMismatchError: If the sets differ in size.
    """
    if samples_a.shape[0] != samples_b.shape[0]:
        raise SampleCountMismatchError(n_a=samples_a.shape[0], n_b=samples_b.shape[0])
    if samples_a.shape[0] == 0:
        return 0.0
    cost = cdist(samples_a, samples_b, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(np.mean(cost[rows, cols])))


def mmd(samples_a: Array, samples_b: Array) -> float:
    """Square root of the biased MMD estimate with a Gaussian kernel.

    The bandwidth is the median pairwise distance of the pooled samples.
    """
    if samples_a.shape[0] == 0 or samples_b.shape[0] == 0:
        return 0.0
    pooled = np.concatenate([samples_a, samples_b])
    distances = pdist(pooled)
    bandwidth = float(np.median(distances)) if distances.size else 1.0
    if bandwidth == 0:
        bandwidth = 1.0

    def kernel_mean(x: Array, y: Array) -> float:
        return float(np.mean(np.exp(-cdist(x, y, metric="sqeuclidean") / (2 * bandwidth**2))))

    estimate = kernel_mean(samples_a, samples_a) + kernel_mean(samples_b, samples_b) - 2 * kernel_mean(samples_a, samples_b)
    return float(np.sqrt(max(estimate, 0.0)))


def coverage(samples: Array, modes: Array, threshold: float = COVERAGE_THRESHOLD) -> float:
    """Fraction of modes receiving at least ``threshold`` of the samples by nearest-mode assignment."""
    if samples.shape[0] == 0:
        return 0.0
    counts = np.bincount(assign_modes(samples, modes), minlength=modes.shape[0])
    return float(np.mean(counts / samples.shape[0] >= threshold))


def eval_distribution(
    samples_a: Array,
    samples_b: Array,
    modes: Array | None = None,
    *,
    threshold: float = COVERAGE_THRESHOLD,
) -> DistributionMetrics:
    """W2 and MMD between the sets, and mode coverage of ``samples_a`` when modes are known."""
    return DistributionMetrics(
        w2=wasserstein2(samples_a, samples_b),
        mmd=mmd(samples_a, samples_b),
        coverage=None if modes is None else coverage(samples_a, modes, threshold),
    )
