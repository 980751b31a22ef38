"""AdamW with decoupled weight decay."""

from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING

import numpy as np

from wadi import exceptions

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from wadi.autodiff.tensor import Array, Tensor


class MissingGradientError(exceptions.BadParameterError):
    """Optimizer step with parameters lacking a gradient."""

    def __init__(self, *, names: Sequence[str]) -> None:
        self.names = tuple(names)
        super().__init__(f"parameters without a gradient: {', '.join(self.names)}")


@dataclasses.dataclass(slots=True)
class OptimizerState:
    """Moments and hyper-parameters of one AdamW optimizer."""

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, Array] = dataclasses.field(default_factory=dict)
    exp_avg_sq: dict[str, Array] = dataclasses.field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: OptimizerState) -> None:
    """Apply one AdamW update in place.

    Gradients are left untouched, clearing them is up to the caller.

    Raises:
        MissingGradientError: If any parameter has no gradient.
    """
    if missing := [name for name, param in params.items() if param.grad is None]:
        raise MissingGradientError(names=missing)

    state.step += 1
    bias1 = 1 - state.beta1**state.step
    bias2 = 1 - state.beta2**state.step
    for name, param in params.items():
        assert param.grad is not None  # noqa: S101
        grad = param.grad.data
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)

        m = state.beta1 * m + (1 - state.beta1) * grad
        v = state.beta2 * v + (1 - state.beta2) * grad * grad
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v

        value = param.data
        if state.weight_decay:
            value = value - state.lr * state.weight_decay * value
        value = value - state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        param.assign_(value)


class AdamW:
    """Owns a named parameter set and its optimizer state."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        *,
        lr: float,
        weight_decay: float = 0.01,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adamw_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
