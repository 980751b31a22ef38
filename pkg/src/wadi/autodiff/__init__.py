"""Reverse-mode differentiation over numpy arrays."""

from __future__ import annotations

from wadi.autodiff.tensor import Tensor, is_grad_enabled, no_grad

__all__ = ["Tensor", "is_grad_enabled", "no_grad"]
