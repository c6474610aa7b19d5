"""Scalar loss primitives."""

from __future__ import annotations

from ..exceptions import ContractViolation
from .autodiff import Tensor, square, sub, tmean, wrap


def mse(a, b) -> Tensor:
    """Mean over all entries of (a - b)^2; shapes must match exactly."""
    a, b = wrap(a), wrap(b)
    if a.shape != b.shape:
        raise ContractViolation(f"mse shape mismatch: {a.shape} vs {b.shape}")
    return tmean(square(sub(a, b)))


def mse_rows(a, b) -> Tensor:
    """Per-row mean squared error for 2-D inputs; returns a length-n tensor."""
    a, b = wrap(a), wrap(b)
    if a.shape != b.shape or a.ndim != 2:
        raise ContractViolation(
            f"mse_rows expects matching 2-D shapes, got {a.shape} vs {b.shape}"
        )
    return tmean(square(sub(a, b)), axis=1)
