"""Minimal dense numeric primitives shared by every other module.

Everything is a row-major float64 ndarray.  The helpers here exist so the
rest of the package has one place that owns dtype policy, shape checking,
and the tie-breaking / stabilization conventions:

* 64-bit reals everywhere, no mixed precision,
* argmax ties resolve to the lowest index,
* softmax is log-sum-exp stabilized (subtract the row max).
"""

from __future__ import annotations

import numpy as np

# Alias used in signatures throughout the package.  A Tensor is a float64
# ndarray; shape/rank contracts are enforced by the consuming operation.
Tensor = np.ndarray


class MasonetError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(MasonetError):
    """Operand dimensions do not chain or do not match a contract."""


class DomainError(MasonetError):
    """A value is outside its documented domain (bad kind, bad range)."""


class PreconditionError(MasonetError):
    """A documented operation precondition does not hold."""


class AmbiguityError(MasonetError):
    """The input sits too close to a region boundary to give one answer."""


class StructureError(MasonetError):
    """A network does not have the layer structure the operation needs."""


class DegeneracyError(MasonetError):
    """Numerical rank collapsed below what the algorithm can tolerate."""


class WindowError(MasonetError):
    """An apodization window does not give unit coverage on the interior."""


class DivergenceError(MasonetError):
    """Training loss left the reals; the run is aborted."""


class ValidationError(MasonetError):
    """Bad user-supplied input (files, CLI arguments); exit code 2."""


def as_tensor(x) -> Tensor:
    """Coerce to a float64 array, rejecting non-finite entries."""
    a = np.asarray(x, dtype=np.float64)
    if a.size and not np.all(np.isfinite(a)):
        raise DomainError("non-finite entries are not allowed here")
    return a


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with an explicit inner-dimension check.

    The shared index is accumulated in one deterministic order for a given
    platform/BLAS build, which is what the bit-stability tests rely on.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(m: Tensor, scale: float = 1.0) -> Tensor:
    """Rowwise softmax of scale*m, stabilized by subtracting the row max."""
    if scale <= 0:
        raise DomainError(f"softmax scale must be positive, got {scale}")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ShapeError(f"row_softmax expects a nonempty 2-D matrix, got shape {m.shape}")
    s = scale * m
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def row_argmax(m: Tensor) -> np.ndarray:
    """Per-row index of the maximum; ties go to the lowest index."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] == 0:
        raise ShapeError(f"row_argmax expects a nonempty 2-D matrix, got shape {m.shape}")
    # np.argmax already returns the first (lowest) index on ties.
    return np.argmax(m, axis=1)
