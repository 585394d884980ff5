"""Unit vectors, the normalization map and its Jacobian action.

Batches are plain ``(N, d)`` float arrays in row-major (sample-major)
layout; a single vector is a 1-D array. Validation helpers below enforce
the unit-norm data model at module boundaries.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, DomainError

EPS_NORM = 1e-12
UNIT_TOL = 1e-9


def as_batch(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty (N, d) array, got shape {arr.shape}")
    return arr


def check_unit(x, tol: float = UNIT_TOL) -> np.ndarray:
    """Return ``x`` as a batch after checking every row is unit-norm and d >= 2."""
    arr = as_batch(x)
    if arr.shape[1] < 2:
        raise DimensionMismatchError(f"unit vectors need d >= 2, got d={arr.shape[1]}")
    dev = np.abs(np.linalg.norm(arr, axis=1) - 1.0)
    if np.any(dev > tol):
        raise DomainError(f"rows are not unit vectors (max norm deviation {dev.max():.3g})")
    return arr


def normalize(f):
    """Project ``f`` (vector or batch of rows) onto the unit sphere."""
    f = np.asarray(f, dtype=float)
    norms = np.linalg.norm(f, axis=-1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise DegenerateInputError("cannot normalize a vector with norm <= 1e-12")
    return f / norms


def normalize_backward(f, grad_x):
    """Pull ``dL/dx`` back through ``x = f / |f|``.

    Returns ``(grad_x - x <grad_x, x>) / |f|`` row-wise, which is always
    orthogonal to ``x``.
    """
    f = np.asarray(f, dtype=float)
    grad_x = np.asarray(grad_x, dtype=float)
    if f.shape != grad_x.shape:
        raise DimensionMismatchError(f"shape mismatch: f {f.shape} vs grad {grad_x.shape}")
    norms = np.linalg.norm(f, axis=-1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise DegenerateInputError("cannot differentiate normalization at norm <= 1e-12")
    x = f / norms
    radial = np.sum(grad_x * x, axis=-1, keepdims=True)
    g = (grad_x - x * radial) / norms
    # one projection pass removes the O(eps) radial residue left by rounding
    return g - x * np.sum(g * x, axis=-1, keepdims=True)


def cosine_similarity(a, b):
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1]. Works row-wise on batches.

    Dividing by ``sqrt((a.a)(b.b))`` rather than trusting unit inputs makes a
    vector's similarity with itself exactly 1 despite rounding in its norm.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    denom = np.sqrt(np.sum(a * a, axis=-1) * np.sum(b * b, axis=-1))
    if np.any(~(denom > 0)):
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    out = np.clip(np.sum(a * b, axis=-1) / denom, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, sign-corrected)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def uniform_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def angle_deg(a, b) -> float:
    return float(np.degrees(np.arccos(cosine_similarity(normalize(a), normalize(b)))))
