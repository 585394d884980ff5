"""Single von Mises-Fisher component: density, fitting and sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .directional import EPS_NORM, UNIT_TOL, as_batch, check_unit
from .errors import DegenerateInputError, DimensionMismatchError, DomainError
from .special import log_c_d, mean_resultant_ratio, mean_resultant_ratio_derivative

KAPPA_MAX = 1e5
RBAR_MAX = 1.0 - 1e-9


@dataclass(frozen=True)
class VmfComponent:
    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size < 2:
            raise DimensionMismatchError("mean direction needs d >= 2")
        if abs(np.linalg.norm(mu) - 1.0) > UNIT_TOL:
            raise DomainError("mean direction must be a unit vector")
        kappa = float(self.kappa)
        if not (math.isfinite(kappa) and kappa >= 0):
            raise DomainError(f"kappa must be finite and >= 0, got {kappa}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)

    @property
    def dim(self) -> int:
        return self.mu.size


def log_density(c: VmfComponent, x):
    """``log C_d(kappa) + kappa * mu^T x`` for a unit vector or a batch of them."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != c.dim:
        raise DimensionMismatchError(f"x has dimension {x.shape[-1]}, component has {c.dim}")
    val = log_c_d(c.dim, c.kappa) + c.kappa * (x @ c.mu)
    return float(val) if np.ndim(val) == 0 else val


def kappa_from_rbar(rbar: float, d: int) -> float:
    """Closed-form concentration estimate ``(r d - r^3) / (1 - r^2)``, clamped."""
    r = min(max(float(rbar), 0.0), RBAR_MAX)
    kappa = (r * d - r**3) / (1.0 - r * r)
    return min(max(kappa, 0.0), KAPPA_MAX)


def refine_kappa(kappa: float, rbar: float, d: int, iterations: int = 4) -> float:
    """Newton iterations on ``A_d(kappa) = rbar`` starting from ``kappa``."""
    r = min(max(float(rbar), 0.0), RBAR_MAX)
    if r == 0.0:
        return 0.0
    k = max(kappa, 1e-8)
    for _ in range(iterations):
        step = (mean_resultant_ratio(d, k) - r) / mean_resultant_ratio_derivative(d, k)
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2.0
        if abs(k_new - k) <= 1e-12 * k:
            k = k_new
            break
        k = k_new
    return min(max(k, 0.0), KAPPA_MAX)


def weighted_resultant(data, weights=None) -> tuple[np.ndarray, float, float]:
    """Return ``(direction, rbar, total_weight)`` of a weighted set of unit vectors."""
    x = as_batch(data)
    if weights is None:
        w = np.ones(x.shape[0])
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != x.shape[0]:
            raise DimensionMismatchError("weights length does not match number of samples")
        if np.any(w < 0):
            raise DomainError("weights must be non-negative")
    total = float(w.sum())
    if not total > 0:
        raise DomainError("weights must have positive sum")
    resultant = w @ x
    norm = float(np.linalg.norm(resultant))
    rbar = norm / total
    if rbar <= EPS_NORM:
        raise DegenerateInputError("weighted resultant vanishes; mean direction undefined")
    return resultant / norm, min(rbar, 1.0), total


def fit_mle(data, weights=None, refine: bool = False) -> VmfComponent:
    """Fit ``(mu, kappa)`` to unit vectors, optionally weighted.

    The concentration uses the closed-form approximation; ``refine=True``
    adds a few Newton steps solving ``A_d(kappa) = rbar`` exactly.
    """
    x = check_unit(data)
    mu, rbar, _ = weighted_resultant(x, weights)
    d = x.shape[1]
    kappa = kappa_from_rbar(rbar, d)
    if refine and kappa < KAPPA_MAX:
        kappa = refine_kappa(kappa, rbar, d)
    return VmfComponent(mu, kappa)


def _wood_cosines(kappa: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    m1 = d - 1.0
    # stable form of (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1)
    b = m1 / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + m1 * m1))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + m1 * math.log(1.0 - x0 * x0)
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        batch = max(16, int(need * 1.2) + 8)
        z = rng.beta(m1 / 2.0, m1 / 2.0, size=batch)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=batch)
        ok = kappa * w + m1 * np.log1p(-x0 * w) - c >= np.log(u)
        acc = w[ok][:need]
        out[filled:filled + acc.size] = acc
        filled += acc.size
    return out


def householder_to(mu: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the reflection that maps e_1 to ``mu`` to each row of ``v``."""
    e1 = np.zeros_like(mu)
    e1[0] = 1.0
    u = e1 - mu
    norm = np.linalg.norm(u)
    if norm < 1e-15:
        return v.copy()
    u /= norm
    return v - 2.0 * np.outer(v @ u, u)


def sample(c: VmfComponent, n: int, rng_seed) -> np.ndarray:
    """Draw ``n`` i.i.d. unit vectors from vMF(mu, kappa).

    Wood's rejection scheme draws the cosine to the mean, a uniform tangent
    direction completes the point at the north pole, and a Householder
    reflection carries the north pole onto ``mu``. ``rng_seed`` may be an
    int or an existing ``numpy.random.Generator``.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"sample count must be a positive integer, got {n}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    d = c.dim
    t = _wood_cosines(c.kappa, d, int(n), rng)
    tangent = rng.standard_normal((int(n), d - 1))
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    pts = np.empty((int(n), d))
    pts[:, 0] = t
    pts[:, 1:] = np.sqrt(np.clip(1.0 - t * t, 0.0, None))[:, None] * tangent
    pts = householder_to(c.mu, pts)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)
