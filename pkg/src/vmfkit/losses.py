"""vMF mixture loss (vMFML) with analytic gradients, and the losses it is compared to.

vMFML is cross-entropy over the posterior of an equal-weight, shared-kappa
vMF mixture: with ``x_i = f_i / |f_i|`` and ``mu_j = w_j / |w_j|`` the logits
are ``z_ij = kappa * mu_j^T x_i``. The optional margin multiplies the true
class logit by ``m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .directional import EPS_NORM, as_batch, normalize, normalize_backward
from .errors import DegenerateInputError, DimensionMismatchError, DomainError

DEFAULT_KAPPA = 16.0
KAPPA_FLOOR = 1e-3
LEARNED_KAPPA_LR_MULTIPLIER = 1e-3


@dataclass(frozen=True)
class VmfmlHead:
    """Loss-layer parameters: class weights ``W`` (M x d), shared ``kappa``, margin ``m``.

    ``kappa_policy`` is ``"fixed"`` or ``"learned"``; learned kappa is updated
    at ``lr_multiplier`` times the network learning rate.
    """

    weights: np.ndarray
    kappa: float = DEFAULT_KAPPA
    kappa_policy: str = "fixed"
    lr_multiplier: float = LEARNED_KAPPA_LR_MULTIPLIER
    margin: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise DimensionMismatchError(f"head weights must be (M, d), got {w.shape}")
        if np.any(np.linalg.norm(w, axis=1) <= EPS_NORM):
            raise DegenerateInputError("every class weight needs norm > 1e-12")
        if not (math.isfinite(self.kappa) and self.kappa > 0):
            raise DomainError(f"kappa must be > 0, got {self.kappa}")
        if self.kappa_policy not in ("fixed", "learned"):
            raise DomainError(f"unknown kappa policy {self.kappa_policy!r}")
        if not self.margin >= 1:
            raise DomainError(f"margin must be >= 1, got {self.margin}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "margin", float(self.margin))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def means(self) -> np.ndarray:
        return normalize(self.weights)

    def with_params(self, **kw) -> "VmfmlHead":
        return replace(self, **kw)

    @classmethod
    def init(cls, n_classes: int, dim: int, rng: np.random.Generator, kappa_policy: str = "fixed",
             kappa: float | None = None, **kw) -> "VmfmlHead":
        """Rows uniform on the sphere; learned kappa starts at sqrt(d/2) unless given."""
        g = rng.standard_normal((n_classes, dim))
        if kappa is None:
            kappa = math.sqrt(dim / 2.0) if kappa_policy == "learned" else DEFAULT_KAPPA
        return cls(normalize(g), kappa=kappa, kappa_policy=kappa_policy, **kw)


@dataclass
class LossOutput:
    loss: float
    probabilities: np.ndarray
    grad_features: np.ndarray | None = None
    grad_weights: np.ndarray | None = None
    grad_kappa: float | None = None
    extra: dict = field(default_factory=dict)


def check_labels(labels, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise DimensionMismatchError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise DomainError("labels must be integers")
        y = y.astype(int)
    if np.any(y < 0) or np.any(y >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes})")
    return y


def _reduce_scale(reduction: str, n: int) -> float:
    if reduction == "sum":
        return 1.0
    if reduction == "mean":
        return 1.0 / n
    raise DomainError(f"unknown reduction {reduction!r}")


def _per_sample_nll(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``-log softmax(z)[y]`` row-wise, accurate even when the loss is tiny."""
    rows = np.arange(z.shape[0])
    rel = z - z[rows, y][:, None]
    top = rel.max(axis=1)
    ex = np.exp(rel - top[:, None])
    ex[rows, y] = 0.0
    others = ex.sum(axis=1)
    # top == 0 means the true class wins: log(1 + sum_{j != y} e^{rel_j}) via log1p
    return np.where(top <= 0.0, np.log1p(others * np.exp(top)), top + np.log(np.exp(-top) + others))


def _logit_grad(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``p - onehot(y)``; the true-class entry is ``-sum_{j != y} p_j`` to avoid cancellation."""
    rows = np.arange(p.shape[0])
    dz = p.copy()
    dz[rows, y] = 0.0
    dz[rows, y] = -dz.sum(axis=1)
    return dz


def _vmfml_parts(weights, kappa, margin, f, y):
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    if np.any(norms <= EPS_NORM):
        raise DegenerateInputError("cannot normalize a feature with norm <= 1e-12")
    x = f / norms
    mu = normalize(weights)
    cos = x @ mu.T
    scale = np.ones_like(cos)
    scale[np.arange(f.shape[0]), y] = margin
    z = kappa * scale * cos
    return x, mu, cos, scale, z


def _vmfml_core(head: VmfmlHead, features, labels):
    f = as_batch(features, "features")
    if f.shape[1] != head.dim:
        raise DimensionMismatchError(f"features have d={f.shape[1]}, head expects {head.dim}")
    y = check_labels(labels, f.shape[0], head.n_classes)
    x, mu, cos, scale, z = _vmfml_parts(head.weights, head.kappa, head.margin, f, y)
    log_p = z - logsumexp(z, axis=1, keepdims=True)
    return f, y, x, mu, cos, scale, z, log_p


def vmfml_loss_value(weights, kappa: float, features, labels, margin: float = 1.0) -> float:
    """Summed vMFML loss without validation or gradients (used by finite-difference checks)."""
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    z = _vmfml_parts(np.asarray(weights, dtype=float), kappa, margin, f, y)[-1]
    return float(np.sum(_per_sample_nll(z, y)))


def vmfml_forward(head: VmfmlHead, features, labels, reduction: str = "sum") -> LossOutput:
    """vMFML loss and class posteriors (sum over samples by default)."""
    f, y, _, _, _, _, z, log_p = _vmfml_core(head, features, labels)
    loss = float(np.sum(_per_sample_nll(z, y))) * _reduce_scale(reduction, f.shape[0])
    return LossOutput(loss=loss, probabilities=np.exp(log_p))


def vmfml_backward(head: VmfmlHead, features, labels, reduction: str = "sum") -> LossOutput:
    """Forward pass plus gradients w.r.t. raw features, raw class weights and kappa.

    ``dL/dz = p - y``; each logit depends on ``kappa``, ``mu_j`` and ``x``
    through ``s_ij * kappa * mu_j^T x`` (``s`` is the margin on the true
    class, else 1). The unit-vector gradients are then pulled back through
    both normalizations.
    """
    f, y, x, mu, cos, scale, z, log_p = _vmfml_core(head, features, labels)
    n = f.shape[0]
    r = _reduce_scale(reduction, n)
    p = np.exp(log_p)
    dz = _logit_grad(p, y) * r
    dcos = dz * scale * head.kappa
    grad_x = dcos @ mu
    grad_mu = dcos.T @ x
    grad_kappa = float(np.sum(dz * scale * cos))
    return LossOutput(
        loss=float(np.sum(_per_sample_nll(z, y))) * r,
        probabilities=p,
        grad_features=normalize_backward(f, grad_x),
        grad_weights=normalize_backward(head.weights, grad_mu),
        grad_kappa=grad_kappa,
    )


def vmfml_predict(head: VmfmlHead, features) -> np.ndarray:
    return np.argmax(normalize(as_batch(features)) @ head.means.T, axis=1)


def softmax_forward_backward(weights, biases, features, labels, reduction: str = "sum") -> LossOutput:
    """Cross-entropy over affine logits ``W f + b``; gradients in ``extra['grad_biases']``."""
    w = np.asarray(weights, dtype=float)
    b = np.asarray(biases, dtype=float).reshape(-1)
    f = as_batch(features, "features")
    if w.ndim != 2 or w.shape[1] != f.shape[1] or b.shape[0] != w.shape[0]:
        raise DimensionMismatchError(f"incompatible shapes W {w.shape}, b {b.shape}, f {f.shape}")
    n = f.shape[0]
    y = check_labels(labels, n, w.shape[0])
    r = _reduce_scale(reduction, n)
    z = f @ w.T + b
    log_p = z - logsumexp(z, axis=1, keepdims=True)
    p = np.exp(log_p)
    dz = _logit_grad(p, y) * r
    return LossOutput(
        loss=float(np.sum(_per_sample_nll(z, y))) * r,
        probabilities=p,
        grad_features=dz @ w,
        grad_weights=dz.T @ f,
        extra={"grad_biases": dz.sum(axis=0)},
    )


def center_loss(features, labels, centers, reduction: str = "sum"):
    """``1/2 sum_i |f_i - c_{y_i}|^2``; returns ``(loss, grad_features, grad_centers)``."""
    f = as_batch(features, "features")
    c = np.asarray(centers, dtype=float)
    if c.ndim != 2 or c.shape[1] != f.shape[1]:
        raise DimensionMismatchError(f"centers shape {c.shape} incompatible with features {f.shape}")
    y = check_labels(labels, f.shape[0], c.shape[0])
    r = _reduce_scale(reduction, f.shape[0])
    diff = f - c[y]
    grad_c = np.zeros_like(c)
    np.add.at(grad_c, y, -diff)
    return 0.5 * float(np.sum(diff * diff)) * r, diff * r, grad_c * r


@dataclass
class WeightNormReport:
    max_deviation: float
    n_samples: int


def weight_norm_equivalence_check(head: VmfmlHead, n_samples: int = 100, rng_seed=0) -> WeightNormReport:
    """Compare ``kappa * mu^T x`` with the weight-normalized logit ``g v^T x / |v|`` (g = kappa, v = w)."""
    rng = np.random.default_rng(rng_seed)
    x = normalize(rng.standard_normal((n_samples, head.dim)))
    vmf_logits = head.kappa * (x @ head.means.T)
    v = head.weights
    wn_logits = head.kappa * (x @ v.T) / np.linalg.norm(v, axis=1)
    return WeightNormReport(float(np.max(np.abs(vmf_logits - wn_logits))), n_samples)
