"""Mixtures of vMF distributions and their EM estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .directional import check_unit
from .errors import DegenerateInputError, DimensionMismatchError, DomainError
from .special import log_c_d
from .vmf import KAPPA_MAX, VmfComponent, kappa_from_rbar, refine_kappa, weighted_resultant

log = logging.getLogger(__name__)

EMPTY_MASS = 1e-8
MAX_RESEEDS = 3
LL_SLACK = 1e-8


@dataclass(frozen=True)
class VmfMixture:
    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise DomainError("a mixture needs at least one component")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != len(comps):
            raise DimensionMismatchError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError("mixture weights must be non-negative and sum to 1")
        if len({c.dim for c in comps}) != 1:
            raise DimensionMismatchError("all components must share one dimension")
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_arrays(cls, mus, kappas, weights) -> "VmfMixture":
        comps = tuple(VmfComponent(m, k) for m, k in zip(np.asarray(mus, float), np.asarray(kappas, float)))
        return cls(comps, weights)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def mus(self) -> np.ndarray:
        return np.stack([c.mu for c in self.components])

    @property
    def kappas(self) -> np.ndarray:
        return np.array([c.kappa for c in self.components])


@dataclass
class EmReport:
    iterations: int = 0
    log_likelihood_trace: list = field(default_factory=list)
    converged: bool = False
    reseeds: int = 0
    # trace indices whose step followed a component re-seed (monotonicity not guaranteed there)
    reseed_steps: list = field(default_factory=list)
    # trace indices where the closed-form kappa lowered the likelihood and the exact kappa was used
    exact_kappa_steps: list = field(default_factory=list)


def _joint_log(m: VmfMixture, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != m.dim:
        raise DimensionMismatchError(f"data dimension {x.shape[1]} != mixture dimension {m.dim}")
    with np.errstate(divide="ignore"):
        log_pi = np.log(m.weights)
    log_norm = np.array([log_c_d(m.dim, k) for k in m.kappas])
    return (x @ m.mus.T) * m.kappas + log_norm + log_pi


def e_step(m: VmfMixture, data) -> np.ndarray:
    """Posterior responsibilities ``p_ij``, an ``(N, M)`` row-stochastic matrix."""
    x = check_unit(data)
    joint = _joint_log(m, x)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def log_likelihood(m: VmfMixture, data) -> float:
    """``sum_i log sum_j pi_j V_d(x_i | mu_j, kappa_j)``."""
    x = check_unit(data)
    return float(np.sum(logsumexp(_joint_log(m, x), axis=1)))


def hard_assign(resp) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest-index tie rule
    return np.argmax(np.asarray(resp), axis=1)


def _fit_weighted(x, w, refine):
    mu, rbar, _ = weighted_resultant(x, w)
    d = x.shape[1]
    kappa = kappa_from_rbar(rbar, d)
    if refine and kappa < KAPPA_MAX:
        kappa = refine_kappa(kappa, rbar, d)
    return VmfComponent(mu, kappa)


def _m_step_raw(x, resp, refine):
    n = x.shape[0]
    mass = resp.sum(axis=0)
    comps: list = []
    dead = []
    for j in range(resp.shape[1]):
        if mass[j] < n * EMPTY_MASS:
            comps.append(None)
            dead.append(j)
            continue
        try:
            comps.append(_fit_weighted(x, resp[:, j], refine))
        except DegenerateInputError:
            comps.append(None)
            dead.append(j)
    return comps, mass / n, dead


def m_step(data, resp, refine: bool = False) -> VmfMixture:
    """Re-estimate ``(pi_j, mu_j, kappa_j)`` from responsibilities.

    Raises ``DegenerateInputError`` when a component has (near) zero mass or
    a vanishing resultant; ``fit_em`` handles that case by re-seeding.
    """
    x = check_unit(data)
    resp = np.asarray(resp, dtype=float)
    if resp.ndim != 2 or resp.shape[0] != x.shape[0]:
        raise DimensionMismatchError(f"responsibilities shape {resp.shape} incompatible with {x.shape[0]} samples")
    comps, pi, dead = _m_step_raw(x, resp, refine)
    if dead:
        raise DegenerateInputError(f"empty or degenerate components: {dead}")
    return VmfMixture(tuple(comps), pi / pi.sum())


def spherical_kmeans_init(x: np.ndarray, n_components: int, rng: np.random.Generator,
                          lloyd_iterations: int = 10, refine: bool = False) -> VmfMixture:
    """Farthest-cosine seeding followed by Lloyd iterations on cosine distance."""
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    best = x @ centers[0]
    for _ in range(1, n_components):
        idx = int(np.argmin(best))
        centers.append(x[idx])
        best = np.maximum(best, x @ x[idx])
    c = np.array(centers)
    for _ in range(lloyd_iterations):
        labels = np.argmax(x @ c.T, axis=1)
        for j in range(n_components):
            members = x[labels == j]
            if members.shape[0] == 0:
                continue
            s = members.sum(axis=0)
            norm = np.linalg.norm(s)
            if norm > 1e-12:
                c[j] = s / norm
    labels = np.argmax(x @ c.T, axis=1)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), labels] = 1.0
    comps, pi, dead = _m_step_raw(x, resp, refine)
    for j in dead:
        comps[j] = VmfComponent(c[j], 0.0)
        pi[j] = 1.0 / n
    return VmfMixture(tuple(comps), pi / pi.sum())


def fit_em(data, n_components: int, init: VmfMixture | str = "kmeans++", max_iter: int = 200,
           tol: float = 1e-6, rng_seed=0, refine: bool = False) -> tuple[VmfMixture, EmReport]:
    """Fit an ``n_components`` vMF mixture by EM.

    Stops once the per-sample log-likelihood change drops below ``tol`` or
    after ``max_iter`` iterations. A component whose mass collapses is
    re-seeded at the worst-explained point (at most ``MAX_RESEEDS`` times
    per fit); after that the fit stops with ``converged=False``.
    """
    x = check_unit(data)
    n = x.shape[0]
    if int(n_components) != n_components or not 1 <= n_components <= n:
        raise DomainError(f"need 1 <= M <= N, got M={n_components}, N={n}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if isinstance(init, VmfMixture):
        if init.n_components != n_components or init.dim != x.shape[1]:
            raise DimensionMismatchError("initial mixture does not match M or d")
        model = init
    elif init == "kmeans++":
        model = spherical_kmeans_init(x, n_components, rng, refine=refine)
    else:
        raise DomainError(f"unknown init policy {init!r}")

    report = EmReport()
    ll = log_likelihood(model, x)
    report.log_likelihood_trace.append(ll)
    reseeded = False
    for _ in range(max_iter):
        resp = e_step(model, x)
        comps, pi, dead = _m_step_raw(x, resp, refine)
        reseeded = bool(dead)
        if dead:
            if report.reseeds + len(dead) > MAX_RESEEDS:
                log.warning("EM stopped: re-seed budget exhausted")
                report.converged = False
                return model, report
            worst = np.argsort(resp.max(axis=1))
            for rank, j in enumerate(dead):
                kappas = [c.kappa for c in comps if c is not None]
                comps[j] = VmfComponent(x[worst[rank]], float(np.median(kappas)) if kappas else 1.0)
                pi[j] = 1.0 / n
            report.reseeds += len(dead)
        candidate = VmfMixture(tuple(comps), pi / pi.sum())
        new_ll = log_likelihood(candidate, x)
        if not reseeded and not refine and new_ll < ll - LL_SLACK:
            # The closed-form kappa only approximates the M-step maximizer and can overshoot;
            # the exact (Newton) kappa restores the EM ascent guarantee for this step.
            exact, pi_exact, _ = _m_step_raw(x, resp, True)
            candidate = VmfMixture(tuple(exact), pi_exact / pi_exact.sum())
            new_ll = log_likelihood(candidate, x)
            report.exact_kappa_steps.append(len(report.log_likelihood_trace))
        model = candidate
        report.iterations += 1
        report.log_likelihood_trace.append(new_ll)
        if reseeded:
            report.reseed_steps.append(len(report.log_likelihood_trace) - 1)
        elif new_ll < ll - LL_SLACK:
            log.warning("log-likelihood decreased by %.3g", ll - new_ll)
        if not reseeded and abs(new_ll - ll) / n < tol:
            report.converged = True
            ll = new_ll
            break
        ll = new_ll
    return model, report


def is_monotone(report: EmReport, slack: float = LL_SLACK) -> bool:
    tr = report.log_likelihood_trace
    return all(tr[i] >= tr[i - 1] - slack for i in range(1, len(tr)) if i not in report.reseed_steps)
