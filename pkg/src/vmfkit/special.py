"""Log-domain modified Bessel functions of the first kind and vMF normalizers.

Three regimes are used for ``log I_nu(kappa)``:

* ascending power series, summed in log space, for ``kappa <= max(30, nu)``
  and for small orders whose Hankel expansion would cancel badly;
* Olver's uniform asymptotic expansion for large orders;
* Hankel's large-argument expansion for small orders and large arguments.

Everything stays in log space so that ``d = 512`` (order 255) and
concentrations in the thousands never overflow.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import Polynomial

from .errors import DomainError

SERIES_KAPPA = 30.0
OLVER_MIN_ORDER = 20.0
_N_OLVER = 14
_LOG_2PI = math.log(2.0 * math.pi)


def _olver_polynomials(n: int) -> list[Polynomial]:
    # U_{k+1}(p) = p^2 (1 - p^2) U_k'(p) / 2 + 1/8 * int_0^p (1 - 5 t^2) U_k(t) dt
    p = Polynomial([0.0, 1.0])
    one_minus_5p2 = Polynomial([1.0, 0.0, -5.0])
    polys = [Polynomial([1.0])]
    for _ in range(n - 1):
        u = polys[-1]
        integral = (one_minus_5p2 * u).integ(lbnd=0.0)
        polys.append(0.5 * p**2 * (1 - p**2) * u.deriv() + integral / 8.0)
    return polys


_OLVER_U = _olver_polynomials(_N_OLVER)


def _check_args(nu: float, kappa: float) -> None:
    if not (math.isfinite(nu) and nu >= 0):
        raise DomainError(f"Bessel order must be finite and >= 0, got {nu}")
    if not kappa >= 0 or math.isnan(kappa):
        raise DomainError(f"Bessel argument must be >= 0, got {kappa}")


def _log_series(nu: float, kappa: float) -> float:
    log_half = math.log(kappa) - math.log(2.0)  # kappa / 2 can underflow for subnormal kappa
    q = (kappa / 2.0) ** 2
    # terms grow while (kappa/2)^2 > (k+1)(nu+k+1); locate the peak
    k_peak = max(0, int(math.ceil((-(nu + 2) + math.sqrt(nu * nu + 4 * q)) / 2.0)))
    # Sum outward from the peak so the running max is known up front.
    def log_term(k: int) -> float:
        return (2 * k + nu) * log_half - math.lgamma(k + 1) - math.lgamma(nu + k + 1)

    peak = log_term(k_peak)
    total = 1.0
    k = k_peak + 1
    while True:
        rel = math.exp(log_term(k) - peak)
        total += rel
        if rel < 1e-18 * total:
            break
        k += 1
    k = k_peak - 1
    while k >= 0:
        rel = math.exp(log_term(k) - peak)
        total += rel
        if rel < 1e-18 * total:
            break
        k -= 1
    return peak + math.log(total)


def _log_olver(nu: float, kappa: float) -> float:
    root = math.hypot(nu, kappa)  # nu * sqrt(1 + z^2)
    p = nu / root
    # nu * eta, with eta = sqrt(1+z^2) + log(z / (1 + sqrt(1+z^2)))
    nu_eta = root + nu * math.log(kappa / (nu + root))
    s = 0.0
    inv = 1.0
    for u in _OLVER_U:
        s += u(p) * inv
        inv /= nu
    return nu_eta - 0.5 * (_LOG_2PI + math.log(root)) + math.log(s)


def _log_hankel(nu: float, kappa: float) -> float:
    mu4 = 4.0 * nu * nu
    term = 1.0
    total = 1.0
    k = 1
    while True:
        nxt = -term * (mu4 - (2 * k - 1) ** 2) / (k * 8.0 * kappa)
        if abs(nxt) >= abs(term) and k > 1:
            break
        total += nxt
        if abs(nxt) < 1e-17 * abs(total):
            break
        term = nxt
        k += 1
    return kappa - 0.5 * (_LOG_2PI + math.log(kappa)) + math.log(total)


def _log_bessel_scalar(nu: float, kappa: float) -> float:
    _check_args(nu, kappa)
    if kappa == 0.0:
        return 0.0 if nu == 0.0 else -math.inf
    if kappa <= max(SERIES_KAPPA, nu):
        return _log_series(nu, kappa)
    if nu >= OLVER_MIN_ORDER:
        return _log_olver(nu, kappa)
    if kappa <= max(SERIES_KAPPA, 4.0 * nu * nu):
        return _log_series(nu, kappa)
    return _log_hankel(nu, kappa)


def log_bessel_i(nu, kappa):
    """Natural log of the modified Bessel function ``I_nu(kappa)``.

    Accepts scalars or arrays (broadcast elementwise). ``I_nu(0)`` is zero
    for ``nu > 0`` so the result there is ``-inf``.
    """
    if np.ndim(nu) == 0 and np.ndim(kappa) == 0:
        return _log_bessel_scalar(float(nu), float(kappa))
    nu_b, kappa_b = np.broadcast_arrays(np.asarray(nu, float), np.asarray(kappa, float))
    out = np.empty(nu_b.shape)
    for idx in np.ndindex(nu_b.shape):
        out[idx] = _log_bessel_scalar(float(nu_b[idx]), float(kappa_b[idx]))
    return out


def _check_dim(d) -> int:
    if int(d) != d or d < 2:
        raise DomainError(f"dimension must be an integer >= 2, got {d}")
    return int(d)


def log_sphere_area(d: int) -> float:
    """Log surface area of the unit sphere S^{d-1}."""
    d = _check_dim(d)
    return math.log(2.0) + (d / 2.0) * math.log(math.pi) - math.lgamma(d / 2.0)


def _log_c_d_scalar(d: int, kappa: float) -> float:
    if not kappa >= 0 or not math.isfinite(kappa):
        raise DomainError(f"concentration must be finite and >= 0, got {kappa}")
    if kappa == 0.0:
        return -log_sphere_area(d)
    nu = d / 2.0 - 1.0
    log_kappa_term = nu * math.log(kappa) if nu > 0 else 0.0
    return log_kappa_term - (d / 2.0) * _LOG_2PI - _log_bessel_scalar(nu, kappa)


def log_c_d(d: int, kappa):
    """Log of the vMF normalizing constant ``C_d(kappa)`` on S^{d-1}.

    ``C_d(kappa) = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa))``; at
    ``kappa = 0`` the uniform density ``1 / |S^{d-1}|`` is returned.
    """
    d = _check_dim(d)
    if np.ndim(kappa) == 0:
        return _log_c_d_scalar(d, float(kappa))
    k = np.asarray(kappa, float)
    return np.array([_log_c_d_scalar(d, float(v)) for v in k.ravel()]).reshape(k.shape)


def _ratio_scalar(d: int, kappa: float) -> float:
    if not kappa >= 0 or not math.isfinite(kappa):
        raise DomainError(f"concentration must be finite and >= 0, got {kappa}")
    if kappa == 0.0:
        return 0.0
    nu = d / 2.0 - 1.0
    return math.exp(_log_bessel_scalar(nu + 1.0, kappa) - _log_bessel_scalar(nu, kappa))


def mean_resultant_ratio(d: int, kappa):
    """Expected resultant length ``A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)``."""
    d = _check_dim(d)
    if np.ndim(kappa) == 0:
        return _ratio_scalar(d, float(kappa))
    k = np.asarray(kappa, float)
    return np.array([_ratio_scalar(d, float(v)) for v in k.ravel()]).reshape(k.shape)


def mean_resultant_ratio_derivative(d: int, kappa: float) -> float:
    """``A_d'(kappa) = 1 - A_d^2 - (d - 1) A_d / kappa``."""
    a = _ratio_scalar(_check_dim(d), float(kappa))
    if kappa == 0.0:
        return 1.0 / d
    return 1.0 - a * a - (d - 1.0) * a / kappa
