"""Gamma-correlated bivariate structure and Laguerre analysis of functions.

The bivariate density of two Gamma(beta) variables with Laguerre
correlation ``gamma`` has the diagonal expansion

    p(u) p(w) [1 + sum_k gamma^k e_k(u) e_k(w)]

which sums to a closed form involving the modified Bessel function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .errors import DomainError, EvaluationError, IntegrabilityError, RankUndeterminedError
from .specfun import bessel_i_scaled, gamma_density, gamma_expectation, laguerre_e, LaguerreBasis

# Above this correlation the closed form is numerically meaningless.
MAX_CORRELATION = 1.0 - 1e-6
DEFAULT_RANK_TOL = 1e-6


@dataclass(frozen=True)
class GammaMarginal:
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")

    def pdf(self, u):
        return gamma_density(u, self.beta)


@dataclass(frozen=True)
class SubordinatingFunction:
    """A real function on (0, inf) to be composed with a Gamma/chi-squared field.

    ``func`` must be reentrant and accept numpy arrays. ``name`` is
    informational; ``mean`` may carry the exact ``E F(xi)`` when known.
    """

    func: Callable
    name: str = "F"
    square_integrable_hint: Optional[float] = None
    mean: Optional[float] = field(default=None, compare=False)

    def __call__(self, u):
        return self.func(u)


def _as_callable(F) -> Callable:
    return F.func if isinstance(F, SubordinatingFunction) else F


def _check_corr(gamma_corr: float):
    if not 0.0 <= gamma_corr <= MAX_CORRELATION:
        raise DomainError(
            f"gamma_corr must lie in [0, {MAX_CORRELATION}], got {gamma_corr}")


def bivariate_density_closed(u, w, gamma_corr: float, beta: float):
    """Bessel closed form of the bivariate Gamma density (Hille-Hardy)."""
    _check_corr(gamma_corr)
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    u_a, w_a = np.broadcast_arrays(np.asarray(u, float), np.asarray(w, float))
    if np.any(u_a <= 0) or np.any(w_a <= 0):
        raise DomainError("u and w must be positive")
    if gamma_corr == 0.0:
        out = gamma_density(u_a, beta) * gamma_density(w_a, beta)
        return out if np.ndim(out) else float(out)

    g = gamma_corr
    out = np.empty(u_a.shape)
    for idx in np.ndindex(u_a.shape):
        x, y = float(u_a[idx]), float(w_a[idx])
        z = 2.0 * math.sqrt(x * y * g) / (1.0 - g)
        if z < 1e-6:
            # I_nu(z) ~ (z/2)^nu / Gamma(nu+1) * (1 + z^2 / (4 (nu+1))); the powers of g cancel
            log_val = ((beta - 1.0) * math.log(x * y) - (x + y) / (1.0 - g)
                       - 2.0 * special.gammaln(beta) - beta * math.log1p(-g))
            out[idx] = math.exp(log_val) * (1.0 + z * z / (4.0 * beta))
            continue
        # Work in logs; the scaled Bessel value absorbs exp(z).
        log_val = (0.5 * (beta - 1.0) * math.log(x * y / g) - (x + y) / (1.0 - g) + z
                   - special.gammaln(beta) - math.log1p(-g))
        out[idx] = math.exp(log_val) * bessel_i_scaled(beta - 1.0, z)
    return out if out.ndim else float(out)


def bivariate_density_series(u, w, gamma_corr: float, beta: float, n_terms: int):
    """Truncated bilinear Laguerre expansion with ``n_terms`` correlation terms."""
    _check_corr(gamma_corr)
    if n_terms < 1:
        raise DomainError("n_terms must be at least 1")
    u_a, w_a = np.broadcast_arrays(np.asarray(u, float), np.asarray(w, float))
    basis = LaguerreBasis(beta, n_terms)
    eu, ew = basis(u_a), basis(w_a)
    powers = gamma_corr ** np.arange(n_terms + 1)
    bracket = np.tensordot(powers, eu * ew, axes=1)
    out = gamma_density(u_a, beta) * gamma_density(w_a, beta) * bracket
    return out if np.ndim(out) else float(out)


def pearson_functional(gamma_corr: float) -> float:
    """Pearson's phi-squared ``sum_{k>=1} gamma^{2k} = gamma^2 / (1 - gamma^2)``."""
    if not abs(gamma_corr) < 1:
        raise DomainError(f"|gamma_corr| must be < 1, got {gamma_corr}")
    g2 = gamma_corr * gamma_corr
    return g2 / (1.0 - g2)


def _safe_eval(f, u):
    val = f(u)
    try:
        val = float(val)
    except TypeError as exc:
        raise EvaluationError(f"F({u}) did not return a scalar") from exc
    if not math.isfinite(val):
        raise EvaluationError(f"F is not finite at u={u}")
    return val


def function_norm(F, beta: float) -> float:
    """``||F||`` in L2(p_beta)."""
    f = _as_callable(F)
    second = gamma_expectation(lambda u: _safe_eval(f, u) ** 2, beta)
    if second < 0 or not math.isfinite(second):
        raise IntegrabilityError("F is not square integrable against p_beta")
    return math.sqrt(second)


def laguerre_coeffs(F, beta: float, q_max: int) -> np.ndarray:
    """Coefficients ``C_q = E[F(xi) e_q(xi)]``, ``q = 0..q_max``, xi ~ Gamma(beta).

    Square integrability is verified first; a divergent or unstable
    quadrature raises :class:`IntegrabilityError`.
    """
    if q_max < 0:
        raise DomainError("q_max must be non-negative")
    f = _as_callable(F)
    function_norm(f, beta)
    coeffs = np.empty(q_max + 1)
    for q in range(q_max + 1):
        coeffs[q] = gamma_expectation(lambda u, q=q: _safe_eval(f, u) * laguerre_e(q, beta, u), beta)
    return coeffs


@dataclass(frozen=True)
class RankResult:
    rank: int
    coeffs: np.ndarray
    norm: float
    tol: float

    @property
    def leading_coeff(self) -> float:
        return float(self.coeffs[self.rank])


def laguerre_rank(F, beta: float, tol: float = DEFAULT_RANK_TOL, q_max: int = 8) -> RankResult:
    """Smallest ``k >= 1`` with ``|C_k| > tol * ||F||``.

    Raises :class:`RankUndeterminedError` (carrying the computed
    coefficients) when no such ``k <= q_max`` exists.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    if q_max < 1:
        raise DomainError("q_max must be at least 1")
    norm = function_norm(F, beta)
    coeffs = laguerre_coeffs(F, beta, q_max)
    threshold = tol * norm
    for k in range(1, q_max + 1):
        if abs(coeffs[k]) > threshold:
            return RankResult(rank=k, coeffs=coeffs, norm=norm, tol=tol)
    raise RankUndeterminedError(
        f"no Laguerre coefficient above {threshold:.3g} up to order {q_max}", coeffs=coeffs)
