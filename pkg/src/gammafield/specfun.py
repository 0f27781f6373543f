"""Special functions: Gamma density, orthonormal Laguerre and Hermite
polynomials, the modified Bessel function I, and two Gamma-ratio constants.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DomainError, IntegrabilityError

# Below this argument the Bessel integral loses digits to cancellation in the
# prefactor; the ascending series is exact there.
BESSEL_SERIES_CUTOFF = 1e-2
MAX_TAIL_PANELS = 40


def gamma_tail_cutoff(beta: float) -> float:
    """Upper integration limit leaving Gamma(beta) tail mass below 1e-14."""
    return beta + 40.0 * math.sqrt(beta) + 40.0


def gamma_density(u, beta: float):
    """Gamma(beta, 1) density ``u**(beta-1) * exp(-u) / Gamma(beta)``."""
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("gamma_density requires u > 0")
    out = np.exp((beta - 1.0) * np.log(u) - u - special.gammaln(beta))
    return out if out.ndim else float(out)


def _laguerre_norms(k_max: int, beta: float) -> np.ndarray:
    k = np.arange(k_max + 1)
    return np.exp(0.5 * (special.gammaln(k + 1) + special.gammaln(beta) - special.gammaln(beta + k)))


def _laguerre_table(k_max: int, a: float, u: np.ndarray) -> np.ndarray:
    """L_0^{(a)}..L_{k_max}^{(a)} at ``u`` by the three-term recurrence."""
    out = np.empty((k_max + 1,) + u.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = 1.0 + a - u
    for n in range(1, k_max):
        out[n + 1] = ((2 * n + 1 + a - u) * out[n] - (n + a) * out[n - 1]) / (n + 1)
    return out


@dataclass(frozen=True)
class LaguerreBasis:
    """Orthonormal Laguerre system ``e_0..e_{k_max}`` in L2(p_beta).

    ``e_k = L_k^{(beta-1)} * sqrt(k! Gamma(beta) / Gamma(beta+k))``.
    """

    beta: float
    k_max: int

    def __post_init__(self):
        if self.beta <= 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if self.k_max < 0:
            raise DomainError("k_max must be non-negative")

    @property
    def norms(self) -> np.ndarray:
        return _laguerre_norms(self.k_max, self.beta)

    def __call__(self, u):
        """Array of shape ``(k_max + 1,) + shape(u)``."""
        u = np.asarray(u, dtype=float)
        table = _laguerre_table(self.k_max, self.beta - 1.0, u)
        return table * self.norms.reshape((-1,) + (1,) * u.ndim)

    def e(self, k: int, u):
        if not 0 <= k <= self.k_max:
            raise DomainError(f"order {k} outside 0..{self.k_max}")
        return laguerre_e(k, self.beta, u)


def laguerre_e(k: int, beta: float, u):
    """Orthonormalized generalized Laguerre polynomial ``e_k^{(beta)}(u)``."""
    if k < 0 or int(k) != k:
        raise DomainError(f"order must be a non-negative integer, got {k}")
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    k = int(k)
    u_arr = np.asarray(u, dtype=float)
    val = _laguerre_table(k, beta - 1.0, u_arr)[k] * _laguerre_norms(k, beta)[k]
    return val if val.ndim else float(val)


def hermite(k: int, u):
    """Probabilists' (Chebyshev-Hermite) polynomial ``H_k(u)``."""
    if k < 0 or int(k) != k:
        raise DomainError(f"order must be a non-negative integer, got {k}")
    u = np.asarray(u, dtype=float)
    h_prev, h = np.ones_like(u), u.copy()
    if k == 0:
        h = h_prev
    for n in range(1, int(k)):
        h_prev, h = h, u * h - n * h_prev
    return h if h.ndim else float(h)


def _bessel_i_series_scaled(rho: float, z: float) -> float:
    # exp(-z) * sum_m (z/2)^(2m+rho) / (m! Gamma(m+rho+1)); all terms positive.
    log_half = math.log(z / 2.0)
    m = np.arange(0, int(2 * z + 60))
    logs = (2 * m + rho) * log_half - special.gammaln(m + 1) - special.gammaln(m + rho + 1)
    top = logs.max()
    return math.exp(top - z) * float(np.sum(np.exp(logs - top)))


def _bessel_i_integral_scaled(rho: float, z: float) -> float:
    # (z/2)^rho / (sqrt(pi) Gamma(rho+1/2)) * int_{-1}^{1} (1-t^2)^(rho-1/2) e^{zt} dt,
    # with e^{-z} folded into the integrand to keep it bounded.
    expo = rho - 0.5
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(lambda t: math.exp(z * (t - 1.0)), -1.0, 1.0,
                                    weight="alg", wvar=(expo, expo),
                                    epsabs=0.0, epsrel=1e-13, limit=200)
        except integrate.IntegrationWarning as exc:  # pragma: no cover - defensive
            raise IntegrabilityError(f"Bessel integral failed for rho={rho}, z={z}") from exc
    log_pref = rho * math.log(z / 2.0) - 0.5 * math.log(math.pi) - special.gammaln(rho + 0.5)
    return math.exp(log_pref) * val


def bessel_i_scaled(rho: float, z: float) -> float:
    """``exp(-z) * I_rho(z)`` for ``z > 0`` and ``rho > -1``.

    Orders in (-1, -1/2] are reached through the recurrence
    ``I_rho = I_{rho+2} + 2 (rho+1)/z * I_{rho+1}``.
    """
    if z <= 0:
        raise DomainError(f"z must be positive, got {z}")
    if rho <= -1:
        raise DomainError(f"rho must exceed -1, got {rho}")
    if z < BESSEL_SERIES_CUTOFF:
        return _bessel_i_series_scaled(rho, z)
    if rho <= -0.5:
        return bessel_i_scaled(rho + 2, z) + 2.0 * (rho + 1) / z * bessel_i_scaled(rho + 1, z)
    return _bessel_i_integral_scaled(rho, z)


def bessel_i(rho, z):
    """Modified Bessel function of the first kind ``I_rho(z)``."""
    rho_a, z_a = np.broadcast_arrays(np.asarray(rho, float), np.asarray(z, float))
    out = np.empty(rho_a.shape)
    for idx in np.ndindex(rho_a.shape):
        r, x = float(rho_a[idx]), float(z_a[idx])
        out[idx] = bessel_i_scaled(r, x) * math.exp(x)
    return out if out.ndim else float(out)


def gamma_expectation(f, beta: float, *, epsrel: float = 1e-12) -> float:
    """``E f(xi)`` for ``xi ~ Gamma(beta)`` by adaptive quadrature on (0, U).

    The density singularity at the origin is removed by a power substitution
    and the upper limit is extended past ``gamma_tail_cutoff`` while the
    integrand still carries mass. Two refinements must agree to 1e-10
    (relative to the result's scale), otherwise :class:`IntegrabilityError`
    is raised.
    """
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    upper = gamma_tail_cutoff(beta)
    mid = max(beta, 1.0)
    log_norm = special.gammaln(beta)

    # On (0, mid) substitute u = s**(1/beta): u^(beta-1) du = ds / beta removes
    # the density singularity, and the integrand is never evaluated at 0.
    def head(s):
        u = s ** (1.0 / beta)
        return f(u) * math.exp(-u - log_norm) / beta

    def tail(u):
        return f(u) * math.exp((beta - 1.0) * math.log(u) - u - log_norm)

    split = np.linspace(mid, upper, 6)

    def run(limit, tol, rel):
        # Roundoff warnings are expected at these tolerances; convergence is
        # judged by agreement between the two refinement levels instead.
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            try:
                a, _ = integrate.quad(head, 0.0, mid ** beta, epsabs=tol, epsrel=rel, limit=limit)
                b = sum(integrate.quad(tail, lo, hi, epsabs=tol, epsrel=rel, limit=limit)[0]
                        for lo, hi in zip(split[:-1], split[1:]))
                # Fast-growing F (e.g. high-degree polynomials) shifts mass past
                # the Gamma cutoff; keep adding panels until they are negligible.
                width, hi = split[1] - split[0], split[-1]
                for _ in range(MAX_TAIL_PANELS):
                    piece = integrate.quad(tail, hi, hi + width, epsabs=tol, epsrel=rel, limit=limit)[0]
                    b += piece
                    hi += width
                    if abs(piece) <= 1e-16 * max(1.0, abs(a + b)):
                        break
                else:
                    raise IntegrabilityError("integrand tail does not decay")
            except (OverflowError, ZeroDivisionError, ValueError) as exc:
                raise IntegrabilityError(f"quadrature against p_{beta} failed: {exc}") from exc
        return a + b

    coarse = run(100, 1e-11, max(epsrel, 1e-10))
    fine = run(400, 1e-14, epsrel)
    if not (math.isfinite(fine) and math.isfinite(coarse)):
        raise IntegrabilityError("quadrature produced a non-finite value")
    if abs(fine - coarse) > 1e-10 * max(1.0, abs(fine)):
        raise IntegrabilityError(f"quadrature refinements disagree: {coarse!r} vs {fine!r}")
    return fine


def nu_constant(d: int, beta: float) -> float:
    """Fourier constant: ``|z|^{-d+beta}`` transforms to ``nu(beta) |z|^{-beta}``."""
    if d < 1:
        raise DomainError("dimension must be a positive integer")
    if not 0 < beta < d:
        raise DomainError(f"beta must lie in (0, {d}), got {beta}")
    return float(math.pi ** (d / 2) * 2.0 ** beta * special.gamma(beta / 2) / special.gamma((d - beta) / 2))


def ctilde(d: int, alpha: float) -> float:
    """Weyl-type constant in ``lambda_n(K_alpha) ~ ctilde |D|^{(d-alpha)/d} n^{-(d-alpha)/d}``."""
    if d < 1:
        raise DomainError("dimension must be a positive integer")
    if not 0 < alpha < d:
        raise DomainError(f"alpha must lie in (0, {d}), got {alpha}")
    rho = (d - alpha) / d
    return float(
        math.pi ** (alpha / 2) * (2.0 / d) ** rho * special.gamma((d - alpha) / 2)
        / (special.gamma(alpha / 2) * special.gamma(d / 2) ** rho)
    )
