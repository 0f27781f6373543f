"""Rank-one and rank-two limit laws of normalized chi-squared field integrals.

Rank one: ``S = c1 * sum_n lambda_n(S) sum_{j<=r} (eps_{jn}^2 - 1)`` with
``lambda_n(S) = -lambda_n(K_alpha) / (a sqrt(2r))`` and
``a^2 = int_D int_D |x-y|^{-2 alpha}``; the normalization makes the variance
``c1^2 sum (lambda_n / a)^2``, equal to ``c1^2`` for the full spectrum.

Rank two: a quadratic form in independent chi-squared-type variables driven
by a :class:`~gammafield.spectral.TwoLevelSpectrum`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from .domain import Domain, singular_moment
from .errors import AccuracyError, ConfigurationError, DomainError
from .spectral import OperatorSpectrum, TwoLevelSpectrum
from .specfun import ctilde, nu_constant

RANK1_TRUNCATION_WARN = 0.05
RANK2_TRUNCATION_WARN = 0.15
SAMPLE_CHUNK = 20_000
# default rank-2 truncation drops at most this share of variance in each index
RANK2_DEFAULT_DROP = 1e-3


@dataclass(frozen=True)
class LimitSamples:
    """Draws plus truncation bookkeeping; behaves like an array."""

    values: np.ndarray
    n_terms: Tuple[int, ...]
    variance_deficit: float
    warnings: Tuple[str, ...] = ()

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size


def _seed_rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF))


# ---------------------------------------------------------------------------
# Rank one


@dataclass(frozen=True)
class Rank1Limit:
    r: int
    alpha: float
    d: int
    domain: Domain
    lambda_hat: np.ndarray
    tail_hat: float
    c1_multiplier: float = 1.0

    @classmethod
    def from_spectrum(cls, spec: OperatorSpectrum, r: int, c1_multiplier: float = 1.0) -> "Rank1Limit":
        if r < 1 or int(r) != r:
            raise DomainError("degrees of freedom r must be a positive integer")
        a_sq = singular_moment(spec.domain, 2 * spec.alpha).value
        lam_hat = spec.eigenvalues / math.sqrt(a_sq)
        return cls(int(r), spec.alpha, spec.domain.d, spec.domain, lam_hat,
                   spec.tail_l2_mass / a_sq, float(c1_multiplier))

    @property
    def lambda_S(self) -> np.ndarray:
        """Series coefficients ``-lambda_hat / sqrt(2 r)`` (all negative)."""
        return -self.lambda_hat / math.sqrt(2.0 * self.r)

    @property
    def jump_scales(self) -> np.ndarray:
        """``|c1 lambda_n(S)|``."""
        return np.abs(self.c1_multiplier * self.lambda_S)

    @property
    def jump_sign(self) -> float:
        """Sign of every jump of the limit (negative for c1 > 0)."""
        return -1.0 if self.c1_multiplier > 0 else 1.0

    @property
    def variance(self) -> float:
        return self.c1_multiplier ** 2 * float(np.sum(self.lambda_hat ** 2))

    @property
    def decay_index(self) -> float:
        """``rho = 1 - alpha/d``: ``lambda_n ~ const * n^{-rho}``."""
        return 1.0 - self.alpha / self.d

    @property
    def weyl_constant(self) -> float:
        """``K`` in ``|c1 lambda_n(S)| ~ K n^{-rho}``."""
        rho = self.decay_index
        a = math.sqrt(singular_moment(self.domain, 2 * self.alpha).value)
        base = ctilde(self.d, self.alpha) * self.domain.volume ** rho
        return base * abs(self.c1_multiplier) / (a * math.sqrt(2.0 * self.r))


def _log_charfn_rank1(dist: Rank1Limit, z: np.ndarray) -> np.ndarray:
    w = -2j * z * dist.c1_multiplier / math.sqrt(2.0 * dist.r)
    x = w[..., None] * dist.lambda_hat
    return -0.5 * dist.r * np.sum(np.log1p(-x) + x, axis=-1)


def charfn_rank1(dist: Rank1Limit, z, *, return_bound: bool = False):
    """``E exp(i z S)`` from the regularized eigenvalue product.

    With ``return_bound`` also returns a bound on ``|log phi|`` contributed
    by the unresolved spectrum, ``(r/4) |w|^2 * tail``.
    """
    z_arr = np.asarray(z, float)
    phi = np.exp(_log_charfn_rank1(dist, z_arr))
    out = phi if phi.ndim else complex(phi)
    if not return_bound:
        return out
    w_abs = 2.0 * np.abs(z_arr) * abs(dist.c1_multiplier) / math.sqrt(2.0 * dist.r)
    bound = 0.25 * dist.r * w_abs ** 2 * dist.tail_hat
    return out, (bound if np.ndim(bound) else float(bound))


def sample_rank1(dist: Rank1Limit, count: int, seed, n_trunc: Optional[int] = None) -> LimitSamples:
    """Draws of ``c1 * sum_{n <= n_trunc} lambda_n(S) (chi2_{r,n} - r)``."""
    lam = dist.lambda_S
    n_trunc = lam.size if n_trunc is None else int(n_trunc)
    if not 1 <= n_trunc <= lam.size:
        raise ConfigurationError(f"n_trunc must lie in 1..{lam.size}")
    if count < 1:
        raise ConfigurationError("count must be positive")
    coef = dist.c1_multiplier * lam[:n_trunc]
    rng = _seed_rng(seed)
    out = np.empty(count)
    for start in range(0, count, SAMPLE_CHUNK):
        stop = min(count, start + SAMPLE_CHUNK)
        chi = 2.0 * rng.standard_gamma(0.5 * dist.r, size=(stop - start, n_trunc))
        out[start:stop] = (chi - dist.r) @ coef
    kept = float(np.sum(dist.lambda_hat[:n_trunc] ** 2))
    deficit = 1.0 - kept / (float(np.sum(dist.lambda_hat ** 2)) + dist.tail_hat)
    notes = ()
    if deficit > RANK1_TRUNCATION_WARN:
        notes = (f"truncation variance deficit {deficit:.3f} exceeds {RANK1_TRUNCATION_WARN}",)
    return LimitSamples(out, (n_trunc,), deficit, notes)


def pdf_cdf(dist: Rank1Limit, x=None, *, n_points: int = 801, tol: float = 1e-6):
    """Density and CDF by Gil-Pelaez inversion on the grid ``x``.

    The default grid spans mean +/- 12 standard deviations. Integrals over
    the frequency are midpoint sums; the step is halved once as a check and
    :class:`AccuracyError` is raised if the two differ by more than ``tol``.
    """
    sd = math.sqrt(dist.variance)
    if x is None:
        x = np.linspace(-12 * sd, 12 * sd, n_points)
    x = np.asarray(x, float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ConfigurationError("x must be a finite 1-d grid")
    span = max(24 * sd, float(np.ptp(x)) + 2 * float(np.max(np.abs(x))))

    # frequency cutoff where |phi| is negligible
    t_max = 1.0 / sd
    while abs(charfn_rank1(dist, t_max)) > 1e-13 and t_max < 1e6:
        t_max *= 1.5

    def invert(dt):
        t = (np.arange(int(math.ceil(t_max / dt))) + 0.5) * dt
        phi = np.exp(_log_charfn_rank1(dist, t))
        ph = np.exp(-1j * np.outer(x, t)) * phi
        pdf = dt * np.sum(ph.real, axis=1) / math.pi
        cdf = 0.5 - dt * np.sum(ph.imag / t, axis=1) / math.pi
        return pdf, cdf

    dt = math.pi / span
    pdf1, cdf1 = invert(2 * dt)
    pdf, cdf = invert(dt)
    err = max(np.max(np.abs(pdf - pdf1)), np.max(np.abs(cdf - cdf1)))
    if err > tol:
        raise AccuracyError(f"inversion not converged: step-halving changes results by {err:.2e}")
    if np.min(pdf) < -1e-8:
        raise AccuracyError(f"inverted density has negative values down to {np.min(pdf):.2e}")
    pdf = np.where(pdf < 0, 0.0, pdf)
    cdf = np.clip(np.maximum.accumulate(cdf), 0.0, 1.0)
    return x, pdf, cdf


def levy_density(dist: Rank1Limit, u, *, tail_correction: bool = False):
    """Levy density ``q(u) = (r / 2u) sum_k exp(-u / (2 |c1 lambda_k(S)|))``.

    ``q`` describes the jumps of ``jump_sign * S`` (supported on u > 0).
    With ``tail_correction`` the unresolved eigenvalues are added through
    their asymptotic law ``|lambda_k| ~ K k^{-rho}``.
    """
    u_arr = np.asarray(u, float)
    if np.any(u_arr <= 0):
        raise DomainError("Levy density is defined for u > 0")
    b = dist.jump_scales
    s = np.sum(np.exp(-u_arr[..., None] / (2.0 * b)), axis=-1)
    if tail_correction:
        s = s + levy_tail_sum(dist, u_arr)
    q = 0.5 * dist.r * s / u_arr
    return q if q.ndim else float(q)


def levy_tail_sum(dist: Rank1Limit, u):
    """``sum_{k > N} exp(-u k^rho / (2K))`` approximated by an integral from N + 1/2."""
    u_arr = np.asarray(u, float)
    rho, K = dist.decay_index, dist.weyl_constant
    start = dist.lambda_hat.size + 0.5
    c = u_arr / (2.0 * K)
    # int_start^inf exp(-c t^rho) dt = Gamma(1/rho) Q(1/rho, c start^rho) / (rho c^{1/rho})
    out = (special.gamma(1 / rho) * special.gammaincc(1 / rho, c * start ** rho)
           / (rho * c ** (1 / rho)))
    return out if np.ndim(out) else float(out)


def levy_asymptote(dist: Rank1Limit, u, regime: str):
    """Leading behaviour of the Levy density as u -> inf or u -> 0+.

    large_u: ``(r / 2u) exp(-u / (2 |c1 lambda_1(S)|))``
    small_u: ``r K^{1/rho} Gamma(1/rho) (u/2)^{-1/rho} / (2 u rho)`` with the
    eigenvalue law ``|c1 lambda_k(S)| ~ K k^{-rho}``, ``rho = 1 - alpha/d``,
    ``K = ctilde(d, alpha) |D|^rho |c1| / (a sqrt(2r))``.
    """
    u_arr = np.asarray(u, float)
    if np.any(u_arr <= 0):
        raise DomainError("u must be positive")
    r = dist.r
    if regime == "large_u":
        out = 0.5 * r / u_arr * np.exp(-u_arr / (2.0 * dist.jump_scales[0]))
    elif regime == "small_u":
        rho, K = dist.decay_index, dist.weyl_constant
        out = r * K ** (1 / rho) * special.gamma(1 / rho) * (u_arr / 2.0) ** (-1 / rho) / (2.0 * u_arr * rho)
    else:
        raise ConfigurationError(f"regime must be 'small_u' or 'large_u', got {regime!r}")
    return out if np.ndim(out) else float(out)


def small_u_slope(dist: Rank1Limit) -> float:
    """Limiting ``d log q / d log u`` as u -> 0+: ``(alpha/d - 2) / (1 - alpha/d)``."""
    ratio = dist.alpha / dist.d
    return (ratio - 2.0) / (1.0 - ratio)


def charfn_levy_consistency(dist: Rank1Limit, z: float) -> complex:
    """``E exp(i z S)`` from the Levy-Khintchine integral of :func:`levy_density`.

    The jumps of ``jump_sign * S`` are positive, so the exponent is evaluated
    at ``theta = jump_sign * z``. Integration runs over log u.
    """
    theta = dist.jump_sign * float(z)
    if theta == 0:
        return 1.0 + 0.0j
    b = dist.jump_scales
    half_r = 0.5 * dist.r

    def mass(u):  # u * q(u)
        return half_r * float(np.sum(np.exp(-u / (2.0 * b))))

    lo = math.log(1e-10 / abs(theta))
    hi = math.log(2.0 * b[0] * 60.0)

    def re(s):
        u = math.exp(s)
        return (math.cos(u * theta) - 1.0) * mass(u)

    def im(s):
        u = math.exp(s)
        return (math.sin(u * theta) - u * theta) * mass(u)

    # oscillation period in s shrinks as u grows; split into panels
    edges = np.linspace(lo, hi, 41)
    total = 0.0 + 0.0j
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for a, c in zip(edges[:-1], edges[1:]):
                total += integrate.quad(re, a, c, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
                total += 1j * integrate.quad(im, a, c, epsabs=1e-12, epsrel=1e-10, limit=200)[0]
        except integrate.IntegrationWarning as exc:
            raise AccuracyError(f"Levy-Khintchine quadrature failed: {exc}") from exc
    return complex(np.exp(total))


# ---------------------------------------------------------------------------
# Rank two


def _eta_variances(gammas: np.ndarray, r: int) -> np.ndarray:
    """Variance of the bracketed rank-2 block for each n given (truncated) weights."""
    s2 = np.sum(gammas ** 2, axis=1)
    s4 = np.sum(gammas ** 4, axis=1)
    return 8.0 * r * (r - 1) * s2 ** 2 + r * (8.0 * s2 ** 2 + 16.0 * s4)


@dataclass(frozen=True)
class Rank2Limit:
    """Rank-2 limit; ``scale * renorm`` multiplies the raw series."""

    r: int
    spectrum: TwoLevelSpectrum
    alpha: float
    volume: float
    scale: float
    renorm: float
    trunc: Tuple[int, int]
    raw_variance_full: float = field(repr=False)

    @classmethod
    def from_spectrum(cls, spectrum: TwoLevelSpectrum, r: int,
                      trunc: Optional[Tuple[int, int]] = None) -> "Rank2Limit":
        if r < 1 or int(r) != r:
            raise DomainError("degrees of freedom r must be a positive integer")
        alpha = float(spectrum.spectral_grid["alpha"])
        from .domain import domain_from_dict
        volume = domain_from_dict(spectrum.spectral_grid["domain"]).volume
        scale = volume / (math.sqrt(r * (0.5 * r + 1.0)) * 4.0 * nu_constant(1, alpha) ** 2)
        n_all, p_all = spectrum.gamma_weights.shape
        trunc = _default_trunc(spectrum, r) if trunc is None else (int(trunc[0]), int(trunc[1]))
        if not (1 <= trunc[0] <= n_all and 1 <= trunc[1] <= p_all):
            raise ConfigurationError(f"truncation {trunc} outside spectrum size {(n_all, p_all)}")
        full = float(np.sum(spectrum.mu ** 2 * _eta_variances(spectrum.gamma_weights, r)))
        kept = _raw_variance(spectrum, r, trunc)
        renorm = 1.0 / (scale * math.sqrt(kept))
        return cls(int(r), spectrum, alpha, volume, scale, renorm, trunc, full)

    @property
    def variance_deficit(self) -> float:
        return 1.0 - _raw_variance(self.spectrum, self.r, self.trunc) / self.raw_variance_full


def _default_trunc(spectrum: TwoLevelSpectrum, r: int) -> Tuple[int, int]:
    """Fewest outer then inner modes keeping all but RANK2_DEFAULT_DROP of the variance, each."""
    n_all, p_all = spectrum.gamma_weights.shape
    per_n = spectrum.mu ** 2 * _eta_variances(spectrum.gamma_weights, r)
    share = np.cumsum(per_n) / per_n.sum()
    n = min(n_all, int(np.searchsorted(share, 1.0 - RANK2_DEFAULT_DROP)) + 1)
    top = _raw_variance(spectrum, r, (n, p_all))
    for p in range(1, p_all + 1):
        if _raw_variance(spectrum, r, (n, p)) >= (1.0 - RANK2_DEFAULT_DROP) * top:
            return n, p
    return n, p_all


def _raw_variance(spectrum, r, trunc):
    n, p = trunc
    return float(np.sum(spectrum.mu[:n] ** 2 * _eta_variances(spectrum.gamma_weights[:n, :p], r)))


def wick_blocks(eps2: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Centred rank-2 brackets ``eta_n`` from squared Gaussians.

    ``eps2`` has shape (count, r, n, p) and ``gammas`` shape (n, p). With
    ``Z_j = sum_p gamma_p (eps_{jp}^2 - 1)`` the Wick-ordered bracket equals
    ``(sum_j Z_j)^2 - 2 sum_j Z_j^2 + sum_{j,p} gamma_p^2 (4 eps_{jp}^2 - 2)``.
    Returns shape (count, n).
    """
    Z = np.einsum("crnp,np->crn", eps2 - 1.0, gammas)
    wick = np.einsum("crnp,np->cn", 4.0 * eps2 - 2.0, gammas ** 2)
    return Z.sum(axis=1) ** 2 - 2.0 * np.sum(Z * Z, axis=1) + wick


def rank2_blocks(dist: Rank2Limit, count: int, seed) -> np.ndarray:
    """Per-n terms ``scale * renorm * mu_n * eta_n``, shape (count, n_max); rows sum to draws."""
    if count < 1:
        raise ConfigurationError("count must be positive")
    n_max, p_max = dist.trunc
    mu = dist.spectrum.mu[:n_max]
    gam = dist.spectrum.gamma_weights[:n_max, :p_max]
    rng = _seed_rng(seed)
    out = np.empty((count, n_max))
    chunk = max(1, min(SAMPLE_CHUNK, int(4e7 // max(1, dist.r * n_max * p_max))))
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        eps2 = rng.standard_normal((stop - start, dist.r, n_max, p_max)) ** 2
        out[start:stop] = wick_blocks(eps2, gam) * mu
    return out * (dist.scale * dist.renorm)


def sample_rank2(dist: Rank2Limit, count: int, seed, trunc: Optional[Tuple[int, int]] = None) -> LimitSamples:
    """Draws of the renormalized rank-2 series ``scale * renorm * sum_n mu_n eta_n``.

    Blocks are independent across n; see :func:`wick_blocks`.
    """
    if trunc is not None and tuple(trunc) != dist.trunc:
        dist = Rank2Limit.from_spectrum(dist.spectrum, dist.r, trunc)
    out = rank2_blocks(dist, count, seed).sum(axis=1)
    deficit = dist.variance_deficit
    notes = ()
    if deficit > RANK2_TRUNCATION_WARN:
        notes = (f"truncation variance deficit {deficit:.3f} exceeds {RANK2_TRUNCATION_WARN}",)
    return LimitSamples(out, dist.trunc, deficit, notes)

def resolved_small_u_window(dist: Rank1Limit, tail_tol: float = 1e-3, decades: float = 1.0):
    """Smallest u where the unresolved eigenvalues carry < ``tail_tol`` of ``u q(u)``,
    and the window ``[u_lo, u_lo * 10**decades]`` starting there."""
    u = 2.0 * dist.jump_scales[0]
    while u > 1e-12:
        trial = u / 1.25
        share = levy_tail_sum(dist, trial) / float(np.sum(np.exp(-trial / (2.0 * dist.jump_scales))))
        if share > tail_tol:
            break
        u = trial
    return u, u * 10.0 ** decades


def fit_small_u_slope(dist: Rank1Limit, tail_tol: float = 1e-3, decades: float = 1.0,
                      n_points: int = 41) -> Tuple[float, Tuple[float, float]]:
    """Least-squares slope of log q against log u over the resolved small-u window."""
    lo, hi = resolved_small_u_window(dist, tail_tol, decades)
    u = np.geomspace(lo, hi, n_points)
    slope = float(np.polyfit(np.log(u), np.log(levy_density(dist, u)), 1)[0])
    return slope, (lo, hi)
