"""Observation domains and the singular integrals defined over them.

Two shapes are supported: centred balls and rectangles containing the
origin. Both scale homothetically about the origin. Besides geometry this
module evaluates

* the characteristic function of the uniform law on a domain,
* the Riesz double integral ``a^2 = int_D int_D |x - y|^{-s} dx dy``,
* cyclic integrals ``c_m`` of the Riesz kernel,
* the two Fourier-side identities that tie ``a^2`` for exponents ``2 alpha``
  and ``4 alpha`` to weighted integrals of ``|K|^2`` (interval domains only).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, DivergenceError, DomainError
from .specfun import nu_constant

DEFAULT_MC_SAMPLES = 200_000


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in R^d (2 for d = 1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


class Domain:
    """Common interface; see :class:`Ball` and :class:`Rectangle`."""

    d: int

    @property
    def volume(self) -> float:
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    def scale(self, T: float) -> "Domain":
        raise NotImplementedError

    def contains(self, x) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self) -> np.ndarray:
        """Array of shape (d, 2) with per-axis (low, high)."""
        raise NotImplementedError

    def covariogram(self, u) -> np.ndarray:
        """``|D ∩ (D + u)|`` for displacement vectors ``u`` of shape (n, d)."""
        raise NotImplementedError

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_scale(T):
    if not T > 0:
        raise DomainError(f"scale factor must be positive, got {T}")


@dataclass(frozen=True)
class Ball(Domain):
    radius: float
    d: int = 1

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")
        if self.d < 1 or int(self.d) != self.d:
            raise DomainError("dimension must be a positive integer")

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.d) * self.radius ** self.d

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def scale(self, T: float) -> "Ball":
        _check_scale(T)
        return Ball(self.radius * T, self.d)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.einsum("ij,ij->i", x, x) <= self.radius ** 2

    def bounding_box(self) -> np.ndarray:
        return np.tile([-self.radius, self.radius], (self.d, 1)).astype(float)

    def covariogram(self, u) -> np.ndarray:
        t = np.linalg.norm(np.atleast_2d(np.asarray(u, float)), axis=1)
        x = np.clip(1.0 - (t / (2.0 * self.radius)) ** 2, 0.0, 1.0)
        return self.volume * special.betainc((self.d + 1) / 2.0, 0.5, x)

    def sample_uniform(self, rng, n):
        g = rng.standard_normal((n, self.d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return g * (self.radius * rng.random(n) ** (1.0 / self.d))[:, None]

    def to_dict(self):
        return {"shape": "ball", "params": {"radius": self.radius, "d": self.d}}


@dataclass(frozen=True)
class Rectangle(Domain):
    bounds: Tuple[Tuple[float, float], ...]

    def __init__(self, bounds):
        b = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if not b:
            raise DomainError("rectangle needs at least one axis")
        for lo, hi in b:
            if not lo < 0 < hi:
                raise DomainError(f"rectangle must contain the origin in its interior, got {(lo, hi)}")
        object.__setattr__(self, "bounds", b)

    @property
    def d(self) -> int:
        return len(self.bounds)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.bounds])

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.lengths))

    def scale(self, T: float) -> "Rectangle":
        _check_scale(T)
        return Rectangle([(lo * T, hi * T) for lo, hi in self.bounds])

    def centered(self) -> "Rectangle":
        """Translate so the origin is the centre (Riesz integrals are unchanged)."""
        return Rectangle([(-0.5 * L, 0.5 * L) for L in self.lengths])

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        box = self.bounding_box()
        return np.all((x >= box[:, 0]) & (x <= box[:, 1]), axis=1)

    def bounding_box(self) -> np.ndarray:
        return np.array(self.bounds, dtype=float)

    def covariogram(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, float))
        return np.prod(np.clip(self.lengths - np.abs(u), 0.0, None), axis=1)

    def sample_uniform(self, rng, n):
        box = self.bounding_box()
        return box[:, 0] + rng.random((n, self.d)) * (box[:, 1] - box[:, 0])

    def to_dict(self):
        return {"shape": "rectangle", "params": {"bounds": [list(b) for b in self.bounds]}}


def interval(half_width: float = 1.0) -> Rectangle:
    return Rectangle([(-half_width, half_width)])


def domain_from_dict(spec: dict) -> Domain:
    """Build a domain from ``{"shape": ..., "params": {...}}``."""
    try:
        shape = spec["shape"]
        params = spec.get("params", {})
        if shape == "ball":
            return Ball(float(params["radius"]), int(params.get("d", 1)))
        if shape == "rectangle":
            return Rectangle(params["bounds"])
        if shape == "interval":
            return interval(float(params.get("half_width", 1.0)))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed domain spec {spec!r}: {exc}") from exc
    raise ConfigurationError(f"unknown domain shape {spec.get('shape')!r}")


def char_fn_uniform(lam, D: Domain):
    """``(1/|D|) int_D exp(-i <lam, x>) dx``.

    ``lam`` may be a single d-vector or an array of shape (n, d); in d = 1 a
    flat array of frequencies is also accepted.
    """
    lam = np.asarray(lam, float)
    single = lam.ndim == 0 if D.d == 1 else lam.ndim == 1
    if D.d == 1:
        lam = lam.reshape(-1, 1)
    else:
        lam = np.atleast_2d(lam)
    if lam.shape[1] != D.d:
        raise DomainError(f"frequency dimension {lam.shape[1]} does not match domain dimension {D.d}")

    if isinstance(D, Rectangle):
        box = D.bounding_box()
        out = np.ones(lam.shape[0], dtype=complex)
        for i, (lo, hi) in enumerate(box):
            l = lam[:, i]
            half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
            # np.sinc(x) = sin(pi x)/(pi x) handles l = 0 exactly.
            out *= np.exp(-1j * l * mid) * np.sinc(l * half / math.pi)
    elif isinstance(D, Ball):
        rho = np.linalg.norm(lam, axis=1) * D.radius
        nu = D.d / 2.0
        out = np.ones(lam.shape[0], dtype=complex)
        nz = rho > 1e-8
        # |D| K = (2 pi R / |lam|)^{d/2} J_{d/2}(R |lam|)
        out[nz] = (2.0 ** nu * math.gamma(nu + 1) * special.jv(nu, rho[nz]) / rho[nz] ** nu)
        small = ~nz
        out[small] = 1.0 - rho[small] ** 2 / (2.0 * (D.d + 2))
    else:  # pragma: no cover - closed set of shapes
        raise DomainError(f"unsupported domain {D!r}")
    if single:
        return complex(out[0])
    return out


@dataclass(frozen=True)
class MCResult:
    """Estimate with its Monte Carlo standard error (0 for exact values)."""

    value: float
    stderr: float
    method: str

    def __float__(self):
        return float(self.value)


def _check_exponent(s: float, d: int):
    if not s > 0:
        raise DomainError(f"exponent must be positive, got {s}")
    if s >= d:
        raise DivergenceError(f"int int |x-y|^-s diverges for s >= d (s={s}, d={d})")


def _random_directions(rng, n, d):
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def singular_moment(D: Domain, s: float, *, n_samples: int = DEFAULT_MC_SAMPLES,
                    seed: int = 0) -> MCResult:
    """``int_D int_D |x - y|^{-s} dx dy`` for ``0 < s < d``.

    Exact in one dimension. For d >= 2 the pair integral is rewritten as
    ``int g(u) |u|^{-s} du`` with the covariogram ``g`` and the radius is drawn
    from the density proportional to ``rho^{d-1-s}`` so the estimator is bounded.
    """
    _check_exponent(s, D.d)
    if D.d == 1:
        L = D.volume
        return MCResult(2.0 * L ** (2.0 - s) / ((1.0 - s) * (2.0 - s)), 0.0, "exact")
    rng = np.random.default_rng(seed)
    diam = D.diameter
    rho = diam * rng.random(n_samples) ** (1.0 / (D.d - s))
    u = _random_directions(rng, n_samples, D.d) * rho[:, None]
    weights = sphere_area(D.d) * diam ** (D.d - s) / (D.d - s) * D.covariogram(u)
    return MCResult(float(weights.mean()), float(weights.std(ddof=1) / math.sqrt(n_samples)),
                    "montecarlo")


def cyclic_integral(D: Domain, alpha: float, m: int, method: Optional[str] = None, *,
                    spectrum=None, n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0) -> MCResult:
    """Cyclic Riesz integral ``c_m = int_{D^m} prod |x_i - x_{i+1}|^{-alpha}`` (x_{m+1} = x_1).

    ``method="spectral"`` returns ``sum lambda_n^m`` of a supplied
    :class:`~gammafield.spectral.OperatorSpectrum`; ``"montecarlo"`` runs a
    chain sampler whose increments have density proportional to
    ``|u|^{-alpha}``. By default the spectral method is used whenever a
    spectrum is given. For ``m = 2`` in one dimension the value is exact.
    """
    if m < 2 or int(m) != m:
        raise DomainError("m must be an integer >= 2")
    if not 0 < alpha < D.d / 2:
        raise DivergenceError(f"alpha must lie in (0, d/2) = (0, {D.d / 2}), got {alpha}")
    if method is None:
        method = "spectral" if spectrum is not None else "montecarlo"
    if method == "spectral":
        if spectrum is None:
            raise ConfigurationError("spectral method needs an OperatorSpectrum")
        lam = np.asarray(spectrum.eigenvalues)
        return MCResult(float(np.sum(lam ** m)), 0.0, "spectral")
    if method != "montecarlo":
        raise ConfigurationError(f"unknown method {method!r}")
    if m == 2 and D.d == 1:
        return singular_moment(D, 2 * alpha)

    rng = np.random.default_rng(seed)
    d, diam = D.d, D.diameter
    norm = sphere_area(d) * diam ** (d - alpha) / (d - alpha)
    x1 = D.sample_uniform(rng, n_samples)
    x = x1.copy()
    inside = np.ones(n_samples, dtype=bool)
    for _ in range(m - 1):
        rho = diam * rng.random(n_samples) ** (1.0 / (d - alpha))
        x = x + _random_directions(rng, n_samples, d) * rho[:, None]
        inside &= D.contains(x)
    gap = np.linalg.norm(x - x1, axis=1)
    vals = np.zeros(n_samples)
    ok = inside & (gap > 0)
    vals[ok] = D.volume * norm ** (m - 1) * gap[ok] ** (-alpha)
    return MCResult(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples)), "montecarlo")


# ---------------------------------------------------------------------------
# Fourier-side identities (interval domains).
#
# With K the characteristic function of the uniform law on an interval of
# length L, both identities reduce in polar coordinates to
#     (angular integral) x J(p, L),
#     J(p, L) = (2/L)^p int_0^inf (sin v / v)^2 v^(p-1) dv.


def _interval_length(D: Domain) -> float:
    if D.d != 1:
        raise DomainError("Fourier-side identities are implemented for d = 1 only")
    return D.volume


def sinc_power_integral(p: float, rel_tail: float = 1e-4) -> Tuple[float, float]:
    """``int_0^R (sin v / v)^2 v^(p-1) dv`` for ``0 < p < 2``, with R a multiple of pi.

    R is grown until the bound ``R^(p-2) / (2 (2 - p))`` on the omitted tail
    falls below ``rel_tail`` times the partial integral. Returns (value, R).
    """
    if not 0 < p < 2:
        raise DivergenceError(f"sinc-power integral needs 0 < p < 2, got {p}")

    def f(v):
        return (math.sin(v) / v) ** 2 * v ** (p - 1.0) if v > 0 else 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        # first period carries the v^(p-1) endpoint singularity
        total = integrate.quad(lambda t: (math.sin(t) / t) ** 2 if t > 0 else 1.0, 0.0, math.pi,
                               weight="alg", wvar=(p - 1.0, 0.0), epsabs=0.0, epsrel=1e-12)[0]
        k = 1
        while True:
            total += integrate.quad(f, k * math.pi, (k + 1) * math.pi, epsabs=0.0, epsrel=1e-12)[0]
            k += 1
            R = k * math.pi
            if R ** (p - 2.0) / (2.0 * (2.0 - p)) < rel_tail * total:
                return total, R


def _angular_two_fold(alpha: float) -> float:
    # 2 * int_0^pi |cos t sin t|^(alpha-1) |cos t + sin t|^(-2 alpha) dt,
    # split where a factor vanishes so each singularity sits at an endpoint.
    def g(t):
        c, s = math.cos(t), math.sin(t)
        return abs(c * s) ** (alpha - 1.0) * abs(c + s) ** (-2.0 * alpha)

    a = alpha - 1.0
    b = -2.0 * alpha
    pieces = [
        # (0, pi/2): singular |t|^a at 0 and |pi/2 - t|^a at pi/2
        (0.0, math.pi / 2, (a, a),
         lambda t: g(t) / (t ** a * (math.pi / 2 - t) ** a)),
        # (pi/2, 3pi/4): |t - pi/2|^a at left, |3pi/4 - t|^b at right
        (math.pi / 2, 3 * math.pi / 4, (a, b),
         lambda t: g(t) / ((t - math.pi / 2) ** a * (3 * math.pi / 4 - t) ** b)),
        # (3pi/4, pi): |t - 3pi/4|^b at left, |pi - t|^a at right
        (3 * math.pi / 4, math.pi, (b, a),
         lambda t: g(t) / ((t - 3 * math.pi / 4) ** b * (math.pi - t) ** a)),
    ]
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi, wv, smooth in pieces:
            mid = 0.5 * (lo + hi)

            def safe(t, smooth=smooth, lo=lo, hi=hi, mid=mid):
                # the ratio is smooth; nudge off the endpoints where it is 0/0
                t = min(max(t, lo + 1e-12 * (hi - lo)), hi - 1e-12 * (hi - lo))
                return smooth(t)

            total += integrate.quad(safe, lo, hi, weight="alg", wvar=wv,
                                    epsabs=0.0, epsrel=1e-11, limit=200)[0]
    return 2.0 * total


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    lhs_stderr: float
    rhs: float

    @property
    def rel_error(self) -> float:
        return abs(self.lhs / self.rhs - 1.0)


def two_fold_identity(D: Domain, alpha: float) -> IdentityCheck:
    """``int int |K(l1 + l2)|^2 |l1 l2|^(alpha-1) dl1 dl2`` vs ``(a_1 nu(alpha) / |D|)^2``."""
    L = _interval_length(D)
    if not 0 < alpha < 0.5:
        raise DivergenceError("two-fold identity needs 0 < alpha < 1/2")
    radial, _ = sinc_power_integral(2 * alpha)
    lhs = _angular_two_fold(alpha) * (2.0 / L) ** (2 * alpha) * radial
    a1_sq = singular_moment(D, 2 * alpha).value
    rhs = a1_sq * nu_constant(1, alpha) ** 2 / L ** 2
    return IdentityCheck(lhs, 0.0, rhs)


def _abs_power_normal(rng, a, size):
    # density proportional to |y|^(a-1) exp(-y^2/2) on R
    mag = np.sqrt(2.0 * rng.standard_gamma(a / 2.0, size))
    return np.where(rng.random(size) < 0.5, -mag, mag)


def _log_norm_const(a):
    # log of 1 / int |y|^(a-1) exp(-y^2/2) dy
    return -(0.5 * a * math.log(2.0) + special.gammaln(a / 2.0))


def angular_four_fold(alpha: float, n_samples: int, seed: int) -> Tuple[MCResult, MCResult]:
    """Monte Carlo for ``A = int_{S^3} prod |w_i|^(alpha-1) |sum w|^(-4 alpha) dw``.

    Mixture importance sampling: component j draws coordinates
    ``y = (lambda_k, k != j; sum lambda)`` independently with densities
    ``|y|^(alpha-1) e^{-y^2/2}`` and ``|y|^(-4 alpha) e^{-y^2/2}``. The induced
    angular densities share every singular factor with the integrand except
    ``|w_j|^(alpha-1)``, so the importance weight is bounded. The second
    result integrates ``prod |w_i|^(alpha-1)`` alone, whose exact value
    ``2 Gamma(alpha/2)^4 / Gamma(2 alpha)`` serves as a self-check.
    """
    if not 0 < alpha < 0.25:
        raise DivergenceError("four-fold identity needs 0 < alpha < 1/4")
    rng = np.random.default_rng(seed)
    per = n_samples // 4
    draws = []
    for j in range(4):
        y = np.empty((per, 4))
        others = [k for k in range(4) if k != j]
        for k in others:
            y[:, k] = _abs_power_normal(rng, alpha, per)
        y_sum = _abs_power_normal(rng, 1.0 - 4.0 * alpha, per)
        y[:, j] = y_sum - y[:, others].sum(axis=1)
        draws.append(y)
    lam = np.concatenate(draws)
    w = lam / np.linalg.norm(lam, axis=1, keepdims=True)
    s = w.sum(axis=1)

    log_c = 3 * _log_norm_const(alpha) + _log_norm_const(1.0 - 4.0 * alpha)
    log_c += -0.5 * (1.0 + alpha) * math.log(2.0) + special.gammaln(0.5 * (1.0 - alpha))
    mix = np.zeros(lam.shape[0])
    for j in range(4):
        rest = np.delete(w, j, axis=1)
        proj = np.sqrt(np.sum(rest ** 2, axis=1) + s ** 2)
        mix += np.exp(log_c + (alpha - 1.0) * np.log(proj) + (1.0 - alpha) * np.log(np.abs(w[:, j])))
    weight = 4.0 / mix
    target = weight
    check = weight * np.abs(s) ** (4.0 * alpha)
    n = lam.shape[0]

    def summary(x):
        return MCResult(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)), "montecarlo")

    return summary(target), summary(check)


def four_fold_identity(D: Domain, alpha: float, *, n_samples: int = 2_000_000,
                       seed: int = 0) -> IdentityCheck:
    """``int |K(l1+..+l4)|^2 prod |l_i|^(alpha-1) dl`` vs ``(a_2 nu(alpha)^2 / |D|)^2``."""
    L = _interval_length(D)
    angular, _ = angular_four_fold(alpha, n_samples, seed)
    radial, _ = sinc_power_integral(4 * alpha)
    factor = (2.0 / L) ** (4 * alpha) * radial
    a2_sq = singular_moment(D, 4 * alpha).value
    rhs = a2_sq * nu_constant(1, alpha) ** 4 / L ** 2
    return IdentityCheck(angular.value * factor, angular.stderr * factor, rhs)
