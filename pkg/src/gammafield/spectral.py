"""Spectra of the Riesz-kernel operator and the two-level rank-2 spectrum.

``K_alpha`` acts on L2(D) with kernel ``|x - y|^{-alpha}``. It is not trace
class (the diagonal is singular) but its square is, so everything here works
with ``sum lambda_n^m`` for ``m >= 2`` only.

In one dimension the operator is discretized by a Galerkin method on N equal
cells with exact cell-pair averages of the kernel; in d >= 2 cell-centre
values are used off the diagonal and the diagonal cell average is computed
by Monte Carlo.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg, special

from .domain import Ball, Domain, Rectangle, domain_from_dict, singular_moment
from .errors import (ConfigurationError, ConvergenceError, DiscretizationError, DivergenceError,
                     DomainError, ResolutionError)
from .specfun import nu_constant

NEGATIVE_EIG_RTOL = 1e-8
DIAGONAL_MC_POINTS = 100_000
GAMMA_NORM_TOL = 1e-3


@dataclass(frozen=True)
class OperatorSpectrum:
    """Eigenvalues of a discretized ``K_alpha``, in decreasing order.

    ``tail_l2_mass`` is ``max(0, a^2 - sum lambda^2)`` with
    ``a^2 = int int |x-y|^{-2 alpha}``; it bounds what the truncation misses.
    """

    eigenvalues: np.ndarray
    resolution: int
    domain: Domain
    alpha: float
    tail_l2_mass: float
    eigenvectors: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    cell_volume: Optional[float] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, float)
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def l2_mass(self) -> float:
        return float(np.sum(self.eigenvalues ** 2))

    def tail_bound(self, m: int) -> float:
        """Upper bound on ``sum_{n > N} lambda_n^m``."""
        return self.tail_l2_mass * float(self.eigenvalues[-1]) ** (m - 2)

    def eigenfunctions(self) -> np.ndarray:
        """Eigenvectors rescaled to unit L2(D) norm (piecewise constant), shape (cells, N)."""
        if self.eigenvectors is None:
            raise ConfigurationError("spectrum was computed without eigenvectors")
        return self.eigenvectors / math.sqrt(self.cell_volume)


def _interval_galerkin(length: float, alpha: float, N: int) -> Tuple[np.ndarray, float]:
    # Average of |x-y|^-alpha over two cells k apart is a second difference of
    # F(t) = |t|^(2-alpha) / ((1-alpha)(2-alpha)).
    h = length / N
    k = np.arange(N, dtype=float)
    c = 1.0 / ((1.0 - alpha) * (2.0 - alpha))
    F = lambda t: c * np.abs(t) ** (2.0 - alpha)  # noqa: E731
    avg = (F((k + 1) * h) - 2.0 * F(k * h) + F((k - 1) * h)) / (h * h)
    return h * linalg.toeplitz(avg), h


def _cell_self_average(spacing: np.ndarray, alpha: float, seed: int = 0) -> float:
    """``E |x - y|^{-alpha}`` for x, y independent uniform in one cell."""
    rng = np.random.default_rng(seed)
    u = (rng.random((DIAGONAL_MC_POINTS, spacing.size)) - rng.random((DIAGONAL_MC_POINTS, spacing.size))) * spacing
    return float(np.mean(np.linalg.norm(u, axis=1) ** (-alpha)))


def _grid_galerkin(D: Domain, alpha: float, N: int):
    box = D.bounding_box()
    lengths = box[:, 1] - box[:, 0]
    fill = D.volume / float(np.prod(lengths))
    # choose a near-isotropic lattice with about N active cells
    h = (D.volume / N) ** (1.0 / D.d)
    counts = np.maximum(1, np.round(lengths / h).astype(int))
    for _ in range(20):
        spacing = lengths / counts
        axes = [lo + (np.arange(n) + 0.5) * s for (lo, _), n, s in zip(box, counts, spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts = pts[D.contains(pts)]
        if len(pts) >= 0.9 * N or fill <= 0:
            break
        counts = counts + 1
    w = float(np.prod(spacing))
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, 1.0)
    K = dist ** (-alpha)
    np.fill_diagonal(K, _cell_self_average(spacing, alpha))
    return w * K, w


def nystrom_eigs(D: Domain, alpha: float, N: int, *, keep_vectors: bool = False) -> OperatorSpectrum:
    """Eigenvalues of the discretized Riesz operator on ``D`` (descending).

    In d = 1, ``N`` is the number of cells; in d >= 2 it is the target
    number of active cells.
    """
    if N < 8:
        raise ConfigurationError("resolution N must be at least 8")
    if not 0 < alpha < D.d / 2:
        raise DivergenceError(f"alpha must lie in (0, d/2) = (0, {D.d / 2}), got {alpha}")
    if D.d == 1:
        mat, w = _interval_galerkin(D.volume, alpha, N)
    else:
        mat, w = _grid_galerkin(D, alpha, N)
    if keep_vectors:
        lam, vec = linalg.eigh(mat)
        order = np.argsort(lam)[::-1]
        lam, vec = lam[order], vec[:, order]
    else:
        lam = linalg.eigvalsh(mat)[::-1]
        vec = None
    if lam[-1] < -NEGATIVE_EIG_RTOL * lam[0]:
        raise DiscretizationError(
            f"discretized operator has eigenvalue {lam[-1]:.3e} below -1e-8 * lambda_1")
    lam = np.clip(lam, 0.0, None)
    a_sq = singular_moment(D, 2 * alpha).value
    tail = max(0.0, a_sq - float(np.sum(lam ** 2)))
    return OperatorSpectrum(lam, N, D, alpha, tail, vec, w)


def trace_power(spec: OperatorSpectrum, m: int) -> float:
    """``sum lambda_n^m`` over the resolved spectrum (see ``spec.tail_bound(m)``)."""
    if m < 2 or int(m) != m:
        raise DomainError("trace powers are defined for integer m >= 2 only")
    return float(np.sum(spec.eigenvalues ** int(m)))


def fredholm_det(spec: OperatorSpectrum, omega: complex, method: str = "product",
                 *, rtol: float = 1e-17, max_terms: int = 100_000) -> complex:
    """``det(I - omega K^2)``.

    ``method="product"`` multiplies ``1 - omega lambda_n^2``.
    ``method="series"`` sums ``exp(-sum_k omega^k Tr K^{2k} / k)``, which
    converges iff ``|omega| lambda_1^2 < 1``.
    """
    lam2 = spec.eigenvalues ** 2
    omega = complex(omega)
    if method == "product":
        # sum of logs keeps the product stable for long spectra
        return complex(np.exp(np.sum(np.log(1.0 - omega * lam2.astype(complex)))))
    if method != "series":
        raise ConfigurationError(f"unknown method {method!r}")
    ratio = abs(omega) * float(lam2[0])
    if ratio >= 1.0:
        raise ConvergenceError(f"series diverges: |omega| lambda_1^2 = {ratio:.3g} >= 1")
    total = 0.0 + 0.0j
    power = lam2.copy()
    wk = 1.0 + 0.0j
    for k in range(1, max_terms + 1):
        wk *= omega
        term = wk * float(np.sum(power)) / k
        total += term
        if abs(term) <= rtol * max(1.0, abs(total)):
            break
        power *= lam2
    else:
        raise ConvergenceError("series did not converge within max_terms")
    return complex(cmath.exp(-total))


def save_spectrum(spec: OperatorSpectrum, path: Union[str, Path]) -> Tuple[Path, Path]:
    """CSV (index, eigenvalue, cumulative sum of squares) plus JSON metadata."""
    path = Path(path)
    csv_path, meta_path = path.with_suffix(".csv"), path.with_suffix(".json")
    lam = spec.eigenvalues
    cum = np.cumsum(lam ** 2)
    with open(csv_path, "w") as fh:
        fh.write("index,eigenvalue,cumulative_l2\n")
        for i, (x, c) in enumerate(zip(lam, cum), start=1):
            fh.write(f"{i},{x:.17g},{c:.17g}\n")
    meta = {"domain": spec.domain.to_dict(), "alpha": spec.alpha, "N": spec.resolution,
            "tail_l2_mass": float(spec.tail_l2_mass)}
    meta_path.write_text(json.dumps(meta, indent=2))
    return csv_path, meta_path


def load_spectrum(path: Union[str, Path]) -> OperatorSpectrum:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    return OperatorSpectrum(data[:, 1], int(meta["N"]), domain_from_dict(meta["domain"]),
                            float(meta["alpha"]), float(meta["tail_l2_mass"]))


# ---------------------------------------------------------------------------
# Two-level spectrum for the rank-2 limit.


@dataclass(frozen=True)
class TwoLevelSpectrum:
    """Outer eigenvalues ``mu`` (by decreasing modulus) and inner weights.

    ``gamma_weights[n]`` holds the eigenvalues of the n-th outer eigenvector
    viewed as a symmetric kernel, sorted by decreasing modulus.
    """

    mu: np.ndarray
    gamma_weights: np.ndarray
    spectral_grid: dict
    target_l2: float

    @property
    def weight_norms(self) -> np.ndarray:
        return np.sum(self.gamma_weights ** 2, axis=1)

    @property
    def l2_fraction(self) -> float:
        """``sum mu^2`` over its continuum value."""
        return float(np.sum(self.mu ** 2) / self.target_l2)


def _pair_index(M: int):
    i, j = np.triu_indices(M)
    scale = np.where(i == j, 1.0, math.sqrt(2.0))
    return i, j, scale


def _unpack_pairs(v: np.ndarray, M: int) -> np.ndarray:
    i, j, scale = _pair_index(M)
    V = np.zeros((M, M))
    V[i, j] = v / scale
    V[j, i] = v / scale
    return V


def _galerkin_outer(D: Domain, alpha: float, M: int, N: int):
    # Coordinates in the Karhunen-Loeve basis of the process with covariance
    # nu K_alpha. Mode parity fixes the phase needed to make the basis real.
    spec = nystrom_eigs(D, alpha, N, keep_vectors=True)
    if M > N:
        raise ResolutionError("M cannot exceed the Galerkin resolution N")
    g = spec.eigenfunctions()[:, :M]
    lam = spec.eigenvalues[:M]
    parity = np.sum(g * g[::-1], axis=0) < 0  # True for odd modes
    i, j, scale = _pair_index(M)
    Q = math.sqrt(spec.cell_volume) * g[:, i] * g[:, j] * np.sqrt(lam[i] * lam[j]) * scale
    phase = (-1j) ** (parity[i].astype(int) + parity[j].astype(int))
    signs = np.real(np.outer(phase, phase))
    nu = nu_constant(1, alpha)
    return nu * nu / D.volume * signs * (Q.T @ Q), {"method": "galerkin", "M": M, "N": N}


def _fourier_nodes(M: int, alpha: float, R: float, panels: int):
    # nodes/weights for |lambda|^(alpha-1) d lambda on [-R, R]: Gauss-Jacobi on
    # the first panel, Gauss-Legendre on geometrically growing panels after it
    half = M // 2
    per = half // panels
    if per < 1 or per * panels * 2 != M:
        raise ResolutionError("M must be a multiple of 2 * panels")
    edges = np.concatenate([[0.0], np.geomspace(R / 2 ** (panels - 1), R, panels)])
    xs, ws = [], []
    for p in range(panels):
        a, b = edges[p], edges[p + 1]
        if p == 0:
            x, w = special.roots_jacobi(per, 0.0, alpha - 1.0)
            w = w * ((b - a) / 2) ** alpha
        else:
            x, w = special.roots_legendre(per)
        node = a + (b - a) * (1 + x) / 2
        if p > 0:
            w = w * (b - a) / 2 * node ** (alpha - 1.0)
        xs.append(node)
        ws.append(w)
    lam, w = np.concatenate(xs), np.concatenate(ws)
    return np.concatenate([-lam[::-1], lam]), np.concatenate([w[::-1], w])


def _fourier_outer(D: Domain, alpha: float, M: int, R: float, panels: int):
    from .domain import char_fn_uniform
    nodes, w = _fourier_nodes(M, alpha, R, panels)
    i, j, scale = _pair_index(M)
    s = nodes[i] + nodes[j]
    amp = np.sqrt(w[i] * w[j]) * scale
    K = char_fn_uniform((s[:, None] + s[None, :]).ravel(), D).real.reshape(s.size, s.size)
    return amp[:, None] * K * amp[None, :], {"method": "fourier", "M": M, "R": R, "panels": panels}


def rank2_spectrum(D: Domain, alpha: float, M: int = 64, *, method: str = "galerkin",
                   N: int = 512, R: float = 20.0, panels: int = 4) -> TwoLevelSpectrum:
    """Two-level spectrum of the kernel ``K(l1 + l2 + l3 + l4, D)`` on L2(G x G).

    ``G(dl) = |l|^{alpha-1} dl``. The operator is discretized on symmetric
    pairs of basis functions (dimension M(M+1)/2):

    * ``"galerkin"``: the M leading Karhunen-Loeve modes of the process with
      covariance ``nu(alpha) |x-y|^{-alpha}`` on D, computed from an N-cell
      Galerkin solve. Orthonormal in L2(G); no frequency truncation.
    * ``"fourier"``: M quadrature nodes for G on ``[-R, R]``.

    Only intervals are supported; they are re-centred at the origin, which
    leaves the Riesz integrals unchanged and makes K real.
    """
    if D.d != 1:
        raise ConfigurationError("rank2_spectrum supports d = 1 only")
    if not 0 < alpha < 0.25:
        raise DivergenceError("rank-2 spectrum needs 0 < alpha < d/4")
    if M * M > 4096:
        raise ConfigurationError("M^2 must not exceed 4096")
    D = D.centered() if isinstance(D, Rectangle) else D
    if method == "galerkin":
        outer, grid = _galerkin_outer(D, alpha, M, N)
    elif method == "fourier":
        outer, grid = _fourier_outer(D, alpha, M, R, panels)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    mu, vec = linalg.eigh(outer)
    order = np.argsort(-np.abs(mu))
    mu, vec = mu[order], vec[:, order]
    gammas = np.empty((mu.size, M))
    for n in range(mu.size):
        g = linalg.eigvalsh(_unpack_pairs(vec[:, n], M))
        gammas[n] = g[np.argsort(-np.abs(g))]
    norms = np.sum(gammas ** 2, axis=1)
    if np.max(np.abs(norms - 1.0)) > GAMMA_NORM_TOL:
        raise ResolutionError(f"inner weights lose normalization (max |sum gamma^2 - 1| = "
                              f"{np.max(np.abs(norms - 1.0)):.2e}); increase M")
    target = singular_moment(D, 4 * alpha).value * nu_constant(1, alpha) ** 4 / D.volume ** 2
    grid.update({"alpha": alpha, "domain": D.to_dict(), "weight": "|lambda|^(alpha-1)"})
    return TwoLevelSpectrum(mu, gammas, grid, target)
