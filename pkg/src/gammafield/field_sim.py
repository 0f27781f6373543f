"""Simulation of long-memory Gaussian fields and their chi-squared transforms.

Fields live on a regular lattice of cell centres covering the bounding box of
``D(T)``; only cells whose centre lies in ``D(T)`` are active. Sampling uses
circulant embedding of the stationary covariance, doubling the padding until
the embedding spectrum is numerically non-negative, and falls back to a dense
Cholesky factor of the active-cell covariance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.spatial import distance

from .domain import Domain, domain_from_dict
from .errors import ConfigurationError, DomainError, EvaluationError, SimulationInfeasibleError

NEGATIVE_EIG_RTOL = 1e-10
MAX_PAD_DOUBLINGS = 3
CHOLESKY_JITTER = 1e-12
MAX_DENSE_CELLS = 6000


@dataclass(frozen=True)
class CovarianceModel:
    """Cauchy family ``B(r) = (1 + r^beta_exp)^(-gamma_exp)``, long memory with alpha = beta_exp * gamma_exp."""

    beta_exp: float = 2.0
    gamma_exp: float = 0.1
    family: str = "cauchy"

    def __post_init__(self):
        if self.family != "cauchy":
            raise ConfigurationError(f"unsupported covariance family {self.family!r}")
        if not 0 < self.beta_exp <= 2:
            raise DomainError(f"beta_exp must lie in (0, 2], got {self.beta_exp}")
        if not self.gamma_exp > 0:
            raise DomainError(f"gamma_exp must be positive, got {self.gamma_exp}")

    @property
    def alpha(self) -> float:
        return self.beta_exp * self.gamma_exp

    def __call__(self, r):
        r = np.asarray(r, float)
        return (1.0 + r ** self.beta_exp) ** (-self.gamma_exp)

    def slowly_varying(self, r):
        """``L(r) = r^alpha B(r)``, tending to 1 at infinity."""
        r = np.asarray(r, float)
        return r ** self.alpha * self(r)

    def to_dict(self):
        return {"family": self.family, "beta_exp": self.beta_exp, "gamma_exp": self.gamma_exp}

    @classmethod
    def from_dict(cls, spec: dict) -> "CovarianceModel":
        try:
            return cls(float(spec.get("beta_exp", 2.0)), float(spec["gamma_exp"]),
                       spec.get("family", "cauchy"))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed covariance model {spec!r}") from exc

    @classmethod
    def for_alpha(cls, alpha: float, beta_exp: float = 2.0) -> "CovarianceModel":
        return cls(beta_exp, alpha / beta_exp)


def covariance(model: CovarianceModel, rdist):
    """``B(r)`` for ``r >= 0``."""
    if np.any(np.asarray(rdist) < 0):
        raise DomainError("distance must be non-negative")
    out = model(rdist)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred lattice over the bounding box of ``domain.scale(T)``."""

    domain: Domain
    T: float
    points_per_axis: Tuple[int, ...]

    def __init__(self, domain: Domain, T: float, points_per_axis):
        if not T > 0:
            raise DomainError("T must be positive")
        if np.isscalar(points_per_axis):
            points_per_axis = (int(points_per_axis),) * domain.d
        ppa = tuple(int(n) for n in points_per_axis)
        if len(ppa) != domain.d or min(ppa) < 1:
            raise DomainError(f"points_per_axis {points_per_axis} invalid for d={domain.d}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "T", float(T))
        object.__setattr__(self, "points_per_axis", ppa)

    @classmethod
    def from_density(cls, domain: Domain, T: float, cells_per_unit: float) -> "GridSpec":
        """Grid with (approximately) ``cells_per_unit`` cells per unit length on each axis."""
        box = domain.scale(T).bounding_box()
        counts = [max(1, int(round((hi - lo) * cells_per_unit))) for lo, hi in box]
        return cls(domain, T, counts)

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def scaled_domain(self) -> Domain:
        return self.domain.scale(self.T)

    @property
    def spacing(self) -> np.ndarray:
        box = self.scaled_domain.bounding_box()
        return (box[:, 1] - box[:, 0]) / np.array(self.points_per_axis)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self):
        box = self.scaled_domain.bounding_box()
        return [lo + (np.arange(n) + 0.5) * h for (lo, _), n, h in zip(box, self.points_per_axis, self.spacing)]

    def centers(self) -> np.ndarray:
        """All lattice centres, shape (prod(points_per_axis), d), C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def active_mask(self) -> np.ndarray:
        return self.scaled_domain.contains(self.centers())

    @property
    def n_active(self) -> int:
        return int(self.active_mask.sum())

    @property
    def active_volume(self) -> float:
        return self.n_active * self.cell_volume

    def to_dict(self):
        return {"domain": self.domain.to_dict(), "T": self.T, "points_per_axis": list(self.points_per_axis)}

    @classmethod
    def from_dict(cls, spec):
        return cls(domain_from_dict(spec["domain"]), spec["T"], spec["points_per_axis"])


@dataclass(frozen=True)
class FieldSample:
    """Field values over active cells, one row per copy."""

    grid: GridSpec
    values: np.ndarray
    seed: int
    copy_count: int
    kind: str = "gaussian"
    dof: Optional[int] = None
    model: Optional[CovarianceModel] = field(default=None, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 2 or v.shape[0] != self.copy_count or v.shape[1] != self.grid.n_active:
            raise ConfigurationError(
                f"values shape {v.shape} inconsistent with copy_count={self.copy_count}, "
                f"n_active={self.grid.n_active}")
        if not np.all(np.isfinite(v)):
            raise EvaluationError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def single(self) -> np.ndarray:
        if self.copy_count != 1:
            raise ConfigurationError("sample is not single-valued")
        return self.values[0]


class GaussianFieldSampler:
    """Reusable sampler for a (grid, model) pair.

    The embedding spectrum (or the dense factor) is computed once at
    construction; each call to :meth:`sample` only draws noise.
    """

    def __init__(self, grid: GridSpec, model: CovarianceModel):
        if grid.n_active < 2:
            raise ConfigurationError("grid needs at least two active cells")
        self.grid = grid
        self.model = model
        self._mask = grid.active_mask
        self.method, self.diagnostics = self._setup()

    def _embedding_spectrum(self, sizes):
        h = self.grid.spacing
        axes = []
        for m, hi in zip(sizes, h):
            k = np.arange(m)
            axes.append(np.minimum(k, m - k) * hi)
        mesh = np.meshgrid(*axes, indexing="ij")
        dist = np.sqrt(sum(x * x for x in mesh))
        return np.fft.fftn(self.model(dist)).real

    def _setup(self):
        n = np.array(self.grid.points_per_axis)
        base = np.maximum(2 * (n - 1), 1)
        tried = []
        for k in range(MAX_PAD_DOUBLINGS + 1):
            sizes = tuple(int(s) for s in base * 2 ** k)
            lam = self._embedding_spectrum(sizes)
            worst = lam.min() / lam.max()
            tried.append({"sizes": sizes, "min_over_max": float(worst)})
            if worst >= -NEGATIVE_EIG_RTOL:
                self._sizes = sizes
                self._sqrt_lam = np.sqrt(np.clip(lam, 0.0, None) / lam.size)
                return "circulant", {"embedding": tried}
        if self.grid.n_active > MAX_DENSE_CELLS:
            raise SimulationInfeasibleError(
                f"circulant embedding failed after {MAX_PAD_DOUBLINGS} doublings and "
                f"{self.grid.n_active} cells exceed the dense limit; attempts: {tried}")
        pts = self.grid.centers()[self._mask]
        cov = self.model(distance.cdist(pts, pts))
        cov[np.diag_indices_from(cov)] += CHOLESKY_JITTER
        try:
            self._chol = linalg.cholesky(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise SimulationInfeasibleError(
                f"circulant embedding and Cholesky fallback both failed; attempts: {tried}") from exc
        return "cholesky", {"embedding": tried}

    def _draw_pair(self, rng):
        shape = self._sizes
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        full = np.fft.fftn(self._sqrt_lam * z)
        window = tuple(slice(0, n) for n in self.grid.points_per_axis)
        re = full.real[window].ravel()[self._mask]
        im = full.imag[window].ravel()[self._mask]
        return re, im

    def sample(self, copies: int, seed: int) -> np.ndarray:
        """Array (copies, n_active); copy j depends only on (seed, j)."""
        if copies < 1:
            raise ConfigurationError("copies must be positive")
        out = np.empty((copies, self.grid.n_active))
        if self.method == "circulant":
            # one complex draw yields two independent fields
            for pair in range((copies + 1) // 2):
                rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, pair]))
                re, im = self._draw_pair(rng)
                out[2 * pair] = re
                if 2 * pair + 1 < copies:
                    out[2 * pair + 1] = im
        else:
            noise = np.empty((self.grid.n_active, copies))
            for j in range(copies):
                rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, j]))
                noise[:, j] = rng.standard_normal(self.grid.n_active)
            out[:] = (self._chol @ noise).T
        return out


def sample_gaussian(grid: GridSpec, model: CovarianceModel, copies: int, seed: int,
                    sampler: Optional[GaussianFieldSampler] = None) -> FieldSample:
    """``copies`` independent unit-variance Gaussian fields with covariance ``model``."""
    sampler = sampler or GaussianFieldSampler(grid, model)
    vals = sampler.sample(copies, seed)
    return FieldSample(grid, vals, seed, copies, "gaussian", None, model)


def chi_squared(sample: FieldSample) -> FieldSample:
    """Pointwise ``(1/2) sum_j Y_j^2`` over the copies."""
    if sample.kind != "gaussian":
        raise ConfigurationError("chi_squared expects a Gaussian sample")
    vals = 0.5 * np.sum(sample.values ** 2, axis=0, keepdims=True)
    return FieldSample(sample.grid, vals, sample.seed, 1, "chi2", sample.copy_count, sample.model)


def subordinate(sample: FieldSample, F) -> FieldSample:
    """Pointwise ``F`` of a single-valued sample."""
    x = sample.single
    y = np.asarray(F(x), float)
    if y.shape != x.shape:
        y = np.broadcast_to(y, x.shape).copy()
    bad = ~np.isfinite(y)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"F is not finite at active cell {i} (value {x[i]!r})")
    return FieldSample(sample.grid, y[None, :], sample.seed, 1, "subordinated", sample.dof, sample.model)


@dataclass(frozen=True)
class MomentReport:
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    lags: Tuple
    correlations: np.ndarray
    correlation_se: np.ndarray


def empirical_moments(sample: FieldSample, lags: Sequence = ()) -> MomentReport:
    """Pooled mean, variance and lagged correlations over copies and cells.

    Lags are integer lattice offsets (ints in d = 1, tuples otherwise). The
    standard errors treat values as independent, which understates the
    uncertainty for strongly dependent fields; use replicates for inference.
    """
    grid = sample.grid
    v = sample.values
    n = v.size
    mean = float(v.mean())
    var = float(v.var())
    m4 = float(np.mean((v - mean) ** 4))
    var_se = math.sqrt(max(m4 - var * var, 0.0) / n)

    lattice = np.full((sample.copy_count, grid.active_mask.size), np.nan)
    lattice[:, grid.active_mask] = v
    lattice = lattice.reshape((sample.copy_count,) + grid.points_per_axis)
    corrs, ses = [], []
    for lag in lags:
        off = (int(lag),) if np.isscalar(lag) else tuple(int(x) for x in lag)
        if len(off) != grid.d:
            raise ConfigurationError(f"lag {lag} has wrong dimension")
        a_sl, b_sl = [slice(None)], [slice(None)]
        for o, npts in zip(off, grid.points_per_axis):
            if abs(o) >= npts:
                raise ConfigurationError(f"lag {lag} exceeds the grid")
            a_sl.append(slice(0, npts - o) if o >= 0 else slice(-o, npts))
            b_sl.append(slice(o, npts) if o >= 0 else slice(0, npts + o))
        a = lattice[tuple(a_sl)].ravel()
        b = lattice[tuple(b_sl)].ravel()
        ok = np.isfinite(a) & np.isfinite(b)
        if var == 0:
            rho = float("nan")
        else:
            rho = float(np.mean((a[ok] - mean) * (b[ok] - mean)) / var)
        corrs.append(rho)
        ses.append((1.0 - min(rho * rho, 1.0)) / math.sqrt(max(ok.sum(), 1)) if var else float("nan"))
    return MomentReport(mean, float(v.std() / math.sqrt(n)), var, var_se, tuple(lags),
                        np.array(corrs), np.array(ses))


def save_sample(sample: FieldSample, path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``<path>.bin`` (little-endian float64, C order) and ``<path>.json``."""
    path = Path(path)
    bin_path, meta_path = path.with_suffix(".bin"), path.with_suffix(".json")
    sample.values.astype("<f8").tofile(bin_path)
    meta = {
        "grid": sample.grid.to_dict(),
        "shape": list(sample.values.shape),
        "seed": int(sample.seed),
        "copy_count": sample.copy_count,
        "kind": sample.kind,
        "dof": sample.dof,
        "model": sample.model.to_dict() if sample.model else None,
        "dtype": "<f8",
    }
    meta_path.write_text(json.dumps(meta, indent=2))
    return bin_path, meta_path


def load_sample(path: Union[str, Path]) -> FieldSample:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    vals = np.fromfile(path.with_suffix(".bin"), dtype=meta.get("dtype", "<f8")).reshape(meta["shape"])
    model = CovarianceModel.from_dict(meta["model"]) if meta.get("model") else None
    return FieldSample(GridSpec.from_dict(meta["grid"]), vals, meta["seed"], meta["copy_count"],
                       meta["kind"], meta["dof"], model)
