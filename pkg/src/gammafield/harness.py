"""Monte Carlo experiments on normalized chi-squared field integrals.

For a subordinating function F of Laguerre rank k the normalized integral is

    S_T(F) = [sum_cells F(chi2(x)) h - C_0 * active_volume] / (a_k L(T)^k T^{d - k alpha})

with ``a_k^2 = int_D int_D |x-y|^{-2k alpha}`` and ``L(T) = T^alpha B(T)``
evaluated exactly for the covariance model.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .domain import Domain, domain_from_dict, singular_moment
from .errors import (ConfigurationError, DivergenceError, RankUndeterminedError,
                     StatisticsError)
from .field_sim import CovarianceModel, GaussianFieldSampler, GridSpec
from .gamma_model import SubordinatingFunction, laguerre_rank
from .specfun import gamma_expectation, hermite, laguerre_e

THREADS_ENV = "GAMMAFIELD_THREADS"
MAX_GRID_CELLS = 1 << 20
MIN_SCALING_REPLICATES = 100
MIN_KS_SIZE = 100


# ---------------------------------------------------------------------------
# subordinating functions


def _power(params, r):
    p = float(params.get("p", 1.0))
    c = float(params.get("scale", 1.0))
    return SubordinatingFunction(lambda u: c * np.asarray(u, float) ** p, f"power(p={p})")


def _polynomial(params, r):
    coeffs = [float(c) for c in params["coeffs"]]
    if not coeffs:
        raise ConfigurationError("polynomial needs at least one coefficient")
    # numpy's polyval wants the highest degree first
    return SubordinatingFunction(lambda u: np.polyval(coeffs[::-1], np.asarray(u, float)),
                                 f"polynomial{tuple(coeffs)}")


def _laguerre(params, r):
    k = int(params["k"])
    c = float(params.get("scale", 1.0))
    beta = 0.5 * r
    return SubordinatingFunction(lambda u: c * laguerre_e(k, beta, u), f"laguerre(k={k})")


def _constant(params, r):
    v = float(params.get("value", 1.0))
    return SubordinatingFunction(lambda u: np.full(np.shape(u), v), f"constant({v})", mean=v)


def _exponential(params, r):
    rate = float(params.get("rate", 1.0))
    return SubordinatingFunction(lambda u: np.exp(-rate * np.asarray(u, float)), f"exp(-{rate}u)")


def _log(params, r):
    return SubordinatingFunction(lambda u: np.log(np.asarray(u, float)), "log")


F_REGISTRY: Dict[str, Callable] = {
    "power": _power,
    "polynomial": _polynomial,
    "laguerre": _laguerre,
    "constant": _constant,
    "exp": _exponential,
    "log": _log,
}


def build_function(spec: dict, r: int) -> SubordinatingFunction:
    """``{"name": ..., "params": {...}}`` -> :class:`SubordinatingFunction`."""
    try:
        builder = F_REGISTRY[spec["name"]]
        return builder(spec.get("params", {}) or {}, r)
    except KeyError as exc:
        raise ConfigurationError(f"unknown or incomplete function spec {spec!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad function parameters {spec!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    model: CovarianceModel
    domain: Domain
    r: int
    F_spec: dict
    T_list: Tuple[float, ...]
    cells_per_unit: int = 4
    replicates: int = 200
    seed: int = 0
    rank: int = 1

    def __post_init__(self):
        if not isinstance(self.r, int) or self.r < 1:
            raise ConfigurationError("r must be a positive integer")
        if self.rank not in (1, 2):
            raise ConfigurationError("rank must be 1 or 2")
        T = tuple(float(t) for t in self.T_list)
        if not T or min(T) <= 0 or any(b <= a for a, b in zip(T, T[1:])):
            raise ConfigurationError("T_list must be increasing positive values")
        object.__setattr__(self, "T_list", T)
        if not isinstance(self.cells_per_unit, int) or self.cells_per_unit < 1:
            raise ConfigurationError("cells_per_unit must be a positive integer")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigurationError("replicates must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit non-negative integer")
        d, alpha = self.domain.d, self.model.alpha
        limit = d / 2 if self.rank == 1 else d / 4
        if not alpha < limit:
            raise DivergenceError(f"rank {self.rank} needs alpha < {limit}, got alpha = {alpha}")
        cells = self.grid(T[-1]).points_per_axis
        if math.prod(cells) > MAX_GRID_CELLS:
            raise ConfigurationError(f"largest grid {cells} exceeds the {MAX_GRID_CELLS}-cell budget")
        build_function(self.F_spec, self.r)

    @property
    def alpha(self) -> float:
        return self.model.alpha

    @property
    def beta(self) -> float:
        return 0.5 * self.r

    def function(self) -> SubordinatingFunction:
        return build_function(self.F_spec, self.r)

    def grid(self, T: float) -> GridSpec:
        return GridSpec.from_density(self.domain, T, self.cells_per_unit)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "domain": self.domain.to_dict(), "r": self.r,
                "F": self.F_spec, "T_list": list(self.T_list), "cells_per_unit": self.cells_per_unit,
                "replicates": self.replicates, "seed": self.seed, "rank": self.rank}

    @classmethod
    def from_dict(cls, spec: dict) -> "ExperimentConfig":
        if not isinstance(spec, dict):
            raise ConfigurationError("config must be a JSON object")
        known = {"model", "domain", "r", "F", "T_list", "cells_per_unit", "replicates", "seed", "rank"}
        extra = set(spec) - known
        if extra:
            raise ConfigurationError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(
                model=CovarianceModel.from_dict(spec["model"]),
                domain=domain_from_dict(spec["domain"]),
                r=spec["r"],
                F_spec=spec.get("F", {"name": "laguerre", "params": {"k": spec.get("rank", 1)}}),
                T_list=tuple(spec.get("T_list", (32, 64, 128, 256, 512))),
                cells_per_unit=spec.get("cells_per_unit", 4),
                replicates=spec.get("replicates", 200),
                seed=spec.get("seed", 0),
                rank=spec.get("rank", 1),
            )
        except KeyError as exc:
            raise ConfigurationError(f"config is missing {exc}") from exc
        except TypeError as exc:
            raise ConfigurationError(f"malformed config: {exc}") from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_dict(spec)


# ---------------------------------------------------------------------------
# normalization and per-replicate functionals


@lru_cache(maxsize=64)
def _riesz_moment(domain: Domain, s: float) -> float:
    return singular_moment(domain, s, seed=0).value


def normalization(config: ExperimentConfig, T: float, k: Optional[int] = None) -> float:
    """``a_k L(T)^k T^{d - k alpha}``."""
    k = config.rank if k is None else k
    alpha, d = config.alpha, config.domain.d
    a_k = math.sqrt(_riesz_moment(config.domain, 2 * k * alpha))
    L = float(config.model.slowly_varying(T))
    return a_k * L ** k * T ** (d - k * alpha)


def replicate_seed(seed: int, T: float, replicate: int) -> int:
    """64-bit seed for one replicate, derived from (seed, T, replicate)."""
    t_bits = int(np.float64(T).view(np.uint64))
    state = np.random.SeedSequence([seed, t_bits, replicate]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def hermite_forms(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``e_1`` and ``e_2`` of ``(1/2) sum_j Y_j^2`` written through Hermite polynomials.

    ``Y`` has shape (r, cells). Returns
    ``-sum_j H2(Y_j) / sqrt(2r)`` and
    ``[sum_j H4(Y_j) + sum_{j != k} H2(Y_j) H2(Y_k)] / sqrt(8 r (r+2))``.
    """
    r = Y.shape[0]
    h2 = hermite(2, Y)
    h4 = hermite(4, Y)
    s2 = h2.sum(axis=0)
    e1 = -s2 / math.sqrt(2.0 * r)
    e2 = (h4.sum(axis=0) + s2 * s2 - np.sum(h2 * h2, axis=0)) / math.sqrt(8.0 * r * (r + 2))
    return e1, e2


@dataclass(frozen=True)
class ReplicateValues:
    """Normalized integrals on one replicate (same field for all entries).

    ``S_F`` uses the config's rank; ``S_basis[k-1]`` and ``S_hermite[k-1]``
    are the order-k Laguerre integrals, each with its own order-k scaling.
    """

    S_F: float
    S_basis: Tuple[float, float]
    S_hermite: Tuple[float, float]


class FunctionalEvaluator:
    """Evaluates per-replicate functionals for one (config, T); reuses the field sampler."""

    def __init__(self, config: ExperimentConfig, T: float, F: Optional[SubordinatingFunction] = None):
        self.config = config
        self.T = float(T)
        self.grid = config.grid(T)
        self.sampler = GaussianFieldSampler(self.grid, config.model)
        self.F = F or config.function()
        self.C0 = _mean_of(self.F, config.beta)
        self.h = self.grid.cell_volume
        self.volume = self.grid.active_volume
        self.norm = {k: normalization(config, T, k) for k in (1, 2)}

    def fields(self, seed: int) -> np.ndarray:
        return self.sampler.sample(self.config.r, seed)

    def evaluate(self, seed: int) -> ReplicateValues:
        Y = self.fields(seed)
        chi2 = 0.5 * np.sum(Y * Y, axis=0)
        fvals = np.asarray(self.F(chi2), float)
        if not np.all(np.isfinite(fvals)):
            raise ConfigurationError("F produced non-finite values on the simulated field")
        k = self.config.rank
        S_F = (fvals.sum() * self.h - self.C0 * self.volume) / self.norm[k]
        beta = self.config.beta
        basis = tuple(float(np.sum(laguerre_e(q, beta, chi2)) * self.h / self.norm[q]) for q in (1, 2))
        e1, e2 = hermite_forms(Y)
        herm = (float(e1.sum() * self.h / self.norm[1]), float(e2.sum() * self.h / self.norm[2]))
        return ReplicateValues(float(S_F), basis, herm)


def _mean_of(F: SubordinatingFunction, beta: float) -> float:
    if F.mean is not None:
        return float(F.mean)
    return gamma_expectation(lambda u: float(F(u)), beta)


def functional_ST(config: ExperimentConfig, T: float, replicate_seed: int) -> float:
    """``S_T(F)`` for one replicate."""
    return FunctionalEvaluator(config, T).evaluate(replicate_seed).S_F


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def run_replicates(config: ExperimentConfig, T: float, replicates: Optional[int] = None,
                   F: Optional[SubordinatingFunction] = None) -> List[ReplicateValues]:
    """All replicates at one T, ordered by replicate index."""
    n = config.replicates if replicates is None else replicates
    ev = FunctionalEvaluator(config, T, F)
    seeds = [replicate_seed(config.seed, T, i) for i in range(n)]
    workers = thread_count()
    if workers == 1:
        return [ev.evaluate(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(ev.evaluate, seeds))


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ReportRecord:
    T: float
    replicate: int
    S_value: float
    variance: float = float("nan")
    residual: float = float("nan")


@dataclass(frozen=True)
class ScalingResult:
    slope: float
    stderr: float
    target: float
    T: Tuple[float, ...]
    variances: Tuple[float, ...]


def variance_scaling(config: ExperimentConfig) -> ScalingResult:
    """Slope of ``log Var[int_{D(T)} e_k(chi2)]`` against ``log T``.

    ``k`` is ``config.rank``. Each log-variance has (approximately) the same
    sampling error, so ordinary least squares is the weighted fit.
    """
    if len(config.T_list) < 4:
        raise StatisticsError("variance scaling needs at least 4 values of T")
    if config.replicates < MIN_SCALING_REPLICATES:
        raise StatisticsError(f"variance scaling needs at least {MIN_SCALING_REPLICATES} replicates")
    k = config.rank
    variances = []
    for T in config.T_list:
        vals = np.array([rv.S_basis[k - 1] for rv in run_replicates(config, T)])
        raw = vals * normalization(config, T, k)
        variances.append(float(np.var(raw, ddof=1)))
    fit = stats.linregress(np.log(config.T_list), np.log(variances))
    d = config.domain.d
    return ScalingResult(float(fit.slope), float(fit.stderr), 2 * d - 2 * k * config.alpha,
                         config.T_list, tuple(variances))


@dataclass(frozen=True)
class ResidualResult:
    rank: int
    leading_coeff: float
    T: Tuple[float, ...]
    ratios: Tuple[float, ...]
    records: Tuple[ReportRecord, ...] = field(repr=False, default=())


def reduction_residual(config: ExperimentConfig) -> ResidualResult:
    """``Var[S_T(F) - C_k S_{k,T}] / Var[S_T(F)]`` per T on coupled samples."""
    if config.replicates < MIN_SCALING_REPLICATES:
        raise StatisticsError(f"reduction residual needs at least {MIN_SCALING_REPLICATES} replicates")
    F = config.function()
    try:
        rank = laguerre_rank(F, config.beta, q_max=4)
    except RankUndeterminedError as exc:
        raise ConfigurationError(f"F has no detectable Laguerre rank: {exc}") from exc
    k, Ck = rank.rank, rank.leading_coeff
    if k > 2:
        raise ConfigurationError(f"F has rank {k}; only ranks 1 and 2 are supported")
    if k != config.rank:
        config = _replace(config, rank=k)
    ratios, records = [], []
    for T in config.T_list:
        rows = run_replicates(config, T, F=F)
        S = np.array([rv.S_F for rv in rows])
        resid = S - Ck * np.array([rv.S_basis[k - 1] for rv in rows])
        var_S = float(np.var(S, ddof=1))
        ratio = float(np.var(resid, ddof=1)) / var_S if var_S > 0 else 0.0
        ratios.append(ratio)
        records.extend(ReportRecord(T, i, float(S[i]), var_S, float(resid[i])) for i in range(len(rows)))
    return ResidualResult(k, Ck, config.T_list, tuple(ratios), tuple(records))


def _replace(config: ExperimentConfig, **changes) -> ExperimentConfig:
    spec = config.to_dict()
    spec.update(changes)
    return ExperimentConfig.from_dict(spec)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float


def ks_compare(samples_a, samples_b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov distance and asymptotic p-value."""
    a = np.asarray(samples_a, float).ravel()
    b = np.asarray(samples_b, float).ravel()
    if a.size < MIN_KS_SIZE or b.size < MIN_KS_SIZE:
        raise StatisticsError(f"KS comparison needs at least {MIN_KS_SIZE} samples per side")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise StatisticsError("samples must be finite")
    res = stats.ks_2samp(a, b, method="asymp")
    return KSResult(float(res.statistic), float(res.pvalue))


def write_records(records: Sequence[ReportRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "replicate", "S_value", "variance", "residual"])
        for rec in records:
            w.writerow([f"{rec.T:.17g}", rec.replicate, f"{rec.S_value:.17g}",
                        f"{rec.variance:.17g}", f"{rec.residual:.17g}"])
