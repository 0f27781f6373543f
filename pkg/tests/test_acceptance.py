"""The twelve acceptance criteria at their stated tolerances.

Each test logs one PASS/FAIL line (collected at the end of the run) and then
asserts, so a failing criterion also fails the test.
"""

import itertools
import math

import numpy as np
import pytest
from scipy import special

from gammafield.domain import interval, two_fold_identity
from gammafield.field_sim import CovarianceModel, GridSpec, sample_gaussian
from gammafield.gamma_model import bivariate_density_closed, bivariate_density_series
from gammafield.harness import (ExperimentConfig, hermite_forms, ks_compare, reduction_residual,
                                run_replicates, variance_scaling)
from gammafield.limit_dist import (Rank1Limit, Rank2Limit, charfn_rank1, fit_small_u_slope,
                                   levy_asymptote, levy_density, sample_rank1, sample_rank2,
                                   small_u_slope)
from gammafield.specfun import laguerre_e
from gammafield.spectral import fredholm_det, nystrom_eigs, rank2_spectrum

SEED = 20141011
ALPHA = 0.2
MODEL = CovarianceModel.for_alpha(ALPHA)  # Cauchy family, beta = 2, gamma = 0.1
T_LIST = (32, 64, 128, 256, 512)
D = interval(1)


def config(F, rank=1, replicates=200, T=T_LIST):
    return ExperimentConfig(MODEL, D, 2, F, T, 4, replicates, SEED, rank)


def test_01_laguerre_orthonormality(criterion):
    # Gauss-Laguerre with weight u^{beta-1} e^{-u} is exact for degree <= 2*40 - 1
    worst = 0.0
    for beta in (0.5, 1.0, 2.5):
        u, w = special.roots_genlaguerre(40, beta - 1)
        w = w / special.gamma(beta)
        E = np.array([laguerre_e(k, beta, u) for k in range(13)])
        gram = (E * w) @ E.T
        worst = max(worst, np.max(np.abs(gram - np.eye(13))))
    assert criterion(1, worst < 1e-8, f"max |<e_k,e_m> - delta| = {worst:.2e} (< 1e-8)")


def test_02_hille_hardy(criterion):
    grid = np.linspace(0.1, 8.0, 5)
    U, W = np.meshgrid(grid, grid)
    worst, where = 0.0, None
    for g, beta in itertools.product((0.1, 0.5, 0.9), (0.5, 1.0, 3.0)):
        err = np.max(np.abs(bivariate_density_closed(U, W, g, beta)
                            - bivariate_density_series(U, W, g, beta, 100)))
        if err > worst:
            worst, where = err, (g, beta)
    assert criterion(2, worst < 1e-6,
                     f"sup |closed - 100-term series| = {worst:.2e} at (gamma, beta) = {where} (< 1e-6)")


def test_03_hermite_forms(criterion):
    grid = GridSpec.from_density(D, 1250, 4)  # 10^4 cells
    worst = 0.0
    for r in (1, 2, 5):
        Y = sample_gaussian(grid, MODEL, r, SEED + r).values
        chi2 = 0.5 * np.sum(Y * Y, axis=0)
        e1, e2 = hermite_forms(Y)
        worst = max(worst, np.max(np.abs(e1 - laguerre_e(1, r / 2, chi2))),
                    np.max(np.abs(e2 - laguerre_e(2, r / 2, chi2))))
    assert grid.n_active == 10_000
    assert criterion(3, worst < 1e-10, f"max Hermite/Laguerre mismatch = {worst:.2e} (< 1e-10)")


def test_04_trace_target(criterion):
    target = 16 * math.sqrt(2) / 3
    mass = nystrom_eigs(D, 0.25, 512).l2_mass
    rel = abs(mass / target - 1)
    assert criterion(4, rel < 0.02, f"sum lambda^2 = {mass:.6f} vs {target:.6f}, rel {rel:.2e} (< 0.02)")


def test_05_two_fold_identity(criterion):
    check = two_fold_identity(D, 0.25)
    assert criterion(5, check.rel_error < 0.01,
                     f"quadrature {check.lhs:.6f} vs closed form {check.rhs:.6f}, "
                     f"rel {check.rel_error:.2e} (< 0.01)")


def test_06_fredholm_methods(criterion):
    spec = nystrom_eigs(D, 0.25, 512)
    radius = 0.5 / spec.top ** 2
    worst = 0.0
    for frac, angle in itertools.product((0.1, 0.5, 1.0), np.linspace(0, 2 * np.pi, 12, endpoint=False)):
        omega = frac * radius * np.exp(1j * angle)
        a = fredholm_det(spec, omega, "product")
        b = fredholm_det(spec, omega, "series")
        worst = max(worst, abs(a - b))
    assert criterion(6, worst < 1e-8, f"max |product - series| = {worst:.2e} (< 1e-8)")


@pytest.fixture(scope="module")
def rank1_limit():
    return Rank1Limit.from_spectrum(nystrom_eigs(D, ALPHA, 512), 2)


def test_07_charfn_sampler_duality(criterion, rank1_limit):
    x = sample_rank1(rank1_limit, 1_000_000, SEED).values
    zs = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)
    worst = max(abs(np.mean(np.exp(1j * z * x)) - charfn_rank1(rank1_limit, z)) for z in zs)
    h = 1e-3
    logs = [np.log(charfn_rank1(rank1_limit, z)) for z in (-h, 0.0, h)]
    second = -(logs[0] - 2 * logs[1] + logs[2]).real / h ** 2
    ok = worst < 0.01 and abs(second - 1) < 0.02 and abs(x.var() - 1) < 0.02
    assert criterion(7, ok, f"max |phi_emp - phi| = {worst:.2e} (< 0.01); second cumulant "
                            f"{second:.4f} analytic, {x.var():.4f} empirical (1 +- 0.02)")


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 2])
def test_08_variance_scaling(criterion, k):
    res = variance_scaling(config({"name": "laguerre", "params": {"k": k}}, rank=k))
    ok = abs(res.slope - res.target) <= 0.15
    assert criterion(8, ok, f"k={k}: slope {res.slope:.3f} +- {res.stderr:.3f} (fit s.e.) "
                            f"vs {res.target:.3f} (+- 0.15)")


@pytest.mark.slow
def test_09_reduction_principle(criterion):
    # 5000 replicates, fixed in advance; the order-2 residual is heavy-tailed, so the
    # ratios still carry 10-40% relative error and monotonicity is not guaranteed
    res = reduction_residual(config({"name": "power", "params": {"p": 2}}, replicates=5000))
    ratios = np.array(res.ratios)
    monotone = bool(np.all(np.diff(ratios) < 0))
    ok = monotone and ratios[-1] < 0.1
    assert criterion(9, ok, "ratios " + ", ".join(f"{v:.4f}" for v in ratios)
                     + f" (monotone: {monotone}; last < 0.1)")


@pytest.fixture(scope="module")
def replicates_512():
    cfg = config({"name": "laguerre", "params": {"k": 1}}, replicates=2000, T=(512,))
    return run_replicates(cfg, 512)


@pytest.mark.slow
def test_10_distributional_convergence(criterion, rank1_limit, replicates_512):
    S = np.array([rv.S_basis[0] for rv in replicates_512])
    limit = sample_rank1(rank1_limit, 2000, SEED + 1).values
    res = ks_compare(S, limit)
    assert criterion(10, res.statistic < 0.05,
                     f"KS distance {res.statistic:.4f} (p = {res.pvalue:.3f}) (< 0.05)")


def test_11_levy_asymptotics(criterion):
    dist = Rank1Limit.from_spectrum(nystrom_eigs(D, 0.25, 2048), 2)
    u = 20 * dist.jump_scales[0] * np.array([1.0, 2.0, 4.0, 8.0])
    ratio = levy_density(dist, u) / levy_asymptote(dist, u, "large_u")
    large_dev = float(np.max(np.abs(ratio - 1)))
    slope, window = fit_small_u_slope(dist)
    target = small_u_slope(dist)
    small_dev = abs(slope / target - 1)
    ok = large_dev < 0.05 and small_dev < 0.05
    assert criterion(11, ok, f"large-u max |ratio - 1| = {large_dev:.2e}; small-u slope {slope:.3f} "
                             f"vs {target:.3f} on u in [{window[0]:.1e}, {window[1]:.1e}], "
                             f"rel {small_dev:.3f} (both < 0.05)")


@pytest.mark.slow
def test_12_rank_two_chain(criterion, replicates_512):
    two = rank2_spectrum(D, ALPHA, 64)
    norm_dev = float(np.max(np.abs(two.weight_norms - 1)))
    dist = Rank2Limit.from_spectrum(two, 2)
    draws = sample_rank2(dist, 200_000, SEED)
    x = draws.values
    se = x.std() / math.sqrt(x.size)
    S2 = np.array([rv.S_basis[1] for rv in replicates_512])
    mc_var, limit_var = S2.var(ddof=1), x.var()
    var_rel = abs(limit_var / mc_var - 1)
    ok = abs(x.mean()) < 3 * se and var_rel < 0.15 and norm_dev < 1e-3
    assert criterion(12, ok, f"mean {x.mean():.4f} (3 s.e. = {3 * se:.4f}); sampler variance "
                             f"{limit_var:.4f} vs Var S_2,T(512) = {mc_var:.4f}, rel {var_rel:.3f} "
                             f"(< 0.15); max |sum gamma^2 - 1| = {norm_dev:.1e} (< 1e-3)")
