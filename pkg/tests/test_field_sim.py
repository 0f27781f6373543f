import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gammafield.domain import Ball, interval
from gammafield.errors import ConfigurationError, DomainError, EvaluationError, SimulationInfeasibleError
from gammafield.field_sim import (CovarianceModel, FieldSample, GaussianFieldSampler, GridSpec,
                                  chi_squared, covariance, empirical_moments, load_sample,
                                  sample_gaussian, save_sample, subordinate)
import gammafield.field_sim as fs

MODEL = CovarianceModel.for_alpha(0.2)


def test_cauchy_model_values():
    assert MODEL.alpha == pytest.approx(0.2)
    assert covariance(MODEL, 0.0) == 1.0
    assert covariance(MODEL, 3.0) == pytest.approx(10 ** -0.1)
    # slowly varying factor tends to 1
    assert float(MODEL.slowly_varying(1e8)) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DomainError):
        covariance(MODEL, -1.0)
    with pytest.raises(DomainError):
        CovarianceModel(2.5, 0.1)


@given(r=st.floats(0, 1e4))
@settings(max_examples=50, deadline=None)
def test_covariance_bounded(r):
    assert 0 < covariance(MODEL, r) <= 1


def test_grid_geometry():
    g = GridSpec.from_density(interval(1), 16, 4)
    assert g.points_per_axis == (128,)
    assert g.cell_volume == pytest.approx(0.25)
    assert g.active_volume == pytest.approx(32.0)
    disc = GridSpec(Ball(1.0, 2), 10, 40)
    assert disc.n_active < 40 * 40
    assert disc.active_volume == pytest.approx(math.pi * 100, rel=0.02)
    assert GridSpec.from_dict(g.to_dict()) == g


def _sample_covariance_check(sampler, grid, n_rep, seed):
    x = sampler.sample(n_rep, seed)
    pts = grid.centers()[grid.active_mask][:, 0]
    target = MODEL(np.abs(pts[:, None] - pts[None, :]))
    emp = x.T @ x / n_rep
    # se of a product-moment estimate: sqrt((1 + rho^2) / n)
    se = np.sqrt((1 + target ** 2) / n_rep)
    return np.max(np.abs(emp - target) / se)


def test_circulant_exactness():
    grid = GridSpec.from_density(interval(1), 64, 0.5)  # 64 points, spacing 2
    sampler = GaussianFieldSampler(grid, MODEL)
    assert sampler.method == "circulant"
    assert _sample_covariance_check(sampler, grid, 100_000, 11) < 4.0


def test_cholesky_exactness(monkeypatch):
    grid = GridSpec.from_density(interval(1), 8, 4)  # 64 points
    monkeypatch.setattr(fs, "MAX_PAD_DOUBLINGS", -1)
    sampler = GaussianFieldSampler(grid, MODEL)
    assert sampler.method == "cholesky"
    assert _sample_covariance_check(sampler, grid, 100_000, 12) < 4.0


def test_dense_limit(monkeypatch):
    monkeypatch.setattr(fs, "MAX_PAD_DOUBLINGS", -1)
    monkeypatch.setattr(fs, "MAX_DENSE_CELLS", 10)
    with pytest.raises(SimulationInfeasibleError):
        GaussianFieldSampler(GridSpec.from_density(interval(1), 8, 4), MODEL)


def test_determinism_and_copy_independence():
    grid = GridSpec.from_density(interval(1), 128, 4)
    a = sample_gaussian(grid, MODEL, 3, seed=5).values
    b = sample_gaussian(grid, MODEL, 3, seed=5).values
    c = sample_gaussian(grid, MODEL, 3, seed=6).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # copy j depends only on (seed, j)
    assert np.array_equal(sample_gaussian(grid, MODEL, 2, seed=5).values, a[:2])


def test_chi_squared_marginal_and_correlation():
    grid = GridSpec.from_density(interval(1), 64, 0.5)
    sampler = GaussianFieldSampler(grid, MODEL)
    r, reps = 3, 20_000
    Y = sampler.sample(r * reps, 3).reshape(reps, r, -1)
    chi = 0.5 * np.sum(Y ** 2, axis=1)
    # Gamma(r/2): mean and variance r/2
    assert chi.mean() == pytest.approx(1.5, rel=0.03)
    assert chi[:, 0].var() == pytest.approx(1.5, rel=0.05)
    # corr(chi(x), chi(y)) = B(|x-y|)^2
    lag = 3
    rho = np.corrcoef(chi[:, 0], chi[:, lag])[0, 1]
    assert rho == pytest.approx(float(MODEL(2.0 * lag)) ** 2, abs=4 / math.sqrt(reps))


def test_chi_squared_and_subordinate_types():
    grid = GridSpec.from_density(interval(1), 16, 2)
    s = sample_gaussian(grid, MODEL, 2, seed=1)
    chi = chi_squared(s)
    assert chi.kind == "chi2" and chi.dof == 2
    np.testing.assert_allclose(chi.single, 0.5 * (s.values ** 2).sum(axis=0))
    with pytest.raises(ConfigurationError):
        chi_squared(chi)
    sq = subordinate(chi, lambda u: u ** 2)
    np.testing.assert_allclose(sq.single, chi.single ** 2)
    with pytest.raises(EvaluationError):
        subordinate(chi, lambda u: np.where(u > 0, np.inf, 0.0))


def test_values_read_only():
    grid = GridSpec.from_density(interval(1), 16, 2)
    s = sample_gaussian(grid, MODEL, 1, seed=1)
    with pytest.raises(ValueError):
        s.values[0, 0] = 1.0


def test_save_load_round_trip(tmp_path):
    grid = GridSpec.from_density(interval(1), 16, 2)
    s = sample_gaussian(grid, MODEL, 2, seed=9)
    save_sample(s, tmp_path / "f")
    raw = np.fromfile(tmp_path / "f.bin", dtype="<f8")
    assert raw.size == s.values.size
    back = load_sample(tmp_path / "f")
    assert np.array_equal(back.values, s.values)
    assert back.seed == 9 and back.model == MODEL


def test_empirical_moments_lag_zero():
    grid = GridSpec.from_density(interval(1), 64, 1)
    s = sample_gaussian(grid, MODEL, 50, seed=2)
    rep = empirical_moments(s, lags=[0, 1])
    assert rep.correlations[0] == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        empirical_moments(s, lags=[10_000])


def test_two_dimensional_disc_sampler():
    grid = GridSpec.from_density(Ball(1.0, 2), 8, 4)
    sampler = GaussianFieldSampler(grid, MODEL)
    x = sampler.sample(4, 0)
    assert x.shape == (4, grid.n_active)
    assert np.all(np.isfinite(x))
