import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gammafield.domain import interval
from gammafield.errors import ConfigurationError, DivergenceError, StatisticsError
from gammafield.field_sim import CovarianceModel
from gammafield.gamma_model import SubordinatingFunction
from gammafield.harness import (THREADS_ENV, ExperimentConfig, FunctionalEvaluator,
                                functional_ST, hermite_forms, ks_compare, load_config,
                                normalization, reduction_residual, replicate_seed, run_replicates,
                                thread_count, variance_scaling, write_records)
from gammafield.specfun import laguerre_e

MODEL = CovarianceModel.for_alpha(0.2)


def make(F=None, r=2, T=(16, 32, 64, 128), replicates=20, rank=1, seed=3):
    F = F or {"name": "laguerre", "params": {"k": rank}}
    return ExperimentConfig(MODEL, interval(1), r, F, T, 4, replicates, seed, rank)


@pytest.mark.parametrize("r", [1, 2, 5])
def test_hermite_forms_match_laguerre(r):
    Y = np.random.default_rng(r).normal(size=(r, 300))
    chi2 = 0.5 * np.sum(Y * Y, axis=0)
    e1, e2 = hermite_forms(Y)
    np.testing.assert_allclose(e1, laguerre_e(1, r / 2, chi2), atol=1e-10)
    np.testing.assert_allclose(e2, laguerre_e(2, r / 2, chi2), atol=1e-10)


def test_normalization_closed_form():
    # interval [-T, T]: a_k^2 = 2 * 2^{2-s} / ((1-s)(2-s)), s = 2 k alpha
    # L(T) = T^alpha (1 + T^2)^{-alpha/2} for the Cauchy model used here
    cfg = make()
    for k in (1, 2):
        s = 0.4 * k
        a = math.sqrt(2 * 2 ** (2 - s) / ((1 - s) * (2 - s)))
        for T in (10.0, 100.0):
            L = T ** 0.2 * (1 + T * T) ** -0.1
            assert normalization(cfg, T, k) == pytest.approx(a * L ** k * T ** (1 - 0.2 * k), rel=1e-10)


def test_constant_function_gives_zero():
    cfg = make({"name": "constant", "params": {"value": 2.5}})
    assert functional_ST(cfg, 32, 11) == pytest.approx(0.0, abs=1e-12)


@given(c=st.floats(-5, 5))
@settings(max_examples=10, deadline=None)
def test_adding_constant_leaves_ST_unchanged(c):
    base = make({"name": "polynomial", "params": {"coeffs": [0.0, 1.0]}})
    shifted = make({"name": "polynomial", "params": {"coeffs": [c, 1.0]}})
    assert functional_ST(shifted, 32, 7) == pytest.approx(functional_ST(base, 32, 7), abs=1e-9)


def test_multiple_of_basis_has_zero_residual():
    cfg = make({"name": "laguerre", "params": {"k": 1, "scale": -1.7}}, replicates=100, T=(16, 32))
    res = reduction_residual(cfg)
    assert res.rank == 1
    assert res.leading_coeff == pytest.approx(-1.7, rel=1e-8)
    assert max(res.ratios) < 1e-12


def test_identity_reduces_to_rank_one_exactly():
    # u = beta - sqrt(beta) e_1 with beta = r/2, so the residual is zero
    cfg = make({"name": "power", "params": {"p": 1}}, replicates=100, T=(16, 32))
    res = reduction_residual(cfg)
    assert res.rank == 1
    assert max(res.ratios) < 1e-12


def test_residual_detects_rank_two():
    cfg = make({"name": "laguerre", "params": {"k": 2}}, replicates=100, T=(16, 32), rank=1)
    res = reduction_residual(cfg)
    assert res.rank == 2
    with pytest.raises(ConfigurationError):
        reduction_residual(make({"name": "constant"}, replicates=100))


def test_determinism_and_threads(monkeypatch):
    cfg = make()
    a = [rv.S_F for rv in run_replicates(cfg, 32, 6)]
    b = [rv.S_F for rv in run_replicates(cfg, 32, 6)]
    monkeypatch.setenv(THREADS_ENV, "3")
    assert thread_count() == 3
    c = [rv.S_F for rv in run_replicates(cfg, 32, 6)]
    assert a == b == c
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigurationError):
        thread_count()


def test_replicate_seeds_distinct():
    seeds = {replicate_seed(1, T, i) for T in (32.0, 64.0) for i in range(50)}
    assert len(seeds) == 100
    assert replicate_seed(1, 32.0, 0) != replicate_seed(2, 32.0, 0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        make(T=(64, 32))
    with pytest.raises(DivergenceError):
        ExperimentConfig(CovarianceModel.for_alpha(0.6), interval(1), 2, {"name": "log"}, (8, 16))
    with pytest.raises(DivergenceError):
        ExperimentConfig(CovarianceModel.for_alpha(0.3), interval(1), 2, {"name": "log"}, (8, 16), rank=2)
    with pytest.raises(ConfigurationError):
        make(F={"name": "spline"})
    with pytest.raises(ConfigurationError):
        make(T=(1e7,))
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({**make().to_dict(), "colour": "red"})


def test_config_round_trip(tmp_path):
    cfg = make()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert load_config(path) == cfg
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_scaling_needs_enough_data():
    with pytest.raises(StatisticsError):
        variance_scaling(make(T=(16, 32, 64), replicates=200))
    with pytest.raises(StatisticsError):
        variance_scaling(make(replicates=50))


def test_ks_compare():
    x = np.random.default_rng(0).normal(size=500)
    res = ks_compare(x, x)
    assert res.statistic == 0.0 and res.pvalue == pytest.approx(1.0)
    shifted = ks_compare(x, x + 1.0)
    assert shifted.statistic > 0.3 and shifted.pvalue < 1e-10
    with pytest.raises(StatisticsError):
        ks_compare(x[:50], x)
    with pytest.raises(StatisticsError):
        ks_compare(np.append(x, np.nan), x)


def test_non_finite_F_is_rejected():
    inf = SubordinatingFunction(lambda u: np.where(np.asarray(u) > 0, np.inf, 0.0), "inf", mean=0.0)
    ev = FunctionalEvaluator(make(), 32, inf)
    with pytest.raises(ConfigurationError):
        ev.evaluate(1)


def test_write_records(tmp_path):
    res = reduction_residual(make({"name": "power", "params": {"p": 2}}, replicates=100, T=(16, 32)))
    write_records(res.records, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "T,replicate,S_value,variance,residual"
    assert len(lines) == 201


def test_coupling_matters():
    # same seeds for S_T(F) and S_{1,T}: tiny residual; decoupled seeds: residual ~ 1 + C_1^2 ratio
    F = {"name": "power", "params": {"p": 2}}
    coupled = make(F, replicates=200, T=(64,))
    other = make(F, replicates=200, T=(64,), seed=99)
    a = run_replicates(coupled, 64)
    b = run_replicates(other, 64)
    S = np.array([rv.S_F for rv in a])
    C1 = reduction_residual(coupled).leading_coeff
    ratio_coupled = np.var(S - C1 * np.array([rv.S_basis[0] for rv in a])) / np.var(S)
    ratio_swapped = np.var(S - C1 * np.array([rv.S_basis[0] for rv in b])) / np.var(S)
    assert ratio_coupled < 0.3 < 1.5 < ratio_swapped
    # marginals of the two runs agree in distribution
    assert ks_compare(S, [rv.S_F for rv in b]).pvalue > 1e-3


def test_riemann_sum_consistency():
    F = {"name": "power", "params": {"p": 2}}
    coarse = make(F, replicates=200, T=(32,))
    fine = ExperimentConfig(MODEL, interval(1), 2, F, (32,), 8, 200, 3, 1)
    s4 = np.array([rv.S_F for rv in run_replicates(coarse, 32)])
    s8 = np.array([rv.S_F for rv in run_replicates(fine, 32)])
    assert abs(s4.mean() - s8.mean()) < s4.std()
    assert abs(s4.std() - s8.std()) < s4.std()
