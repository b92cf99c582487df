"""
Two-stage procedure tests
Weight construction, single runs and Monte Carlo P(CS) guarantees
"""
import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import stats

from rankselect.errors import AmbiguousBestError, DomainError, InfeasibleWeightsError
from rankselect.procedures import (
    PopulationSpec,
    ProcedureConfig,
    Variant,
    compute_weights,
    estimate_pcs,
    lfc_spec,
    run_procedure,
    second_stage_size,
    two_level_weights,
)
from rankselect.two_stage import Constant, TwoStageProblem, solve_h


def heterogeneous_lfc(populations: int) -> PopulationSpec:
    return lfc_spec(populations, 1.0, list(np.linspace(0.5, 2.0, populations)))


# ============================================================================
# WEIGHTS
# ============================================================================

def test_weights_hand_solved_example():
    """Test 1: N0 = 2, N = 3, S^2 = 1, (delta/h)^2 = 1/2"""
    weights = compute_weights(2, 3, 1.0, 1.0, math.sqrt(2.0))
    assert weights == pytest.approx([1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], abs=1e-12)


def test_weights_uniform_at_boundary():
    weights = compute_weights(3, 5, 2.0, 1.0, math.sqrt(2.5))
    assert weights == pytest.approx([0.2] * 5, abs=1e-12)


@pytest.mark.parametrize("s2,h", [(3.7, 2.5), (0.2, 1.1), (12.0, 4.0)])
def test_weights_meet_both_constraints(s2, h):
    n0, delta = 10, 1.0
    n_i = int(second_stage_size(s2, n0, delta, h))
    weights = compute_weights(n0, n_i, s2, delta, h)
    assert weights.size == n_i
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert s2 * np.sum(weights ** 2) == pytest.approx((delta / h) ** 2, abs=1e-12)
    assert np.all(weights[n0:] >= 0)
    assert np.all(weights[:n0] == weights[0])


def test_weights_vectorized_match_scalar():
    s2 = np.array([0.5, 1.5, 4.0])
    n = second_stage_size(s2, 6, 1.0, 3.0)
    u, v = two_level_weights(6, n, s2, 1.0, 3.0)
    for i in range(3):
        single = compute_weights(6, int(n[i]), float(s2[i]), 1.0, 3.0)
        assert single[0] == pytest.approx(u[i], abs=1e-15)
        assert single[-1] == pytest.approx(v[i], abs=1e-15)


def test_weights_infeasible_and_invalid():
    with pytest.raises(InfeasibleWeightsError):
        compute_weights(2, 3, 1.0, 1.0, math.sqrt(5.0))
    with pytest.raises(DomainError):
        compute_weights(4, 4, 1.0, 1.0, 2.0)


def test_second_stage_size():
    assert second_stage_size(0.01, 10, 1.0, 2.0) == 11
    assert second_stage_size(3.0, 10, 1.0, 2.0) == 12
    assert list(second_stage_size([3.0, 0.01], 5, 0.5, 2.0)) == [48, 6]


# ============================================================================
# SPECS AND CONFIG
# ============================================================================

def test_population_spec_validation():
    with pytest.raises(ValidationError):
        PopulationSpec(means=[0.0, 1.0], variances=[1.0])
    with pytest.raises(ValidationError):
        PopulationSpec(means=[0.0], variances=[1.0])
    with pytest.raises(ValidationError):
        PopulationSpec(means=[0.0, 1.0], variances=[1.0, 0.0])
    with pytest.raises(AmbiguousBestError):
        PopulationSpec(means=[1.0, 1.0, 0.0], variances=[1.0] * 3).best_index()


def test_lfc_spec():
    spec = lfc_spec(4, 0.5)
    assert spec.means == [0.0, 0.0, 0.0, 0.5]
    assert spec.variances == [1.0] * 4
    assert spec.best_index() == 3


def test_config_solved_uses_matching_constant():
    config = ProcedureConfig.solved(6, 10, 0.9, 1.0, Variant.RINOTT)
    expected = solve_h(TwoStageProblem(k=5, nu=9, p=0.9), Constant.RINOTT).value
    assert config.h == pytest.approx(expected)
    with pytest.raises(ValidationError):
        ProcedureConfig(delta=1.0, n0=1, p=0.9, h=2.0)


@pytest.mark.parametrize("variant", list(Variant))
def test_config_solved_rejects_nonpositive_h(variant):
    with pytest.raises(DomainError):
        ProcedureConfig.solved(2, 5, 0.3, 1.0, variant)


# ============================================================================
# SINGLE RUNS
# ============================================================================

def test_run_procedure_outcome_invariants():
    """Test 2: sizes, totals, selection and weight constraints of one run"""
    spec = heterogeneous_lfc(5)
    config = ProcedureConfig(delta=1.0, n0=10, p=0.9, h=3.0)
    outcome = run_procedure(spec, config, seed=42)

    assert all(n >= config.n0 + 1 for n in outcome.per_population_n)
    assert outcome.total_samples == sum(outcome.per_population_n)
    assert outcome.chosen == int(np.argmax(outcome.weighted_means))
    for n_i, s2 in zip(outcome.per_population_n, outcome.first_stage_variances):
        weights = compute_weights(config.n0, n_i, s2, config.delta, config.h)
        assert s2 * np.sum(weights ** 2) == pytest.approx((config.delta / config.h) ** 2, abs=1e-10)


def test_run_procedure_deterministic():
    spec = lfc_spec(4, 1.0)
    config = ProcedureConfig(delta=1.0, n0=5, p=0.9, h=2.5, variant=Variant.RINOTT)
    assert run_procedure(spec, config, seed=9) == run_procedure(spec, config, seed=9)
    assert run_procedure(spec, config, seed=9) != run_procedure(spec, config, seed=10)


@pytest.mark.slow
def test_identical_populations_chosen_uniformly():
    spec = PopulationSpec(means=[0.0] * 6, variances=[1.0] * 6)
    config = ProcedureConfig(delta=1.0, n0=5, p=0.9, h=2.5, variant=Variant.RINOTT)
    counts = np.bincount([run_procedure(spec, config, seed).chosen for seed in range(10_000)], minlength=6)
    assert stats.chisquare(counts).pvalue > 0.001


def test_conditional_variance_of_weighted_mean():
    """Test 3: Var(sum a_j X_j) = sigma^2 (delta/h)^2 / S^2 given stage one"""
    n0, n_i, s2, delta, h, sigma2 = 5, 12, 1.5, 1.0, 2.0, 2.0
    weights = compute_weights(n0, n_i, s2, delta, h)
    draws = np.random.default_rng(17).normal(0.0, math.sqrt(sigma2), size=(200_000, n_i))
    assert np.var(draws @ weights) == pytest.approx(sigma2 * (delta / h) ** 2 / s2, rel=0.05)


# ============================================================================
# MONTE CARLO P(CS)
# ============================================================================

def test_overwhelming_separation():
    spec = PopulationSpec(means=[0.0, 10.0, 0.0, 0.0], variances=[1.0] * 4)
    config = ProcedureConfig(delta=1.0, n0=5, p=0.9, h=2.5)
    assert estimate_pcs(spec, config, 10_000, seed=1).p_hat >= 0.999


def test_estimate_deterministic_and_worker_invariant():
    spec = lfc_spec(6, 1.0)
    config = ProcedureConfig(delta=1.0, n0=10, p=0.9, h=3.0)
    first = estimate_pcs(spec, config, 20_000, seed=5)
    assert first == estimate_pcs(spec, config, 20_000, seed=5)
    assert first.p_hat == estimate_pcs(spec, config, 20_000, seed=5, workers=2).p_hat


def test_estimate_validation():
    config = ProcedureConfig(delta=1.0, n0=5, p=0.9, h=2.5)
    with pytest.raises(DomainError):
        estimate_pcs(lfc_spec(3, 1.0), config, 50, seed=1)
    with pytest.raises(AmbiguousBestError):
        estimate_pcs(PopulationSpec(means=[1.0, 1.0], variances=[1.0, 1.0]), config, 1000, seed=1)


@pytest.mark.slow
@pytest.mark.parametrize("variant", list(Variant))
def test_lfc_guarantee_equal_variances(variant):
    spec = lfc_spec(6, 1.0)
    config = ProcedureConfig.solved(6, 10, 0.9, 1.0, variant)
    estimate = estimate_pcs(spec, config, 100_000, seed=20240101)
    assert estimate.p_hat >= 0.9 - 3 * estimate.ci_half_width


@pytest.mark.slow
@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("populations,n0,p", [(6, 10, 0.9), (11, 5, 0.75)])
def test_lfc_guarantee_heterogeneous_variances(variant, populations, n0, p):
    """Test 4: the lower bound holds with unequal variances"""
    config = ProcedureConfig.solved(populations, n0, p, 1.0, variant)
    estimate = estimate_pcs(heterogeneous_lfc(populations), config, 100_000, seed=7)
    assert estimate.p_hat + 3 * estimate.ci_half_width >= p


@pytest.mark.slow
def test_rinott_is_more_conservative():
    spec = heterogeneous_lfc(6)
    dd = estimate_pcs(spec, ProcedureConfig.solved(6, 10, 0.9, 1.0, Variant.DUDEWICZ_DALAL), 50_000, seed=3)
    rinott = estimate_pcs(spec, ProcedureConfig.solved(6, 10, 0.9, 1.0, Variant.RINOTT), 50_000, seed=3)
    assert rinott.p_hat + 3 * rinott.ci_half_width >= dd.p_hat - 3 * dd.ci_half_width


def test_larger_separation_never_hurts():
    config = ProcedureConfig.solved(6, 10, 0.9, 1.0)
    near = estimate_pcs(lfc_spec(6, 1.0), config, 20_000, seed=8)
    far = estimate_pcs(PopulationSpec(means=[0.0] * 5 + [10.0], variances=[1.0] * 6), config, 20_000, seed=8)
    assert far.p_hat >= near.p_hat - 3 * near.ci_half_width
