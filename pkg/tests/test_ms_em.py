import numpy as np
import pytest

from msvine import regime_chain as rc
from msvine.ms_em import (
    MSRVineModel,
    clamp_transition,
    default_transition,
    em_fit,
    em_step,
    initialize,
    ms_log_likelihood,
    simulate,
    update_transition,
)
from msvine.pair_copula import PairCopula
from msvine.rng import make_rng
from msvine.rvine import RVineSpec, VineError, c_vine_matrix, log_density, sample
from msvine.scenarios import scenario, two_state_transition


def bivariate(rho):
    return RVineSpec([[1, 0], [2, 2]], ((None, None), (PairCopula("N", rho), None)))


@pytest.fixture(scope="module")
def scenario2_data():
    truth = scenario(2)
    u, states = simulate(truth, 800, seed=21)
    return truth, u, states


def test_p1_equals_plain_sum():
    spec = scenario(1).regimes[0]
    u = sample(spec, 50, seed=1)
    model = MSRVineModel((spec,), np.ones((1, 1)))
    assert ms_log_likelihood(model, u) == pytest.approx(log_density(spec, u).sum())


def test_identical_regimes_ignore_transitions():
    spec = scenario(1).regimes[1]
    u = sample(spec, 40, seed=2)
    ref = log_density(spec, u).sum()
    for a, b in [(0.9, 0.8), (0.3, 0.6)]:
        model = MSRVineModel((spec, spec), two_state_transition(a, b))
        assert ms_log_likelihood(model, u) == pytest.approx(ref)


def test_toy_likelihood_matches_path_sum():
    truth = scenario(2)
    u, _ = simulate(truth, 8, seed=3)
    ld = truth.regime_log_densities(u)
    assert ms_log_likelihood(truth, u) == pytest.approx(rc.oracle_loglik(ld, truth.trans), abs=1e-10)


def test_label_permutation_invariance(scenario2_data):
    truth, u, _ = scenario2_data
    swapped = MSRVineModel(truth.regimes[::-1], np.asarray(truth.trans)[::-1, ::-1])
    assert ms_log_likelihood(swapped, u) == pytest.approx(ms_log_likelihood(truth, u), rel=1e-12)


def test_transition_update_degenerate_mass():
    T = 10
    smoothed = np.tile([1.0, 0.0], (T, 1))
    pairwise = np.zeros((T - 1, 2, 2))
    pairwise[:, 0, 0] = 1.0
    sm = rc.SmootherResult(smoothed, pairwise)
    P = update_transition(sm, default_transition(2))
    assert P[0, 0] == pytest.approx(1.0 - 1e-6, abs=1e-9)
    np.testing.assert_allclose(P.sum(axis=0), 1.0)


def test_clamp_transition_is_column_stochastic():
    P = clamp_transition([[1.0, 0.3], [0.0, 0.7]])
    np.testing.assert_allclose(P.sum(axis=0), 1.0)
    assert P.min() > 0


def test_symmetric_start_keeps_regimes_equal():
    spec = bivariate(0.5)
    u = sample(spec, 300, seed=4)
    model = MSRVineModel((spec, spec), [[0.8, 0.2], [0.2, 0.8]])
    new, _ = em_step(model, u)
    assert new.regimes[0].copulas[1][0].params == pytest.approx(new.regimes[1].copulas[1][0].params)


def test_em_step_returns_pre_update_loglik(scenario2_data):
    truth, u, _ = scenario2_data
    new, ll = em_step(truth, u)
    assert ll == pytest.approx(ms_log_likelihood(truth, u))
    np.testing.assert_allclose(new.trans.sum(axis=0), 1.0)


def test_huge_tolerance_stops_after_one_step(scenario2_data):
    truth, u, _ = scenario2_data
    _, trace = em_fit(truth, u, tol=1e10)
    assert len(trace.logliks) == 1 and trace.converged


def test_fixed_point_self_consistency(scenario2_data):
    truth, u, _ = scenario2_data
    # iterate plain EM steps to the fixed point (em_fit would return the best iterate)
    model = initialize(truth.regimes, u)
    for _ in range(40):
        model, _ = em_step(model, u)
    again, ll = em_step(model, u)
    assert abs(ms_log_likelihood(again, u) - ll) < 1e-6 * abs(ll)


def test_bivariate_gaussian_em_is_monotone():
    rng = make_rng(5)
    truth = MSRVineModel((bivariate(0.8), bivariate(-0.2)), two_state_transition(0.9, 0.85))
    u, _ = simulate(truth, 300, seed=6)
    for _ in range(50):
        r = np.sort(rng.uniform(-0.9, 0.9, 2))
        a, b = rng.uniform(0.5, 0.95, 2)
        model = MSRVineModel((bivariate(r[1]), bivariate(r[0])), two_state_transition(a, b))
        prev = ms_log_likelihood(model, u)
        for _ in range(8):
            model, ll = em_step(model, u)
            assert ll == pytest.approx(prev, abs=1e-9)
            cur = ms_log_likelihood(model, u)
            assert cur >= prev - 1e-8
            prev = cur


def test_initialize_half_split_and_diagonal(monkeypatch, scenario2_data):
    truth, u, _ = scenario2_data
    import msvine.ms_em as ms
    sizes = []
    orig = ms.fit_sequential

    def spy(matrix, families, data, *a, **k):
        sizes.append(np.asarray(data).shape[0])
        return orig(matrix, families, data, *a, **k)

    monkeypatch.setattr(ms, "fit_sequential", spy)
    model = ms.initialize(truth.regimes, u)
    assert sizes == [800, 800, 400, 400]
    np.testing.assert_allclose(np.diag(model.trans), [0.9, 0.9])


def test_initialize_identical_structures_start_apart():
    spec = scenario(1).regimes[0]
    u = sample(spec, 200, seed=7)
    full = [initialize([spec], u)]
    model = initialize([spec, spec], u)
    assert full[0].p == 1
    assert model.regimes[0].taus()[3, 0] != pytest.approx(model.regimes[1].taus()[3, 0])


def test_initialize_needs_enough_rows():
    spec = scenario(1).regimes[0]
    with pytest.raises(VineError):
        initialize([spec, spec], sample(spec, 10, seed=8))


def test_single_regime_data_fitted_with_two_regimes():
    spec = scenario(1).regimes[0]
    u = sample(spec, 800, seed=9)
    model, _ = em_fit(initialize([spec, spec], u), u)
    for reg in model.regimes:
        np.testing.assert_allclose(reg.taus(), spec.taus(), atol=0.1)


def test_scenario2_recovery(scenario2_data):
    truth, u, states = scenario2_data
    model, trace = em_fit(initialize(truth.regimes, u), u)
    assert model.trans[0, 0] == pytest.approx(0.95, abs=0.05)
    assert model.trans[1, 1] == pytest.approx(0.9, abs=0.07)
    for k in range(2):
        np.testing.assert_allclose(model.regimes[k].taus(), truth.regimes[k].taus(), atol=0.1)
    assert np.mean(trace.smoothed.argmax(axis=1) == states) > 0.9
    assert trace.best_iter <= trace.n_iter


def test_model_validation():
    a = scenario(1).regimes[0]
    with pytest.raises(VineError):
        MSRVineModel((a, bivariate(0.1)), default_transition(2))
    with pytest.raises(VineError):
        MSRVineModel((a,), default_transition(2))
    with pytest.raises(rc.ChainError):
        MSRVineModel((a, a), [[0.9, 0.9], [0.2, 0.1]])


def test_simulation_deterministic_and_stationary():
    truth = scenario(1)
    u1, s1 = simulate(truth, 3000, seed=10)
    u2, s2 = simulate(truth, 3000, seed=10)
    assert np.array_equal(u1, u2) and np.array_equal(s1, s2)
    assert np.mean(s1 == 0) == pytest.approx(2 / 3, abs=0.1)
    empty, s = simulate(truth, 0, seed=1)
    assert empty.shape == (0, 4) and s.size == 0


def test_c_vine_regimes_share_structure_flag():
    spec = RVineSpec.independence(c_vine_matrix([1, 2, 3]))
    assert MSRVineModel((spec, spec), default_transition(2)).shares_structure()
    assert not scenario(1).shares_structure()
