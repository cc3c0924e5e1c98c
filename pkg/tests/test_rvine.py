import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm, qmc

from msvine.pair_copula import CopulaFamily, PairCopula, tau_to_param
from msvine.rvine import (
    RVineMatrix,
    RVineSpec,
    VineError,
    c_vine_matrix,
    d_vine_matrix,
    fit_sequential,
    log_density,
    sample,
    truncate,
    validate_matrix,
)
from msvine.scenarios import scenario
from msvine.structure_select import empirical_kendall_tau

EXAMPLE_5 = np.array([[5, 0, 0, 0, 0],
                    [2, 2, 0, 0, 0],
                    [3, 3, 3, 0, 0],
                    [1, 4, 4, 4, 0],
                    [4, 1, 1, 1, 1]])


def gaussian_dvine3(r12, r23, r13_2):
    m = d_vine_matrix([1, 2, 3])
    rm = RVineMatrix(m)
    by_pair = {frozenset((1, 2)): r12, frozenset((2, 3)): r23, frozenset((1, 3)): r13_2}
    grid = [[None] * 3 for _ in range(3)]
    for e in rm.edges():
        grid[e.row][e.col] = PairCopula("N", by_pair[frozenset(e.conditioned)])
    spec = RVineSpec(rm, tuple(tuple(r) for r in grid))
    r13 = r13_2 * np.sqrt((1 - r12 ** 2) * (1 - r23 ** 2)) + r12 * r23
    corr = np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1]])
    return spec, corr


def gaussian_copula_logpdf(u, corr):
    z = norm.ppf(u)
    return multivariate_normal(np.zeros(len(corr)), corr).logpdf(z) - norm.logpdf(z).sum(axis=1)


def test_example_matrix_valid():
    assert validate_matrix(EXAMPLE_5).valid


def test_invalid_matrices_reported():
    bad = EXAMPLE_5.copy()
    bad[1, 1] = 5
    rep = validate_matrix(bad)
    assert not rep.valid and rep.message == "diagonal not a permutation"
    assert not validate_matrix([[1, 0], [2, 3]]).valid
    assert not validate_matrix([[1, 1], [2, 2]]).valid
    with pytest.raises(VineError):
        RVineMatrix(bad)


def test_two_dimensional_matrix_valid():
    assert validate_matrix([[1, 0], [2, 2]]).valid


def test_cd_vine_constructors_valid():
    for order in ([1, 2, 3, 4], [3, 1, 4, 2, 5]):
        assert validate_matrix(c_vine_matrix(order)).valid
        assert validate_matrix(d_vine_matrix(order)).valid


def test_independence_log_density_zero():
    spec = RVineSpec.independence(EXAMPLE_5)
    u = np.random.default_rng(0).uniform(size=(10, 5))
    assert np.all(log_density(spec, u) == 0)


def test_bivariate_reduces_to_pair_copula():
    pc = PairCopula("N", 0.4)
    spec = RVineSpec([[1, 0], [2, 2]], ((None, None), (pc, None)))
    assert log_density(spec, [0.2, 0.7]) == pytest.approx(float(pc.logpdf(0.2, 0.7)))


def test_dvine_matches_trivariate_gaussian():
    spec, corr = gaussian_dvine3(0.5, -0.3, 0.4)
    u = np.random.default_rng(1).uniform(0.001, 0.999, size=(200, 3))
    np.testing.assert_allclose(log_density(spec, u), gaussian_copula_logpdf(u, corr), atol=1e-10)


def test_reencoding_invariance_d3():
    spec, _ = gaussian_dvine3(0.5, -0.3, 0.4)
    # the same D-vine with the path read backwards
    rm = RVineMatrix(d_vine_matrix([3, 2, 1]))
    by_pair = {frozenset((1, 2)): 0.5, frozenset((2, 3)): -0.3, frozenset((1, 3)): 0.4}
    grid = [[None] * 3 for _ in range(3)]
    for e in rm.edges():
        grid[e.row][e.col] = PairCopula("N", by_pair[frozenset(e.conditioned)])
    other = RVineSpec(rm, tuple(tuple(r) for r in grid))
    u = np.random.default_rng(2).uniform(size=(50, 3))
    np.testing.assert_allclose(log_density(spec, u), log_density(other, u), atol=1e-10)


def test_density_integrates_to_one_qmc():
    spec3 = RVineSpec(c_vine_matrix([1, 2, 3]), _gumbel_grid3())
    pts = qmc.Sobol(3, seed=3).random(2 ** 18)
    assert np.exp(log_density(spec3, pts)).mean() == pytest.approx(1.0, abs=2e-2)


def _gumbel_grid3():
    rm = RVineMatrix(c_vine_matrix([1, 2, 3]))
    grid = [[None] * 3 for _ in range(3)]
    for e in rm.edges():
        grid[e.row][e.col] = PairCopula("G", 1.5 if e.tree == 1 else 1.2)
    return tuple(tuple(r) for r in grid)


def test_sample_independence_and_gaussian_tau():
    n = 10000
    u = sample(RVineSpec.independence(d_vine_matrix([1, 2, 3])), n, seed=4)
    for i in range(3):
        for j in range(i + 1, 3):
            assert abs(empirical_kendall_tau(u[:, i], u[:, j])) < 3 / np.sqrt(n)
    pc = PairCopula("N", 0.6)
    u = sample(RVineSpec([[1, 0], [2, 2]], ((None, None), (pc, None))), n, seed=5)
    assert empirical_kendall_tau(u[:, 0], u[:, 1]) == pytest.approx(2 / np.pi * np.arcsin(0.6), abs=0.03)


def test_sample_scenario_gumbel_pair():
    u = sample(scenario(1).regimes[1], 10000, seed=6)
    assert empirical_kendall_tau(u[:, 1], u[:, 0]) == pytest.approx(0.8, abs=0.03)


def test_sample_correlations_match_implied_matrix():
    spec, corr = gaussian_dvine3(0.5, -0.3, 0.4)
    z = norm.ppf(sample(spec, 10000, seed=7))
    np.testing.assert_allclose(np.corrcoef(z.T), corr, atol=0.03)


def test_sampling_is_deterministic():
    spec = scenario(2).regimes[0]
    assert np.array_equal(sample(spec, 50, seed=9), sample(spec, 50, seed=9))


def test_fit_sequential_round_trip_d3():
    spec, _ = gaussian_dvine3(0.5, -0.3, 0.4)
    u = sample(spec, 2000, seed=8)
    fit = fit_sequential(spec.matrix, spec.families(), u)
    np.testing.assert_allclose(fit.taus(), spec.taus(), atol=0.05)


@pytest.mark.parametrize("tag", ["N", "t", "G", "SG", "G90", "G270"])
def test_fit_sequential_round_trip_each_family_d4(tag):
    fam = CopulaFamily.from_tag(tag)
    rm = RVineMatrix(c_vine_matrix([2, 4, 1, 3]))
    grid = [[None] * 4 for _ in range(4)]
    for e in rm.edges():
        tau = {1: 0.5, 2: 0.3, 3: 0.15}[e.tree] * fam.tau_sign()
        par = tau_to_param(fam, tau) + ((8.0,) if fam is CopulaFamily.STUDENT_T else ())
        grid[e.row][e.col] = PairCopula(fam, par)
    spec = RVineSpec(rm, tuple(tuple(r) for r in grid))
    u = sample(spec, 5000, seed=10)
    fit = fit_sequential(rm, spec.families(), u)
    np.testing.assert_allclose(fit.taus(), spec.taus(), atol=0.05)


def test_weights_equal_subsample_fit():
    spec = scenario(1).regimes[0]
    u = sample(spec, 600, seed=11)
    w = (np.arange(600) % 3 == 0).astype(float)
    a = fit_sequential(spec.matrix, spec.families(), u, w, min_ess=0)
    b = fit_sequential(spec.matrix, spec.families(), u[w > 0], min_ess=0)
    np.testing.assert_allclose(a.taus(), b.taus(), atol=1e-6)


def test_truncation():
    spec = scenario(2).regimes[1]
    assert truncate(spec, 3) == spec
    zero = truncate(spec, 0)
    u = np.random.default_rng(12).uniform(size=(5, 4))
    assert np.all(log_density(zero, u) == 0)
    with pytest.raises(VineError):
        truncate(spec, 4)


def test_truncated_nine_dimensional_count():
    rm = RVineMatrix(c_vine_matrix(list(range(1, 10))))
    grid = [[None] * 9 for _ in range(9)]
    for e in rm.edges():
        grid[e.row][e.col] = PairCopula("N", 0.2)
    spec = truncate(RVineSpec(rm, tuple(tuple(r) for r in grid)), 2)
    active = sum(1 for _, pc in spec.edge_items() if not pc.is_independence)
    assert active == 8 + 7


def test_spec_rejects_dependence_above_truncation():
    spec = scenario(1).regimes[0]
    with pytest.raises(VineError):
        RVineSpec(spec.matrix, spec.copulas, trunc_level=1)


def test_dimension_mismatch():
    with pytest.raises(VineError):
        log_density(scenario(1).regimes[0], np.full((3, 3), 0.5))
