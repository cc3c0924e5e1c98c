import itertools

import numpy as np
import pytest

from msvine.pair_copula import CopulaFamily, PairCopula
from msvine.rng import make_rng
from msvine.rvine import (
    RVineMatrix,
    RVineSpec,
    c_vine_matrix,
    d_vine_matrix,
    log_density,
    sample,
    validate_matrix,
)
from msvine.scenarios import scenario, vine_with_tree_taus
from msvine.structure_select import (
    Recipe,
    SelectionError,
    empirical_kendall_tau,
    kendall_tau_pairs,
    mst,
    rolling_window,
    select_structure,
    tree_weight,
)


def test_tau_perfect_concordance_and_discordance():
    assert empirical_kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert empirical_kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)


def test_tau_gaussian_sample():
    spec = RVineSpec([[1, 0], [2, 2]], ((None, None), (PairCopula("N", 0.6), None)))
    u = sample(spec, 10000, seed=1)
    assert empirical_kendall_tau(u) == pytest.approx(2 / np.pi * np.arcsin(0.6), abs=0.03)


def test_tau_constant_margin_is_error():
    with pytest.raises(ValueError):
        empirical_kendall_tau([1, 1, 1], [1, 2, 3])


def test_fast_tau_equals_pair_counting_with_ties():
    rng = make_rng(2)
    for _ in range(100):
        n = int(rng.integers(5, 60))
        x = rng.integers(0, 6, n).astype(float)
        y = rng.integers(0, 6, n).astype(float)
        if np.all(x == x[0]) or np.all(y == y[0]):
            continue
        assert empirical_kendall_tau(x, y) == pytest.approx(kendall_tau_pairs(x, y), abs=1e-12)


def test_mst_examples():
    w = np.array([[0, 0.5, 0.3], [0.5, 0, 0.1], [0.3, 0.1, 0]])
    assert sorted(mst(w)) == [(0, 1), (0, 2)]
    assert sorted(mst(np.ones((4, 4)))) == [(0, 1), (0, 2), (0, 3)]
    assert mst([[0, 0.2], [0.2, 0]]) == [(0, 1)]


def _random_spanning_tree(n, rng):
    # decode a random Pruefer sequence
    seq = list(rng.integers(0, n, n - 2))
    degree = [1] * n
    for s in seq:
        degree[s] += 1
    edges = []
    for s in seq:
        leaf = min(i for i in range(n) if degree[i] == 1)
        edges.append((min(leaf, s), max(leaf, s)))
        degree[leaf] -= 1
        degree[s] -= 1
    a, b = [i for i in range(n) if degree[i] == 1]
    edges.append((a, b))
    return edges


def test_mst_beats_random_spanning_trees():
    rng = make_rng(3)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        w = rng.uniform(size=(n, n))
        w = (w + w.T) / 2
        best = tree_weight(w, mst(w))
        for _ in range(100):
            assert best >= tree_weight(w, _random_spanning_tree(n, rng)) - 1e-12


def test_mst_matches_brute_force_on_small_graphs():
    rng = make_rng(4)
    n = 5
    pairs = list(itertools.combinations(range(n), 2))
    for _ in range(10):
        w = rng.uniform(size=(n, n))
        w = (w + w.T) / 2
        best = 0.0
        for edges in itertools.combinations(pairs, n - 1):
            parent = list(range(n))

            def find(a):
                while parent[a] != a:
                    a = parent[a]
                return a

            ok = True
            for i, j in edges:
                ri, rj = find(i), find(j)
                if ri == rj:
                    ok = False
                    break
                parent[ri] = rj
            if ok:
                best = max(best, tree_weight(w, edges))
        assert tree_weight(w, mst(w)) == pytest.approx(best)


def test_d2_selection_picks_aic_family():
    spec = RVineSpec([[1, 0], [2, 2]], ((None, None), (PairCopula("G", 2.5), None)))
    u = sample(spec, 800, seed=5)
    out = select_structure(u, ["N", "G", "SG"])
    assert out.d == 2
    assert out.copulas[1][0].family is CopulaFamily.GUMBEL


def _gaussian_dvine5(seed):
    rng = make_rng(seed)
    order = [int(v) for v in rng.permutation(5) + 1]
    rm = RVineMatrix(d_vine_matrix(order))
    grid = [[None] * 5 for _ in range(5)]
    for e in rm.edges():
        tau = rng.uniform(0.6, 0.8) if e.tree == 1 else rng.uniform(0.0, 0.2)
        grid[e.row][e.col] = PairCopula("N", float(np.sin(np.pi * tau / 2)))
    return RVineSpec(rm, tuple(tuple(r) for r in grid))


def _tree1(spec):
    return {frozenset(e.conditioned) for e in spec.matrix.edges() if e.tree == 1}


def test_gaussian_catalogue_round_trip():
    spec = _gaussian_dvine5(6)
    u = sample(spec, 3000, seed=7)
    out = select_structure(u, ["N"])
    assert _tree1(out) == _tree1(spec)
    truth = {frozenset(e.conditioned) | e.conditioning: spec.copulas[e.row][e.col].tau
             for e in spec.matrix.edges() if e.tree == 1}
    for e in out.matrix.edges():
        if e.tree == 1:
            key = frozenset(e.conditioned)
            assert out.copulas[e.row][e.col].tau == pytest.approx(truth[key], abs=0.05)


def test_selection_matches_independent_refit():
    spec = _gaussian_dvine5(8)
    u = sample(spec, 1500, seed=9)
    out = select_structure(u, ["N"])
    from msvine.rvine import fit_sequential
    refit = fit_sequential(out.matrix, out.families(), u)
    np.testing.assert_allclose(out.taus(), refit.taus(), atol=1e-5)


@pytest.mark.parametrize("seed", range(5))
def test_selected_matrices_valid(seed):
    rng = make_rng(10, seed)
    d = int(rng.integers(3, 7))
    u = rng.uniform(size=(200, d))
    out = select_structure(u, ["N", "G", "I"], trunc=int(rng.integers(1, d)))
    assert validate_matrix(out.matrix.m).valid


def test_independence_shortcut_on_independent_data():
    u = make_rng(11).uniform(size=(400, 3))
    out = select_structure(u, ["I", "N"])
    n_indep = sum(pc.is_independence for _, pc in out.edge_items())
    assert n_indep >= 2


def test_truncation_sets_higher_trees_to_independence():
    u = sample(scenario(1).regimes[1], 500, seed=12)
    out = select_structure(u, ["G", "N"], trunc=1)
    for e, pc in out.edge_items():
        assert pc.is_independence == (e.tree > 1)


def test_selection_error_carries_tree(monkeypatch):
    import msvine.structure_select as ss
    from msvine.pair_copula import CopulaError
    u = sample(scenario(1).regimes[0], 100, seed=13)
    orig, calls = ss.select_family, []

    def failing(sample_, cat, **kw):
        calls.append(1)
        if len(calls) > 3:
            raise CopulaError("optimizer failed")
        return orig(sample_, cat, **kw)

    monkeypatch.setattr(ss, "select_family", failing)
    with pytest.raises(SelectionError) as err:
        select_structure(u, ["N"])
    assert err.value.tree == 2 and "tree 2" in str(err.value)


def test_rolling_identical_candidates_and_full_window():
    u = sample(scenario(1).regimes[0], 150, seed=14)
    rec = Recipe("gauss", ("N",))
    rep = rolling_window(u, 120, [rec, Recipe("gauss2", ("N",))])
    assert rep.logliks.shape == (31, 2)
    np.testing.assert_array_equal(rep.logliks[:, 0], rep.logliks[:, 1])
    full = rolling_window(u, 150, [rec])
    assert full.logliks.shape == (1, 1)
    spec = select_structure(u, ["N"])
    assert full.logliks[0, 0] == pytest.approx(log_density(spec, u).sum())
    assert rep.csv_rows()[0][:2] == [1, "gauss"]


def test_rolling_window_count_and_flags():
    u = make_rng(15).uniform(size=(1007, 2))
    rep = rolling_window(u, 100, [Recipe("gauss", ("N",))])
    assert len(rep.starts) == 908 and rep.logliks.shape == (908, 1)
    small = rolling_window(u[:30], 10, [Recipe("gauss", ("N",))])
    assert small.flags
    with pytest.raises(ValueError):
        rolling_window(u[:30], 31, [Recipe("gauss", ("N",))])


def test_rolling_survival_gumbel_candidate_wins():
    spec = vine_with_tree_taus(c_vine_matrix([1, 2, 3, 4]), "SG", (0.6, 0.2, 0.05))
    u = sample(spec, 160, seed=16)
    cands = [
        Recipe("gauss", ("N",), trunc=2),
        Recipe("gumbel", ("G",), trunc=2),
        Recipe("sgumbel", ("SG",), {2: ("N",)}, trunc=2),
    ]
    rep = rolling_window(u, 100, cands)
    assert int(np.argmax(rep.logliks.mean(axis=0))) == 2


def test_rolling_workers_match_serial():
    u = sample(scenario(1).regimes[0], 60, seed=17)
    cands = [Recipe("gauss", ("N",))]
    a = rolling_window(u, 50, cands)
    b = rolling_window(u, 50, cands, workers=2)
    np.testing.assert_array_equal(a.logliks, b.logliks)
