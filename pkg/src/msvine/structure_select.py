"""Data-driven R-vine structure and family selection, and rolling-window comparison.

Trees are built one at a time: weight every admissible pair by its
absolute Kendall's tau, keep the maximum spanning tree, choose each edge's
family by AIC, and push the data through the fitted h-functions to obtain
the pseudo-observations of the next tree.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .pair_copula import (
    CopulaError,
    CopulaFamily,
    PairCopula,
    WeightedPairSample,
    select_family,
    weighted_normal_tau,
)
from .rvine import RVineSpec, VineError, _copula_grid, _prepare, log_density, validate_matrix

log = logging.getLogger(__name__)

INDEPENDENCE_Z = 1.645


class SelectionError(RuntimeError):
    def __init__(self, tree, cause):
        super().__init__(f"selection failed on tree {tree}: {cause}")
        self.tree = tree


# ---------------------------------------------------------------------------
# Kendall's tau and spanning trees

def empirical_kendall_tau(x, y=None) -> float:
    """Kendall's tau-b of a pair sample (``x`` may be an n x 2 array)."""
    if y is None:
        arr = np.asarray(x, dtype=float)
        x, y = arr[:, 0], arr[:, 1]
    x, y = np.asarray(x, dtype=float).ravel(), np.asarray(y, dtype=float).ravel()
    if x.size < 2 or x.size != y.size:
        raise ValueError("Kendall's tau needs at least two paired observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("Kendall's tau is undefined for a constant margin")
    return float(stats.kendalltau(x, y, variant="b").statistic)


def kendall_tau_pairs(x, y) -> float:
    """Quadratic pair-counting tau-b, kept as a reference implementation."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    sx = np.sign(x[:, None] - x[None, :])
    sy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(x.size, 1)
    s = float((sx * sy)[iu].sum())
    n0 = iu[0].size
    tx = float((sx[iu] == 0).sum())
    ty = float((sy[iu] == 0).sum())
    return s / math.sqrt((n0 - tx) * (n0 - ty))


def mst(weights) -> list:
    """Maximum spanning tree by Prim's algorithm.

    ``weights`` is a symmetric n x n array; ``-inf`` (or nan) marks a
    missing edge. Ties go to the lexicographically smallest edge (i, j),
    i < j. Returns the edges as sorted (i, j) pairs in insertion order.
    """
    w = np.array(weights, dtype=float)
    n = w.shape[0]
    w[np.isnan(w)] = -np.inf
    if n < 2:
        return []
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    edges = []
    for _ in range(n - 1):
        best, best_edge = -np.inf, None
        for i in np.flatnonzero(in_tree):
            for j in np.flatnonzero(~in_tree):
                e = (min(i, j), max(i, j))
                val = w[i, j]
                if val > best or (val == best and best_edge is not None and e < best_edge):
                    best, best_edge = val, e
        if best_edge is None or best == -np.inf:
            raise VineError("graph is not connected")
        edges.append((int(best_edge[0]), int(best_edge[1])))
        in_tree[list(best_edge)] = True
    return edges


def tree_weight(weights, edges) -> float:
    w = np.asarray(weights, dtype=float)
    return float(sum(w[i, j] for i, j in edges))


# ---------------------------------------------------------------------------
# sequential selection

@dataclass
class _Node:
    """A node of the current tree: an edge of the previous tree (or a variable)."""

    conditioned: tuple       # (a, b) or (a,) for tree-1 nodes
    conditioning: frozenset
    ends: tuple = ()         # indices of the previous-tree nodes it joins
    pseudo: dict = field(default_factory=dict)   # var -> F(var | rest)
    copula: PairCopula = None

    @property
    def variables(self) -> frozenset:
        return frozenset(self.conditioned) | self.conditioning


def _independence_stat(tau, n):
    return abs(tau) * math.sqrt(9.0 * n * (n - 1)) / math.sqrt(2.0 * (2 * n + 5))


def _catalogue_for(catalogue, tree_catalogues, tree):
    cat = (tree_catalogues or {}).get(tree, catalogue)
    return [CopulaFamily(f) if not isinstance(f, CopulaFamily) else f for f in cat]


def _pair_tau(a, b, weights):
    if weights is None:
        try:
            return empirical_kendall_tau(a, b)
        except ValueError:
            return 0.0
    return weighted_normal_tau(a, b, weights)


def select_structure(data, catalogue=("N",), trunc=None, weights=None, *,
                     tree_catalogues=None, independence_test=True, min_ess=0.0) -> RVineSpec:
    """Build an R-vine tree by tree from data on the copula scale.

    Parameters
    ----------
    data : (T, d) array in (0, 1)
    catalogue : families tried on every edge (AIC decides, ties to the first listed)
    trunc : edges above this tree are independence (default: no truncation)
    weights : optional observation weights; with weights the graph uses the
        weighted normal-scores tau instead of the rank statistic
    tree_catalogues : optional {tree: families} overrides
    independence_test : when the independence copula is in the catalogue of a
        tree, assign it without fitting if the tau test does not reject at 5%
    """
    d = np.asarray(data).shape[1]
    u, _ = _prepare(data, d)
    n = u.shape[0]
    trunc = d - 1 if trunc is None else int(trunc)
    if d < 2:
        raise VineError("structure selection needs d >= 2")
    w = None if weights is None else np.asarray(weights, dtype=float)
    nodes = [_Node((v,), frozenset(), pseudo={v: u[:, v - 1]}) for v in range(1, d + 1)]
    all_edges = []
    for tree in range(1, d):
        m = len(nodes)
        graph = np.full((m, m), -np.inf)
        cand = {}
        for i in range(m):
            for j in range(i + 1, m):
                pair = _join(nodes[i], nodes[j], tree)
                if pair is None:
                    continue
                x, y = pair
                tau = _pair_tau(nodes[i].pseudo[x], nodes[j].pseudo[y], w)
                graph[i, j] = graph[j, i] = abs(tau)
                cand[(i, j)] = (x, y, tau)
        try:
            chosen = mst(graph)
        except VineError as exc:
            raise SelectionError(tree, exc) from exc
        new_nodes = []
        cat = _catalogue_for(catalogue, tree_catalogues, tree)
        for i, j in chosen:
            x, y, tau = cand[(i, j)]
            a, b = nodes[i].pseudo[x], nodes[j].pseudo[y]
            cond = nodes[i].variables & nodes[j].variables
            if tree > trunc:
                pc = PairCopula.independence()
            elif (independence_test and CopulaFamily.INDEPENDENCE in cat
                  and _independence_stat(tau, n) < INDEPENDENCE_Z):
                pc = PairCopula.independence()
            else:
                try:
                    pc = select_family(WeightedPairSample(a, b, w), cat, min_ess=min_ess).copula
                except (CopulaError, ValueError) as exc:
                    raise SelectionError(tree, exc) from exc
            node = _Node((x, y), cond, (i, j), copula=pc)
            if tree < d - 1:
                node.pseudo = {x: pc._h(a, b), y: pc._h_first(a, b)}
            new_nodes.append(node)
        all_edges.append(new_nodes)
        nodes = new_nodes
    return _to_spec(all_edges, d, trunc)


def _join(n1: _Node, n2: _Node, tree: int):
    """Conditioned pair (x from n1, y from n2) if the two nodes may be joined."""
    if tree == 1:
        return n1.conditioned[0], n2.conditioned[0]
    if set(n1.ends) & set(n2.ends) == set():
        return None
    v1, v2 = n1.variables, n2.variables
    x, y = v1 - v2, v2 - v1
    if len(x) != 1 or len(y) != 1:
        return None
    return next(iter(x)), next(iter(y))


def _to_spec(trees, d, trunc) -> RVineSpec:
    """Encode the selected edges as a structure matrix plus pair copulas."""
    remaining = [list(level) for level in trees]   # remaining[t-1] = tree-t edges
    m = np.zeros((d, d), dtype=int)
    grid = {}
    vars_left = set(range(1, d + 1))
    for c in range(d - 1):
        top = remaining[d - 2 - c]
        if len(top) != 1:
            raise VineError("inconsistent edge sets while encoding the vine")
        placed = None
        for x in sorted(top[0].conditioned):
            picks = []
            for t in range(1, d - c):
                hits = [e for e in remaining[t - 1] if x in e.conditioned]
                if len(hits) != 1:
                    break
                picks.append(hits[0])
            else:
                placed = (x, picks)
                break
        if placed is None:
            raise VineError("could not peel a leaf variable while encoding the vine")
        x, picks = placed
        m[c, c] = x
        for t, e in enumerate(picks, start=1):
            r = d - t
            y = e.conditioned[1] if e.conditioned[0] == x else e.conditioned[0]
            m[r, c] = y
            pc = e.copula if e.conditioned[0] == x else e.copula.transposed()
            grid[(r, c)] = pc
            remaining[t - 1].remove(e)
        vars_left.discard(x)
    m[d - 1, d - 1] = vars_left.pop()
    report = validate_matrix(m)
    if not report:
        raise VineError(f"encoded matrix invalid: {report.message}")
    return RVineSpec(m, _copula_grid(d, grid), trunc)


# ---------------------------------------------------------------------------
# rolling windows

@dataclass(frozen=True)
class Recipe:
    """A selection recipe: default catalogue, per-tree overrides and truncation level."""

    name: str
    catalogue: tuple = ("N",)
    tree_catalogues: dict = None
    trunc: int = None

    def select(self, data, weights=None) -> RVineSpec:
        return select_structure(data, self.catalogue, self.trunc, weights,
                                tree_catalogues=self.tree_catalogues)


@dataclass
class RollingReport:
    window: int
    starts: np.ndarray
    candidates: list
    logliks: np.ndarray          # (n_windows, n_candidates)
    flags: list = field(default_factory=list)

    def csv_rows(self):
        """(window_start, candidate_id, loglik) with 1-based window starts."""
        return [[int(s) + 1, name, float(self.logliks[i, k])]
                for i, s in enumerate(self.starts) for k, name in enumerate(self.candidates)]


def _window_task(args):
    block, recipes = args
    out = []
    for rec in recipes:
        spec = rec.select(block)
        out.append(float(log_density(spec, block).sum()))
    return out


def rolling_window(data, window: int, candidates, workers: int = 1) -> RollingReport:
    """Select and fit every candidate recipe on each window of ``window`` consecutive rows."""
    u = np.asarray(data, dtype=float)
    T, d = u.shape
    if not 1 <= window <= T:
        raise ValueError(f"window must lie in 1..{T}")
    candidates = list(candidates)
    starts = np.arange(T - window + 1)
    flags = []
    if window < 10 * d:
        flags.append(f"window of {window} rows is small for {d} variables; fits may be unstable")
    tasks = [(u[s:s + window], candidates) for s in starts]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_window_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_window_task(t) for t in tasks]
    return RollingReport(window, starts, [c.name for c in candidates],
                         np.array(results, dtype=float).reshape(len(starts), len(candidates)), flags)
