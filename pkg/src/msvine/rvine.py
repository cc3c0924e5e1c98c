"""Regular vines in lower-triangular matrix form.

Row ``r`` and column ``c`` (0-based, ``r > c``) of an R-vine matrix ``M``
encode the edge ``M[c, c], M[r, c] | M[r+1:, c]``, which lies on tree
``d - r``. The bottom row therefore holds the first tree.

The pair copula stored at ``(r, c)`` is the copula of
``(F(M[c, c] | D), F(M[r, c] | D))`` in that argument order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .pair_copula import (
    CopulaError,
    CopulaFamily,
    ConvergenceError,
    PairCopula,
    clamp,
    fit_weighted,
)
from .rng import make_rng

log = logging.getLogger(__name__)


class VineError(ValueError):
    pass


class EdgeFitError(RuntimeError):
    def __init__(self, row, col, cause):
        super().__init__(f"fit failed on edge ({row + 1},{col + 1}): {cause}")
        self.row, self.col = row, col


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    message: str = "ok"

    def __bool__(self):
        return self.valid


@dataclass(frozen=True)
class Edge:
    row: int
    col: int
    tree: int
    conditioned: tuple
    conditioning: frozenset


def validate_matrix(m) -> ValidityReport:
    """Check that ``m`` (1-based labels) encodes a regular vine."""
    try:
        m = np.asarray(m)
    except Exception:  # ragged input
        return ValidityReport(False, "matrix is not rectangular")
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        return ValidityReport(False, "matrix must be square")
    d = m.shape[0]
    if not np.all(np.equal(np.mod(m, 1), 0)):
        return ValidityReport(False, "entries must be integers")
    m = m.astype(int)
    lower = np.tril_indices(d)
    if np.any(np.triu(m, 1) != 0):
        return ValidityReport(False, "matrix must be lower triangular")
    if np.any((m[lower] < 1) | (m[lower] > d)):
        return ValidityReport(False, f"entries must lie in 1..{d}")
    if sorted(np.diag(m)) != list(range(1, d + 1)):
        return ValidityReport(False, "diagonal not a permutation")
    for c in range(d):
        col = m[c:, c]
        if len(set(col)) != len(col):
            return ValidityReport(False, f"column {c + 1} has repeated entries")
        if c > 0 and not set(col) <= set(m[c - 1:, c - 1]):
            return ValidityReport(False, f"column {c + 1} is not a subset of column {c}")
    # first tree must be a spanning tree on the variables
    if d > 1:
        parent = list(range(d + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for c in range(d - 1):
            a, b = find(m[c, c]), find(m[d - 1, c])
            if a == b:
                return ValidityReport(False, "first tree contains a cycle")
            parent[a] = b
    # proximity: each conditional argument must be produced by a lower tree
    for c in range(d - 1):
        for r in range(d - 2, c, -1):
            b, cond = m[r, c], set(m[r + 1:, c])
            found = False
            for j in range(c + 1, d):
                if r < j:
                    continue
                if m[j, j] == b and set(m[r + 1:, j]) == cond:
                    found = True
                    break
                if r + 1 <= d - 1 and r + 1 > j and m[r + 1, j] == b and \
                        {m[j, j]} | set(m[r + 2:, j]) == cond:
                    found = True
                    break
            if not found:
                return ValidityReport(
                    False, f"proximity condition violated at edge ({r + 1},{c + 1})")
    return ValidityReport(True)


class RVineMatrix:
    """Validated R-vine structure matrix with cached recursion bookkeeping."""

    def __init__(self, m):
        m = np.array(m, dtype=int)
        report = validate_matrix(m)
        if not report:
            raise VineError(report.message)
        m.setflags(write=False)
        self.m = m
        self.d = m.shape[0]

    def __eq__(self, other):
        return isinstance(other, RVineMatrix) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())

    def __repr__(self):
        return f"RVineMatrix({self.m.tolist()})"

    def tree(self, row: int) -> int:
        return self.d - row

    @cached_property
    def normalized(self) -> np.ndarray:
        """Relabelled matrix whose diagonal reads d, d-1, ..., 1."""
        d = self.d
        relabel = np.zeros(d + 1, dtype=int)
        for c in range(d):
            relabel[self.m[c, c]] = d - c
        return np.tril(relabel[self.m])

    @cached_property
    def mmax(self) -> np.ndarray:
        """mmax[r, c] = max(normalized[r:, c])."""
        norm = self.normalized
        out = np.zeros_like(norm)
        for c in range(self.d):
            out[c:, c] = np.maximum.accumulate(norm[c:, c][::-1])[::-1]
        return out

    @cached_property
    def sources(self):
        """For each edge (r, c): (column j, use_direct) locating its second argument."""
        d = self.d
        norm, mmax = self.normalized, self.mmax
        src = {}
        for c in range(d - 1):
            for r in range(d - 1, c, -1):
                j = d - mmax[r, c]
                src[(r, c)] = (j, bool(mmax[r, c] == norm[r, c]))
        return src

    @cached_property
    def needs_indirect(self) -> frozenset:
        return frozenset((r, j) for (r, _), (j, direct) in self.sources.items() if not direct)

    def edges(self):
        d, m = self.d, self.m
        out = []
        for c in range(d - 1):
            for r in range(d - 1, c, -1):
                out.append(Edge(r, c, d - r, (int(m[c, c]), int(m[r, c])),
                                frozenset(int(x) for x in m[r + 1:, c])))
        return out


def _as_matrix(matrix) -> RVineMatrix:
    return matrix if isinstance(matrix, RVineMatrix) else RVineMatrix(matrix)


def _copula_grid(d, entries=None):
    grid = [[None] * d for _ in range(d)]
    if entries:
        for (r, c), pc in entries.items():
            grid[r][c] = pc
    return tuple(tuple(row) for row in grid)


@dataclass(frozen=True)
class RVineSpec:
    """One regime's R-vine copula: structure, pair copulas and truncation level.

    ``copulas[r][c]`` is the :class:`PairCopula` of edge ``(r, c)`` for
    ``r > c`` and ``None`` elsewhere. ``se`` mirrors ``copulas`` with
    standard-error tuples when the spec came out of a fit.
    """

    matrix: RVineMatrix
    copulas: tuple
    trunc_level: int = None
    se: tuple = None
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        matrix = _as_matrix(self.matrix)
        object.__setattr__(self, "matrix", matrix)
        d = matrix.d
        grid = [[None] * d for _ in range(d)]
        for r in range(d):
            for c in range(r):
                pc = self.copulas[r][c]
                if pc is None:
                    pc = PairCopula.independence()
                elif not isinstance(pc, PairCopula):
                    pc = PairCopula(*pc)
                grid[r][c] = pc
        object.__setattr__(self, "copulas", tuple(tuple(row) for row in grid))
        trunc = d - 1 if self.trunc_level is None else int(self.trunc_level)
        if not 0 <= trunc <= max(d - 1, 0):
            raise VineError(f"truncation level must lie in 0..{d - 1}")
        object.__setattr__(self, "trunc_level", trunc)
        for r in range(d):
            for c in range(r):
                if matrix.tree(r) > trunc and not grid[r][c].is_independence:
                    raise VineError(
                        f"edge ({r + 1},{c + 1}) on tree {matrix.tree(r)} above truncation "
                        f"level {trunc} must be independence")

    @property
    def d(self) -> int:
        return self.matrix.d

    @classmethod
    def from_arrays(cls, matrix, families, params, trunc=None, se=None):
        """Build from a family-tag matrix and a parameter matrix (lists per entry)."""
        matrix = _as_matrix(matrix)
        d = matrix.d
        grid = {}
        for r in range(d):
            for c in range(r):
                fam = families[r][c]
                if fam is None:
                    fam = CopulaFamily.INDEPENDENCE
                par = params[r][c] if params is not None and params[r][c] is not None else ()
                grid[(r, c)] = PairCopula(CopulaFamily(fam), tuple(par))
        return cls(matrix, _copula_grid(d, grid), trunc, se)

    @classmethod
    def independence(cls, matrix):
        matrix = _as_matrix(matrix)
        return cls(matrix, _copula_grid(matrix.d), matrix.d - 1)

    def copula(self, r, c) -> PairCopula:
        return self.copulas[r][c]

    def edge_items(self):
        """(edge, copula) pairs ordered tree by tree, then by column."""
        edges = sorted(self.matrix.edges(), key=lambda e: (e.tree, e.col))
        return [(e, self.copulas[e.row][e.col]) for e in edges]

    def families(self):
        d = self.d
        return [[self.copulas[r][c].family if r > c else None for c in range(d)] for r in range(d)]

    def taus(self) -> np.ndarray:
        d = self.d
        out = np.zeros((d, d))
        for r in range(d):
            for c in range(r):
                out[r, c] = self.copulas[r][c].tau
        return out

    def n_params(self) -> int:
        return sum(pc.family.arity for row in self.copulas for pc in row if pc is not None)

    def replace(self, entries: dict, se=None) -> "RVineSpec":
        grid = [list(row) for row in self.copulas]
        for (r, c), pc in entries.items():
            grid[r][c] = pc
        return RVineSpec(self.matrix, tuple(tuple(row) for row in grid), self.trunc_level,
                         self.se if se is None else se)


# ---------------------------------------------------------------------------
# the h-function recursion

def _sweep(matrix: RVineMatrix, u: np.ndarray, copula_for, trunc: int, want_logpdf=True):
    """Run the tree recursion over the columns of ``u`` (already clamped, T x d).

    ``copula_for(r, c, zr1, zr2)`` returns the pair copula of edge (r, c).
    Returns the summed log-density per row and the chosen copulas.
    """
    d = matrix.d
    m = matrix.m
    n = u.shape[0]
    direct = {}
    indirect = {}
    for c in range(d):
        direct[(d - 1, c)] = u[:, m[c, c] - 1]
    total = np.zeros(n)
    chosen = {}
    sources = matrix.sources
    needs_indirect = matrix.needs_indirect
    for c in range(d - 2, -1, -1):
        for r in range(d - 1, c, -1):
            zr1 = direct[(r, c)]
            j, use_direct = sources[(r, c)]
            zr2 = direct[(r, j)] if use_direct else indirect[(r, j)]
            if matrix.tree(r) > trunc:
                pc = PairCopula.independence()
            else:
                pc = copula_for(r, c, zr1, zr2)
            chosen[(r, c)] = pc
            if pc.is_independence:
                direct[(r - 1, c)] = zr1
                if (r - 1, c) in needs_indirect:
                    indirect[(r - 1, c)] = zr2
                continue
            if want_logpdf:
                total += pc._logpdf(zr1, zr2)
            direct[(r - 1, c)] = pc._h(zr1, zr2)
            if (r - 1, c) in needs_indirect:
                indirect[(r - 1, c)] = pc._h_first(zr1, zr2)
    return total, chosen


def _prepare(u, d):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != d:
        raise VineError(f"data have {u.shape[1]} columns, vine has dimension {d}")
    if np.any(~np.isfinite(u)) or np.any((u < 0) | (u > 1)):
        raise CopulaError("copula data must lie in [0, 1]")
    return clamp(u), single


def log_density(spec: RVineSpec, u):
    """Log copula density of one row (d-vector) or of every row of a T x d array."""
    u, single = _prepare(u, spec.d)
    if spec.d == 1:
        out = np.zeros(u.shape[0])
    else:
        out, _ = _sweep(spec.matrix, u, lambda r, c, a, b: spec.copulas[r][c], spec.trunc_level)
    return float(out[0]) if single else out


def fit_sequential(matrix, families, data, weights=None, *, trunc=None, min_ess=10.0,
                   fit_kw=None) -> RVineSpec:
    """Weighted stepwise maximum likelihood, tree by tree.

    ``families`` is a d x d matrix of family tags (entries on or above the
    diagonal are ignored). Each edge is fitted by
    :func:`~msvine.pair_copula.fit_weighted` on pseudo-observations produced
    by the h-functions of the edges already fitted.
    """
    matrix = _as_matrix(matrix)
    d = matrix.d
    u, _ = _prepare(data, d)
    w = np.ones(u.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (u.shape[0],):
        raise VineError("weights must have one entry per row")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise VineError("weights must be finite, nonnegative and not all zero")
    trunc = d - 1 if trunc is None else trunc
    se_grid = [[None] * d for _ in range(d)]
    flags = []
    fit_kw = dict(fit_kw or {})

    def fit_edge(r, c, zr1, zr2):
        fam = families[r][c]
        fam = CopulaFamily.INDEPENDENCE if fam is None else CopulaFamily(fam)
        try:
            res = fit_weighted(fam, zr1, zr2, w, min_ess=min_ess, **fit_kw)
        except (CopulaError, ConvergenceError, FloatingPointError) as exc:
            raise EdgeFitError(r, c, exc) from exc
        se_grid[r][c] = res.se
        if res.fallback:
            flags.append(f"edge ({r + 1},{c + 1}): tau-inversion fallback")
        if res.at_boundary:
            flags.append(f"edge ({r + 1},{c + 1}): parameter at boundary")
        return res.copula

    if d == 1:
        return RVineSpec.independence(matrix)
    _, chosen = _sweep(matrix, u, fit_edge, trunc, want_logpdf=False)
    for msg in flags:
        log.debug(msg)
    return RVineSpec(matrix, _copula_grid(d, chosen), trunc,
                     tuple(tuple(row) for row in se_grid), tuple(flags))


def truncate(spec: RVineSpec, level: int) -> RVineSpec:
    d = spec.d
    if not 0 <= level <= max(d - 1, 0):
        raise VineError(f"truncation level must lie in 0..{d - 1}")
    grid = {}
    for r in range(d):
        for c in range(r):
            keep = spec.matrix.tree(r) <= level
            grid[(r, c)] = spec.copulas[r][c] if keep else PairCopula.independence()
    return RVineSpec(spec.matrix, _copula_grid(d, grid), level, spec.se)


def sample(spec: RVineSpec, n: int, seed=None, rng=None) -> np.ndarray:
    """Draw ``n`` rows by the inverse Rosenblatt transform."""
    if rng is None:
        rng = make_rng(seed)
    d = spec.d
    w = rng.uniform(size=(n, d))
    return sample_from_uniforms(spec, w)


def sample_from_uniforms(spec: RVineSpec, w: np.ndarray) -> np.ndarray:
    """Map independent uniforms (n x d) to vine-distributed rows.

    Column ``c`` of ``w`` drives variable ``M[c, c]``.
    """
    matrix = spec.matrix
    d, m = matrix.d, matrix.m
    w = clamp(w)
    n = w.shape[0]
    out = np.empty((n, d))
    if n == 0:
        return out
    direct, indirect = {}, {}
    sources = matrix.sources
    needs_indirect = matrix.needs_indirect
    for c in range(d - 1, -1, -1):
        v = w[:, c]
        direct[(c, c)] = v
        zr2s = {}
        for r in range(c + 1, d):
            j, use_direct = sources[(r, c)]
            zr2 = direct[(r, j)] if use_direct else indirect[(r, j)]
            zr2s[r] = zr2
            pc = spec.copulas[r][c]
            v = v if pc.is_independence else pc._hinv(v, zr2)
            direct[(r, c)] = v
        out[:, m[c, c] - 1] = direct[(d - 1, c)]
        for r in range(d - 1, c, -1):
            if (r - 1, c) in needs_indirect:
                indirect[(r - 1, c)] = spec.copulas[r][c]._h_first(direct[(r, c)], zr2s[r])
    return out


def c_vine_matrix(order) -> np.ndarray:
    """C-vine with root sequence ``order`` (1-based labels)."""
    order = list(order)
    d = len(order)
    m = np.zeros((d, d), dtype=int)
    rev = order[::-1]
    for c in range(d):
        m[c, c] = rev[c]
        # roots in tree order down the column: order[0] on the bottom row
        for r in range(c + 1, d):
            m[r, c] = order[d - 1 - r]
    return m


def d_vine_matrix(order) -> np.ndarray:
    """D-vine on the path ``order`` (1-based labels)."""
    order = list(order)
    d = len(order)
    m = np.zeros((d, d), dtype=int)
    for c in range(d):
        m[c, c] = order[c]
        rest = order[c + 1:]
        # partner on tree k is the k-th next element; tree 1 sits on the bottom row
        for k, var in enumerate(rest, start=1):
            m[d - k, c] = var
    return m
