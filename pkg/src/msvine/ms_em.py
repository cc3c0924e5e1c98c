"""Markov-switching R-vine model and its stepwise EM estimator."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import regime_chain as rc
from .rng import make_rng
from .rvine import VineError, _prepare, fit_sequential, log_density, sample_from_uniforms

log = logging.getLogger(__name__)

TRANS_FLOOR = 1e-6


@dataclass(frozen=True)
class MSRVineModel:
    """p regime-specific R-vine copulas plus the regime transition matrix."""

    regimes: tuple
    trans: np.ndarray

    def __post_init__(self):
        regimes = tuple(self.regimes)
        if not regimes:
            raise VineError("model needs at least one regime")
        dims = {spec.d for spec in regimes}
        if len(dims) != 1:
            raise VineError(f"regimes disagree on dimension: {sorted(dims)}")
        trans = rc.check_transition(np.array(self.trans, dtype=float), tol=1e-9)
        if trans.shape != (len(regimes), len(regimes)):
            raise VineError("transition matrix must be p x p")
        trans.setflags(write=False)
        object.__setattr__(self, "regimes", regimes)
        object.__setattr__(self, "trans", trans)

    @property
    def p(self) -> int:
        return len(self.regimes)

    @property
    def d(self) -> int:
        return self.regimes[0].d

    def regime_log_densities(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        if u.shape[1] != self.d:
            raise VineError(f"data have {u.shape[1]} columns, model has dimension {self.d}")
        return np.column_stack([log_density(spec, u) for spec in self.regimes]) \
            if u.shape[0] else np.zeros((0, self.p))

    def stationary(self) -> np.ndarray:
        return rc.stationary_distribution(self.trans)

    def shares_structure(self) -> bool:
        first = self.regimes[0]
        return all(s.matrix == first.matrix and s.families() == first.families() for s in self.regimes)


@dataclass
class EMTrace:
    logliks: list = field(default_factory=list)
    smoothed: np.ndarray = None
    n_iter: int = 0
    converged: bool = False
    best_iter: int = 0


def ms_log_likelihood(model: MSRVineModel, data) -> float:
    """Log-likelihood with the regime path integrated out (stationary start)."""
    ld = model.regime_log_densities(data)
    return rc.hamilton_filter(ld, model.trans).loglik


def _e_step(model, u):
    ld = model.regime_log_densities(u)
    fr, sm = rc.smooth(ld, model.trans)
    return ld, fr, sm


def update_transition(sm: rc.SmootherResult, trans) -> np.ndarray:
    """Ratio of summed pairwise to summed marginal smoothed probabilities."""
    p = sm.smoothed.shape[1]
    if p == 1 or sm.pairwise.shape[0] == 0:
        return np.array(trans, dtype=float)
    num = sm.pairwise.sum(axis=0)
    den = sm.smoothed[:-1].sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        new = np.where(den[None, :] > 0, num / den[None, :], np.asarray(trans))
    return clamp_transition(new)


def clamp_transition(P) -> np.ndarray:
    P = np.clip(np.asarray(P, dtype=float), TRANS_FLOOR, 1.0 - TRANS_FLOOR)
    return P / P.sum(axis=0, keepdims=True)


def _m_step(model, u, sm, min_ess=10.0):
    trans = update_transition(sm, model.trans)
    regimes = []
    for k, spec in enumerate(model.regimes):
        w = sm.smoothed[:, k]
        if w.sum() <= 0:
            regimes.append(spec)
            continue
        regimes.append(fit_sequential(spec.matrix, spec.families(), u, w,
                                      trunc=spec.trunc_level, min_ess=min_ess))
    return MSRVineModel(tuple(regimes), trans)


def em_step(model: MSRVineModel, data):
    """One E-step plus stepwise M-step; returns the new model and the pre-update log-likelihood."""
    u, _ = _prepare(data, model.d)
    _, fr, sm = _e_step(model, u)
    return _m_step(model, u, sm), fr.loglik


def em_fit(model0: MSRVineModel, data, tol: float = 1e-6, max_iter: int = 100):
    """Iterate EM steps until the relative log-likelihood change drops below ``tol``.

    The stepwise M-step is not an exact maximisation, so the likelihood can
    dip between iterations; the iterate with the highest log-likelihood is
    returned rather than the last one.
    """
    u, _ = _prepare(data, model0.d)
    model = model0
    _, fr, sm = _e_step(model, u)
    best = (fr.loglik, model, sm, 0)
    trace = EMTrace()
    prev = fr.loglik
    for it in range(1, max_iter + 1):
        model = _m_step(model, u, sm)
        _, fr, sm = _e_step(model, u)
        trace.logliks.append(fr.loglik)
        trace.n_iter = it
        if fr.loglik > best[0]:
            best = (fr.loglik, model, sm, it)
        log.debug("EM iteration %d: loglik %.6f", it, fr.loglik)
        if abs(fr.loglik - prev) <= tol * abs(fr.loglik):
            trace.converged = True
            break
        prev = fr.loglik
    _, model, sm, trace.best_iter = best
    trace.smoothed = sm.smoothed
    return model, trace


def default_transition(p: int, stay: float = 0.9) -> np.ndarray:
    if p == 1:
        return np.ones((1, 1))
    P = np.full((p, p), (1.0 - stay) / (p - 1))
    np.fill_diagonal(P, stay)
    return P


def initialize(regime_specs, data, stay: float = 0.9) -> MSRVineModel:
    """Starting values for EM.

    Each regime is fitted to all rows, then refitted to the half of the
    rows on which its own per-row log-density ranks highest. Regimes whose
    whole-sample fits coincide (same structure and families) are spread over
    different rank windows so they do not start identical: the first takes
    the top half, the last the bottom half.
    """
    specs = list(regime_specs)
    p = len(specs)
    d = specs[0].d
    u, _ = _prepare(data, d)
    T = u.shape[0]
    if T < 2 * p * d:
        raise VineError(f"need at least {2 * p * d} rows to initialise, got {T}")
    full = [fit_sequential(s.matrix, s.families(), u, trunc=s.trunc_level) for s in specs]
    half = T // 2
    groups = {}
    for k, spec in enumerate(full):
        key = (spec.matrix, tuple(map(tuple, spec.families())), spec.trunc_level)
        groups.setdefault(key, []).append(k)
    regimes = [None] * p
    for members in groups.values():
        ld = log_density(full[members[0]], u)
        order = np.argsort(-ld, kind="stable")
        g = len(members)
        for pos, k in enumerate(members):
            if g == 1:
                start = 0
            else:
                start = int(round(pos * (T - half) / (g - 1)))
            rows = np.sort(order[start:start + half])
            s = specs[k]
            regimes[k] = fit_sequential(s.matrix, s.families(), u[rows], trunc=s.trunc_level)
    return MSRVineModel(tuple(regimes), default_transition(p, stay))


def simulate(model: MSRVineModel, T: int, seed=None):
    """Simulate ``T`` rows: a stationary-start regime path, then one vine draw per row.

    Returns the ``T x d`` data and the 0-based regime path.
    """
    if T < 0:
        raise ValueError("T must be nonnegative")
    states = rc.simulate_chain(model.trans, T, make_rng(seed, 0))
    w = make_rng(seed, 1).uniform(size=(T, model.d))
    u = np.empty((T, model.d))
    for k, spec in enumerate(model.regimes):
        rows = states == k
        u[rows] = sample_from_uniforms(spec, w[rows])
    return u, states
