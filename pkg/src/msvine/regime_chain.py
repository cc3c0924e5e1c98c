"""Hidden Markov chain machinery for regime switching.

Conventions: ``P[i, j] = P(S_t = i | S_{t-1} = j)`` (columns sum to one);
regime labels are 0-based integers; log-densities are a ``T x p`` array with
entry ``(t, k) = log f(u_t | S_t = k)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numba import njit


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class FilterResult:
    predicted: np.ndarray
    filtered: np.ndarray
    loglik: float


@dataclass(frozen=True)
class SmootherResult:
    smoothed: np.ndarray
    pairwise: np.ndarray  # (T-1, p, p): P(S_{t+1}=i, S_t=j | all data)


def check_transition(P, tol=1e-12) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ChainError("transition matrix must be square")
    if np.any(P < 0) or np.any(P > 1) or not np.all(np.isfinite(P)):
        raise ChainError("transition probabilities must lie in [0, 1]")
    if np.any(np.abs(P.sum(axis=0) - 1.0) > tol):
        raise ChainError("transition matrix columns must sum to one")
    return P


def stationary_distribution(P) -> np.ndarray:
    """Stationary distribution of an irreducible aperiodic chain."""
    P = check_transition(P, tol=1e-9)
    p = P.shape[0]
    if p == 1:
        return np.ones(1)
    eig = np.linalg.eigvals(P)
    mods = np.sort(np.abs(eig))[::-1]
    if mods[1] > 1.0 - 1e-12:
        raise ChainError("chain is reducible or periodic (no unique stationary distribution)")
    a = np.vstack([P - np.eye(p), np.ones((1, p))])
    b = np.zeros(p + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.any(pi <= 0):
        raise ChainError("stationary distribution is not strictly positive")
    return pi


@njit(cache=True)
def _filter_kernel(ld, P, init):
    T, p = ld.shape
    predicted = np.empty((T, p))
    filtered = np.empty((T, p))
    loglik = 0.0
    pred = init.copy()
    for t in range(T):
        if t > 0:
            for i in range(p):
                acc = 0.0
                for j in range(p):
                    acc += P[i, j] * filtered[t - 1, j]
                pred[i] = acc
        m = -np.inf
        for k in range(p):
            if pred[k] > 0.0:
                v = np.log(pred[k]) + ld[t, k]
                if v > m:
                    m = v
        s = 0.0
        for k in range(p):
            if pred[k] > 0.0:
                s += np.exp(np.log(pred[k]) + ld[t, k] - m)
        for k in range(p):
            predicted[t, k] = pred[k]
            if pred[k] > 0.0:
                filtered[t, k] = np.exp(np.log(pred[k]) + ld[t, k] - m) / s
            else:
                filtered[t, k] = 0.0
        loglik += m + np.log(s)
    return predicted, filtered, loglik


def _initial(P, init):
    if init is None:
        return stationary_distribution(P)
    init = np.asarray(init, dtype=float)
    if init.shape != (P.shape[0],) or np.any(init < 0) or abs(init.sum() - 1.0) > 1e-10:
        raise ChainError("initial distribution must be a probability vector of length p")
    return init


def hamilton_filter(log_dens, P, init=None) -> FilterResult:
    """Predicted and filtered regime probabilities plus the log-likelihood."""
    ld = np.ascontiguousarray(log_dens, dtype=float)
    P = check_transition(P, tol=1e-9)
    if ld.ndim != 2 or ld.shape[1] != P.shape[0]:
        raise ChainError("log-density matrix must be T x p")
    init = _initial(P, init)
    predicted, filtered, loglik = _filter_kernel(ld, np.ascontiguousarray(P), init)
    return FilterResult(predicted, filtered, float(loglik))


@njit(cache=True)
def _smooth_kernel(predicted, filtered, P):
    T, p = filtered.shape
    smoothed = np.empty((T, p))
    smoothed[T - 1] = filtered[T - 1]
    bad = False
    for t in range(T - 2, -1, -1):
        for j in range(p):
            acc = 0.0
            for i in range(p):
                if predicted[t + 1, i] > 0.0:
                    acc += P[i, j] * smoothed[t + 1, i] / predicted[t + 1, i]
                elif smoothed[t + 1, i] > 0.0:
                    bad = True
            smoothed[t, j] = acc * filtered[t, j]
        s = 0.0
        for j in range(p):
            s += smoothed[t, j]
        for j in range(p):
            smoothed[t, j] /= s
    return smoothed, bad


def kim_smoother(fr: FilterResult, P) -> SmootherResult:
    """Backward smoothing pass over a Hamilton filter output."""
    P = check_transition(P, tol=1e-9)
    predicted, filtered = fr.predicted, fr.filtered
    if filtered.shape[1] != P.shape[0]:
        raise ChainError("filter result and transition matrix disagree on p")
    smoothed, bad = _smooth_kernel(predicted, filtered, np.ascontiguousarray(P))
    if bad:
        raise ChainError("zero predicted probability with nonzero smoothed mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(predicted[1:] > 0, smoothed[1:] / predicted[1:], 0.0)
    pairwise = ratio[:, :, None] * P[None, :, :] * filtered[:-1, None, :]
    return SmootherResult(smoothed, pairwise)


def smooth(log_dens, P, init=None):
    fr = hamilton_filter(log_dens, P, init)
    return fr, kim_smoother(fr, P)


def _path_log_weights(ld, P, init, paths):
    T = ld.shape[0]
    with np.errstate(divide="ignore"):
        logP = np.log(P)
        lw = np.log(init)[paths[:, 0]] + ld[0, paths[:, 0]]
    for t in range(1, T):
        lw = lw + logP[paths[:, t], paths[:, t - 1]] + ld[t, paths[:, t]]
    return lw


def enumerate_paths(log_dens, P, init=None, limit=10**6):
    """All state paths with their normalised posterior probabilities and the log-evidence."""
    ld = np.asarray(log_dens, dtype=float)
    P = check_transition(P, tol=1e-9)
    T, p = ld.shape
    if p ** T > limit:
        raise ChainError(f"{p}^{T} paths exceed the enumeration limit {limit}")
    init = _initial(P, init)
    paths = np.array(list(itertools.product(range(p), repeat=T)), dtype=int).reshape(-1, T)
    lw = _path_log_weights(ld, P, init, paths)
    top = lw.max()
    w = np.exp(lw - top)
    total = w.sum()
    return paths, w / total, float(top + np.log(total))


def oracle_smoother(log_dens, P, init=None, limit=10**6) -> SmootherResult:
    """Exact smoothed and pairwise probabilities by summing over every path."""
    paths, prob, _ = enumerate_paths(log_dens, P, init, limit)
    T = paths.shape[1]
    p = np.asarray(P).shape[0]
    smoothed = np.zeros((T, p))
    pairwise = np.zeros((max(T - 1, 0), p, p))
    for t in range(T):
        np.add.at(smoothed[t], paths[:, t], prob)
    for t in range(T - 1):
        np.add.at(pairwise[t], (paths[:, t + 1], paths[:, t]), prob)
    return SmootherResult(smoothed, pairwise)


def oracle_loglik(log_dens, P, init=None, limit=10**6) -> float:
    return enumerate_paths(log_dens, P, init, limit)[2]


def transition_counts(path, p: int) -> np.ndarray:
    """n[i, j] = number of j -> i transitions in ``path`` (labels 0..p-1)."""
    path = np.asarray(path, dtype=int)
    if path.size and (path.min() < 0 or path.max() >= p):
        raise ChainError(f"regime labels must lie in 0..{p - 1}")
    counts = np.zeros((p, p), dtype=int)
    if path.size > 1:
        np.add.at(counts, (path[1:], path[:-1]), 1)
    return counts


@njit(cache=True)
def _draw(weights, u):
    total = 0.0
    for k in range(weights.shape[0]):
        total += weights[k]
    acc = 0.0
    for k in range(weights.shape[0]):
        acc += weights[k] / total
        if u < acc:
            return k
    return weights.shape[0] - 1


@njit(cache=True)
def _backward_sample(filtered, P, uniforms):
    T, p = filtered.shape
    states = np.empty(T, dtype=np.int64)
    probs = np.empty(p)
    states[T - 1] = _draw(filtered[T - 1], uniforms[T - 1])
    for t in range(T - 2, -1, -1):
        nxt = states[t + 1]
        for k in range(p):
            probs[k] = P[nxt, k] * filtered[t, k]
        states[t] = _draw(probs, uniforms[t])
    return states


def sample_path(filtered, P, rng) -> np.ndarray:
    """Backward draw of a state path from filtered probabilities."""
    u = rng.uniform(size=filtered.shape[0])
    if filtered.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return _backward_sample(np.ascontiguousarray(filtered), np.ascontiguousarray(P, dtype=float), u)


def simulate_chain(P, T, rng, init=None) -> np.ndarray:
    """Simulate a regime path started from ``init`` (stationary by default)."""
    P = check_transition(P, tol=1e-9)
    init = _initial(P, init)
    p = P.shape[0]
    states = np.empty(T, dtype=np.int64)
    u = rng.uniform(size=T)
    for t in range(T):
        probs = init if t == 0 else P[:, states[t - 1]]
        states[t] = min(int(np.searchsorted(np.cumsum(probs), u[t], side="right")), p - 1)
    return states


def smoothed_to_csv_rows(smoothed):
    """Rows (t, prob_regime_1, ..., prob_regime_p) with t counted from 1."""
    return [[t + 1, *map(float, row)] for t, row in enumerate(smoothed)]
