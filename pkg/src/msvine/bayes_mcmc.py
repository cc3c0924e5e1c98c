"""Metropolis-within-Gibbs posterior sampling for MS R-vine copulas, plus diagnostics.

One sweep draws the regime path as a block (forward filter, backward
sampling), then every column of the transition matrix from its Dirichlet
full conditional, then each pair-copula parameter in turn by a
Metropolis-Hastings step whose proposal mixes a random walk with an
independent normal centred at the maximum-likelihood mode. Proposals are
truncated to the bounded prior support; the prior is flat on that support.
"""
from __future__ import annotations

import logging
import math
import pickle
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import regime_chain as rc
from .ms_em import MSRVineModel, ms_log_likelihood
from .pair_copula import CopulaFamily, PairCopula
from .rng import make_rng
from .rvine import RVineSpec, _prepare, log_density

log = logging.getLogger(__name__)


class MCMCError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Columnwise Dirichlet prior on the transition matrix and flat bounded priors on copula parameters."""

    dirichlet_alpha: np.ndarray
    rho_bounds: tuple = (-0.999, 0.999)
    theta_bounds: tuple = (1.0, 17.0)
    nu_bounds: tuple = (2.001, 30.0)

    def __post_init__(self):
        alpha = np.array(self.dirichlet_alpha, dtype=float)
        if alpha.ndim != 2 or alpha.shape[0] != alpha.shape[1] or np.any(alpha <= 0):
            raise MCMCError("Dirichlet parameters must form a positive square matrix")
        object.__setattr__(self, "dirichlet_alpha", alpha)
        for name in ("rho_bounds", "theta_bounds", "nu_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise MCMCError(f"empty prior support {name}={lo, hi}")

    @classmethod
    def default(cls, p: int) -> "PriorSpec":
        return cls(np.ones((p, p)))

    def bounds(self, family: CopulaFamily, index: int) -> tuple:
        family = CopulaFamily(family)
        if family in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
            return self.rho_bounds if index == 0 else self.nu_bounds
        if family.is_gumbel:
            return self.theta_bounds
        raise MCMCError(f"{family.name} has no parameters")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burnin: int = 0
    thin: int = 1
    seed: int = 0
    proposal_weight: float = 0.5
    ident_stat: str = "abs_tau"
    checkpoint: str = None
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.iterations <= self.burnin:
            raise MCMCError("iterations must exceed burnin")
        if self.burnin < 0 or self.thin < 1:
            raise MCMCError("burnin must be >= 0 and thin >= 1")
        if not 0.0 <= self.proposal_weight <= 1.0:
            raise MCMCError("proposal_weight must lie in [0, 1]")
        parse_ident_stat(self.ident_stat)


@dataclass(frozen=True)
class PosteriorDraw:
    """One retained Gibbs iterate. ``states`` holds 0-based regime labels."""

    iteration: int
    regimes: tuple
    trans: np.ndarray
    states: np.ndarray

    def model(self) -> MSRVineModel:
        return MSRVineModel(self.regimes, self.trans)


@dataclass
class ChainResult:
    draws: list
    accepted: np.ndarray
    proposed: np.ndarray
    relabelled: bool = False
    flags: list = field(default_factory=list)

    @property
    def acceptance_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.accepted / self.proposed


# ---------------------------------------------------------------------------
# Gibbs blocks

def sample_states(ld, P, rng) -> np.ndarray:
    """Block draw of the regime path from its joint full conditional."""
    fr = rc.hamilton_filter(ld, P)
    return rc.sample_path(fr.filtered, P, rng)


def update_transition(counts, prior: PriorSpec | np.ndarray, rng) -> np.ndarray:
    """Independent Dirichlet draws per column with parameters alpha + counts."""
    alpha = prior.dirichlet_alpha if isinstance(prior, PriorSpec) else np.asarray(prior, dtype=float)
    counts = np.asarray(counts)
    if counts.shape != alpha.shape:
        raise MCMCError("counts and Dirichlet parameters disagree in shape")
    if np.any(counts < 0):
        raise MCMCError("transition counts must be nonnegative")
    post = alpha + counts
    return np.column_stack([rng.dirichlet(post[:, j]) for j in range(post.shape[1])])


def _tn_draw(mu, sd, lo, hi, rng):
    a, b = ndtr((lo - mu) / sd), ndtr((hi - mu) / sd)
    if b - a < 1e-12:
        return rng.uniform(lo, hi)
    x = mu + sd * ndtri(a + (b - a) * rng.uniform())
    return float(min(max(x, lo), hi))


def _tn_logpdf(x, mu, sd, lo, hi):
    a, b = ndtr((lo - mu) / sd), ndtr((hi - mu) / sd)
    if b - a < 1e-12:
        return -math.log(hi - lo)
    z = (x - mu) / sd
    return -0.5 * z * z - math.log(sd * math.sqrt(2.0 * math.pi) * (b - a))


def _mixture_logpdf(x, current, mode, rw_sd, ind_sd, lo, hi, weight):
    a = _tn_logpdf(x, current, rw_sd, lo, hi)
    b = _tn_logpdf(x, mode, ind_sd, lo, hi)
    if weight >= 1.0:
        return a
    if weight <= 0.0:
        return b
    return float(np.logaddexp(math.log(weight) + a, math.log1p(-weight) + b))


def _proposal_scale(se):
    if se is None or not math.isfinite(se):
        return 0.05
    return max(float(se), 0.01)


def update_copula_params(spec: RVineSpec, rows, mode: RVineSpec, prior: PriorSpec, rng,
                         weight: float = 0.5, loglik: float = None):
    """One Metropolis-Hastings sweep over every parameter of ``spec``.

    ``rows`` is the regime's data (possibly empty, in which case the
    posterior is the flat prior). ``mode`` supplies the proposal centre of
    the independent component and, through its standard errors, the scale
    of both components. Returns the new spec, its log-likelihood on
    ``rows`` and the numbers of accepted and proposed moves.
    """
    rows = np.asarray(rows, dtype=float).reshape(-1, spec.d)

    def loglik_of(s):
        return float(log_density(s, rows).sum()) if rows.shape[0] else 0.0

    current = loglik_of(spec) if loglik is None else loglik
    accepted = proposed = 0
    for edge, pc in spec.edge_items():
        if pc.is_independence:
            continue
        r, c = edge.row, edge.col
        mode_pc = mode.copulas[r][c]
        mode_se = mode.se[r][c] if mode.se is not None and mode.se[r][c] else ()
        for i in range(pc.family.arity):
            pc = spec.copulas[r][c]
            lo, hi = prior.bounds(pc.family, i)
            x = min(max(pc.params[i], lo), hi)
            m = min(max(mode_pc.params[i], lo), hi) if mode_pc.family is pc.family else x
            sd = _proposal_scale(mode_se[i] if i < len(mode_se) else None)
            if rng.uniform() < weight:
                y = _tn_draw(x, sd, lo, hi, rng)
            else:
                y = _tn_draw(m, sd, lo, hi, rng)
            params = list(pc.params)
            params[i] = y
            try:
                cand = spec.replace({(r, c): PairCopula(pc.family, tuple(params))})
            except ValueError:
                proposed += 1
                continue
            new = loglik_of(cand)
            log_ratio = (new - current
                         + _mixture_logpdf(x, y, m, sd, sd, lo, hi, weight)
                         - _mixture_logpdf(y, x, m, sd, sd, lo, hi, weight))
            proposed += 1
            if math.log(rng.uniform()) < log_ratio:
                spec, current = cand, new
                accepted += 1
    return spec, current, accepted, proposed


# ---------------------------------------------------------------------------
# identification

def parse_ident_stat(text):
    """``"abs_tau"`` (all trees), ``"abs_tau:2"`` or ``"abs_tau:1,2"`` (listed trees), or ``"none"``."""
    text = (text or "none").strip()
    if text == "none":
        return None
    name, _, trees = text.partition(":")
    if name != "abs_tau":
        raise MCMCError(f"unknown identification statistic {text!r}")
    if not trees:
        return ()
    try:
        return tuple(int(t) for t in trees.split(","))
    except ValueError:
        raise MCMCError(f"bad tree list in identification statistic {text!r}") from None


def identification_statistic(spec: RVineSpec, trees=()) -> float:
    """Sum of |tau| over the listed trees (all non-truncated trees when empty)."""
    total = 0.0
    for edge, pc in spec.edge_items():
        if edge.tree > spec.trunc_level:
            continue
        if trees and edge.tree not in trees:
            continue
        total += abs(pc.tau)
    return total


def relabel(draw: PosteriorDraw, trees=()) -> PosteriorDraw:
    """Reorder regimes so the identification statistic is nondecreasing."""
    stats = [identification_statistic(s, trees) for s in draw.regimes]
    perm = np.argsort(stats, kind="stable")
    if np.all(perm == np.arange(len(perm))):
        return draw
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    trans = np.asarray(draw.trans)[np.ix_(perm, perm)]
    return PosteriorDraw(draw.iteration, tuple(draw.regimes[k] for k in perm), trans,
                         inv[draw.states])


# ---------------------------------------------------------------------------
# the sampler

def _save_checkpoint(path, state):
    with open(path, "wb") as fh:
        pickle.dump(state, fh)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return pickle.load(fh)


def gibbs_run(model0: MSRVineModel, data, cfg: ChainConfig, prior: PriorSpec = None,
              mode: MSRVineModel = None, resume: dict = None) -> ChainResult:
    """Run the sampler from ``model0`` (normally the EM estimate).

    ``mode`` gives the proposal centres and scales (defaults to ``model0``).
    Draws after burn-in, every ``thin``-th, are kept; regimes are relabelled
    by the identification statistic when all regimes share structure and
    families. ``resume`` takes a state written by the checkpoint hook.
    """
    u, _ = _prepare(data, model0.d)
    p = model0.p
    prior = PriorSpec.default(p) if prior is None else prior
    if prior.dirichlet_alpha.shape != (p, p):
        raise MCMCError("prior Dirichlet matrix must be p x p")
    mode = model0 if mode is None else mode
    rng = make_rng(cfg.seed)
    regimes, trans = list(model0.regimes), np.array(model0.trans)
    draws, start = [], 0
    accepted = np.zeros(p, dtype=np.int64)
    proposed = np.zeros(p, dtype=np.int64)
    rejected_sweeps = np.zeros(p, dtype=np.int64)
    if resume is not None:
        regimes, trans = list(resume["regimes"]), resume["trans"]
        draws, start = list(resume["draws"]), resume["iteration"]
        accepted, proposed = resume["accepted"], resume["proposed"]
        rng.bit_generator.state = resume["rng"]
    flags = []
    for it in range(start, cfg.iterations):
        ld = np.column_stack([log_density(s, u) for s in regimes])
        fr = rc.hamilton_filter(ld, trans)
        states = rc.sample_path(fr.filtered, trans, rng)
        if p > 1:
            trans = update_transition(rc.transition_counts(states, p), prior, rng)
        for k in range(p):
            rows = states == k
            cur = float(ld[rows, k].sum())
            regimes[k], _, acc, prop = update_copula_params(
                regimes[k], u[rows], mode.regimes[k], prior, rng, cfg.proposal_weight, cur)
            accepted[k] += acc
            proposed[k] += prop
            if prop and not acc:
                rejected_sweeps[k] += 1
        if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            draws.append(PosteriorDraw(it, tuple(regimes), trans.copy(), states))
        done = it + 1
        if cfg.checkpoint and done % cfg.checkpoint_every == 0:
            _save_checkpoint(cfg.checkpoint, {
                "iteration": done, "regimes": tuple(regimes), "trans": trans, "draws": draws,
                "accepted": accepted, "proposed": proposed, "rng": rng.bit_generator.state})
    for k in np.flatnonzero(rejected_sweeps):
        flags.append(f"regime {k + 1}: {rejected_sweeps[k]} sweeps rejected every proposal")
    result = ChainResult(draws, accepted, proposed, flags=flags)
    trees = parse_ident_stat(cfg.ident_stat)
    if trees is not None and p > 1:
        if model0.shares_structure():
            result.draws = [relabel(dr, trees) for dr in draws]
            result.relabelled = True
        else:
            flags.append("regimes differ in structure; no relabelling needed or applied")
    return result


# ---------------------------------------------------------------------------
# output summaries

def posterior_state_probabilities(draws, p: int) -> np.ndarray:
    """Fraction of draws in which S_t = k, as a T x p array."""
    states = np.array([dr.states for dr in draws])
    return np.stack([(states == k).mean(axis=0) for k in range(p)], axis=1)


def edge_labels(spec: RVineSpec):
    return [(e.row, e.col) for e, pc in spec.edge_items() if not pc.is_independence]


def tau_chains(draws, regime: int) -> tuple:
    """Edge list and the (n_draws x n_edges) array of Kendall's tau for one regime."""
    edges = edge_labels(draws[0].regimes[regime])
    out = np.array([[dr.regimes[regime].copulas[r][c].tau for r, c in edges] for dr in draws])
    return edges, out.reshape(len(draws), len(edges))


def effective_sample_size(chain, return_flag: bool = False):
    """n / (1 + 2 sum_k rho_k), summing autocorrelations up to the first nonpositive one.

    A constant chain has ESS equal to its length and is flagged degenerate.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise MCMCError("effective sample size needs at least 10 values")
    scale = max(1.0, float(np.abs(x).max()))
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var <= (1e-12 * scale) ** 2:
        return (float(n), True) if return_flag else float(n)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    s = 0.0
    for k in range(1, n):
        if rho[k] <= 0:
            break
        s += rho[k]
    ess = n / (1.0 + 2.0 * s)
    return (float(ess), False) if return_flag else float(ess)


def credible_intervals(samples, level: float = 0.9):
    """Equal-tailed interval (linear-interpolation quantiles) and the HPD interval.

    The HPD interval is the shortest window holding ceil(level * n) sorted samples.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if not 0.0 < level < 1.0:
        raise MCMCError("level must lie in (0, 1)")
    if n < 2:
        raise MCMCError("credible intervals need at least 2 samples")
    alpha = 1.0 - level
    sym = tuple(float(q) for q in np.quantile(x, [alpha / 2.0, 1.0 - alpha / 2.0]))
    k = min(n, int(math.ceil(level * n - 1e-9)))
    widths = x[k - 1:] - x[:n - k + 1]
    i = int(np.argmin(widths))
    return sym, (float(x[i]), float(x[i + k - 1]))


def ess_subsample(draws, target: int = 1000):
    """Keep roughly min(target, smallest tau ESS) evenly spaced draws."""
    n = len(draws)
    if n < 10:
        return list(draws)
    ess = []
    for k in range(len(draws[0].regimes)):
        _, chains = tau_chains(draws, k)
        ess.extend(effective_sample_size(chains[:, j]) for j in range(chains.shape[1]))
    keep = int(max(1, min(target, n, math.floor(min(ess)) if ess else n)))
    idx = np.unique(np.round(np.linspace(0, n - 1, keep)).astype(int))
    return [draws[i] for i in idx]


def posterior_mean_model(draws, prior: PriorSpec = None):
    """Model at the posterior mean of every parameter, projected into the prior support.

    Returns the model and whether projection was needed.
    """
    first = draws[0]
    p = len(first.regimes)
    prior = PriorSpec.default(p) if prior is None else prior
    projected = False
    regimes = []
    for k in range(p):
        spec = first.regimes[k]
        entries = {}
        for edge, pc in spec.edge_items():
            if pc.is_independence:
                continue
            vals = np.mean([dr.regimes[k].copulas[edge.row][edge.col].params for dr in draws], axis=0)
            fixed = []
            for i, v in enumerate(np.atleast_1d(vals)):
                lo, hi = prior.bounds(pc.family, i)
                w = min(max(float(v), lo), hi)
                projected |= w != v
                fixed.append(w)
            entries[(edge.row, edge.col)] = PairCopula(pc.family, tuple(fixed))
        regimes.append(spec.replace(entries))
    trans = np.mean([dr.trans for dr in draws], axis=0)
    trans = trans / trans.sum(axis=0, keepdims=True)
    return MSRVineModel(tuple(regimes), trans), projected


@dataclass(frozen=True)
class DICResult:
    dic: float
    p_d: float
    mean_deviance: float
    projected: bool = False


def dic(draws, data, prior: PriorSpec = None, min_draws: int = 100) -> DICResult:
    """Deviance information criterion with the regime path integrated out by the filter."""
    if len(draws) < min_draws:
        raise MCMCError(f"DIC needs at least {min_draws} draws, got {len(draws)}")
    deviances = np.array([-2.0 * ms_log_likelihood(dr.model(), data) for dr in draws])
    mean_model, projected = posterior_mean_model(draws, prior)
    d_mean = -2.0 * ms_log_likelihood(mean_model, data)
    dbar = float(deviances.mean())
    p_d = dbar - d_mean
    return DICResult(dbar + p_d, p_d, dbar, projected)


def summarize(draws, level_pairs=(0.9, 0.95)) -> dict:
    """Posterior means, sds, intervals and ESS of every edge tau and transition entry."""
    out = {"n_draws": len(draws), "regimes": [], "trans": {}}
    for k in range(len(draws[0].regimes)):
        edges, chains = tau_chains(draws, k)
        entries = []
        for j, (r, c) in enumerate(edges):
            entries.append({"edge": [r + 1, c + 1], **_stats(chains[:, j], level_pairs)})
        out["regimes"].append(entries)
    trans = np.array([dr.trans for dr in draws])
    p = trans.shape[1]
    for i in range(p):
        for j in range(p):
            out["trans"][f"{i + 1},{j + 1}"] = _stats(trans[:, i, j], level_pairs)
    return out


def _stats(x, levels):
    x = np.asarray(x, dtype=float)
    res = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0}
    if x.size >= 10:
        res["ess"] = effective_sample_size(x)
    if x.size >= 2:
        for lev in levels:
            sym, hpd = credible_intervals(x, lev)
            res[f"ci{int(round(lev * 100))}"] = list(sym)
            res[f"hpd{int(round(lev * 100))}"] = list(hpd)
    return res
