"""Bivariate copula families used as vine building blocks.

Every family exposes the log-density, the CDF, the h-function
``h(u; v) = dC(u, v)/dv`` (conditional distribution of the first argument
given the second), its inverse, and the Kendall's tau map. Rotated Gumbel
variants are defined through

* 90 degrees:  c90(u1, u2) = c(1 - u1, u2)
* 180 degrees: c180(u1, u2) = c(1 - u1, 1 - u2)
* 270 degrees: c270(u1, u2) = c(u1, 1 - u2)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import gammaln, ndtr, ndtri, stdtr, stdtrit

UMIN = 1e-10
UMAX = 1.0 - 1e-10
# probabilities fed to the inverse h-function need only stay off 0 and 1
PMIN = 1e-15

RHO_MAX = 0.99999
GUMBEL_MAX = 50.0
NU_MIN = 2.01
NU_MAX = 30.0


class CopulaError(ValueError):
    """Invalid copula parameters or arguments."""


class ConvergenceError(RuntimeError):
    """Raised when a numerical inversion or optimisation does not converge."""


class CopulaFamily(enum.Enum):
    INDEPENDENCE = "I"
    GAUSSIAN = "N"
    STUDENT_T = "t"
    GUMBEL = "G"
    GUMBEL90 = "G90"
    GUMBEL180 = "SG"
    GUMBEL270 = "G270"

    @property
    def arity(self) -> int:
        if self is CopulaFamily.INDEPENDENCE:
            return 0
        if self is CopulaFamily.STUDENT_T:
            return 2
        return 1

    @property
    def rotation(self) -> int:
        return _ROTATION.get(self, 0)

    @property
    def is_gumbel(self) -> bool:
        return self in _ROTATION or self is CopulaFamily.GUMBEL

    @classmethod
    def from_tag(cls, tag: str) -> "CopulaFamily":
        try:
            return cls(tag)
        except ValueError:
            raise CopulaError(f"unknown copula family tag {tag!r}") from None

    def tau_sign(self) -> int:
        """+1 or -1 for families restricted to one concordance sign, else 0."""
        if self in (CopulaFamily.GUMBEL, CopulaFamily.GUMBEL180):
            return 1
        if self in (CopulaFamily.GUMBEL90, CopulaFamily.GUMBEL270):
            return -1
        return 0


_ROTATION = {
    CopulaFamily.GUMBEL90: 90,
    CopulaFamily.GUMBEL180: 180,
    CopulaFamily.GUMBEL270: 270,
}

# the copula of (U2, U1); base families are exchangeable
_TRANSPOSE = {
    CopulaFamily.GUMBEL90: CopulaFamily.GUMBEL270,
    CopulaFamily.GUMBEL270: CopulaFamily.GUMBEL90,
}


def clamp(u):
    return np.clip(np.asarray(u, dtype=float), UMIN, UMAX)


def _check_unit(*arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~np.isfinite(a)) or np.any((a < 0.0) | (a > 1.0)):
            raise CopulaError("copula arguments must lie in [0, 1]")


# ---------------------------------------------------------------------------
# unrotated kernels; all take clamped float arrays

def _gauss_logpdf(a, b, rho):
    x, y = ndtri(a), ndtri(b)
    r2 = 1.0 - rho * rho
    return -0.5 * np.log(r2) - (rho * rho * (x * x + y * y) - 2.0 * rho * x * y) / (2.0 * r2)


def _gauss_h(a, b, rho):
    x, y = ndtri(a), ndtri(b)
    return ndtr((x - rho * y) / math.sqrt(1.0 - rho * rho))


def _gauss_hinv(p, b, rho):
    return ndtr(ndtri(p) * math.sqrt(1.0 - rho * rho) + rho * ndtri(b))


def _gauss_cdf(a, b, rho):
    # Plackett: dPhi2/drho equals the bivariate normal density
    from scipy.integrate import quad

    shape = np.broadcast_shapes(np.shape(a), np.shape(b))
    a, b = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b))
    out = np.empty(a.shape)
    for idx in np.ndindex(a.shape):
        x, y = ndtri(a[idx]), ndtri(b[idx])

        def phi2(r):
            q = 1.0 - r * r
            return math.exp(-(x * x - 2 * r * x * y + y * y) / (2 * q)) / (2 * math.pi * math.sqrt(q))

        val, _ = quad(phi2, 0.0, rho, epsabs=1e-15, epsrel=1e-13, limit=200)
        out[idx] = a[idx] * b[idx] + val
    return out.reshape(shape)


def _t_logpdf(a, b, rho, nu):
    x, y = stdtrit(nu, a), stdtrit(nu, b)
    r2 = 1.0 - rho * rho
    const = gammaln((nu + 2) / 2) + gammaln(nu / 2) - 2 * gammaln((nu + 1) / 2) - 0.5 * math.log(r2)
    quad_form = (x * x + y * y - 2 * rho * x * y) / (nu * r2)
    return (const - (nu + 2) / 2 * np.log1p(quad_form)
            + (nu + 1) / 2 * (np.log1p(x * x / nu) + np.log1p(y * y / nu)))


def _t_h(a, b, rho, nu):
    x, y = stdtrit(nu, a), stdtrit(nu, b)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1))
    return stdtr(nu + 1, (x - rho * y) / scale)


def _t_hinv(p, b, rho, nu):
    y = stdtrit(nu, b)
    scale = np.sqrt((nu + y * y) * (1.0 - rho * rho) / (nu + 1))
    return stdtr(nu, stdtrit(nu + 1, p) * scale + rho * y)


def _t_cdf(a, b, rho, nu):
    # C(a, b) = int_{-inf}^{y} f_nu(s) P(X <= x | Y = s) ds
    from scipy.integrate import quad

    shape = np.broadcast_shapes(np.shape(a), np.shape(b))
    a, b = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b))
    out = np.empty(a.shape)
    log_norm = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
    r2 = (1.0 - rho * rho) / (nu + 1)
    for idx in np.ndindex(a.shape):
        x, y = stdtrit(nu, a[idx]), stdtrit(nu, b[idx])

        def integrand(s):
            dens = math.exp(log_norm - (nu + 1) / 2 * math.log1p(s * s / nu))
            return dens * stdtr(nu + 1, (x - rho * s) / math.sqrt((nu + s * s) * r2))

        val, _ = quad(integrand, -np.inf, y, epsabs=1e-15, epsrel=1e-13, limit=400)
        out[idx] = val
    return out.reshape(shape)


def _gumbel_parts(a, b, theta):
    x, y = -np.log(a), -np.log(b)
    lx, ly = np.log(x), np.log(y)
    log_s = np.logaddexp(theta * lx, theta * ly)
    big_a = np.exp(log_s / theta)
    return x, y, lx, ly, log_s, big_a


def _gumbel_logpdf(a, b, theta):
    x, y, lx, ly, log_s, big_a = _gumbel_parts(a, b, theta)
    return (-big_a + x + y + (theta - 1.0) * (lx + ly)
            + (1.0 / theta - 2.0) * log_s + np.log(big_a + theta - 1.0))


def _gumbel_cdf(a, b, theta):
    return np.exp(-_gumbel_parts(a, b, theta)[5])


def _gumbel_h(a, b, theta):
    x, y, lx, ly, log_s, big_a = _gumbel_parts(a, b, theta)
    # C * A^(1-theta) * y^(theta-1) / b
    log_h = -big_a + (1.0 - theta) * log_s / theta + (theta - 1.0) * ly + y
    return np.exp(log_h)


def _invert_h(h, logpdf, p, b, max_iter=100, tol=1e-14):
    """Solve h(x; b) = p for x by safeguarded Newton iteration on (0, 1)."""
    p, b = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(b, dtype=float))
    p = p.copy()
    lo = np.zeros(p.shape)
    hi = np.ones(p.shape)
    x = np.clip(p, UMIN, UMAX)
    done = np.zeros(p.shape, dtype=bool)
    for _ in range(max_iter):
        hx = h(x, b)
        diff = hx - p
        done = np.abs(diff) < tol
        if done.all():
            return x
        lo = np.where(diff < 0, x, lo)
        hi = np.where(diff > 0, x, hi)
        slope = np.exp(logpdf(x, b))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - diff / slope
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        new = np.where(bad, 0.5 * (lo + hi), step)
        new = np.clip(new, UMIN, UMAX)
        # roots beyond the clamping range stay pinned at the boundary
        stalled = ((hi - lo) < 1e-15) | ((x <= UMIN) & (diff > 0)) | ((x >= UMAX) & (diff < 0))
        x = np.where(done | stalled, x, new)
        if np.all(done | stalled):
            return x
    raise ConvergenceError(
        f"h-function inversion did not converge: max residual {np.max(np.abs(h(x, b) - p)):.3e}, "
        f"widest bracket {np.max(hi - lo):.3e}"
    )


def _gumbel_hinv(p, b, theta):
    return _invert_h(lambda a, bb: _gumbel_h(a, bb, theta),
                     lambda a, bb: _gumbel_logpdf(a, bb, theta), p, b)


# ---------------------------------------------------------------------------

_PARAM_NAMES = {
    CopulaFamily.INDEPENDENCE: (),
    CopulaFamily.GAUSSIAN: ("rho",),
    CopulaFamily.STUDENT_T: ("rho", "nu"),
}


def _validate(family: CopulaFamily, params: tuple) -> None:
    if len(params) != family.arity:
        raise CopulaError(f"{family.name} expects {family.arity} parameter(s), got {len(params)}")
    if any(not math.isfinite(p) for p in params):
        raise CopulaError(f"non-finite parameter for {family.name}: {params}")
    if family in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        if not -1.0 < params[0] < 1.0:
            raise CopulaError(f"correlation must lie in (-1, 1), got {params[0]}")
    if family is CopulaFamily.STUDENT_T and not 2.0 < params[1] <= NU_MAX:
        raise CopulaError(f"degrees of freedom must lie in (2, {NU_MAX}], got {params[1]}")
    if family.is_gumbel and params[0] < 1.0:
        raise CopulaError(f"Gumbel parameter must be >= 1, got {params[0]}")


@dataclass(frozen=True)
class PairCopula:
    """A bivariate copula: family tag plus parameter tuple."""

    family: CopulaFamily
    params: tuple = ()

    def __post_init__(self):
        fam = self.family
        if isinstance(fam, str):
            fam = CopulaFamily.from_tag(fam)
            object.__setattr__(self, "family", fam)
        params = tuple(float(p) for p in np.atleast_1d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "params", params)
        _validate(fam, params)

    @classmethod
    def independence(cls) -> "PairCopula":
        return cls(CopulaFamily.INDEPENDENCE)

    @property
    def is_independence(self) -> bool:
        return self.family is CopulaFamily.INDEPENDENCE

    def transposed(self) -> "PairCopula":
        """Copula of (U2, U1)."""
        return PairCopula(_TRANSPOSE.get(self.family, self.family), self.params)

    # -- evaluation --------------------------------------------------------

    def _base(self):
        fam = self.family
        if fam is CopulaFamily.GAUSSIAN:
            (rho,) = self.params
            return (lambda a, b: _gauss_logpdf(a, b, rho), lambda a, b: _gauss_h(a, b, rho),
                    lambda p, b: _gauss_hinv(p, b, rho), lambda a, b: _gauss_cdf(a, b, rho))
        if fam is CopulaFamily.STUDENT_T:
            rho, nu = self.params
            return (lambda a, b: _t_logpdf(a, b, rho, nu), lambda a, b: _t_h(a, b, rho, nu),
                    lambda p, b: _t_hinv(p, b, rho, nu), lambda a, b: _t_cdf(a, b, rho, nu))
        (theta,) = self.params
        return (lambda a, b: _gumbel_logpdf(a, b, theta), lambda a, b: _gumbel_h(a, b, theta),
                lambda p, b: _gumbel_hinv(p, b, theta), lambda a, b: _gumbel_cdf(a, b, theta))

    def logpdf(self, u1, u2):
        _check_unit(u1, u2)
        u1, u2 = np.broadcast_arrays(clamp(u1), clamp(u2))
        if self.is_independence:
            return np.zeros(u1.shape)
        logpdf = self._base()[0]
        rot = self.family.rotation
        if rot == 90:
            return logpdf(1.0 - u1, u2)
        if rot == 180:
            return logpdf(1.0 - u1, 1.0 - u2)
        if rot == 270:
            return logpdf(u1, 1.0 - u2)
        return logpdf(u1, u2)

    def pdf(self, u1, u2):
        return np.exp(self.logpdf(u1, u2))

    def cdf(self, u1, u2):
        _check_unit(u1, u2)
        u1, u2 = np.broadcast_arrays(clamp(u1), clamp(u2))
        if self.is_independence:
            return u1 * u2
        cdf = self._base()[3]
        rot = self.family.rotation
        if rot == 90:
            return u2 - cdf(1.0 - u1, u2)
        if rot == 180:
            return u1 + u2 - 1.0 + cdf(1.0 - u1, 1.0 - u2)
        if rot == 270:
            return u1 - cdf(u1, 1.0 - u2)
        return cdf(u1, u2)

    def hfunc(self, u, v):
        """Conditional CDF of the first argument given the second, dC(u, v)/dv."""
        _check_unit(u, v)
        u, v = np.broadcast_arrays(clamp(u), clamp(v))
        if self.is_independence:
            return u.copy()
        h = self._base()[1]
        rot = self.family.rotation
        if rot == 90:
            out = 1.0 - h(1.0 - u, v)
        elif rot == 180:
            out = 1.0 - h(1.0 - u, 1.0 - v)
        elif rot == 270:
            out = h(u, 1.0 - v)
        else:
            out = h(u, v)
        return np.clip(out, 0.0, 1.0)

    def hfunc_first(self, u1, u2):
        """Conditional CDF of the second argument given the first, dC(u1, u2)/du1."""
        return self.transposed().hfunc(u2, u1)

    def hinv(self, p, v):
        """Inverse of :meth:`hfunc` in its first argument."""
        _check_unit(p, v)
        p, v = np.broadcast_arrays(np.clip(np.asarray(p, dtype=float), PMIN, 1.0 - PMIN), clamp(v))
        if self.is_independence:
            return clamp(p)
        hinv = self._base()[2]
        rot = self.family.rotation
        if rot == 90:
            out = 1.0 - hinv(1.0 - p, v)
        elif rot == 180:
            out = 1.0 - hinv(1.0 - p, 1.0 - v)
        elif rot == 270:
            out = hinv(p, 1.0 - v)
        else:
            out = hinv(p, v)
        return np.clip(out, 0.0, 1.0)

    # unchecked evaluators for clamped arrays, used in the vine recursions

    def _logpdf(self, u1, u2):
        rot = self.family.rotation
        if self.is_independence:
            return np.zeros(np.shape(u1))
        f = self._base()[0]
        if rot == 90:
            return f(1.0 - u1, u2)
        if rot == 180:
            return f(1.0 - u1, 1.0 - u2)
        if rot == 270:
            return f(u1, 1.0 - u2)
        return f(u1, u2)

    def _h(self, u, v):
        if self.is_independence:
            return u
        h = self._base()[1]
        rot = self.family.rotation
        if rot == 90:
            out = 1.0 - h(1.0 - u, v)
        elif rot == 180:
            out = 1.0 - h(1.0 - u, 1.0 - v)
        elif rot == 270:
            out = h(u, 1.0 - v)
        else:
            out = h(u, v)
        return np.clip(out, UMIN, UMAX)

    def _h_first(self, u1, u2):
        if self.is_independence:
            return u2
        return self.transposed()._h(u2, u1)

    def _hinv(self, p, v):
        return clamp(self.hinv(p, v))

    @property
    def tau(self) -> float:
        return param_to_tau(self)

    def to_json(self):
        return self.family.value, list(self.params)


# ---------------------------------------------------------------------------
# spec-level functions

def density(pc: PairCopula, u1, u2):
    return pc.pdf(u1, u2)


def hfunc(pc: PairCopula, u, v):
    return pc.hfunc(u, v)


def hinv(pc: PairCopula, p, v):
    return pc.hinv(p, v)


def tau_to_param(family: CopulaFamily, tau: float) -> tuple:
    """Map Kendall's tau to the family parameter(s).

    StudentT returns only the correlation; the degrees of freedom are
    supplied separately by the caller.
    """
    family = CopulaFamily(family)
    if not -1.0 < tau < 1.0:
        raise CopulaError(f"|tau| must be < 1, got {tau}")
    if family is CopulaFamily.INDEPENDENCE:
        if tau != 0.0:
            raise CopulaError("independence copula has tau = 0")
        return ()
    if family in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        return (math.sin(math.pi * tau / 2.0),)
    sign = family.tau_sign()
    if tau * sign < 0:
        raise CopulaError(f"{family.name} cannot represent tau = {tau}")
    return (1.0 / (1.0 - abs(tau)),)


def param_to_tau(pc: PairCopula) -> float:
    fam = pc.family
    if fam is CopulaFamily.INDEPENDENCE:
        return 0.0
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT_T):
        return 2.0 / math.pi * math.asin(pc.params[0])
    return fam.tau_sign() * (1.0 - 1.0 / pc.params[0])


# ---------------------------------------------------------------------------
# weighted maximum likelihood

@dataclass(frozen=True)
class FitResult:
    copula: PairCopula
    loglik: float
    se: tuple = ()
    converged: bool = True
    at_boundary: bool = False
    fallback: bool = False
    nit: int = 0

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.copula.family.arity


# (lower, upper) bounds of the unconstrained coordinates
_Z_BOUNDS = {
    "rho": (-math.atanh(RHO_MAX), math.atanh(RHO_MAX)),
    "theta": (math.log(1e-6), math.log(GUMBEL_MAX - 1.0)),
    "nu": (math.log(NU_MIN - 2.0), math.log(NU_MAX - 2.0)),
}


def _coords(family):
    if family in (CopulaFamily.GAUSSIAN,):
        return ("rho",)
    if family is CopulaFamily.STUDENT_T:
        return ("rho", "nu")
    return ("theta",)


def _to_z(name, value):
    if name == "rho":
        return math.atanh(value)
    if name == "theta":
        return math.log(max(value - 1.0, 1e-6))
    return math.log(value - 2.0)


def _from_z(name, z):
    if name == "rho":
        return math.tanh(z)
    if name == "theta":
        return 1.0 + math.exp(z)
    return 2.0 + math.exp(z)


def weighted_normal_tau(u1, u2, w) -> float:
    """Kendall's tau implied by the weighted correlation of normal scores."""
    x, y = ndtri(clamp(u1)), ndtri(clamp(u2))
    w = w / w.sum()
    mx, my = np.dot(w, x), np.dot(w, y)
    cov = np.dot(w, (x - mx) * (y - my))
    sx = math.sqrt(max(np.dot(w, (x - mx) ** 2), 1e-300))
    sy = math.sqrt(max(np.dot(w, (y - my) ** 2), 1e-300))
    rho = float(np.clip(cov / (sx * sy), -0.999, 0.999))
    return 2.0 / math.pi * math.asin(rho)


def _start_params(family, tau0, nu0=10.0):
    if family is CopulaFamily.GAUSSIAN:
        return tau_to_param(family, tau0)
    if family is CopulaFamily.STUDENT_T:
        return tau_to_param(family, tau0) + (nu0,)
    sign = family.tau_sign()
    t = max(tau0 * sign, 0.05)
    return tau_to_param(family, min(t, 0.95) * sign)


def _numerical_hessian(f, x, steps):
    n = len(x)
    hess = np.empty((n, n))
    fx = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        hess[i, i] = (f(x + ei) - 2 * fx + f(x - ei)) / steps[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * steps[i] * steps[j])
            hess[i, j] = hess[j, i] = val
    return hess


def _standard_errors(family, params, nll):
    """Square roots of the diagonal of the inverse Hessian in natural coordinates."""
    x = np.array(params, dtype=float)
    steps = []
    for name, val in zip(_coords(family), x):
        if name == "rho":
            steps.append(min(1e-4, 0.5 * (1.0 - abs(val))))
        elif name == "theta":
            steps.append(min(1e-4 * max(1.0, val), 0.5 * (val - 1.0)) if val > 1.0 else 0.0)
        else:
            steps.append(min(1e-3 * val, 0.5 * (NU_MAX + 1e-9 - val), 0.5 * (val - 2.0)))
    if min(steps) <= 1e-12:
        return tuple(math.nan for _ in params)

    def f(p):
        try:
            return nll(PairCopula(family, tuple(p)))
        except CopulaError:
            return math.inf

    hess = _numerical_hessian(f, x, np.array(steps))
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        return tuple(math.nan for _ in params)
    diag = np.diag(cov)
    if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
        return tuple(math.nan for _ in params)
    return tuple(float(s) for s in np.sqrt(diag))


def effective_weight_count(w) -> float:
    w = np.asarray(w, dtype=float)
    s = w.sum()
    return float(s * s / np.dot(w, w)) if s > 0 else 0.0


def fit_weighted(family, u1, u2, weights=None, *, min_ess: float = 0.0,
                 max_iter: int = 200, ftol: float = 1e-8) -> FitResult:
    """Maximise sum_t w_t log c(u1_t, u2_t) over the family parameters.

    Parameters are optimised on an unconstrained scale (arctanh for
    correlations, log(theta - 1) for Gumbel, log(nu - 2) for the degrees
    of freedom) with L-BFGS-B. If the effective number of weighted
    observations is below ``min_ess`` the tau-inversion estimate is
    returned instead and ``fallback`` is set.
    """
    family = CopulaFamily(family)
    u1, u2 = clamp(u1).ravel(), clamp(u2).ravel()
    w = np.ones_like(u1) if weights is None else np.asarray(weights, dtype=float).ravel()
    if u1.size == 0 or u1.shape != u2.shape or w.shape != u1.shape:
        raise CopulaError("fit_weighted needs nonempty, equally long u1, u2, weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise CopulaError("weights must be finite, nonnegative and not all zero")
    keep = w > 0
    u1, u2, w = u1[keep], u2[keep], w[keep]

    if family is CopulaFamily.INDEPENDENCE:
        return FitResult(PairCopula.independence(), 0.0)

    def nll(pc):
        return -float(np.dot(w, pc.logpdf(u1, u2)))

    tau0 = weighted_normal_tau(u1, u2, w)
    start = _start_params(family, tau0)

    if effective_weight_count(w) < min_ess:
        pc = PairCopula(family, start)
        return FitResult(pc, -nll(pc), _standard_errors(family, pc.params, nll), fallback=True)

    names = _coords(family)
    z0 = np.array([_to_z(n, v) for n, v in zip(names, start)])
    bounds = [_Z_BOUNDS[n] for n in names]
    z0 = np.clip(z0, [b[0] for b in bounds], [b[1] for b in bounds])

    def objective(z):
        params = tuple(_from_z(n, zi) for n, zi in zip(names, z))
        try:
            val = nll(PairCopula(family, params))
        except CopulaError:
            return 1e300
        return val if math.isfinite(val) else 1e300

    res = optimize.minimize(objective, z0, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": max_iter, "ftol": ftol, "gtol": 1e-9})
    params = tuple(_from_z(n, zi) for n, zi in zip(names, res.x))
    pc = PairCopula(family, params)
    at_boundary = any(min(abs(zi - lo), abs(hi - zi)) < 1e-3 for zi, (lo, hi) in zip(res.x, bounds))
    return FitResult(pc, -nll(pc), _standard_errors(family, params, nll),
                     converged=bool(res.success), at_boundary=at_boundary, nit=int(res.nit))


@dataclass(frozen=True)
class WeightedPairSample:
    u1: np.ndarray
    u2: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        u1, u2 = clamp(self.u1).ravel(), clamp(self.u2).ravel()
        w = np.ones_like(u1) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if u1.shape != u2.shape or w.shape != u1.shape or u1.size == 0:
            raise CopulaError("sample columns and weights must be nonempty and equally long")
        if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
            raise CopulaError("weights must be finite, nonnegative and not all zero")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        object.__setattr__(self, "weights", w)


def select_family(data: WeightedPairSample, catalogue, **fit_kw) -> FitResult:
    """Fit every family in ``catalogue`` and return the AIC-minimising fit.

    Ties go to the family listed first.
    """
    catalogue = [CopulaFamily(f) for f in catalogue]
    if not catalogue:
        raise CopulaError("empty family catalogue")
    best, errors = None, []
    for fam in catalogue:
        try:
            fit = fit_weighted(fam, data.u1, data.u2, data.weights, **fit_kw)
        except (CopulaError, ConvergenceError) as exc:
            errors.append(exc)
            continue
        if best is None or fit.aic < best.aic:
            best = fit
    if best is None:
        raise errors[0]
    return best
