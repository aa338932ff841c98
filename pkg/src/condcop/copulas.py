"""Bivariate parametric copula families.

Five one-parameter families are available: Gaussian, Student-t with four
degrees of freedom, Clayton, Gumbel and Frank.  Each family exposes its
density, cdf, sampler, score in the parameter and the Kendall's tau map.

Examples
--------
>>> from condcop.copulas import CopulaModel
>>> model = CopulaModel("clayton", 2.0)
>>> round(float(model.cdf([0.5, 0.5])), 6)
0.377964
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.optimize import elementwise

from . import _compiled as cc

__all__ = [
    "CopulaDomainError",
    "CopulaFamily",
    "CopulaModel",
    "cdf",
    "cdf_values",
    "debye1",
    "density",
    "log_density",
    "log_density_score",
    "sample",
    "tau_to_theta",
    "theta_to_tau",
]

STUDENT_DF = cc.STUDENT_DF
FRANK_SNAP = cc.FRANK_SNAP
GUMBEL_TOL = 1e-10


class CopulaDomainError(ValueError):
    """Raised for parameters or evaluation points outside a family's domain."""


class CopulaFamily(str, Enum):
    """Supported one-parameter families, serialized by their lowercase value."""

    GAUSSIAN = "gaussian"
    STUDENT4 = "student4"
    CLAYTON = "clayton"
    GUMBEL = "gumbel"
    FRANK = "frank"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def domain(self) -> tuple[float, float]:
        """Closure of the parameter interval."""
        return _DOMAINS[self]

    @property
    def independence_theta(self) -> float | None:
        """Parameter of the independence member, ``None`` if it is only a limit."""
        return _INDEPENDENCE[self]

    def contains(self, theta) -> np.ndarray:
        """Elementwise membership test for the parameter domain."""
        th = np.asarray(theta, dtype=float)
        ok = np.isfinite(th)
        if self in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT4):
            return ok & (np.abs(th) < 1.0)
        if self is CopulaFamily.CLAYTON:
            return ok & (th > 0.0)
        if self is CopulaFamily.GUMBEL:
            return ok & (th >= 1.0)
        return ok


_CODES = {
    CopulaFamily.GAUSSIAN: cc.GAUSSIAN,
    CopulaFamily.STUDENT4: cc.STUDENT4,
    CopulaFamily.CLAYTON: cc.CLAYTON,
    CopulaFamily.GUMBEL: cc.GUMBEL,
    CopulaFamily.FRANK: cc.FRANK,
}
_DOMAINS = {
    CopulaFamily.GAUSSIAN: (-1.0, 1.0),
    CopulaFamily.STUDENT4: (-1.0, 1.0),
    CopulaFamily.CLAYTON: (0.0, math.inf),
    CopulaFamily.GUMBEL: (1.0, math.inf),
    CopulaFamily.FRANK: (-math.inf, math.inf),
}
_INDEPENDENCE = {
    CopulaFamily.GAUSSIAN: 0.0,
    CopulaFamily.STUDENT4: 0.0,
    CopulaFamily.CLAYTON: None,
    CopulaFamily.GUMBEL: 1.0,
    CopulaFamily.FRANK: 0.0,
}


def as_family(family) -> CopulaFamily:
    """Coerce a string or :class:`CopulaFamily` to the enum."""
    try:
        return CopulaFamily(family)
    except ValueError:
        names = ", ".join(f.value for f in CopulaFamily)
        raise CopulaDomainError(f"unknown copula family {family!r}; expected one of {names}") from None


def _check_theta(family: CopulaFamily, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if not np.all(family.contains(th)):
        lo, hi = family.domain
        raise CopulaDomainError(f"{family.value} parameter {theta!r} outside ({lo}, {hi})")
    return th


def _as_points(u, closed: bool) -> np.ndarray:
    pts = np.asarray(u, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise CopulaDomainError("points must be bivariate, shape (2,) or (n, 2)")
    if closed:
        bad = ~((pts >= 0.0) & (pts <= 1.0))
    else:
        bad = ~((pts > 0.0) & (pts < 1.0))
    if np.any(bad):
        where = "[0, 1]" if closed else "(0, 1)"
        raise CopulaDomainError(f"evaluation points must lie in {where}^2")
    return pts


def _squeeze(out: np.ndarray, u) -> np.ndarray | float:
    if np.asarray(u).ndim == 1:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# coordinates that do not depend on theta
# ---------------------------------------------------------------------------


def prepare_points(family: CopulaFamily, u: np.ndarray) -> np.ndarray:
    """Pre-transform interior points for the compiled log-density.

    The four columns hold family-specific quantities computed once, so that
    repeated likelihood evaluations only redo the theta-dependent part.
    """
    family = as_family(family)
    u = np.asarray(u, dtype=float)
    out = np.zeros((u.shape[0], 4))
    if family is CopulaFamily.GAUSSIAN:
        x = special.ndtri(u[:, 0])
        y = special.ndtri(u[:, 1])
        out[:, 0] = x * x + y * y
        out[:, 1] = x * y
    elif family is CopulaFamily.STUDENT4:
        x = special.stdtrit(STUDENT_DF, u[:, 0])
        y = special.stdtrit(STUDENT_DF, u[:, 1])
        out[:, 0] = x * x + y * y
        out[:, 1] = x * y
        out[:, 2] = 0.5 * (STUDENT_DF + 1.0) * (np.log1p(x * x / STUDENT_DF) + np.log1p(y * y / STUDENT_DF))
    elif family is CopulaFamily.CLAYTON:
        out[:, 0] = np.log(u[:, 0])
        out[:, 1] = np.log(u[:, 1])
    elif family is CopulaFamily.GUMBEL:
        a = -np.log(u[:, 0])
        b = -np.log(u[:, 1])
        out[:, 0] = a
        out[:, 1] = b
        out[:, 2] = np.log(a)
        out[:, 3] = np.log(b)
    else:
        out[:, :2] = u
    return out


def _logc_and_score(family: CopulaFamily, pts: np.ndarray, theta) -> tuple[np.ndarray, np.ndarray]:
    th = np.broadcast_to(np.asarray(theta, dtype=float), (pts.shape[0],)).copy()
    prep = prepare_points(family, pts)
    return cc.logc_score_many(family.code, prep, th)


# ---------------------------------------------------------------------------
# public evaluation functions
# ---------------------------------------------------------------------------


def log_density(family, theta, u):
    """Log copula density at interior point(s) ``u``."""
    fam = as_family(family)
    _check_theta(fam, theta)
    pts = _as_points(u, closed=False)
    logc, _ = _logc_and_score(fam, pts, theta)
    return _squeeze(logc, u)


def density(model: "CopulaModel", u):
    """Copula density c_theta(u) at interior point(s).

    Parameters
    ----------
    model : CopulaModel
    u : array_like, shape (2,) or (n, 2)
        Points strictly inside the unit square.

    Returns
    -------
    float or ndarray
    """
    return np.exp(log_density(model.family, model.theta, u))


def log_density_score(model: "CopulaModel", u):
    """Derivative of the log-density with respect to the parameter."""
    fam = model.family
    pts = _as_points(u, closed=False)
    if fam is CopulaFamily.GUMBEL and model.theta <= 1.0:
        raise CopulaDomainError("score needs an interior Gumbel parameter (theta > 1)")
    _, score = _logc_and_score(fam, pts, model.theta)
    return _squeeze(score, u)


def _bvn_cdf(x: np.ndarray, y: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Bivariate standard normal cdf through Owen's T function."""
    x = np.where(x == 0.0, 1e-300, x)
    y = np.where(y == 0.0, 1e-300, y)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    ax = (y - rho * x) / (x * s)
    ay = (x - rho * y) / (y * s)
    beta = np.where(x * y > 0.0, 0.0, 0.5)
    beta = np.where((x * y == 0.0) & (x + y >= 0.0), 0.0, beta)
    val = 0.5 * special.ndtr(x) + 0.5 * special.ndtr(y) - special.owens_t(x, ax) - special.owens_t(y, ay) - beta
    return np.clip(val, 0.0, 1.0)


@lru_cache(maxsize=1)
def _student_mixture_rule(n_nodes: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature for E[g(W)], W ~ chi-square(4), after W = 2 r^2."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    upper = 7.5
    r = 0.5 * upper * (x + 1.0)
    # density of r when W = 2 r^2: 2 r^3 exp(-r^2)
    dens = 2.0 * r**3 * np.exp(-r * r)
    return r, 0.5 * upper * w * dens


def _student_cdf(x: np.ndarray, y: np.ndarray, rho: np.ndarray) -> np.ndarray:
    # t vector = normal vector / sqrt(W / nu): integrate the Gaussian cdf over W
    r, wts = _student_mixture_rule()
    scale = np.sqrt(2.0 * r * r / STUDENT_DF)
    vals = _bvn_cdf(x[:, None] * scale[None, :], y[:, None] * scale[None, :], rho[:, None])
    return np.clip(vals @ wts / wts.sum(), 0.0, 1.0)


def _cdf_interior(family: CopulaFamily, u: np.ndarray, v: np.ndarray, th: np.ndarray) -> np.ndarray:
    if family is CopulaFamily.GAUSSIAN:
        return _bvn_cdf(special.ndtri(u), special.ndtri(v), th)
    if family is CopulaFamily.STUDENT4:
        return _student_cdf(special.stdtrit(STUDENT_DF, u), special.stdtrit(STUDENT_DF, v), th)
    if family is CopulaFamily.CLAYTON:
        a1 = -th * np.log(u)
        a2 = -th * np.log(v)
        big = np.maximum(a1, a2)
        log_a = big + np.log(np.exp(a1 - big) + np.exp(a2 - big) - np.exp(-big))
        return np.exp(-log_a / th)
    if family is CopulaFamily.GUMBEL:
        la = np.log(-np.log(u))
        lb = np.log(-np.log(v))
        hi = np.maximum(la, lb)
        log_s = th * hi + np.log1p(np.exp(th * (np.minimum(la, lb) - hi)))
        return np.exp(-np.exp(log_s / th))
    out = u * v
    live = np.abs(th) >= FRANK_SNAP
    if np.any(live):
        t = th[live]
        ratio = np.expm1(-t * u[live]) * np.expm1(-t * v[live]) / np.expm1(-t)
        out[live] = -np.log1p(ratio) / t
    return out


def cdf(model: "CopulaModel", u):
    """Copula cdf C_theta(u) on the closed unit square."""
    return cdf_values(model.family, model.theta, u)


def cdf_values(family, theta, u):
    """Copula cdf with a scalar parameter or one parameter per point."""
    fam = as_family(family)
    pts = _as_points(u, closed=True)
    th = np.broadcast_to(_check_theta(fam, theta), (pts.shape[0],))
    if fam is CopulaFamily.FRANK:
        th = np.where(np.abs(th) < FRANK_SNAP, 0.0, th)
    out = np.empty(pts.shape[0])
    a, b = pts[:, 0], pts[:, 1]
    edge_zero = (a == 0.0) | (b == 0.0)
    edge_a = (a == 1.0) & ~edge_zero
    edge_b = (b == 1.0) & ~edge_zero & ~edge_a
    inner = ~(edge_zero | edge_a | edge_b)
    out[edge_zero] = 0.0
    out[edge_a] = b[edge_a]
    out[edge_b] = a[edge_b]
    if np.any(inner):
        out[inner] = _cdf_interior(fam, a[inner], b[inner], np.array(th[inner]))
    return _squeeze(out, u)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _gumbel_conditional_inverse(u: np.ndarray, w: np.ndarray, th: np.ndarray) -> np.ndarray:
    """Solve dC/du(u, v) = w for v.

    With x = -log u and z = ((-log u)^th + (-log v)^th)^(1/th) the equation
    reads (x - z) + (1 - th) log(z / x) = log w, which is decreasing in z on
    [x, x - log w].  Newton steps are kept inside the bracket and replaced
    by bisection whenever they leave it.
    """
    x = -np.log(u)
    lw = np.log(w)
    lo = x.copy()
    hi = x - lw
    z = 0.5 * (lo + hi)
    for _ in range(200):
        g = (x - z) + (1.0 - th) * (np.log(z) - np.log(x)) - lw
        lo = np.where(g > 0.0, z, lo)
        hi = np.where(g > 0.0, hi, z)
        dg = -1.0 + (1.0 - th) / z
        newton = z - g / dg
        inside = (newton > lo) & (newton < hi)
        z_new = np.where(inside, newton, 0.5 * (lo + hi))
        done = np.abs(z_new - z) <= GUMBEL_TOL * np.maximum(1.0, z)
        z = z_new
        if np.all(done):
            break
    ratio = np.exp(th * (np.log(x) - np.log(z)))
    y = z * np.exp(np.log1p(-np.minimum(ratio, 1.0)) / th)
    return np.exp(-y)


def _clayton_conditional_inverse(u: np.ndarray, w: np.ndarray, th: np.ndarray) -> np.ndarray:
    log_a = np.log(np.expm1(-th / (1.0 + th) * np.log(w)))
    log_term = np.logaddexp(0.0, log_a - th * np.log(u))
    return np.exp(-log_term / th)


def _frank_conditional_inverse(u: np.ndarray, w: np.ndarray, th: np.ndarray) -> np.ndarray:
    out = w.copy()
    live = np.abs(th) >= FRANK_SNAP
    if not np.any(live):
        return out
    t = np.abs(th[live])
    uu = np.where(th[live] < 0.0, u[live], u[live])
    ww = w[live]
    num = np.logaddexp(np.log1p(-ww) - t * uu, np.log(ww) - t)
    den = np.log(ww + (1.0 - ww) * np.exp(-t * uu))
    v = -(num - den) / t
    out[live] = np.where(th[live] < 0.0, 1.0 - v, v)
    return out


def sample_pairs(family, theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` pairs, with a scalar or a per-row parameter array."""
    fam = as_family(family)
    th = np.broadcast_to(np.asarray(theta, dtype=float), (n,)).copy()
    _check_theta(fam, th)
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT4):
        z = rng.standard_normal((n, 2))
        z2 = th * z[:, 0] + np.sqrt((1.0 - th) * (1.0 + th)) * z[:, 1]
        if fam is CopulaFamily.GAUSSIAN:
            out = np.column_stack([special.ndtr(z[:, 0]), special.ndtr(z2)])
        else:
            scale = np.sqrt(rng.chisquare(STUDENT_DF, n) / STUDENT_DF)
            out = np.column_stack(
                [special.stdtr(STUDENT_DF, z[:, 0] / scale), special.stdtr(STUDENT_DF, z2 / scale)]
            )
    else:
        uw = rng.random((n, 2))
        u = np.clip(uw[:, 0], 1e-300, None)
        w = np.clip(uw[:, 1], 1e-300, None)
        if fam is CopulaFamily.CLAYTON:
            v = _clayton_conditional_inverse(u, w, th)
        elif fam is CopulaFamily.GUMBEL:
            v = np.where(th == 1.0, w, 0.0)
            dep = th > 1.0
            if np.any(dep):
                v[dep] = _gumbel_conditional_inverse(u[dep], w[dep], th[dep])
        else:
            v = _frank_conditional_inverse(u, w, th)
        out = np.column_stack([u, v])
    tiny = np.finfo(float).tiny
    return np.clip(out, tiny, 1.0 - np.finfo(float).epsneg)


def sample(model: "CopulaModel", n: int, seed=None) -> np.ndarray:
    """Draw ``n`` i.i.d. pairs from the copula.

    Parameters
    ----------
    model : CopulaModel
    n : int
        Number of draws, at least one.
    seed : int, numpy Generator or None
        Anything accepted by ``numpy.random.default_rng``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return sample_pairs(model.family, model.theta, int(n), rng)


# ---------------------------------------------------------------------------
# Kendall's tau
# ---------------------------------------------------------------------------


def _debye_integrand(t: float) -> float:
    return 1.0 if t == 0.0 else t / math.expm1(t)


def debye1(x: float) -> float:
    """First Debye function D1(x) = x^-1 int_0^x t / (e^t - 1) dt by adaptive quadrature."""
    x = float(x)
    if x == 0.0:
        return 1.0
    val, _ = integrate.quad(_debye_integrand, 0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / x


def _debye1_array(x: np.ndarray) -> np.ndarray:
    """Vectorised D1 through the dilogarithm, used for bulk calibration.

    int_0^x t/(e^t-1) dt = pi^2/6 + x log(1-e^-x) - Li2(e^-x) for x > 0 and
    D1(-x) = D1(x) + x/2.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    out = np.ones_like(ax)
    small = ax < 1e-4
    # series D1(x) = 1 - x/4 + x^2/36 - x^4/3600
    out[small] = 1.0 - ax[small] / 4.0 + ax[small] ** 2 / 36.0 - ax[small] ** 4 / 3600.0
    big = ~small
    if np.any(big):
        a = ax[big]
        e = np.exp(-a)
        li2 = special.spence(1.0 - e)
        out[big] = (math.pi**2 / 6.0 + a * np.log(-np.expm1(-a)) - li2) / a
    return np.where(x < 0.0, out + ax / 2.0, out)


def _frank_tau(theta: np.ndarray, exact: bool) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    live = np.abs(theta) >= FRANK_SNAP
    if np.any(live):
        t = theta[live]
        d1 = np.array([debye1(v) for v in t]) if exact else _debye1_array(t)
        out[live] = 1.0 - 4.0 / t * (1.0 - d1)
    small = ~live
    out[small] = theta[small] / 9.0
    return out


def theta_to_tau(family, theta):
    """Kendall's tau of the family member with parameter ``theta``."""
    fam = as_family(family)
    th = _check_theta(fam, theta)
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT4):
        out = 2.0 / math.pi * np.arcsin(th)
    elif fam is CopulaFamily.CLAYTON:
        out = th / (th + 2.0)
    elif fam is CopulaFamily.GUMBEL:
        out = 1.0 - 1.0 / th
    else:
        out = _frank_tau(np.atleast_1d(th), exact=np.size(th) <= 64).reshape(np.shape(th))
    return float(out) if np.ndim(out) == 0 else out


def _frank_theta_from_tau(tau: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    out = np.zeros_like(tau)
    live = np.abs(tau) >= FRANK_SNAP / 9.0
    if np.any(live):
        tt = tau[live]
        bound = 8.0 / (1.0 - np.abs(tt)) + 10.0
        res = elementwise.find_root(
            lambda x, target: _frank_tau(x, exact=False) - target,
            (-bound, bound),
            args=(tt,),
            tolerances=dict(xatol=1e-13, xrtol=1e-14),
        )
        if not np.all(res.success):
            raise CopulaDomainError("Frank calibration failed to converge")
        out[live] = res.x
    return out


def tau_to_theta(family, tau):
    """Parameter with Kendall's tau equal to ``tau``.

    Raises
    ------
    CopulaDomainError
        When the family cannot attain ``tau`` (Clayton and Gumbel need
        ``tau >= 0``, with zero allowed for Gumbel only).
    """
    fam = as_family(family)
    t = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(t) & (np.abs(t) < 1.0)):
        raise CopulaDomainError(f"Kendall's tau {tau!r} outside (-1, 1)")
    if fam in (CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT4):
        out = np.sin(math.pi * t / 2.0)
    elif fam is CopulaFamily.CLAYTON:
        if np.any(t <= 0.0):
            raise CopulaDomainError("clayton attains only tau in (0, 1)")
        out = 2.0 * t / (1.0 - t)
    elif fam is CopulaFamily.GUMBEL:
        if np.any(t < 0.0):
            raise CopulaDomainError("gumbel attains only tau in [0, 1)")
        out = 1.0 / (1.0 - t)
    else:
        out = _frank_theta_from_tau(np.atleast_1d(t)).reshape(np.shape(t))
    return float(out) if np.ndim(out) == 0 else out


def theta_for_tau_or_independence(family, tau) -> np.ndarray:
    """Like :func:`tau_to_theta` but maps tau = 0 to the independence member.

    Clayton has no independence member; rows with tau = 0 get ``nan`` and
    must be sampled from the independence copula by the caller.
    """
    fam = as_family(family)
    t = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.full(t.shape, np.nan)
    zero = t == 0.0
    if fam.independence_theta is not None:
        out[zero] = fam.independence_theta
    if np.any(~zero):
        out[~zero] = tau_to_theta(fam, t[~zero])
    return out


# ---------------------------------------------------------------------------
# model object
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CopulaModel:
    """A family together with one parameter value.

    Parameters
    ----------
    family : str or CopulaFamily
        One of ``gaussian``, ``student4``, ``clayton``, ``gumbel``, ``frank``.
    theta : float
        Parameter inside the family's domain.  Frank parameters within
        1e-8 of zero are snapped to the independence member.
    """

    family: CopulaFamily
    theta: float

    def __post_init__(self):
        fam = as_family(self.family)
        th = float(_check_theta(fam, self.theta))
        if fam is CopulaFamily.FRANK and abs(th) < FRANK_SNAP:
            th = 0.0
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "theta", th)

    @classmethod
    def from_tau(cls, family, tau: float) -> "CopulaModel":
        return cls(as_family(family), tau_to_theta(family, tau))

    def pdf(self, u):
        return density(self, u)

    def logpdf(self, u):
        return log_density(self.family, self.theta, u)

    def cdf(self, u):
        return cdf(self, u)

    def score(self, u):
        return log_density_score(self, u)

    def sample(self, n: int, seed=None) -> np.ndarray:
        return sample(self, n, seed)

    @property
    def tau(self) -> float:
        return theta_to_tau(self.family, self.theta)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "theta": self.theta}
