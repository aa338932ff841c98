"""Conditioning on boxes instead of points.

The conditioning space is cut into a finite partition ``A_1, ..., A_m`` and
the copula of ``X_I`` given ``X_J in A_k`` is compared across boxes.  All
box estimators are plain empirical quantities computed from the rows that
fall in each box; no smoothing is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .copulas import CopulaFamily, as_family, cdf_values, prepare_points
from .param_tests import STATUS_NAMES, CmlFit, copula_profiles, dist_grid, fit_cml
from .smoothing import Dataset, EstimationError, PseudoSample, rank_columns, sklar_at_points
from .statistic import ConfigError, SampleContext, Statistic

__all__ = [
    "BoxCmlFits",
    "BoxNpStatistic",
    "BoxParamStatistic",
    "BoxPartition",
    "box_cml",
    "box_cond_copula",
    "box_copula_oracle",
    "box_np_stat",
    "box_param_stat",
    "box_pseudo_sample",
    "make_equiprob_boxes",
]

MIN_COUNT = 20
DEFAULT_BOXES = 5


@dataclass(frozen=True, eq=False)
class BoxPartition:
    """Product partition of the conditioning space.

    Attributes
    ----------
    edges : tuple of 1-D arrays
        Sorted interior edges of every conditioning column.  A box is a
        product of half-open intervals ``(e_{l-1}, e_l]``.  A column without
        edges is not split.
    weights : ndarray
        Box weights, summing to one.
    min_count : int
        Minimum number of observations per box.
    """

    edges: tuple
    weights: np.ndarray
    min_count: int = MIN_COUNT

    def __post_init__(self):
        edges = tuple(np.sort(np.asarray(e, dtype=float).ravel()) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != self.m:
            raise ConfigError(f"expected {self.m} box weights, got {w.size}")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("box weights must be nonnegative and sum to one")
        object.__setattr__(self, "weights", w)

    @property
    def shape(self) -> tuple:
        return tuple(e.size + 1 for e in self.edges)

    @property
    def m(self) -> int:
        return int(np.prod(self.shape))

    def assign(self, x_j) -> np.ndarray:
        """Box index (0-based) of every row of ``x_j``."""
        x = np.asarray(x_j, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != len(self.edges):
            raise ConfigError("conditioning dimension does not match the partition")
        idx = [np.searchsorted(e, x[:, c], side="left") for c, e in enumerate(self.edges)]
        return np.ravel_multi_index(idx, self.shape).astype(np.int64)

    def counts(self, x_j) -> np.ndarray:
        return np.bincount(self.assign(x_j), minlength=self.m)

    def to_dict(self) -> dict:
        return {"edges": [e.tolist() for e in self.edges], "weights": self.weights.tolist(), "min_count": self.min_count}

    @classmethod
    def from_dict(cls, d: dict) -> "BoxPartition":
        return cls(tuple(np.asarray(e) for e in d["edges"]), np.asarray(d["weights"]), int(d.get("min_count", MIN_COUNT)))


def _quantile_edges(col: np.ndarray, splits: int) -> np.ndarray:
    xs = np.sort(col)
    n = xs.size
    cuts = (np.arange(1, splits) * n) // splits
    return xs[cuts - 1]


def make_equiprob_boxes(data: Dataset, m: int = DEFAULT_BOXES, splits=None, min_count: int = MIN_COUNT, weights=None) -> BoxPartition:
    """Boxes of equal empirical probability.

    Parameters
    ----------
    data : Dataset
    m : int
        Number of boxes when ``splits`` is not given: the first conditioning
        column is cut at its empirical quantiles, the others are not split.
    splits : sequence of int, optional
        Number of cells per conditioning column; the boxes are the products.
    min_count : int
        Minimum observations per box.
    weights : array_like, optional
        Box weights; equal by default.
    """
    x = data.x_j
    q = x.shape[1]
    if splits is None:
        splits = (int(m),) + (1,) * (q - 1)
    splits = tuple(int(s) for s in splits)
    if len(splits) != q or any(s < 1 for s in splits):
        raise ConfigError("one positive split count per conditioning column is required")
    total = int(np.prod(splits))
    if data.n < total * min_count:
        raise ConfigError(f"{data.n} observations cannot fill {total} boxes of at least {min_count}")
    edges = tuple(_quantile_edges(x[:, c], s) for c, s in enumerate(splits))
    w = np.full(total, 1.0 / total) if weights is None else weights
    part = BoxPartition(edges, w, min_count)
    counts = part.counts(x)
    if np.any(counts < min_count):
        raise ConfigError(f"box counts {counts.tolist()} fall below the minimum {min_count}")
    return part


# ---------------------------------------------------------------------------
# box estimators
# ---------------------------------------------------------------------------


def _groups(y: np.ndarray, m: int) -> list[np.ndarray]:
    order = np.argsort(y, kind="mergesort")
    bounds = np.searchsorted(y[order], np.arange(m + 1), side="left")
    return [order[bounds[k] : bounds[k + 1]] for k in range(m)]


def box_pseudo_sample(data: Dataset, part: BoxPartition, min_rows: int = 1) -> PseudoSample:
    """Within-box rank pseudo-observations ``R / (n_k + 1)`` of every row."""
    y = part.assign(data.x_j)
    z = np.empty((data.n, data.p))
    for k, rows in enumerate(_groups(y, part.m)):
        if rows.size < min_rows:
            raise EstimationError(f"box {k} holds {rows.size} rows, fewer than {min_rows}")
        if rows.size:
            z[rows] = rank_columns(data.x_i[rows]) * (rows.size / (rows.size + 1.0))
    return PseudoSample(z=z, v=y.astype(float), x_j=data.x_j, n_source=data.n, boxes=y, has_ties=data.has_ties)


def _box_copulas(x_i: np.ndarray, y: np.ndarray, m: int, upts: np.ndarray) -> np.ndarray:
    out = np.empty((m, upts.shape[0]))
    for k, rows in enumerate(_groups(y, m)):
        if rows.size == 0:
            raise EstimationError(f"box {k} is empty")
        out[k] = sklar_at_points(x_i[rows], np.ones((1, rows.size)), upts)[0]
    return out


def box_cond_copula(data: Dataset, part: BoxPartition, k: int, u_i):
    """Empirical copula of ``X_I`` given ``X_J in A_k`` at ``u_i``.

    Parameters
    ----------
    data : Dataset
    part : BoxPartition
    k : int
        Box index, 0-based.
    u_i : array_like, shape (p,) or (P, p)

    Returns
    -------
    float or ndarray
    """
    if not 0 <= k < part.m:
        raise ConfigError(f"box index {k} outside 0..{part.m - 1}")
    u = np.asarray(u_i, dtype=float)
    pts = np.atleast_2d(u)
    rows = np.flatnonzero(part.assign(data.x_j) == k)
    if rows.size == 0:
        raise EstimationError(f"box {k} is empty")
    out = sklar_at_points(data.x_i[rows], np.ones((1, rows.size)), pts)[0]
    return float(out[0]) if u.ndim == 1 else out


# ---------------------------------------------------------------------------
# closed-form oracle for conditionally Gaussian models
# ---------------------------------------------------------------------------


def _normal_pdf(z: float) -> float:
    return float(np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))


def box_copula_oracle(model, u_i, box=(-np.inf, np.inf), tol: float = 1e-8) -> float:
    """Copula of ``(X_1, X_2)`` given ``X_3 in box`` by numerical integration.

    The model has ``X_3 ~ N(0, 1)``, ``X_k | X_3 = z ~ N(mean_at(z), 1)`` and
    conditional copula ``C_{theta_at(z)}`` of ``family``; ``theta_at``
    returning ``nan`` means independence.  A :class:`dgp.DgpSpec` fits.

    The value integrates ``C_{theta(z)}(Phi(x_1 - mu(z)), Phi(x_2 - mu(z)))``
    against the law of ``X_3`` on the box, with ``x_k`` the quantiles of the
    box-conditional margins at ``u_k``.

    Raises
    ------
    EstimationError
        When the quadrature error estimate exceeds ``tol``.
    """
    family = as_family(model.family)
    lo, hi = float(box[0]), float(box[1])
    if not lo < hi:
        raise ConfigError("empty box")
    u = np.asarray(u_i, dtype=float).ravel()
    if u.size != 2 or np.any((u < 0) | (u > 1)):
        raise ConfigError("u must be a point of the unit square")
    if np.any(u == 0.0):
        return 0.0
    mass = special.ndtr(hi) - special.ndtr(lo)
    breaks = [b for b in getattr(model, "breakpoints", lambda: [])() if lo < b < hi]
    cuts = [lo] + breaks + [hi]

    def mu(z):
        return float(np.asarray(model.mean_at(np.array([z])))[0])

    def integrate_box(fn, eps):
        total, err = 0.0, 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            val, e = integrate.quad(lambda z: fn(z) * _normal_pdf(z), a, b, epsabs=eps, epsrel=0.0, limit=200)
            total += val
            err += e
        return total / mass, err / mass

    def margin(x):
        return integrate_box(lambda z: special.ndtr(x - mu(z)), 0.01 * tol)[0]

    def quantile(p):
        if p >= 1.0:
            return np.inf
        return optimize.brentq(lambda x: margin(x) - p, -40.0, 40.0, xtol=1e-13, rtol=1e-15)

    x_star = [quantile(p) for p in u]

    def psi(z):
        a = special.ndtr(x_star[0] - mu(z))
        b = special.ndtr(x_star[1] - mu(z))
        th = float(np.asarray(model.theta_at(np.array([z])))[0])
        if np.isnan(th):
            return a * b
        return float(cdf_values(family, th, np.array([a, b])))

    val, err = integrate_box(psi, tol)
    if not err <= tol:
        raise EstimationError(f"quadrature error {err:.2e} above tolerance {tol:.2e}")
    return float(val)


# ---------------------------------------------------------------------------
# nonparametric box statistics
# ---------------------------------------------------------------------------

BOX_NP_KINDS = {"ks": "barT_KS", "cvm": "barT_CvM", "dist": "barT_dist"}


@dataclass(frozen=True, eq=False)
class _BoxDesign:
    part: BoxPartition
    points: np.ndarray | None = None


def _resolve_partition(partition, ctx: SampleContext, m: int, splits) -> BoxPartition:
    if partition is not None:
        return partition
    return make_equiprob_boxes(ctx.data, m, splits)


def _pair_sum_sq(c: np.ndarray) -> np.ndarray:
    """Per point: sum over ordered box pairs of squared differences."""
    m = c.shape[0]
    return np.maximum(2.0 * (m * np.sum(c * c, axis=0) - np.sum(c, axis=0) ** 2), 0.0)


class BoxNpStatistic(Statistic):
    """Pairwise comparisons of box copulas.

    ``ks``: sup over pooled pseudo-observation points and box pairs;
    ``cvm``: sum over ordered box pairs of the mean squared difference over
    the pooled pseudo-observation points; ``dist``: sum over ordered pairs
    of the L2 distance on a 21 x 21 grid.
    """

    level = "box"
    keeps_design = True

    def __init__(self, kind: str = "cvm", m: int = DEFAULT_BOXES, splits=None, partition: BoxPartition | None = None):
        if kind not in BOX_NP_KINDS:
            raise ConfigError(f"unknown kind {kind!r}; expected one of {tuple(BOX_NP_KINDS)}")
        self.kind = kind
        self.m = int(m)
        self.splits = splits
        self.partition = partition
        self.stat_id = BOX_NP_KINDS[kind]

    def config(self):
        return {"kind": self.kind, "m": self.m, "splits": self.splits}

    def design(self, ctx):
        part = _resolve_partition(self.partition, ctx, self.m, self.splits)
        if self.kind == "dist":
            return _BoxDesign(part, dist_grid())
        return _BoxDesign(part, box_pseudo_sample(ctx.data, part).z)

    def functionals(self, ctx, d):
        y = d.part.assign(ctx.data.x_j)
        return _box_copulas(ctx.data.x_i, y, d.part.m, d.points)

    def _reduce(self, c):
        if c.shape[0] < 2:
            return 0.0
        if self.kind == "ks":
            return float(np.max(c.max(axis=0) - c.min(axis=0)))
        if self.kind == "cvm":
            return float(np.mean(_pair_sum_sq(c)))
        diff = c[:, None, :] - c[None, :, :]
        return float(np.sum(np.sqrt(np.mean(diff * diff, axis=2))))

    def value(self, c, d):
        return self._reduce(c)

    def centered(self, c_star, c, d):
        return self._reduce(c_star - c)


def box_np_stat(data: Dataset, part: BoxPartition, kind: str = "cvm") -> float:
    """Nonparametric comparison of the box copulas of ``part``."""
    ctx = SampleContext(data, None)
    return BoxNpStatistic(kind, partition=part).compute(ctx)


# ---------------------------------------------------------------------------
# parametric box statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoxCmlFits:
    """CML fits on every box and on the pooled box pseudo-sample."""

    family: CopulaFamily
    theta: np.ndarray
    theta0: float
    status: np.ndarray
    status0: str
    counts: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status0 != "failed" and bool(np.all(self.status != "failed"))


def fit_boxes(ps: PseudoSample, m: int, family, min_rows: int = 2) -> BoxCmlFits:
    """CML on every box pseudo-sample and on their concatenation."""
    fam = as_family(family)
    y = ps.boxes
    counts = np.bincount(y, minlength=m)
    if np.any(counts < min_rows):
        raise EstimationError(f"box counts {counts.tolist()} too small for CML")
    prep = prepare_points(fam, ps.z)
    w = np.zeros((m + 1, ps.n))
    w[y, np.arange(ps.n)] = 1.0
    w[m] = 1.0
    theta, _, _, st = fit_cml(fam, prep, w)
    names = np.array([STATUS_NAMES[int(s)] for s in st])
    return BoxCmlFits(fam, theta[:m], float(theta[m]), names[:m], str(names[m]), counts)


def box_cml(data: Dataset, part: BoxPartition, family, k: int | None = None) -> CmlFit:
    """CML estimate on box ``k`` (0-based), or pooled over boxes when ``k`` is None."""
    fam = as_family(family)
    ps = box_pseudo_sample(data, part)
    fits = fit_boxes(ps, part.m, fam)
    if k is None:
        return CmlFit(fam, fits.theta0, float("nan"), float("nan"), fits.status0, ps.n)
    if not 0 <= k < part.m:
        raise ConfigError(f"box index {k} outside 0..{part.m - 1}")
    return CmlFit(fam, float(fits.theta[k]), float("nan"), float("nan"), str(fits.status[k]), int(fits.counts[k]))


BOX_PARAM_KINDS = {"t2": "barT2_c", "tinf": "barTinf_c", "tdist": "barTdist_c"}


class BoxParamStatistic(Statistic):
    """Box CML estimates compared with the pooled estimate.

    ``t2 = n sum_k w_k (theta(A_k) - theta_0)^2``,
    ``tinf = sqrt(n) max_k |theta(A_k) - theta_0|`` and
    ``tdist = sum_k w_k dist(C_{theta(A_k)}, C_{theta_0})`` with the L2
    distance on a 21 x 21 grid.
    """

    level = "box"
    keeps_design = True

    def __init__(self, family, kind: str = "t2", m: int = DEFAULT_BOXES, splits=None, partition: BoxPartition | None = None):
        if kind not in BOX_PARAM_KINDS:
            raise ConfigError(f"unknown kind {kind!r}; expected one of {tuple(BOX_PARAM_KINDS)}")
        self.family = as_family(family)
        self.kind = kind
        self.m = int(m)
        self.splits = splits
        self.partition = partition
        self.stat_id = BOX_PARAM_KINDS[kind]

    def config(self):
        return {"family": self.family.value, "kind": self.kind, "m": self.m, "splits": self.splits}

    def design(self, ctx):
        return _BoxDesign(_resolve_partition(self.partition, ctx, self.m, self.splits), dist_grid() if self.kind == "tdist" else None)

    def fits(self, ctx, part: BoxPartition) -> BoxCmlFits:
        def fit():
            ps = box_pseudo_sample(ctx.data, part)
            f = fit_boxes(ps, part.m, self.family)
            if not f.ok:
                raise EstimationError("box CML failed")
            return f

        return ctx.memo(f"boxcml:{self.family.value}:{id(part)}", fit)

    def functionals(self, ctx, d):
        f = self.fits(ctx, d.part)
        n = ctx.data.n
        if self.kind == "tdist":
            prof = copula_profiles(self.family, np.append(f.theta, f.theta0), d.points, "cdf")
            return n, prof[:-1], prof[-1]
        return n, f.theta, f.theta0

    def _reduce(self, n, diff, d):
        w = d.part.weights
        if self.kind == "t2":
            return float(n * (w @ (diff * diff)))
        if self.kind == "tinf":
            return float(np.sqrt(n) * np.max(np.abs(diff)))
        return float(w @ np.sqrt(np.mean(diff * diff, axis=1)))

    def value(self, f, d):
        n, a, a0 = f
        return self._reduce(n, a - a0, d)

    def centered(self, fs, f, d):
        n1, a1, b1 = fs
        _, a0, b0 = f
        return self._reduce(n1, (a1 - a0) - (b1 - b0), d)


def box_param_stat(data: Dataset, part: BoxPartition, family, kind: str = "t2") -> float:
    """Parametric comparison of box CML estimates with the pooled one."""
    return BoxParamStatistic(family, kind, partition=part).compute(SampleContext(data, None))
