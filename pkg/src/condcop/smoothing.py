"""Rank-space kernel estimators of conditional distributions and copulas.

The conditioning columns are first mapped to their empirical cdf values
(rescaled ranks), and kernels act on differences of those ranks.  All
estimators are therefore invariant under increasing transformations of any
column.

Conventions
-----------
* Ranks use the average-rank rule for ties, divided by ``n``.
* With trimming on, rows whose rank lies in ``[0, h]`` or ``[1 - h, 1]`` are
  left out of every pseudo-sample, outer sum and margin, while every row
  still serves as a neighbour inside the kernel smoothers.
* Conditional joint cdfs are normalised by the kernel mass unless
  ``normalized=False``, in which case the raw average over ``n`` is used.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from . import _compiled as cc

__all__ = [
    "Dataset",
    "EstimationError",
    "KernelSmoother",
    "KernelSpec",
    "PseudoSample",
    "cond_copula",
    "cond_joint_cdf",
    "cond_margin_cdf",
    "cond_pseudo_obs",
    "default_bandwidth",
    "empirical_margin_cdf",
    "simplified_copula",
]

MIN_ROWS = 10
SIMPLIFIED_VARIANTS = ("avg", "ecdf_z", "empcop_z")
KERNELS = {"gaussian": 0, "epanechnikov": 1}


class EstimationError(RuntimeError):
    """An estimator could not be evaluated, e.g. zero kernel mass."""


class DataError(ValueError):
    """Malformed input data."""


class TiesWarning(UserWarning):
    """Columns contain tied values; average ranks are used."""


def default_bandwidth(n: int) -> float:
    """Rule-of-thumb bandwidth for uniform ranks, ``1 / (sqrt(12) n^(1/5))``."""
    return 1.0 / (math.sqrt(12.0) * n**0.2)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel shape, bandwidth on the rank scale and trimming flag."""

    kernel: str = "gaussian"
    h: float = 0.083
    trim: bool = True

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {sorted(KERNELS)}")
        if not (0.0 < float(self.h) < 0.5):
            raise ValueError(f"bandwidth must lie in (0, 0.5), got {self.h!r}")
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def for_sample_size(cls, n: int, kernel: str = "gaussian", trim: bool = True) -> "KernelSpec":
        return cls(kernel=kernel, h=default_bandwidth(n), trim=trim)

    @property
    def code(self) -> int:
        return KERNELS[self.kernel]


class Dataset:
    """Rows of a d-variate sample with conditioned and conditioning columns.

    Parameters
    ----------
    values : array_like, shape (n, d)
    i_cols : sequence of int
        Indices of the conditioned columns (the copula margins).
    j_cols : sequence of int
        Indices of the conditioning columns.
    names : sequence of str, optional
        Column labels, used by the CSV helpers.
    """

    def __init__(self, values, i_cols: Sequence[int] = (0, 1), j_cols: Sequence[int] = (2,), names=None):
        arr = np.array(values, dtype=float, copy=True)
        if arr.ndim != 2:
            raise DataError("values must be a 2-d array")
        n, d = arr.shape
        i_cols = [int(c) for c in i_cols]
        j_cols = [int(c) for c in j_cols]
        if not i_cols or not j_cols:
            raise DataError("need at least one conditioned and one conditioning column")
        if set(i_cols) & set(j_cols):
            raise DataError("conditioned and conditioning columns overlap")
        if any(c < 0 or c >= d for c in i_cols + j_cols):
            raise DataError(f"column index outside 0..{d - 1}")
        if n < 1:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(arr)):
            raise DataError("values contain missing or infinite entries")
        if n < MIN_ROWS:
            warnings.warn(f"only {n} rows; estimators are unreliable below {MIN_ROWS}", stacklevel=2)
        arr.setflags(write=False)
        self.values = arr
        self.i_cols = tuple(i_cols)
        self.j_cols = tuple(j_cols)
        self.names = tuple(names) if names is not None else tuple(f"x{k + 1}" for k in range(d))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return len(self.i_cols)

    @property
    def q(self) -> int:
        return len(self.j_cols)

    @cached_property
    def x_i(self) -> np.ndarray:
        return np.ascontiguousarray(self.values[:, self.i_cols])

    @cached_property
    def x_j(self) -> np.ndarray:
        return np.ascontiguousarray(self.values[:, self.j_cols])

    @cached_property
    def has_ties(self) -> bool:
        cols = self.values
        return any(np.unique(cols[:, c]).size < self.n for c in range(cols.shape[1]))

    @cached_property
    def ranks_j(self) -> np.ndarray:
        """Rescaled average ranks of the conditioning columns, in (0, 1]."""
        return rank_columns(self.x_j)

    def take(self, rows) -> "Dataset":
        """Dataset made of the given rows (with repetitions allowed)."""
        out = Dataset.__new__(Dataset)
        arr = self.values[np.asarray(rows, dtype=np.int64)]
        arr.setflags(write=False)
        out.values = arr
        out.i_cols, out.j_cols, out.names = self.i_cols, self.j_cols, self.names
        return out

    @classmethod
    def from_parts(cls, x_i, x_j) -> "Dataset":
        """Build a dataset whose first columns are ``x_i`` and last are ``x_j``."""
        x_i = np.atleast_2d(np.asarray(x_i, dtype=float))
        x_j = np.asarray(x_j, dtype=float)
        if x_j.ndim == 1:
            x_j = x_j[:, None]
        p, q = x_i.shape[1], x_j.shape[1]
        vals = np.hstack([x_i, x_j])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(vals, tuple(range(p)), tuple(range(p, p + q)))

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, i_cols={self.i_cols}, j_cols={self.j_cols})"


@dataclass
class PseudoSample:
    """Conditional pseudo-observations paired with their conditioning values.

    Attributes
    ----------
    z : ndarray, shape (m, p)
        Pseudo-observations in [0, 1].
    v : ndarray, shape (m, q)
        Conditioning values on the rank scale (for kernel pseudo-samples)
        or box indices as floats (for box pseudo-samples).
    x_j : ndarray, shape (m, q) or None
        Raw conditioning values, when available.
    rows : ndarray of int
        Row indices in the source dataset.
    n_source : int
        Size of the source dataset, before trimming.
    boxes : ndarray of int or None
        Box index of every row, for box pseudo-samples.
    """

    z: np.ndarray
    v: np.ndarray
    x_j: np.ndarray | None = None
    rows: np.ndarray | None = None
    n_source: int | None = None
    boxes: np.ndarray | None = None
    has_ties: bool = field(default=False)

    def __post_init__(self):
        self.z = np.ascontiguousarray(np.asarray(self.z, dtype=float))
        self.v = np.ascontiguousarray(np.asarray(self.v, dtype=float))
        if self.v.ndim == 1:
            self.v = self.v[:, None]
        if self.z.ndim != 2 or self.z.shape[0] != self.v.shape[0]:
            raise DataError("z and v must have the same number of rows")
        if self.rows is None:
            self.rows = np.arange(self.z.shape[0])
        if self.n_source is None:
            self.n_source = self.z.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def take(self, rows_z, rows_v=None) -> "PseudoSample":
        """Resampled pseudo-sample; ``rows_v`` differs from ``rows_z`` to break pairs."""
        rows_z = np.asarray(rows_z, dtype=np.int64)
        rows_v = rows_z if rows_v is None else np.asarray(rows_v, dtype=np.int64)
        return PseudoSample(
            z=self.z[rows_z],
            v=self.v[rows_v],
            x_j=None if self.x_j is None else self.x_j[rows_v],
            rows=self.rows[rows_v],
            n_source=self.n,
            boxes=None if self.boxes is None else self.boxes[rows_v],
        )


# ---------------------------------------------------------------------------
# rank helpers
# ---------------------------------------------------------------------------


def rank_columns(x: np.ndarray) -> np.ndarray:
    """Average ranks divided by the number of rows, column by column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.ascontiguousarray(rankdata(x, method="average", axis=0) / x.shape[0])


def empirical_margin_cdf(column, x, rescale: bool = False):
    """Empirical cdf of ``column`` at ``x``.

    With ``rescale`` the count is divided by ``n + 1`` instead of ``n``,
    which keeps values away from 1 when they feed a copula density.

    Examples
    --------
    >>> empirical_margin_cdf([1.0, 2.0, 3.0], 2.0)
    0.6666666666666666
    """
    col = np.sort(np.asarray(column, dtype=float))
    if col.size == 0:
        raise DataError("column is empty")
    counts = np.searchsorted(col, np.asarray(x, dtype=float), side="right")
    out = counts / (col.size + 1.0 if rescale else col.size)
    return float(out) if np.ndim(out) == 0 else out


def ecdf_at_points(sample_cols: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Per-column empirical cdf of ``sample_cols`` evaluated at ``pts``."""
    out = np.empty(pts.shape, dtype=float)
    for c in range(sample_cols.shape[1]):
        col = np.sort(sample_cols[:, c])
        out[:, c] = np.searchsorted(col, pts[:, c], side="right") / col.size
    return out


@dataclass(frozen=True)
class SortStructure:
    """Per-margin sort order, positions and end of tie groups."""

    order: np.ndarray
    pos: np.ndarray
    gend: np.ndarray

    @classmethod
    def of(cls, x: np.ndarray) -> "SortStructure":
        x = np.asarray(x, dtype=float)
        p, n = x.shape[1], x.shape[0]
        order = np.empty((p, n), dtype=np.int64)
        pos = np.empty((p, n), dtype=np.int64)
        gend = np.empty((p, n), dtype=np.int64)
        for k in range(p):
            o = np.argsort(x[:, k], kind="mergesort")
            order[k] = o
            pos[k, o] = np.arange(n)
            xs = x[o, k]
            gend[k] = np.searchsorted(xs, xs, side="right") - 1
        return cls(order, pos, gend)


def sklar_on_grid(values: np.ndarray, weights: np.ndarray, ugrid: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Weighted Sklar composition of ``values`` on a tensor grid.

    Parameters
    ----------
    values : (n, p) array
    weights : (T, n) array
        One row of non-negative weights per evaluation node.
    ugrid : (p, G) array
        Sorted grid of every margin.

    Returns
    -------
    ndarray, shape (T, G, ..., G)
    """
    st = SortStructure.of(values)
    ugrid = np.ascontiguousarray(ugrid, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    flat = cc.sklar_grid(w, st.order, st.pos, st.gend, ugrid, normalize)
    p, g = ugrid.shape
    return flat.reshape((w.shape[0],) + (g,) * p)


def sklar_at_points(values: np.ndarray, weights: np.ndarray, upts: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Weighted Sklar composition at scattered points, shape (T, P)."""
    st = SortStructure.of(values)
    upts = np.ascontiguousarray(np.atleast_2d(upts), dtype=float)
    uorder = np.ascontiguousarray(np.argsort(upts, axis=0, kind="mergesort").T)
    w = np.ascontiguousarray(np.atleast_2d(weights), dtype=float)
    return cc.sklar_points(w, st.order, st.pos, st.gend, upts, uorder, normalize)


def empirical_copula_at(values: np.ndarray, upts: np.ndarray) -> np.ndarray:
    """Empirical copula (Sklar composition with equal weights) at points."""
    w = np.ones((1, values.shape[0]))
    return sklar_at_points(values, w, upts)[0]


def ecdf_joint_at(values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Joint empirical cdf of ``values`` at ``pts`` (plain count)."""
    inside = np.ones((pts.shape[0], values.shape[0]), dtype=bool)
    for k in range(values.shape[1]):
        inside &= values[None, :, k] <= pts[:, None, k]
    return inside.mean(axis=1)


# ---------------------------------------------------------------------------
# smoother: caches everything derived from one dataset and one kernel
# ---------------------------------------------------------------------------


class KernelSmoother:
    """Kernel estimators bound to one dataset and one :class:`KernelSpec`.

    The object caches ranks, sort structures, the kernel matrix between
    retained rows and all rows, and the pseudo-observations.
    """

    def __init__(self, data: Dataset, kern: KernelSpec):
        self.data = data
        self.kern = kern

    @cached_property
    def v(self) -> np.ndarray:
        return self.data.ranks_j

    @cached_property
    def retained(self) -> np.ndarray:
        """Indices of rows kept after trimming, in original order."""
        if not self.kern.trim:
            return np.arange(self.data.n)
        h = self.kern.h
        keep = np.all((self.v > h) & (self.v < 1.0 - h), axis=1)
        return np.flatnonzero(keep)

    @cached_property
    def sort_i(self) -> SortStructure:
        return SortStructure.of(self.data.x_i)

    def weights_at(self, v_nodes) -> np.ndarray:
        """Kernel weights K_h(V_j - v) of every row for each rank-space node."""
        v_nodes = np.ascontiguousarray(np.atleast_2d(np.asarray(v_nodes, dtype=float)))
        if v_nodes.shape[1] != self.data.q:
            raise ValueError("rank-space node has the wrong dimension")
        return cc.rank_kernel_matrix(v_nodes, self.v, self.kern.h, self.kern.code)

    def rank_of(self, x_j) -> np.ndarray:
        """Empirical cdf values of raw conditioning point(s)."""
        pts = np.atleast_2d(np.asarray(x_j, dtype=float))
        return ecdf_at_points(self.data.x_j, pts)

    @cached_property
    def weights_retained(self) -> np.ndarray:
        return self.weights_at(self.v[self.retained])

    def _check_mass(self, w: np.ndarray) -> None:
        mass = w.sum(axis=1)
        if np.any(~(mass > 0.0)):
            raise EstimationError("zero kernel mass at a conditioning point")

    @cached_property
    def pseudo_obs(self) -> np.ndarray:
        """Z_ik = F_{k|J}(X_ik | X_iJ) for the retained rows."""
        w = self.weights_retained
        self._check_mass(w)
        return cc.weighted_cdf_at_own(w, self.data.x_i, self.retained.astype(np.int64))

    def pseudo_sample(self) -> PseudoSample:
        r = self.retained
        return PseudoSample(
            z=self.pseudo_obs,
            v=self.v[r],
            x_j=self.data.x_j[r],
            rows=r,
            n_source=self.data.n,
            has_ties=self.data.has_ties,
        )

    def margin_cdf(self, x: np.ndarray, v_nodes) -> np.ndarray:
        """F_{k|J}(x_k | v) for a point ``x`` (length p) per node, shape (T, p)."""
        w = self.weights_at(v_nodes)
        self._check_mass(w)
        pts = np.broadcast_to(np.asarray(x, dtype=float), (w.shape[0], self.data.p))
        return cc.weighted_cdf_at(w, self.data.x_i, np.ascontiguousarray(pts))

    def joint_cdf(self, x: np.ndarray, v_nodes, normalized: bool = True) -> np.ndarray:
        w = self.weights_at(v_nodes)
        self._check_mass(w)
        inside = np.all(self.data.x_i <= np.asarray(x, dtype=float)[None, :], axis=1)
        num = w @ inside.astype(float)
        return num / (w.sum(axis=1) if normalized else self.data.n)

    def copula_grid(self, ugrid: np.ndarray, v_nodes, normalize: bool = True) -> np.ndarray:
        """C_{I|J}(u | v) on a tensor u-grid for every node, shape (T, G, ..., G)."""
        w = self.weights_at(v_nodes)
        self._check_mass(w)
        return self._sklar_grid(w, ugrid, normalize)

    def _sklar_grid(self, w, ugrid, normalize=True):
        st = self.sort_i
        ugrid = np.ascontiguousarray(ugrid, dtype=float)
        flat = cc.sklar_grid(np.ascontiguousarray(w), st.order, st.pos, st.gend, ugrid, normalize)
        p, g = ugrid.shape
        return flat.reshape((w.shape[0],) + (g,) * p)

    def _sklar_points(self, w, upts, normalize=True):
        st = self.sort_i
        upts = np.ascontiguousarray(np.atleast_2d(upts), dtype=float)
        uorder = np.ascontiguousarray(np.argsort(upts, axis=0, kind="mergesort").T)
        return cc.sklar_points(np.ascontiguousarray(w), st.order, st.pos, st.gend, upts, uorder, normalize)

    def copula_points(self, upts: np.ndarray, v_nodes, normalize: bool = True) -> np.ndarray:
        """C_{I|J}(u_q | v_t) for scattered points, shape (T, P)."""
        w = self.weights_at(v_nodes)
        self._check_mass(w)
        return self._sklar_points(w, upts, normalize)

    # simplified copula estimators ------------------------------------------

    def simplified_grid(self, ugrid: np.ndarray, variant: str = "avg") -> np.ndarray:
        """Simplified copula estimate on a tensor u-grid, shape (G, ..., G)."""
        _check_variant(variant)
        if variant == "avg":
            w = self.weights_retained
            self._check_mass(w)
            return self._sklar_grid(w, ugrid).mean(axis=0)
        z = self.pseudo_obs
        ugrid = np.asarray(ugrid, dtype=float)
        if variant == "empcop_z":
            return sklar_on_grid(z, np.ones((1, z.shape[0])), ugrid)[0]
        p, g = ugrid.shape
        mesh = np.stack(np.meshgrid(*ugrid, indexing="ij"), axis=-1).reshape(-1, p)
        return ecdf_joint_at(z, mesh).reshape((g,) * p)

    def simplified_points(self, upts: np.ndarray, variant: str = "avg") -> np.ndarray:
        """Simplified copula estimate at scattered points, shape (P,)."""
        _check_variant(variant)
        upts = np.atleast_2d(np.asarray(upts, dtype=float))
        if variant == "avg":
            w = self.weights_retained
            self._check_mass(w)
            return self._sklar_points(w, upts).mean(axis=0)
        z = self.pseudo_obs
        if variant == "empcop_z":
            return empirical_copula_at(z, upts)
        return ecdf_joint_at(z, upts)


def _check_variant(variant: str) -> None:
    if variant not in SIMPLIFIED_VARIANTS:
        raise ValueError(f"unknown simplified-copula variant {variant!r}; expected one of {SIMPLIFIED_VARIANTS}")


def _node(smoother: KernelSmoother, x_j, rank_space: bool) -> np.ndarray:
    pt = np.atleast_2d(np.asarray(x_j, dtype=float))
    return pt if rank_space else smoother.rank_of(pt)


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------


def cond_margin_cdf(data: Dataset, k: int, x: float, x_j, kern: KernelSpec, rank_space: bool = False) -> float:
    """Kernel estimate of F_{k|J}(x | X_J = x_j).

    Parameters
    ----------
    data : Dataset
    k : int
        Position of the margin among the conditioned columns (0-based).
    x : float
    x_j : array_like
        Conditioning point; raw values unless ``rank_space`` is true.
    kern : KernelSpec

    Raises
    ------
    EstimationError
        When the kernel puts no mass at the conditioning point.
    """
    sm = KernelSmoother(data, kern)
    pt = np.full(data.p, np.inf)
    pt[k] = x
    return float(sm.margin_cdf(pt, _node(sm, x_j, rank_space))[0, k])


def cond_joint_cdf(data: Dataset, x_i, x_j, kern: KernelSpec, normalized: bool = True, rank_space: bool = False) -> float:
    """Kernel estimate of F_{I|J}(x_i | X_J = x_j).

    ``normalized=False`` divides the kernel-weighted count by ``n`` rather
    than by the kernel mass.
    """
    sm = KernelSmoother(data, kern)
    return float(sm.joint_cdf(np.asarray(x_i, dtype=float), _node(sm, x_j, rank_space), normalized)[0])


def cond_copula(data: Dataset, u_i, x_j, kern: KernelSpec, rank_space: bool = False):
    """Conditional copula estimate C_{I|J}(u | X_J = x_j).

    ``u_i`` may be one point (length p) or an array of points (P, p).
    """
    sm = KernelSmoother(data, kern)
    pts = np.atleast_2d(np.asarray(u_i, dtype=float))
    out = sm.copula_points(pts, _node(sm, x_j, rank_space))[0]
    return float(out[0]) if np.ndim(u_i) == 1 else out


def simplified_copula(data: Dataset, u_i, kern: KernelSpec, variant: str = "avg"):
    """Estimate of the simplified copula at ``u_i``.

    ``avg`` averages the conditional copula over the observed conditioning
    values, ``ecdf_z`` is the empirical cdf of the pseudo-observations and
    ``empcop_z`` their empirical copula.
    """
    sm = KernelSmoother(data, kern)
    out = sm.simplified_points(np.atleast_2d(np.asarray(u_i, dtype=float)), variant)
    return float(out[0]) if np.ndim(u_i) == 1 else out


def cond_pseudo_obs(data: Dataset, kern: KernelSpec) -> PseudoSample:
    """Pseudo-observations Z_ik = F_{k|J}(X_ik | X_iJ) of the retained rows."""
    return KernelSmoother(data, kern).pseudo_sample()
