"""Nonparametric statistics for the simplifying assumption.

Two groups:

* direct comparisons of the conditional copula estimate with a simplified
  copula estimate, or of conditional copulas at different conditioning
  points (``T0_*``, ``T0t_*``, ``T_CvM_*``);
* tests of independence between the conditional pseudo-observations and the
  conditioning variables (``I_*`` on the joint empirical cdf, ``Ib_*`` on the
  empirical copula of the pseudo-sample).

Conditioning nodes live on the rank scale, inside ``[h, 1 - h]`` when
trimming is on.  Independence statistics evaluate the joint empirical cdf on
raw conditioning values, so their evaluation points and cells stay fixed
when a bootstrap sample is compared with the original one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .smoothing import Dataset, KernelSpec, PseudoSample, SIMPLIFIED_VARIANTS, rank_columns
from .statistic import ConfigError, SampleContext, Statistic, TestResult

__all__ = [
    "GridSpec",
    "IndepCopulaStatistic",
    "IndepStatistic",
    "T0Grid",
    "T0Pairwise",
    "TCvMRandomWeight",
    "TestResult",
    "indep_copula_stat",
    "indep_stat",
    "t0_grid",
    "t0_pairwise",
    "t_cvm_randomweight",
]

DEFAULT_M = 20


def gauss_legendre(a: float, b: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = leggauss(int(m))
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _tensor(axes: list[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def _tensor_weights(ws: list[np.ndarray]) -> np.ndarray:
    out = np.ones(1)
    for w in ws:
        out = np.multiply.outer(out, w).ravel()
    return out


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Evaluation nodes and quadrature weights for grid statistics.

    Attributes
    ----------
    u_nodes : (P, p) array
        Copula arguments.
    v_nodes : (T, q) array
        Conditioning nodes on the rank scale.
    u_weights : (P,) array
    v_weights : (T,) array
        The weight of the pair (v_t, u_a) is ``v_weights[t] * u_weights[a]``.
    u_axes : (p, G) array, optional
        Set when ``u_nodes`` is the tensor product of these axes, which
        enables the fast grid evaluation path.
    """

    u_nodes: np.ndarray
    v_nodes: np.ndarray
    u_weights: np.ndarray
    v_weights: np.ndarray
    u_axes: np.ndarray | None = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u_nodes, dtype=float))
        v = np.asarray(self.v_nodes, dtype=float)
        v = v[:, None] if v.ndim == 1 else v
        uw = np.asarray(self.u_weights, dtype=float).ravel()
        vw = np.asarray(self.v_weights, dtype=float).ravel()
        if u.shape[0] == 0 or v.shape[0] == 0:
            raise ConfigError("grid must have at least one node")
        if uw.shape[0] != u.shape[0] or vw.shape[0] != v.shape[0]:
            raise ConfigError("one weight per node is required")
        if not (np.all(np.isfinite(uw)) and np.all(np.isfinite(vw))) or np.any(uw < 0) or np.any(vw < 0):
            raise ConfigError("grid weights must be finite and nonnegative")
        if np.any((u < 0) | (u > 1)) or np.any((v < 0) | (v > 1)):
            raise ConfigError("grid nodes must lie in the unit cube")
        object.__setattr__(self, "u_nodes", u)
        object.__setattr__(self, "v_nodes", v)
        object.__setattr__(self, "u_weights", uw)
        object.__setattr__(self, "v_weights", vw)
        if self.u_axes is not None:
            object.__setattr__(self, "u_axes", np.asarray(self.u_axes, dtype=float))

    @classmethod
    def gauss_legendre(cls, h: float, m: int = DEFAULT_M, m_u: int | None = None, p: int = 2, q: int = 1) -> "GridSpec":
        """Tensor Gauss-Legendre grid: ``m`` rank nodes per conditioning
        dimension on ``[h, 1 - h]`` and ``m_u`` nodes per margin on (0, 1)."""
        m_u = m if m_u is None else m_u
        vx, vw = gauss_legendre(h, 1.0 - h, m)
        ux, uw = gauss_legendre(0.0, 1.0, m_u)
        axes = np.vstack([ux] * p)
        return cls(
            u_nodes=_tensor([ux] * p),
            v_nodes=_tensor([vx] * q),
            u_weights=_tensor_weights([uw] * p),
            v_weights=_tensor_weights([vw] * q),
            u_axes=axes,
        )

    def check_inside(self, h: float) -> None:
        if np.any((self.v_nodes < h) | (self.v_nodes > 1.0 - h)):
            raise ConfigError("conditioning nodes must lie inside the trimmed region [h, 1 - h]")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _resolve_grid(grid: GridSpec | None, ctx: SampleContext, m: int) -> GridSpec:
    if grid is None:
        return GridSpec.gauss_legendre(ctx.kern.h, m=m, p=ctx.data.p, q=ctx.data.q)
    if ctx.kern.trim:
        grid.check_inside(ctx.kern.h)
    return grid


def _cond_copula_on(ctx: SampleContext, grid: GridSpec) -> np.ndarray:
    sm = ctx.smoother
    if grid.u_axes is not None:
        c = sm.copula_grid(grid.u_axes, grid.v_nodes)
        return c.reshape(c.shape[0], -1)
    return sm.copula_points(grid.u_nodes, grid.v_nodes)


def _cond_grid(ctx: SampleContext, grid: GridSpec) -> np.ndarray:
    return ctx.memo(f"condgrid:{id(grid)}", lambda: _cond_copula_on(ctx, grid))


def _simplified_on(ctx: SampleContext, grid: GridSpec, variant: str) -> np.ndarray:
    def compute():
        sm = ctx.smoother
        if grid.u_axes is not None:
            return sm.simplified_grid(grid.u_axes, variant).ravel()
        return sm.simplified_points(grid.u_nodes, variant)

    return ctx.memo(f"simplified:{variant}:{id(grid)}", compute)


def _check_variant(variant: str) -> str:
    if variant not in SIMPLIFIED_VARIANTS:
        raise ConfigError(f"unknown simplified-copula variant {variant!r}; expected one of {SIMPLIFIED_VARIANTS}")
    return variant


def _check_norm(norm: str, allowed=("ks", "cvm")) -> str:
    if norm not in allowed:
        raise ConfigError(f"unknown norm {norm!r}; expected one of {allowed}")
    return norm


def _grid_norm(diff: np.ndarray, grid: GridSpec, norm: str) -> float:
    if norm == "ks":
        return float(np.max(np.abs(diff)))
    return float(grid.v_weights @ (diff * diff) @ grid.u_weights)


# ---------------------------------------------------------------------------
# brute-force comparisons
# ---------------------------------------------------------------------------


class T0Grid(Statistic):
    """Conditional copula versus simplified copula on a fixed grid.

    ``ks``: max over the grid of ``|C(u | v) - C_s(u)|``;
    ``cvm``: ``sum_t sum_a w_t w_a (C(u_a | v_t) - C_s(u_a))^2``.
    """

    def __init__(self, norm: str = "cvm", grid: GridSpec | None = None, m: int = DEFAULT_M, simplified_variant: str = "avg"):
        self.norm = _check_norm(norm)
        self.grid = grid
        self.m = int(m)
        self.variant = _check_variant(simplified_variant)
        self.stat_id = "T0_KS_grid" if norm == "ks" else "T0_CvM_grid"

    def config(self):
        return {"norm": self.norm, "m": self.m, "simplified_variant": self.variant}

    def design(self, ctx):
        return _resolve_grid(self.grid, ctx, self.m)

    def functionals(self, ctx, grid):
        return _cond_grid(ctx, grid), _simplified_on(ctx, grid, self.variant)

    def value(self, f, grid):
        c, cs = f
        return _grid_norm(c - cs[None, :], grid, self.norm)

    def centered(self, f_star, f, grid):
        (c1, s1), (c0, s0) = f_star, f
        return _grid_norm((c1 - c0) - (s1 - s0)[None, :], grid, self.norm)


def _pairwise_norm(d: np.ndarray, grid: GridSpec, norm: str) -> float:
    if norm == "ks":
        return float(np.max(d.max(axis=0) - d.min(axis=0)))
    w = grid.v_weights
    s0 = w.sum()
    s1 = w @ d
    s2 = w @ (d * d)
    # sum_{t,t'} w_t w_t' (d_t - d_t')^2 = 2 (W sum w d^2 - (sum w d)^2)
    per_u = np.maximum(2.0 * (s0 * s2 - s1 * s1), 0.0)
    return float(per_u @ grid.u_weights)


class T0Pairwise(Statistic):
    """Conditional copulas compared between every pair of grid nodes."""

    def __init__(self, norm: str = "cvm", grid: GridSpec | None = None, m: int = DEFAULT_M):
        self.norm = _check_norm(norm)
        self.grid = grid
        self.m = int(m)
        self.stat_id = "T0t_KS" if norm == "ks" else "T0t_CvM"

    def config(self):
        return {"norm": self.norm, "m": self.m}

    def design(self, ctx):
        return _resolve_grid(self.grid, ctx, self.m)

    def functionals(self, ctx, grid):
        return _cond_grid(ctx, grid)

    def value(self, c, grid):
        if c.shape[0] < 2:
            return 0.0
        return _pairwise_norm(c, grid, self.norm)

    def centered(self, c_star, c, grid):
        if c.shape[0] < 2:
            return 0.0
        return _pairwise_norm(c_star - c, grid, self.norm)


@dataclass(frozen=True, eq=False)
class _RandomWeightDesign:
    points: np.ndarray
    nodes: np.ndarray


class TCvMRandomWeight(Statistic):
    """Cramer-von Mises statistics with empirical weight measures.

    ``v1`` averages ``(C(U_i | X_jJ) - C_s(U_i))^2`` over all pairs of
    retained rows, with ``U_i`` the unconditional rank pseudo-observations.
    ``v2`` averages ``(C(Z_i | X_iJ) - C_s(Z_i))^2`` over retained rows,
    ``Z_i`` being the conditional pseudo-observations.
    """

    def __init__(self, variant: str = "v1", simplified_variant: str = "avg"):
        if variant not in ("v1", "v2"):
            raise ConfigError(f"unknown variant {variant!r}; expected 'v1' or 'v2'")
        self.variant = variant
        self.simplified = _check_variant(simplified_variant)
        self.stat_id = "T_CvM_1" if variant == "v1" else "T_CvM_2"

    def config(self):
        return {"variant": self.variant, "simplified_variant": self.simplified}

    def design(self, ctx):
        sm = ctx.smoother
        r = sm.retained
        if r.size == 0:
            raise ConfigError("no rows left after trimming")
        if self.variant == "v1":
            pts = rank_columns(ctx.data.x_i)[r]
        else:
            pts = sm.pseudo_obs
        return _RandomWeightDesign(points=np.ascontiguousarray(pts), nodes=sm.v[r])

    def functionals(self, ctx, d):
        sm = ctx.smoother
        c = sm.copula_points(d.points, d.nodes)
        if self.variant == "v2":
            c = np.diagonal(c).copy()
        cs = sm.simplified_points(d.points, self.simplified)
        return c, cs

    def _reduce(self, diff):
        return float(np.mean(diff * diff))

    def value(self, f, d):
        c, cs = f
        return self._reduce(c - (cs[None, :] if c.ndim == 2 else cs))

    def centered(self, f_star, f, d):
        (c1, s1), (c0, s0) = f_star, f
        ds = s1 - s0
        return self._reduce((c1 - c0) - (ds[None, :] if c0.ndim == 2 else ds))


# ---------------------------------------------------------------------------
# independence between pseudo-observations and conditioning variables
# ---------------------------------------------------------------------------


def _dominance(sample: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Boolean matrix ``[a, i] = all(sample_i <= pts_a)``."""
    le = np.ones((pts.shape[0], sample.shape[0]), dtype=bool)
    for c in range(sample.shape[1]):
        le &= sample[None, :, c] <= pts[:, None, c]
    return le


def _tensor_ecdf(values: np.ndarray, axes: list[np.ndarray]) -> np.ndarray:
    """Empirical cdf of ``values`` on the tensor product of sorted ``axes``."""
    n, d = values.shape
    shape = tuple(len(a) + 1 for a in axes)
    idx = [np.searchsorted(axes[c], values[:, c], side="left") for c in range(d)]
    flat = np.ravel_multi_index(idx, shape)
    hist = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape).astype(float)
    for c in range(d):
        hist = np.cumsum(hist, axis=c)
    return hist[tuple(slice(0, len(a)) for a in axes)] / n


def _xj_of(ps: PseudoSample) -> np.ndarray:
    x = ps.x_j if ps.x_j is not None else ps.v
    return np.asarray(x, dtype=float)


def _quantiles(col: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Generalized inverse of the empirical cdf of ``col`` at ``probs``."""
    xs = np.sort(col)
    k = np.clip(np.ceil(probs * xs.size - 1e-9).astype(int) - 1, 0, xs.size - 1)
    return xs[k]


@dataclass(frozen=True, eq=False)
class _ChiDesign:
    z_splits: np.ndarray
    x_edges: np.ndarray


@dataclass(frozen=True, eq=False)
class _PointDesign:
    z: np.ndarray
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class _IndepGridDesign:
    z_axes: list
    x_axes: list
    weights: np.ndarray


class IndepStatistic(Statistic):
    """Independence statistics built on the joint empirical cdf G of (Z, X_J).

    Parameters
    ----------
    kind : {"chi", "ks", "l2", "cvm"}
    z_splits : sequence of float
        Cut points of every pseudo-observation margin for the chi-square
        cells (default: one split at 0.5, giving 2 x 2 cells).
    n_xbins : int
        Number of equal-count cells of the first conditioning column.
    m : int
        Gauss-Legendre nodes per dimension for ``l2``.
    """

    level = "pseudo"

    def __init__(self, kind: str = "chi", z_splits=(0.5,), n_xbins: int = 5, m: int = DEFAULT_M):
        if kind not in ("chi", "ks", "l2", "cvm"):
            raise ConfigError(f"unknown kind {kind!r}; expected chi, ks, l2 or cvm")
        self.kind = kind
        self.z_splits = np.sort(np.asarray(z_splits, dtype=float))
        self.n_xbins = int(n_xbins)
        self.m = int(m)
        if kind == "chi" and (self.n_xbins < 2 or self.z_splits.size < 1):
            raise ConfigError("the chi-square statistic needs at least 2 cells on each side")
        self.stat_id = {"chi": "I_chi", "ks": "I_KS", "l2": "I_2n", "cvm": "I_CvM"}[kind]

    def config(self):
        return {"kind": self.kind, "z_splits": self.z_splits.tolist(), "n_xbins": self.n_xbins, "m": self.m}

    def design(self, ctx):
        ps = ctx.pseudo
        if ps.n == 0:
            raise ConfigError("empty pseudo-sample")
        x = _xj_of(ps)
        if self.kind == "chi":
            probs = np.arange(1, self.n_xbins) / self.n_xbins
            return _ChiDesign(self.z_splits, _quantiles(x[:, 0], probs))
        if self.kind in ("ks", "cvm"):
            return _PointDesign(ps.z, x)
        gx, gw = gauss_legendre(0.0, 1.0, self.m)
        z_axes = [gx] * ps.p
        x_axes = [_quantiles(x[:, c], gx) for c in range(x.shape[1])]
        w = _tensor_weights([gw] * (ps.p + x.shape[1]))
        return _IndepGridDesign(z_axes, x_axes, w)

    def functionals(self, ctx, d):
        ps = ctx.pseudo
        z, x = ps.z, _xj_of(ps)
        n = ps.n
        if self.kind == "chi":
            k = len(d.z_splits) + 1
            zc = np.zeros(n, dtype=np.int64)
            for c in range(z.shape[1]):
                zc = zc * k + np.searchsorted(d.z_splits, z[:, c], side="left")
            xc = np.searchsorted(d.x_edges, x[:, 0], side="left")
            n_z, n_x = k ** z.shape[1], len(d.x_edges) + 1
            joint = np.bincount(zc * n_x + xc, minlength=n_z * n_x).reshape(n_z, n_x) / n
            return {"n": n, "joint": joint, "row": joint.sum(axis=1), "col": joint.sum(axis=0)}
        if self.kind in ("ks", "cvm"):
            lz = _dominance(z, d.z)
            lx = _dominance(x, d.x)
            return {"n": n, "g": (lz & lx).mean(axis=1), "gi": lz.mean(axis=1), "gj": lx.mean(axis=1)}
        g = _tensor_ecdf(np.hstack([z, x]), d.z_axes + d.x_axes)
        gi = _tensor_ecdf(z, d.z_axes)
        gj = _tensor_ecdf(x, d.x_axes)
        prod = np.multiply.outer(gi, gj)
        return {"n": n, "g": g.ravel(), "prod": prod.ravel()}

    @staticmethod
    def _chi_sum(num: np.ndarray, den: np.ndarray) -> float:
        empty = den <= 0.0
        if np.any(empty):
            if np.any(np.abs(num[empty]) > 0.0):
                warnings.warn("empty chi-square cell with nonzero discrepancy; treated as 0/0 = 0", RuntimeWarning, stacklevel=3)
            else:
                warnings.warn("empty chi-square cell; using 0/0 = 0", RuntimeWarning, stacklevel=3)
        safe = np.where(empty, 1.0, den)
        return float(np.sum(np.where(empty, 0.0, num * num / safe)))

    def _reduce(self, diff, d):
        if self.kind == "ks":
            return float(np.max(np.abs(diff)))
        if self.kind == "cvm":
            return float(np.mean(diff * diff))
        return float(np.sum(d.weights * diff * diff))

    def value(self, f, d):
        if self.kind == "chi":
            prod = np.outer(f["row"], f["col"])
            return f["n"] * self._chi_sum(f["joint"] - prod, prod)
        if self.kind == "l2":
            return self._reduce(f["g"] - f["prod"], d)
        return self._reduce(f["g"] - f["gi"] * f["gj"], d)

    def centered(self, fs, f, d):
        if self.kind == "chi":
            p1 = np.outer(fs["row"], fs["col"])
            p0 = np.outer(f["row"], f["col"])
            return fs["n"] * self._chi_sum((fs["joint"] - f["joint"]) - p1 + p0, p1)
        if self.kind == "l2":
            return self._reduce((fs["g"] - f["g"]) - fs["prod"] + f["prod"], d)
        return self._reduce((fs["g"] - f["g"]) - fs["gi"] * fs["gj"] + f["gi"] * f["gj"], d)


class IndepCopulaStatistic(Statistic):
    """Empirical copula of (Z, X_J) compared with C_s(u_I) C_J(u_J).

    Parameters
    ----------
    kind : {"ks", "l2", "cvm"}
    simplified_variant : {"empcop_z", "ecdf_z", "avg"}
        Estimator of the simplified copula in the product.
    m : int
        Gauss-Legendre nodes per dimension for ``l2``.
    """

    level = "pseudo"

    def __init__(self, kind: str = "cvm", simplified_variant: str = "empcop_z", m: int = 10):
        if kind not in ("ks", "l2", "cvm"):
            raise ConfigError(f"unknown kind {kind!r}; expected ks, l2 or cvm")
        self.kind = kind
        self.variant = _check_variant(simplified_variant)
        self.m = int(m)
        self.stat_id = {"ks": "Ib_KS", "l2": "Ib_2n", "cvm": "Ib_CvM"}[kind]

    def config(self):
        return {"kind": self.kind, "simplified_variant": self.variant, "m": self.m}

    @staticmethod
    def _ranks(ctx):
        ps = ctx.pseudo
        return ctx.memo("pseudo_ranks", lambda: rank_columns(np.hstack([ps.z, _xj_of(ps)])))

    def design(self, ctx):
        p = ctx.pseudo.p
        if self.kind == "l2":
            gx, gw = gauss_legendre(0.0, 1.0, self.m)
            d = p + _xj_of(ctx.pseudo).shape[1]
            return (_tensor([gx] * d), _tensor_weights([gw] * d), p)
        return (self._ranks(ctx), None, p)

    def functionals(self, ctx, d):
        pts, _, p = d
        r = self._ranks(ctx)
        joint = _dominance(r, pts).mean(axis=1)
        cj = _dominance(r[:, p:], pts[:, p:]).mean(axis=1)
        ui = np.ascontiguousarray(pts[:, :p])
        if self.variant == "empcop_z":
            cs = _dominance(r[:, :p], ui).mean(axis=1)
        elif self.variant == "ecdf_z":
            cs = _dominance(ctx.pseudo.z, ui).mean(axis=1)
        else:
            cs = ctx.smoother.simplified_points(ui, "avg")
        return joint, cs * cj

    def _reduce(self, diff, d):
        if self.kind == "ks":
            return float(np.max(np.abs(diff)))
        if self.kind == "cvm":
            return float(np.mean(diff * diff))
        return float(np.sum(d[1] * diff * diff))

    def value(self, f, d):
        return self._reduce(f[0] - f[1], d)

    def centered(self, fs, f, d):
        return self._reduce((fs[0] - f[0]) - fs[1] + f[1], d)


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------


def _ctx(data, kern) -> SampleContext:
    return SampleContext(data, kern)


def t0_grid(data: Dataset, kern: KernelSpec, grid: GridSpec | None = None, norm: str = "cvm", simplified_variant: str = "avg") -> float:
    """Grid statistic comparing the conditional and simplified copula estimates."""
    return T0Grid(norm, grid, simplified_variant=simplified_variant).compute(_ctx(data, kern))


def t0_pairwise(data: Dataset, kern: KernelSpec, grid: GridSpec | None = None, norm: str = "cvm") -> float:
    """Grid statistic comparing conditional copulas at pairs of nodes."""
    return T0Pairwise(norm, grid).compute(_ctx(data, kern))


def t_cvm_randomweight(data: Dataset, kern: KernelSpec, variant: str = "v1", simplified_variant: str = "avg") -> float:
    """Cramer-von Mises statistic with empirical weights (``v1`` or ``v2``)."""
    return TCvMRandomWeight(variant, simplified_variant).compute(_ctx(data, kern))


def _pseudo_ctx(psample) -> SampleContext:
    if isinstance(psample, PseudoSample):
        return SampleContext(psample, KernelSpec())
    raise TypeError("expected a PseudoSample")


def indep_stat(psample: PseudoSample, kind: str = "chi", **options) -> float:
    """Independence statistic between pseudo-observations and conditioning values."""
    return IndepStatistic(kind, **options).compute(_pseudo_ctx(psample))


def indep_copula_stat(psample: PseudoSample, kind: str = "cvm", simplified_variant: str = "empcop_z", **options) -> float:
    """Copula-comparison independence statistic on the pseudo-sample."""
    if simplified_variant == "avg":
        raise ConfigError("the 'avg' variant needs the full dataset; use IndepCopulaStatistic with a SampleContext")
    return IndepCopulaStatistic(kind, simplified_variant, **options).compute(_pseudo_ctx(psample))
