"""Bootstrap schemes, bootstrapped statistics and p-values.

Schemes
-------
bootNP
    rows drawn with replacement.
bootPseudoNP
    pairs (Z_i, X_iJ) of the pseudo-sample drawn with replacement.
bootPseudoInd
    Z and X_J drawn independently from their empirical laws.
bootCond
    X*_J drawn from its empirical law, then X*_I from the discrete kernel
    estimate of the conditional law of X_I given X*_J.
bootPI
    X*_J drawn from its empirical law and Z* from ``C_{theta_0}``.
bootPC
    X*_J drawn from its empirical law and Z* from ``C_{theta(X*_J)}``, or
    ``C_{theta(A_k)}`` with ``A_k`` the box of X*_J for box statistics.

The parametric schemes use the pooled box estimate in place of
``theta_0`` for box statistics.  Every replicate draws from its own
counter-based stream keyed by ``(seed, replicate)``, so p-values do not
depend on the number of worker threads.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _compiled as cc
from ._random import rng_for
from .boxes import BoxParamStatistic, box_pseudo_sample, fit_boxes
from .copulas import CopulaDomainError, as_family, sample_pairs
from .dgp import worker_count
from .param_tests import ParamStatistic, global_cml, local_curve
from .smoothing import Dataset, EstimationError, KernelSpec, PseudoSample
from .statistic import ConfigError, SampleContext, Statistic, TestResult

__all__ = [
    "BootstrapTest",
    "SchemeSpec",
    "boot_statistic",
    "bootstrap_tests",
    "p_value",
    "resample",
]

SCHEMES = ("bootNP", "bootPseudoInd", "bootPseudoNP", "bootCond", "bootPI", "bootPC")
PSEUDO_SCHEMES = ("bootPseudoInd", "bootPseudoNP")
PARAMETRIC_SCHEMES = ("bootPI", "bootPC")
DEFAULT_RECENTERING = {
    "bootNP": "centered",
    "bootCond": "centered",
    "bootPC": "centered",
    "bootPseudoNP": "centered",
    "bootPI": "raw",
    "bootPseudoInd": "raw",
}
DEFAULT_N_BOOT = 200
MAX_DROP_FRACTION = 0.10
REPLICATE_ERRORS = (EstimationError, CopulaDomainError, FloatingPointError, ZeroDivisionError)


@dataclass(frozen=True)
class SchemeSpec:
    """Resampling scheme, recentering rule and number of replicates."""

    scheme_id: str
    n_boot: int = DEFAULT_N_BOOT
    recentering: str | None = None

    def __post_init__(self):
        if self.scheme_id not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme_id!r}; expected one of {SCHEMES}")
        if self.n_boot < 1:
            raise ConfigError("n_boot must be at least 1")
        rec = DEFAULT_RECENTERING[self.scheme_id] if self.recentering is None else self.recentering
        if rec not in ("centered", "raw"):
            raise ConfigError(f"unknown recentering {rec!r}; expected 'centered' or 'raw'")
        object.__setattr__(self, "recentering", rec)


def p_value(t_obs: float, boot_values: Sequence[float]) -> float:
    """Bootstrap p-value ``(1 + #{T*_b >= T}) / (N + 1)`` over valid replicates."""
    vals = np.asarray([v for v in boot_values if v is not None and np.isfinite(v)], dtype=float)
    if vals.size == 0:
        raise EstimationError("no valid bootstrap replicate")
    return float((1 + np.count_nonzero(vals >= t_obs)) / (vals.size + 1))


# ---------------------------------------------------------------------------
# fitted quantities needed by the schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SchemeFits:
    """Parameters used by the parametric schemes.

    ``theta0`` drives bootPI; bootPC uses ``theta_rows`` (one value per
    original row) or, for box statistics, ``box_theta`` with ``partition``.
    """

    family: object
    theta0: float
    theta_rows: np.ndarray | None = None
    box_theta: np.ndarray | None = None
    partition: object = None


def _cond_cdf_matrix(ctx: SampleContext) -> np.ndarray:
    """Row-normalized cumulative kernel weights: the discrete conditional
    law of X_I given the conditioning value of each row."""

    def build():
        sm = ctx.smoother
        w = cc.rank_kernel_matrix(np.ascontiguousarray(sm.v), sm.v, ctx.kern.h, ctx.kern.code)
        cum = np.cumsum(w, axis=1)
        if np.any(~(cum[:, -1] > 0.0)):
            raise EstimationError("zero kernel mass in the conditional law")
        return cum / cum[:, -1:]

    return ctx.memo("cond_cdf", build)


def resample(sample, scheme: str, rng: np.random.Generator, *, ctx: SampleContext | None = None, fits: SchemeFits | None = None):
    """One bootstrap sample of the same size as ``sample``.

    Parameters
    ----------
    sample : Dataset or PseudoSample
        Rows to resample: a Dataset for bootNP, bootCond, bootPI and bootPC,
        a PseudoSample for the pseudo schemes.
    scheme : str
    rng : numpy Generator
    ctx : SampleContext, optional
        Context of the original dataset; required by bootCond.
    fits : SchemeFits, optional
        Required by bootPI and bootPC.

    Returns
    -------
    Dataset or PseudoSample
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    n = sample.n
    if scheme in PSEUDO_SCHEMES:
        if not isinstance(sample, PseudoSample):
            raise ConfigError(f"{scheme} resamples a pseudo-sample")
        rows = rng.integers(0, n, n)
        if scheme == "bootPseudoNP":
            return sample.take(rows)
        return sample.take(rows, rng.integers(0, n, n))
    if not isinstance(sample, Dataset):
        if scheme == "bootNP":
            return sample.take(rng.integers(0, n, n))
        raise ConfigError(f"{scheme} resamples a Dataset")
    rows = rng.integers(0, n, n)
    if scheme == "bootNP":
        return sample.take(rows)
    x_j = sample.x_j[rows]
    if scheme == "bootCond":
        if ctx is None:
            raise ConfigError("bootCond needs the kernel context of the original sample")
        cum = _cond_cdf_matrix(ctx)
        u = rng.random(n)
        pick = np.minimum(np.sum(cum[rows] < u[:, None], axis=1), n - 1)
        return Dataset.from_parts(sample.x_i[pick], x_j)
    if fits is None:
        raise ConfigError(f"{scheme} needs fitted copula parameters")
    if sample.p != 2:
        raise ConfigError("parametric schemes need two conditioned variables")
    if scheme == "bootPI":
        theta = np.full(n, fits.theta0)
    elif fits.box_theta is not None:
        theta = fits.box_theta[fits.partition.assign(x_j)]
    elif fits.theta_rows is not None:
        theta = fits.theta_rows[rows]
    else:
        raise ConfigError("bootPC needs local or box parameter estimates")
    z = sample_pairs(fits.family, theta, n, rng)
    return Dataset.from_parts(z, x_j)


# ---------------------------------------------------------------------------
# bootstrapped statistics
# ---------------------------------------------------------------------------


def boot_statistic(stat: Statistic, ctx: SampleContext, ctx_star: SampleContext, recentering: str = "centered", design=None, f=None) -> float:
    """Bootstrapped statistic on ``ctx_star``.

    ``centered`` recomputes the statistic's functionals on the bootstrap
    sample and recenters them by the original ones; ``raw`` recomputes the
    statistic on the bootstrap sample alone.
    """
    if design is None:
        design = stat.design(ctx)
    if recentering == "raw":
        return stat.raw(ctx_star, design)
    if recentering != "centered":
        raise ConfigError(f"unknown recentering {recentering!r}")
    if f is None:
        f = stat.functionals(ctx, design)
    return float(stat.centered(stat.functionals(ctx_star, design), f, design))


def _scheme_fits(stats: list[Statistic], ctx: SampleContext, scheme: str, family, designs) -> SchemeFits:
    if family is None:
        fam_stats = [s for s in stats if isinstance(s, (ParamStatistic, BoxParamStatistic))]
        if not fam_stats:
            raise ConfigError(f"{scheme} needs a copula family")
        family = fam_stats[0].family
    fam = as_family(family)
    box = [s.level == "box" for s in stats]
    if all(box):
        part = designs[0].part
        bf = fit_boxes(box_pseudo_sample(ctx.data, part), part.m, fam)
        if not bf.ok:
            raise EstimationError("box CML failed on the original sample")
        return SchemeFits(fam, bf.theta0, box_theta=bf.theta, partition=part)
    if any(box):
        raise ConfigError("parametric schemes cannot mix box and pointwise statistics in one run")
    g = global_cml(ctx.smoother.pseudo_sample(), fam)
    if not g.ok:
        raise EstimationError("global CML failed on the original sample")
    rows = None
    if scheme == "bootPC":
        curve = local_curve(ctx.smoother, fam, ctx.smoother.v, "at_obs", start=g.theta)
        if not curve.ok:
            raise EstimationError("local CML failed on the original sample")
        rows = curve.theta
    return SchemeFits(fam, g.theta, theta_rows=rows)


def _source_sample(stats: list[Statistic], ctx: SampleContext, scheme: str, designs):
    if scheme not in PSEUDO_SCHEMES:
        return ctx.data
    box = [s.level == "box" for s in stats]
    if all(box):
        return box_pseudo_sample(ctx.data, designs[0].part)
    if any(box):
        raise ConfigError("pseudo schemes cannot mix box and pointwise statistics in one run")
    return ctx.pseudo


def _config(stat: Statistic, kern: KernelSpec | None, scheme: SchemeSpec, family) -> dict:
    cfg = dict(stat.config())
    if kern is not None and stat.level != "box":
        cfg.update({"h": kern.h, "kernel": kern.kernel, "trim": kern.trim})
    cfg["n_boot"] = scheme.n_boot
    if family is not None:
        cfg.setdefault("family", as_family(family).value)
    return cfg


def bootstrap_tests(
    data: Dataset,
    stats: Sequence[Statistic] | Statistic,
    scheme: SchemeSpec | str = "bootNP",
    n_boot: int | None = None,
    seed: int = 0,
    kern: KernelSpec | None = None,
    family=None,
    recentering: str | None = None,
    threads: int | None = None,
) -> list[TestResult]:
    """Bootstrap tests of several statistics sharing the same resamples.

    Parameters
    ----------
    data : Dataset
    stats : Statistic or sequence of Statistic
    scheme : SchemeSpec or scheme id
    n_boot : int, optional
        Overrides the scheme's number of replicates.
    seed : int
        Replicate ``b`` draws from the stream keyed by ``(seed, b)``.
    kern : KernelSpec, optional
        Defaults to the rule-of-thumb bandwidth for ``data.n``.
    family : CopulaFamily or str, optional
        Family of the parametric schemes; defaults to the family of the
        first parametric statistic.
    recentering : {"centered", "raw"}, optional
        Overrides the scheme default.
    threads : int, optional
        Worker threads; defaults to ``CONDCOP_THREADS`` or 1.

    Returns
    -------
    list of TestResult
        One per statistic, in input order.  A statistic whose bootstrap
        loses more than 10% of its replicates is flagged invalid.
    """
    t_start = time.perf_counter()
    stats = [stats] if isinstance(stats, Statistic) else list(stats)
    if not stats:
        raise ConfigError("no statistic to test")
    if isinstance(scheme, str):
        scheme = SchemeSpec(scheme, n_boot or DEFAULT_N_BOOT, recentering)
    elif n_boot is not None or recentering is not None:
        scheme = SchemeSpec(scheme.scheme_id, n_boot or scheme.n_boot, recentering or scheme.recentering)
    kern = kern if kern is not None else KernelSpec.for_sample_size(data.n)
    ctx = SampleContext(data, kern)

    designs = [s.design(ctx) for s in stats]
    funcs = [s.functionals(ctx, d) for s, d in zip(stats, designs)]
    values = [float(s.value(f, d)) for s, f, d in zip(stats, funcs, designs)]

    sid = scheme.scheme_id
    fits = _scheme_fits(stats, ctx, sid, family, designs) if sid in PARAMETRIC_SCHEMES else None
    source = _source_sample(stats, ctx, sid, designs)
    rec = scheme.recentering

    def replicate(b: int) -> list[float]:
        rng = rng_for(seed, b)
        star = resample(source, sid, rng, ctx=ctx, fits=fits)
        ctx_star = SampleContext(star, kern)
        out = []
        for s, d, f in zip(stats, designs, funcs):
            try:
                out.append(boot_statistic(s, ctx, ctx_star, rec, d, f))
            except REPLICATE_ERRORS:
                out.append(math.nan)
        return out

    n_workers = worker_count(threads)
    if n_workers == 1:
        reps = [replicate(b) for b in range(scheme.n_boot)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            reps = list(pool.map(replicate, range(scheme.n_boot)))
    elapsed = time.perf_counter() - t_start

    results = []
    fam_value = None if fits is None else fits.family
    for j, s in enumerate(stats):
        boot = [r[j] for r in reps]
        finite = [v for v in boot if np.isfinite(v)]
        dropped = len(boot) - len(finite)
        valid = dropped <= MAX_DROP_FRACTION * scheme.n_boot and len(finite) > 0
        pv = p_value(values[j], finite) if finite else None
        results.append(
            TestResult(
                stat_id=s.stat_id,
                value=values[j],
                p_value=pv,
                boot_values=finite,
                scheme=sid,
                seed=seed,
                recentering=rec,
                n_boot=scheme.n_boot,
                n_dropped=dropped,
                valid=valid,
                status="ok" if valid else "invalid",
                runtime_seconds=elapsed,
                config=_config(s, kern, scheme, fam_value),
            )
        )
    return results


class BootstrapTest:
    """Reusable test: statistics, scheme and settings applied to a dataset.

    Calling ``test(data, seed)`` returns the list of TestResult of
    :func:`bootstrap_tests`; this is the form expected by
    :func:`dgp.mc_rejection`.  ``h=None`` uses the rule-of-thumb bandwidth
    for each sample size.
    """

    def __init__(self, stats, scheme: str = "bootNP", n_boot: int = DEFAULT_N_BOOT, family=None, h: float | None = None, recentering: str | None = None, threads: int | None = 1):
        self.stats = [stats] if isinstance(stats, Statistic) else list(stats)
        self.scheme = SchemeSpec(scheme, n_boot, recentering)
        self.family = family
        self.h = h
        self.threads = threads

    def __call__(self, data: Dataset, seed: int) -> list[TestResult]:
        kern = KernelSpec.for_sample_size(data.n) if self.h is None else KernelSpec(h=self.h)
        try:
            return bootstrap_tests(data, self.stats, self.scheme, seed=seed, kern=kern, family=self.family, threads=self.threads)
        except REPLICATE_ERRORS + (ConfigError,) as exc:
            return [
                TestResult(stat_id=s.stat_id, value=math.nan, scheme=self.scheme.scheme_id, seed=seed, valid=False, status=f"failed: {exc}")
                for s in self.stats
            ]
