"""Simulation designs and the Monte Carlo rejection-rate engine.

Every design draws ``X_3 ~ N(0, 1)``, a conditional copula ``C_{theta(X_3)}``
of one family with Kendall's tau ``tau(X_3)``, and conditionally Gaussian
margins ``X_k = mu(X_3) + Phi^{-1}(U_k)``, k = 1, 2.

pointwise alternative
    ``tau(x) = Phi(x) * tau_max`` and ``mu(x) = x``.
boxed alternative
    ``tau(x) = tau_max * floor(m Phi(x)) / m``: the copula is constant on the
    ``m`` boxes of equal probability.  The margins use the piecewise
    constant ``gamma(x)`` so that the conditional margins are also constant
    on every box.
null
    constant ``tau0``.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from ._random import rng_for
from .copulas import CopulaFamily, as_family, sample_pairs, theta_for_tau_or_independence
from .smoothing import Dataset
from .statistic import ConfigError, TestResult

__all__ = [
    "DgpSpec",
    "McCell",
    "gamma_margin",
    "mc_rejection",
    "simulate",
    "simulate_values",
    "worker_count",
    "write_table",
]

MODES = ("pointwise", "boxed")
VARIANTS = ("alternative", "null_constant")
BOX_MARGINS = ("gamma", "identity")
SIM_STREAM = 0
TEST_STREAM = 1


def gamma_margin(x, m: int) -> np.ndarray:
    """Box-constant location ``Phi^{-1}(floor(m Phi(x)) / m)``.

    The level is clamped to ``[1/(2m), 1 - 1/(2m)]`` so that the bottom box
    gets a finite location.
    """
    level = np.floor(m * special.ndtr(np.asarray(x, dtype=float))) / m
    level = np.clip(level, 0.5 / m, 1.0 - 0.5 / m)
    return special.ndtri(level)


@dataclass(frozen=True)
class DgpSpec:
    """One simulation design.

    Parameters
    ----------
    family : CopulaFamily or str
    n : int
        Sample size.
    tau_max : float
        Maximal Kendall tau of the alternative, in [0, 1].
    variant : {"alternative", "null_constant"}
    tau0 : float
        Constant tau of the null design.
    mode : {"pointwise", "boxed"}
    m : int
        Number of boxes of the boxed design.
    box_margin : {"gamma", "identity"}
        Location function of the margins in the boxed design.
    """

    family: CopulaFamily
    n: int
    tau_max: float = 1.0
    variant: str = "alternative"
    tau0: float = 0.5
    mode: str = "pointwise"
    m: int = 5
    box_margin: str = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "family", as_family(self.family))
        if self.n < 0:
            raise ConfigError("sample size must be nonnegative")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.box_margin not in BOX_MARGINS:
            raise ConfigError(f"unknown box margin {self.box_margin!r}; expected one of {BOX_MARGINS}")
        if not 0.0 <= self.tau_max <= 1.0:
            raise ConfigError("tau_max must lie in [0, 1]")
        if not -1.0 < self.tau0 < 1.0:
            raise ConfigError("tau0 must lie in (-1, 1)")
        if self.m < 1:
            raise ConfigError("the boxed design needs m >= 1")

    def tau_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.variant == "null_constant":
            return np.full(x.shape, self.tau0)
        if self.mode == "pointwise":
            return special.ndtr(x) * self.tau_max
        level = np.minimum(np.floor(self.m * special.ndtr(x)), self.m - 1)
        return self.tau_max * level / self.m

    def theta_at(self, x) -> np.ndarray:
        """Copula parameter at ``x``; ``nan`` marks the independence copula
        for families without an independence member."""
        return theta_for_tau_or_independence(self.family, self.tau_at(x))

    def mean_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.mode == "boxed" and self.box_margin == "gamma":
            return gamma_margin(x, self.m)
        return x

    def breakpoints(self) -> np.ndarray:
        """Points where ``tau_at`` or ``mean_at`` jump."""
        if self.mode != "boxed" or self.m < 2:
            return np.empty(0)
        return special.ndtri(np.arange(1, self.m) / self.m)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d


def sample_conditional(spec: DgpSpec, x3: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw (U_1, U_2) from the conditional copula at every value of ``x3``."""
    theta = spec.theta_at(x3)
    n = x3.shape[0]
    u = np.empty((n, 2))
    indep = np.isnan(theta)
    u_indep = rng.random((n, 2))
    u[indep] = u_indep[indep]
    if np.any(~indep):
        u[~indep] = sample_pairs(spec.family, theta[~indep], int(np.sum(~indep)), rng)
    return u


def simulate_values(spec: DgpSpec, seed: int) -> np.ndarray:
    """Draw one sample of the design as an ``(n, 3)`` array (x1, x2, x3)."""
    rng = rng_for(seed, SIM_STREAM)
    x3 = rng.standard_normal(spec.n)
    u = sample_conditional(spec, x3, rng)
    mu = spec.mean_at(x3)
    return np.column_stack([mu + special.ndtri(u[:, 0]), mu + special.ndtri(u[:, 1]), x3])


def simulate(spec: DgpSpec, seed: int) -> Dataset:
    """Draw one sample of the design as a Dataset conditioning on x3."""
    if spec.n < 1:
        raise ConfigError("a Dataset needs at least one row; use simulate_values for n = 0")
    return Dataset(simulate_values(spec, seed), i_cols=(0, 1), j_cols=(2,), names=("x1", "x2", "x3"))


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------


def worker_count(threads: int | None = None) -> int:
    """Number of worker threads: explicit value, else ``CONDCOP_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("CONDCOP_THREADS", "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise ConfigError("thread count must be at least 1")
    return threads


@dataclass
class McCell:
    """Rejection summary of one statistic over the Monte Carlo replications."""

    family: str
    stat_id: str
    scheme: str
    tau_max: float
    n: int
    R: int
    rejections: int = 0
    invalid: int = 0
    mean_p: float = math.nan
    runtime_seconds: float = 0.0
    p_values: list = field(default_factory=list)
    statistics: list = field(default_factory=list)
    first_boot_values: list = field(default_factory=list)

    @property
    def rate(self) -> float:
        valid = self.R - self.invalid
        return self.rejections / valid if valid > 0 else math.nan

    def row(self) -> dict:
        return {
            "family": self.family,
            "stat_id": self.stat_id,
            "scheme": self.scheme,
            "tau_max": self.tau_max,
            "n": self.n,
            "R": self.R,
            "rejections": self.rejections,
            "invalid": self.invalid,
            "rejection_rate": self.rate,
            "mean_p": self.mean_p,
            "runtime_seconds": round(self.runtime_seconds, 3),
        }


TABLE_COLUMNS = ["family", "stat_id", "scheme", "tau_max", "n", "R", "rejections", "invalid", "rejection_rate", "mean_p", "runtime_seconds"]


def _as_results(out) -> list[TestResult]:
    if isinstance(out, TestResult):
        return [out]
    if isinstance(out, (int, float, np.floating)):
        p = float(out)
        return [TestResult(stat_id="test", value=math.nan, p_value=p, boot_values=[p])]
    return list(out)


def mc_rejection(
    spec: DgpSpec,
    test: Callable[[Dataset, int], object],
    reps: int,
    alpha: float = 0.05,
    seed: int = 0,
    threads: int | None = None,
    progress: Callable[[int], None] | None = None,
) -> list[McCell]:
    """Rejection frequencies of one or several tests over ``reps`` samples.

    Parameters
    ----------
    spec : DgpSpec
    test : callable
        ``test(data, seed)`` returning a TestResult, a list of them (one per
        statistic sharing the same resamples) or a bare p-value.
    reps : int
        Number of Monte Carlo replications R >= 1.
    alpha : float
        Level; a replication rejects when ``p <= alpha``.
    seed : int
        Replication ``r`` simulates with ``(seed, r)`` and tests with the
        independent stream ``(seed, r, 1)``.
    threads : int, optional
        Parallel replications; results do not depend on this value.

    Returns
    -------
    list of McCell
        One cell per statistic, with per-replication p-values and
        statistics retained, plus the bootstrap replicates of the first
        replication for QQ comparisons.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")

    def one(r: int):
        t0 = time.perf_counter()
        data = simulate(spec, int(np.random.SeedSequence([seed, r]).generate_state(1)[0]))
        test_seed = int(np.random.SeedSequence([seed, r, TEST_STREAM]).generate_state(1)[0])
        res = _as_results(test(data, test_seed))
        return res, time.perf_counter() - t0

    n_workers = worker_count(threads)
    if n_workers == 1:
        outs = []
        for r in range(reps):
            outs.append(one(r))
            if progress is not None:
                progress(r)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outs = list(pool.map(one, range(reps)))

    cells: dict[str, McCell] = {}
    for res, dt in outs:
        for tr in res:
            cell = cells.get(tr.stat_id)
            if cell is None:
                cell = McCell(spec.family.value, tr.stat_id, tr.scheme or "", spec.tau_max, spec.n, reps)
                cells[tr.stat_id] = cell
            cell.runtime_seconds += dt / max(len(res), 1)
            if not cell.statistics:
                cell.first_boot_values = list(tr.boot_values)
            if not tr.valid or tr.p_value is None:
                cell.invalid += 1
                cell.p_values.append(math.nan)
                cell.statistics.append(tr.value)
                continue
            cell.p_values.append(tr.p_value)
            cell.statistics.append(tr.value)
            cell.rejections += int(tr.p_value <= alpha)
    for cell in cells.values():
        ps = np.asarray(cell.p_values, dtype=float)
        ok = ps[np.isfinite(ps)]
        cell.mean_p = float(ok.mean()) if ok.size else math.nan
    return list(cells.values())


def write_table(cells: list[McCell], path) -> None:
    """Write Monte Carlo cells as CSV with a header row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for c in cells:
            w.writerow(c.row())
