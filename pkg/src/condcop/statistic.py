"""Shared machinery for test statistics: sample contexts, results, protocol.

Every statistic follows the same four-step protocol so that the bootstrap
engine can treat all of them alike:

``design(ctx)``
    Fixed evaluation objects (nodes, points, partitions) taken from the
    original sample.
``functionals(ctx, design)``
    The estimated functions the statistic is built from, evaluated on the
    design.  Called on the original sample and on every bootstrap sample.
``value(f, design)``
    The statistic itself.
``centered(f_star, f, design)``
    The recentred bootstrap statistic, comparing bootstrap functionals with
    the original ones.

The raw bootstrap statistic is simply ``value(functionals(ctx*, design(ctx*)))``.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Any

import numpy as np

from .smoothing import Dataset, KernelSmoother, KernelSpec, PseudoSample

__all__ = ["ConfigError", "SampleContext", "Statistic", "TestResult"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration: unknown identifiers, impossible settings."""


def canonical_order(sample):
    """The same rows sorted lexicographically (first column first)."""
    if isinstance(sample, Dataset):
        keys = sample.values
    else:
        keys = np.hstack([sample.z, sample.v])
    order = np.lexsort(keys.T[::-1])
    if np.all(order[1:] > order[:-1]):
        return sample
    return sample.take(order)


class SampleContext:
    """One sample (original or bootstrap) with cached derived quantities.

    Parameters
    ----------
    sample : Dataset or PseudoSample
        Rows are put in lexicographic order first, so every statistic is a
        bit-identical function of the set of rows.
    kern : KernelSpec
    """

    def __init__(self, sample, kern: KernelSpec):
        if not isinstance(sample, (Dataset, PseudoSample)):
            raise TypeError("sample must be a Dataset or a PseudoSample")
        self.sample = canonical_order(sample)
        self.kern = kern
        self.cache: dict[str, Any] = {}

    @property
    def is_pseudo(self) -> bool:
        return isinstance(self.sample, PseudoSample)

    @cached_property
    def data(self) -> Dataset:
        """The sample as a Dataset; a pseudo-sample uses its z as conditioned columns."""
        if isinstance(self.sample, Dataset):
            return self.sample
        ps = self.sample
        x_j = ps.x_j if ps.x_j is not None else ps.v
        return Dataset.from_parts(ps.z, x_j)

    @cached_property
    def smoother(self) -> KernelSmoother:
        return KernelSmoother(self.data, self.kern)

    @cached_property
    def pseudo(self) -> PseudoSample:
        """Conditional pseudo-observations paired with raw conditioning values."""
        if isinstance(self.sample, PseudoSample):
            return self.sample
        return self.smoother.pseudo_sample()

    def memo(self, key: str, fn):
        """Compute ``fn()`` once per context under ``key``."""
        if key not in self.cache:
            self.cache[key] = fn()
        return self.cache[key]


class Statistic(ABC):
    """A test statistic following the design / functionals / value protocol."""

    stat_id: str = ""
    #: "data" statistics need the full sample, "pseudo" ones only (Z, X_J)
    #: pairs and "box" ones a box partition.
    level: str = "data"
    keeps_design: bool = False

    def design(self, ctx: SampleContext):
        return None

    @abstractmethod
    def functionals(self, ctx: SampleContext, design):
        ...

    @abstractmethod
    def value(self, f, design) -> float:
        ...

    @abstractmethod
    def centered(self, f_star, f, design) -> float:
        ...

    def compute(self, ctx: SampleContext) -> float:
        """Statistic value on one sample."""
        d = self.design(ctx)
        return float(self.value(self.functionals(ctx, d), d))

    def raw(self, ctx_star: SampleContext, design=None) -> float:
        """Statistic recomputed on a bootstrap sample alone.

        The design is rebuilt from the bootstrap sample unless the statistic
        keeps the original one (``keeps_design``), as box statistics do with
        their partition.
        """
        if self.keeps_design and design is not None:
            return float(self.value(self.functionals(ctx_star, design), design))
        return self.compute(ctx_star)

    def config(self) -> dict:
        return {}

    def __repr__(self) -> str:
        cfg = ", ".join(f"{k}={v!r}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if math.isnan(v) else v
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    return x


@dataclass
class TestResult:
    """Outcome of one test: observed statistic and bootstrap calibration.

    ``p_value`` is set exactly when ``boot_values`` is nonempty.
    """

    __test__ = False  # keep pytest from collecting this class

    stat_id: str
    value: float
    p_value: float | None = None
    boot_values: list = field(default_factory=list)
    scheme: str | None = None
    seed: int | None = None
    recentering: str | None = None
    n_boot: int = 0
    n_dropped: int = 0
    valid: bool = True
    status: str = "ok"
    runtime_seconds: float | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.p_value is None) != (len(self.boot_values) == 0):
            raise ValueError("p_value must be present exactly when bootstrap values are")

    def to_dict(self, boot_values: bool = False, runtime: bool = True) -> dict:
        d = asdict(self)
        if not boot_values:
            d.pop("boot_values")
        if not runtime:
            d.pop("runtime_seconds")
        d["schema_version"] = SCHEMA_VERSION
        return _jsonable(d)

    def to_json(self, boot_values: bool = False, runtime: bool = True) -> str:
        return json.dumps(self.to_dict(boot_values, runtime), indent=2, sort_keys=True)
