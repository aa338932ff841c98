"""Command-line driver: ``condcop test``, ``condcop simulate`` and ``condcop mc``.

Exit codes: 0 success, 2 configuration error, 3 data or I/O error,
4 numerical failure.  The thread count of replicate-level parallelism is
read from ``CONDCOP_THREADS``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bootstrap import DEFAULT_N_BOOT, SCHEMES, BootstrapTest, bootstrap_tests
from .boxes import DEFAULT_BOXES
from .catalog import DEFAULT_SCHEME, FAMILY_STATS, STAT_IDS, make_statistic
from .copulas import CopulaDomainError, as_family
from .dgp import BOX_MARGINS, MODES, TABLE_COLUMNS, VARIANTS, DgpSpec, mc_rejection, simulate_values
from .np_tests import DEFAULT_M
from .smoothing import DataError, Dataset, EstimationError, KernelSpec
from .statistic import SCHEMA_VERSION, ConfigError

__all__ = ["EXIT_CONFIG", "EXIT_DATA", "EXIT_NUMERICAL", "RunConfig", "main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
COMMANDS = ("test", "simulate", "mc")


class NumericalFailure(RuntimeError):
    """A test finished without a usable p-value."""


@dataclass
class RunConfig:
    """Validated settings of one CLI run.

    List-valued fields (``stat``, ``family``, ``tau_max``) hold one entry per
    requested value; ``test`` and ``simulate`` use a single family.
    """

    command: str
    data: str | None = None
    i_cols: list = field(default_factory=list)
    j_cols: list = field(default_factory=list)
    stat: list = field(default_factory=list)
    scheme: str | None = None
    family: list = field(default_factory=list)
    h: float | None = None
    grid_m: int = DEFAULT_M
    boxes_m: int = DEFAULT_BOXES
    n_boot: int = DEFAULT_N_BOOT
    reps: int = 100
    alpha: float = 0.05
    seed: int = 0
    out: str | None = None
    emit_boot_values: bool = False
    n: int = 500
    tau_max: list = field(default_factory=lambda: [1.0])
    variant: str = "alternative"
    tau0: float = 0.5
    mode: str = "pointwise"
    box_margin: str = "gamma"
    recentering: str | None = None
    qq_out: str | None = None
    pvalues_out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if "command" not in d:
            raise ConfigError("configuration needs a 'command'")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        for name in ("i_cols", "j_cols", "stat", "family", "tau_max"):
            value = getattr(self, name)
            if not isinstance(value, list):
                raise ConfigError(f"{name} must be a list")
        self.family = [self._family_name(f) for f in self.family]
        for sid in self.stat:
            if sid not in STAT_IDS:
                raise ConfigError(f"unknown statistic {sid!r}; expected one of {', '.join(STAT_IDS)}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {', '.join(SCHEMES)}")
        if self.h is not None and not 0.0 < float(self.h) < 0.5:
            raise ConfigError("h must lie in (0, 0.5)")
        for name, low in (("grid_m", 1), ("boxes_m", 1), ("n_boot", 1), ("reps", 1), ("n", 0)):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < low:
                raise ConfigError(f"{name} must be an integer >= {low}")
        if not 0.0 < float(self.alpha) < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.box_margin not in BOX_MARGINS:
            raise ConfigError(f"unknown box margin {self.box_margin!r}; expected one of {BOX_MARGINS}")
        if self.recentering not in (None, "centered", "raw"):
            raise ConfigError("recentering must be 'centered' or 'raw'")
        if any(not 0.0 <= float(t) <= 1.0 for t in self.tau_max):
            raise ConfigError("tau_max values must lie in [0, 1]")
        if self.command == "test":
            if not self.data:
                raise ConfigError("test needs --data")
            if not self.stat:
                raise ConfigError("test needs --stat")
            if len(self.family) > 1:
                raise ConfigError("test takes a single family")
        if self.command == "simulate" and len(self.family) > 1:
            raise ConfigError("simulate takes a single family")
        if self.command == "simulate" and len(self.tau_max) != 1:
            raise ConfigError("simulate takes a single tau_max")
        if self.command in ("simulate", "mc") and not self.family:
            raise ConfigError(f"{self.command} needs --family")
        if self.command == "mc" and not self.stat:
            raise ConfigError("mc needs --stat")
        if self.command == "simulate" and not self.out:
            raise ConfigError("simulate needs --out")

    @staticmethod
    def _family_name(f) -> str:
        try:
            return as_family(f.lower() if isinstance(f, str) else f).value
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def _write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".condcop-", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from None


def _emit(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        _write_atomic(path, text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    """Shortest decimal string that round-trips the float."""
    if isinstance(x, (float, np.floating)) and not isinstance(x, bool):
        return repr(float(x))
    return str(x)


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a CSV file."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [c.strip() for c in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path} has no data rows")
    try:
        values = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if values.ndim != 2 or values.shape[1] != len(header):
        raise DataError(f"{path}: rows do not all have {len(header)} fields")
    return header, values


def load_dataset(cfg: RunConfig) -> Dataset:
    header, values = read_csv(cfg.data)
    i_names = cfg.i_cols or header[:-1]
    j_names = cfg.j_cols or header[-1:]
    for name in list(i_names) + list(j_names):
        if name not in header:
            raise ConfigError(f"column {name!r} not found in {cfg.data}; available: {', '.join(header)}")
    i_idx = [header.index(c) for c in i_names]
    j_idx = [header.index(c) for c in j_names]
    if len(i_idx) < 2:
        raise ConfigError("need at least two conditioned columns")
    try:
        return Dataset(values, i_cols=i_idx, j_cols=j_idx, names=header)
    except DataError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _family(cfg: RunConfig):
    return cfg.family[0] if cfg.family else None


def _stats(cfg: RunConfig, family):
    return [make_statistic(s, family=family, grid_m=cfg.grid_m, boxes_m=cfg.boxes_m) for s in cfg.stat]


def _scheme_groups(cfg: RunConfig) -> dict[str, list[str]]:
    """Statistics grouped by the scheme that calibrates them."""
    if cfg.scheme is not None:
        return {cfg.scheme: list(cfg.stat)}
    groups: dict[str, list[str]] = {}
    for sid in cfg.stat:
        groups.setdefault(DEFAULT_SCHEME[sid], []).append(sid)
    return groups


def _needs_family(stat_ids, scheme) -> bool:
    return scheme in ("bootPI", "bootPC") or any(s in FAMILY_STATS for s in stat_ids)


def cmd_test(cfg: RunConfig) -> int:
    data = load_dataset(cfg)
    family = _family(cfg)
    groups = _scheme_groups(cfg)
    if len(groups) > 1:
        raise ConfigError("statistics with different default schemes; pass --scheme")
    (scheme, stat_ids), = groups.items()
    if family is None and _needs_family(stat_ids, scheme):
        raise ConfigError(f"scheme {scheme} with {', '.join(stat_ids)} needs --family")
    try:
        kern = KernelSpec(h=cfg.h) if cfg.h is not None else KernelSpec.for_sample_size(data.n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = bootstrap_tests(
        data, _stats(cfg, family), scheme, n_boot=cfg.n_boot, seed=cfg.seed, kern=kern, family=family, recentering=cfg.recentering
    )
    dicts = []
    for r in results:
        d = r.to_dict(boot_values=cfg.emit_boot_values)
        d["n"] = data.n
        dicts.append(d)
    payload = dicts[0] if len(dicts) == 1 else {"schema_version": SCHEMA_VERSION, "results": dicts}
    _emit(cfg.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    bad = [r.stat_id for r in results if not r.valid]
    if bad:
        raise NumericalFailure(f"bootstrap failed for {', '.join(bad)}")
    return EXIT_OK


def _spec(cfg: RunConfig, family, tau_max: float) -> DgpSpec:
    return DgpSpec(family, cfg.n, tau_max=tau_max, variant=cfg.variant, tau0=cfg.tau0, mode=cfg.mode, m=cfg.boxes_m, box_margin=cfg.box_margin)


def cmd_simulate(cfg: RunConfig) -> int:
    values = simulate_values(_spec(cfg, _family(cfg), float(cfg.tau_max[0])), cfg.seed)
    header = [f"x{k + 1}" for k in range(values.shape[1])]
    _emit(cfg.out, _csv_text(header, ([_fmt(v) for v in row] for row in values)))
    return EXIT_OK


def qq_pairs(mc_values, boot_values) -> tuple[np.ndarray, np.ndarray]:
    """Matched quantiles of two samples: sorted values when the sizes agree,
    otherwise empirical quantiles at ``(k + 1/2) / K`` with ``K`` the
    smaller size."""
    a = np.sort(np.asarray([v for v in mc_values if np.isfinite(v)], dtype=float))
    b = np.sort(np.asarray([v for v in boot_values if np.isfinite(v)], dtype=float))
    k = min(a.size, b.size)
    if k == 0:
        return np.empty(0), np.empty(0)
    probs = (np.arange(k) + 0.5) / k
    return np.quantile(a, probs, method="inverted_cdf"), np.quantile(b, probs, method="inverted_cdf")


def cmd_mc(cfg: RunConfig) -> int:
    groups = _scheme_groups(cfg)
    cells = []
    for fam in cfg.family:
        for tau_max in cfg.tau_max:
            spec = _spec(cfg, fam, float(tau_max))
            for scheme, stat_ids in groups.items():
                stats = [make_statistic(s, family=fam, grid_m=cfg.grid_m, boxes_m=cfg.boxes_m) for s in stat_ids]
                test = BootstrapTest(stats, scheme, cfg.n_boot, family=fam, h=cfg.h, recentering=cfg.recentering)
                cells.extend(mc_rejection(spec, test, cfg.reps, alpha=cfg.alpha, seed=cfg.seed))
    rows = [[_fmt(c.row()[k]) for k in TABLE_COLUMNS] for c in cells]
    text = _csv_text(TABLE_COLUMNS, rows)
    if cfg.pvalues_out:
        prow = []
        for c in cells:
            for r, (p, t) in enumerate(zip(c.p_values, c.statistics)):
                prow.append([c.family, c.stat_id, c.scheme, _fmt(c.tau_max), r, _fmt(float(t)), _fmt(float(p))])
        _write_atomic(cfg.pvalues_out, _csv_text(["family", "stat_id", "scheme", "tau_max", "rep", "statistic", "p_value"], prow))
    if cfg.qq_out:
        qrow = []
        for c in cells:
            qa, qb = qq_pairs(c.statistics, c.first_boot_values)
            for k, (a, b) in enumerate(zip(qa, qb)):
                qrow.append([c.family, c.stat_id, c.scheme, _fmt(c.tau_max), k, _fmt(float(a)), _fmt(float(b))])
        _write_atomic(cfg.qq_out, _csv_text(["family", "stat_id", "scheme", "tau_max", "k", "mc_value", "boot_value"], qrow))
    _emit(cfg.out, text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in _split(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condcop", description="Tests of the simplifying assumption for conditional copulas.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data: bool, stats: bool):
        p.add_argument("--config", help="JSON file with RunConfig fields; flags given explicitly override it")
        p.add_argument("--family", type=_split, help="copula family (gaussian, student4, clayton, gumbel, frank); comma list for mc")
        p.add_argument("--seed", type=int, help="master seed (default 0)")
        p.add_argument("--out", help="output path; '-' or omitted writes to stdout")
        if data:
            p.add_argument("--data", help="CSV file with a header row")
            p.add_argument("--i-cols", type=_split, help="conditioned columns (default: all but the last)")
            p.add_argument("--j-cols", type=_split, help="conditioning columns (default: the last)")
        if stats:
            p.add_argument("--stat", type=_split, help=f"statistic ids, comma separated: {', '.join(STAT_IDS)}")
            p.add_argument("--scheme", choices=SCHEMES, help="bootstrap scheme (default: bootNP, or bootPI for parametric statistics)")
            p.add_argument("--h", type=float, help="bandwidth on the rank scale (default 1/(sqrt(12) n^(1/5)), 0.083 at n=500)")
            p.add_argument("--grid-m", type=int, help=f"quadrature nodes per axis (default {DEFAULT_M})")
            p.add_argument("--boxes-m", type=int, help=f"number of boxes (default {DEFAULT_BOXES})")
            p.add_argument("--n-boot", type=int, help=f"bootstrap replicates N (default {DEFAULT_N_BOOT})")
            p.add_argument("--recentering", choices=("centered", "raw"), help="override the scheme's bootstrap form")

    def design(p):
        p.add_argument("--n", type=int, help="sample size (default 500)")
        p.add_argument("--tau-max", type=_floats, help="maximal Kendall tau; comma list for mc (default 1)")
        p.add_argument("--variant", choices=VARIANTS, help="alternative (default) or null_constant")
        p.add_argument("--tau0", type=float, help="tau of the null design (default 0.5)")
        p.add_argument("--mode", choices=MODES, help="pointwise (default) or boxed")
        p.add_argument("--box-margin", choices=BOX_MARGINS, help="location function of the boxed design (default gamma)")

    p_test = sub.add_parser("test", help="test the simplifying assumption on a CSV dataset")
    common(p_test, data=True, stats=True)
    p_test.add_argument("--emit-boot-values", action="store_const", const=True, help="include bootstrap replicates in the JSON")

    p_sim = sub.add_parser("simulate", help="draw one dataset of a simulation design")
    common(p_sim, data=False, stats=False)
    design(p_sim)
    p_sim.add_argument("--boxes-m", type=int, help=f"number of boxes of the boxed design (default {DEFAULT_BOXES})")

    p_mc = sub.add_parser("mc", help="Monte Carlo rejection rates")
    common(p_mc, data=False, stats=True)
    design(p_mc)
    p_mc.add_argument("--reps", type=int, help="Monte Carlo replications R (default 100)")
    p_mc.add_argument("--alpha", type=float, help="test level (default 0.05)")
    p_mc.add_argument("--qq-out", help="CSV of matched quantiles: Monte Carlo statistics vs bootstrap replicates")
    p_mc.add_argument("--pvalues-out", help="CSV of per-replication statistics and p-values")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                base = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config} is not valid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config} must hold a JSON object")
        if base.get("command", args.command) != args.command:
            raise ConfigError(f"configuration is for command {base['command']!r}, not {args.command!r}")
    base["command"] = args.command
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        base[key] = value
    return RunConfig.from_dict(base)


_COMMANDS = {"test": cmd_test, "simulate": cmd_simulate, "mc": cmd_mc}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = config_from_args(args)
        return _COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"condcop: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"condcop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, EstimationError, CopulaDomainError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"condcop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
