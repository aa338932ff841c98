import csv
import math

import numpy as np
import pytest
from scipy import stats

from condcop.copulas import CopulaFamily
from condcop.dgp import DgpSpec, McCell, gamma_margin, mc_rejection, simulate, simulate_values, worker_count, write_table
from condcop.statistic import ConfigError, TestResult

FAMILIES = [f.value for f in CopulaFamily]


# ---------------------------------------------------------------------------
# design functions
# ---------------------------------------------------------------------------


def test_gamma_margin_levels_and_clamp():
    m = 5
    x = stats.norm.ppf([0.05, 0.25, 0.45, 0.65, 0.85])
    np.testing.assert_allclose(gamma_margin(x, m), stats.norm.ppf([0.1, 0.2, 0.4, 0.6, 0.8]), atol=1e-12)
    assert gamma_margin(np.array([-np.inf]), m)[0] == pytest.approx(stats.norm.ppf(0.1))
    assert gamma_margin(np.array([np.inf]), m)[0] == pytest.approx(stats.norm.ppf(0.9))
    assert np.all(np.isfinite(gamma_margin(np.linspace(-40, 40, 101), m)))


def test_tau_profiles():
    x = np.array([-1.0, 0.0, 0.7])
    np.testing.assert_allclose(DgpSpec("frank", 10, tau_max=0.6).tau_at(x), 0.6 * stats.norm.cdf(x))
    np.testing.assert_allclose(DgpSpec("frank", 10, variant="null_constant", tau0=0.3).tau_at(x), 0.3)
    boxed = DgpSpec("frank", 10, mode="boxed", m=5)
    np.testing.assert_allclose(boxed.tau_at(stats.norm.ppf([0.1, 0.3, 0.5, 0.7, 0.9])), [0.0, 0.2, 0.4, 0.6, 0.8])
    assert boxed.tau_at(np.array([np.inf]))[0] == 0.8


def test_theta_profile_marks_independence():
    assert math.isnan(DgpSpec("clayton", 10, tau_max=0.0).theta_at(np.array([0.3]))[0])
    assert DgpSpec("gaussian", 10).theta_at(np.array([0.0]))[0] == pytest.approx(np.sin(np.pi / 4))


def test_breakpoints():
    assert DgpSpec("gumbel", 10).breakpoints().size == 0
    np.testing.assert_allclose(DgpSpec("gumbel", 10, mode="boxed", m=4).breakpoints(), stats.norm.ppf([0.25, 0.5, 0.75]))


@pytest.mark.parametrize(
    "kwargs",
    [{"n": -1}, {"mode": "cubes"}, {"variant": "other"}, {"box_margin": "cubic"}, {"tau_max": 1.5}, {"tau0": 1.0}, {"m": 0}],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        DgpSpec("gaussian", **{"n": 10, **kwargs})


def test_spec_round_trip():
    spec = DgpSpec("student4", 50, mode="boxed")
    d = spec.to_dict()
    assert d["family"] == "student4" and DgpSpec(**d) == spec


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_simulation_is_deterministic():
    spec = DgpSpec("clayton", 200)
    a = simulate_values(spec, 5)
    np.testing.assert_array_equal(a, simulate_values(spec, 5))
    assert not np.array_equal(a, simulate_values(spec, 6))
    assert simulate(spec, 5).names == ("x1", "x2", "x3")


def test_empty_sample():
    assert simulate_values(DgpSpec("frank", 0), 1).shape == (0, 3)
    with pytest.raises(ConfigError):
        simulate(DgpSpec("frank", 0), 1)


def test_conditioning_variable_is_standard_normal():
    x3 = simulate_values(DgpSpec("gaussian", 100_000), 7)[:, 2]
    assert abs(x3.mean()) <= 0.02
    assert abs(x3.std() - 1.0) <= 0.02


@pytest.mark.parametrize("mode", ["pointwise", "boxed"])
def test_margins_are_shifted_standard_normals(mode):
    spec = DgpSpec("gumbel", 5000, mode=mode)
    v = simulate_values(spec, 8)
    mu = spec.mean_at(v[:, 2])
    for k in (0, 1):
        assert stats.kstest(v[:, k] - mu, "norm").pvalue > 0.01


def quintile_taus(v):
    x3 = v[:, 2]
    edges = np.quantile(x3, [0.2, 0.4, 0.6, 0.8])
    bins = np.searchsorted(edges, x3)
    z = v[:, :2] - x3[:, None]
    return [stats.kendalltau(z[bins == k, 0], z[bins == k, 1])[0] for k in range(5)], bins


@pytest.mark.parametrize("family", FAMILIES)
def test_zero_tau_design_is_conditionally_independent(family):
    taus, _ = quintile_taus(simulate_values(DgpSpec(family, 10_000, tau_max=0.0), 9))
    np.testing.assert_array_less(np.abs(taus), 0.03)


def test_pointwise_gaussian_top_quintile_tau():
    v = simulate_values(DgpSpec("gaussian", 10_000), 10)
    taus, bins = quintile_taus(v)
    target = stats.norm.cdf(v[bins == 4, 2]).mean()
    assert abs(taus[4] - target) <= 0.05
    assert np.all(np.diff(taus) > 0)


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------


def test_forced_p_values():
    spec = DgpSpec("gaussian", 20)
    never = mc_rejection(spec, lambda d, s: 1.0, reps=5)[0]
    always = mc_rejection(spec, lambda d, s: 0.0, reps=5)[0]
    assert never.rate == 0.0 and always.rate == 1.0
    assert never.R == 5 and len(never.p_values) == 5


def test_invalid_results_are_counted():
    def test(d, s):
        if s % 2:
            return TestResult("flip", value=1.0, valid=False, status="invalid")
        return TestResult("flip", value=1.0, p_value=0.01, boot_values=[0.5])

    cell = mc_rejection(DgpSpec("frank", 20), test, reps=20, seed=3)[0]
    assert cell.invalid + cell.rejections == 20
    assert 0 < cell.invalid < 20
    assert cell.rate == 1.0 and cell.mean_p == pytest.approx(0.01)


def test_mc_seeds_and_threads():
    seen = []

    def test(d, s):
        seen.append((d.values[0, 0], s))
        return [TestResult("a", value=d.values[0, 0], p_value=0.5, boot_values=[1.0]), TestResult("b", value=0.0, p_value=0.01, boot_values=[2.0])]

    spec = DgpSpec("clayton", 30)
    one = mc_rejection(spec, test, reps=6, seed=11, threads=1)
    three = mc_rejection(spec, test, reps=6, seed=11, threads=3)
    assert [c.stat_id for c in one] == ["a", "b"]
    for a, b in zip(one, three):
        assert a.statistics == b.statistics and a.p_values == b.p_values
    assert one[0].first_boot_values == [1.0] and one[1].rate == 1.0
    assert len({s for _, s in seen}) == 6
    assert all(s1 != s2 for (_, s1), (x, s2) in zip(seen, seen[1:]))


def test_mc_validation():
    with pytest.raises(ConfigError):
        mc_rejection(DgpSpec("gaussian", 10), lambda d, s: 1.0, reps=0)
    with pytest.raises(ConfigError):
        mc_rejection(DgpSpec("gaussian", 10), lambda d, s: 1.0, reps=1, alpha=1.0)


def test_write_table(tmp_path):
    cell = McCell("gaussian", "I_chi", "bootNP", 1.0, 500, 3, rejections=1, mean_p=0.4)
    path = tmp_path / "t.csv"
    write_table([cell], path)
    rows = list(csv.DictReader(open(path)))
    assert rows[0]["stat_id"] == "I_chi" and float(rows[0]["rejection_rate"]) == pytest.approx(1 / 3)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("CONDCOP_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("CONDCOP_THREADS", "4")
    assert worker_count() == 4 and worker_count(2) == 2
    with pytest.raises(ConfigError):
        worker_count(0)
