"""Statistic identifiers, their constructors and default schemes."""

from __future__ import annotations

from .boxes import DEFAULT_BOXES, BoxNpStatistic, BoxParamStatistic
from .np_tests import DEFAULT_M, IndepCopulaStatistic, IndepStatistic, T0Grid, T0Pairwise, TCvMRandomWeight
from .param_tests import ParamStatistic
from .statistic import ConfigError, Statistic

__all__ = ["DEFAULT_SCHEME", "FAMILY_STATS", "STAT_IDS", "make_statistic"]

_BUILDERS = {
    "T0_KS_grid": lambda o: T0Grid("ks", m=o["grid_m"]),
    "T0_CvM_grid": lambda o: T0Grid("cvm", m=o["grid_m"]),
    "T0t_KS": lambda o: T0Pairwise("ks", m=o["grid_m"]),
    "T0t_CvM": lambda o: T0Pairwise("cvm", m=o["grid_m"]),
    "T_CvM_1": lambda o: TCvMRandomWeight("v1"),
    "T_CvM_2": lambda o: TCvMRandomWeight("v2"),
    "I_chi": lambda o: IndepStatistic("chi"),
    "I_KS": lambda o: IndepStatistic("ks"),
    "I_2n": lambda o: IndepStatistic("l2", m=o["grid_m"]),
    "I_CvM": lambda o: IndepStatistic("cvm"),
    "Ib_KS": lambda o: IndepCopulaStatistic("ks"),
    "Ib_2n": lambda o: IndepCopulaStatistic("l2"),
    "Ib_CvM": lambda o: IndepCopulaStatistic("cvm"),
    "T2_c": lambda o: ParamStatistic(o["family"], "t2", m=o["grid_m"]),
    "Tinf_c": lambda o: ParamStatistic(o["family"], "tinf", m=o["grid_m"]),
    "Tdist_c": lambda o: ParamStatistic(o["family"], "tdist", m=o["grid_m"]),
    "Tdens_c": lambda o: ParamStatistic(o["family"], "tdens", m=o["grid_m"]),
    "barT_KS": lambda o: BoxNpStatistic("ks", m=o["boxes_m"]),
    "barT_CvM": lambda o: BoxNpStatistic("cvm", m=o["boxes_m"]),
    "barT_dist": lambda o: BoxNpStatistic("dist", m=o["boxes_m"]),
    "barT2_c": lambda o: BoxParamStatistic(o["family"], "t2", m=o["boxes_m"]),
    "barTinf_c": lambda o: BoxParamStatistic(o["family"], "tinf", m=o["boxes_m"]),
    "barTdist_c": lambda o: BoxParamStatistic(o["family"], "tdist", m=o["boxes_m"]),
}

STAT_IDS = tuple(_BUILDERS)
FAMILY_STATS = ("T2_c", "Tinf_c", "Tdist_c", "Tdens_c", "barT2_c", "barTinf_c", "barTdist_c")
DEFAULT_SCHEME = {sid: ("bootPI" if sid in FAMILY_STATS else "bootNP") for sid in STAT_IDS}


def make_statistic(stat_id: str, family=None, grid_m: int = DEFAULT_M, boxes_m: int = DEFAULT_BOXES) -> Statistic:
    """Statistic object for an identifier such as ``"I_chi"`` or ``"barT2_c"``."""
    if stat_id not in _BUILDERS:
        raise ConfigError(f"unknown statistic {stat_id!r}; expected one of {', '.join(STAT_IDS)}")
    if stat_id in FAMILY_STATS and family is None:
        raise ConfigError(f"{stat_id} needs a copula family")
    return _BUILDERS[stat_id]({"family": family, "grid_m": int(grid_m), "boxes_m": int(boxes_m)})
