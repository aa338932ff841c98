"""Conditional copula estimation and tests of the simplifying assumption."""

from .bootstrap import BootstrapTest, SchemeSpec, bootstrap_tests, p_value, resample
from .boxes import BoxPartition, box_cml, box_cond_copula, box_copula_oracle, box_np_stat, box_param_stat, box_pseudo_sample, make_equiprob_boxes
from .catalog import DEFAULT_SCHEME, STAT_IDS, make_statistic
from .copulas import CopulaDomainError, CopulaFamily, CopulaModel
from .dgp import DgpSpec, McCell, mc_rejection, simulate, simulate_values
from .np_tests import indep_copula_stat, indep_stat, t0_grid, t0_pairwise, t_cvm_randomweight
from .param_tests import global_cml, local_cml, param_stat
from .smoothing import DataError, Dataset, EstimationError, KernelSpec, PseudoSample, cond_copula, cond_pseudo_obs, simplified_copula
from .statistic import ConfigError, SampleContext, Statistic, TestResult

__version__ = "0.1.0"

__all__ = [
    "BootstrapTest",
    "BoxPartition",
    "ConfigError",
    "CopulaDomainError",
    "CopulaFamily",
    "CopulaModel",
    "DEFAULT_SCHEME",
    "DataError",
    "Dataset",
    "DgpSpec",
    "EstimationError",
    "KernelSpec",
    "McCell",
    "PseudoSample",
    "STAT_IDS",
    "SampleContext",
    "SchemeSpec",
    "Statistic",
    "TestResult",
    "__version__",
    "bootstrap_tests",
    "box_cml",
    "box_cond_copula",
    "box_copula_oracle",
    "box_np_stat",
    "box_param_stat",
    "box_pseudo_sample",
    "cond_copula",
    "cond_pseudo_obs",
    "global_cml",
    "indep_copula_stat",
    "indep_stat",
    "local_cml",
    "make_equiprob_boxes",
    "make_statistic",
    "mc_rejection",
    "p_value",
    "param_stat",
    "resample",
    "simplified_copula",
    "simulate",
    "simulate_values",
    "t0_grid",
    "t0_pairwise",
    "t_cvm_randomweight",
]
