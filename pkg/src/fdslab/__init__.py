"""Flow-matching toy laboratory.

Exact oracle velocity fields over empirical targets, a trainable MLP velocity
network, divergence-guided sampling refinement, and Wasserstein evaluation.
"""
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import GridSpec, discrepancy_map, map_spearman, wasserstein, wd_over_time
from .mlp import MlpField, TrainConfig, cfm_loss, train
from .oracle import DiscrepancyReport, OracleField
from .sampler import FdsConfig, RunRecord, euler_step, heun_step, refine, run_pipeline, uniform_grid
from .schedules import LinearSchedule, Schedule, SigmaSchedule, TabulatedSchedule, sigma_at
from .targets import (
    CheckerboardTarget,
    EmpiricalTarget,
    GaussianMixtureTarget,
    SinglePointTarget,
    draw_interpolant,
    sample_path_points,
    sample_prior,
    sample_target,
)

__version__ = "0.1.0"
