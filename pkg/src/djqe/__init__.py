"""Deep jump Q-evaluation: off-policy value estimation for continuous actions.

The action space ``[0, 1]`` is cut into grid intervals by penalized dynamic
programming over neural-network interval costs; a cross-fitted doubly
robust estimator then evaluates the target policy on the learned partition.
"""
from .core import (Dataset, EvalConfig, Interval, MlpSpec, Partition, Policy, ValidationError,
                   changepoint_hausdorff, partition_from_changepoints, read_csv, write_csv)
from .costs import CostCache
from .estimator import EvalReport, djqe_evaluate, fit_fold, select_gamma, split_folds
from .kernel import KernelSpec, bandwidth_grid, bandwidth_rescale, kernel_dr_value
from .partition import brute_force, exact_dp, pelt, solve
from .regressor import FittedModel, fit
from .synthetic import calibrate, gen_data, oracle_value, run_benchmark

__all__ = [
    "Dataset", "EvalConfig", "Interval", "MlpSpec", "Partition", "Policy", "ValidationError",
    "changepoint_hausdorff", "partition_from_changepoints", "read_csv", "write_csv", "CostCache",
    "EvalReport", "djqe_evaluate", "fit_fold", "select_gamma", "split_folds", "KernelSpec",
    "bandwidth_grid", "bandwidth_rescale", "kernel_dr_value", "brute_force", "exact_dp", "pelt",
    "solve", "FittedModel", "fit", "calibrate", "gen_data", "oracle_value", "run_benchmark",
]
