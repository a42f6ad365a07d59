"""Kernel-smoothed doubly robust baseline for continuous actions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .core import Dataset, MlpSpec, Policy, ValidationError
from .regressor import FittedModel, fit

BANDWIDTH_MULTIPLIERS = (0.5, 0.75, 1.0, 1.5)

_SQRT_2PI = np.sqrt(2.0 * np.pi)


def gaussian(u):
    return np.exp(-0.5 * u * u) / _SQRT_2PI


def epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def boxcar(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


KERNELS = {"gaussian": gaussian, "epanechnikov": epanechnikov, "boxcar": boxcar}


@dataclass(frozen=True)
class KernelSpec:
    kernel: str = "gaussian"
    bandwidth: float = 0.1

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValidationError(f"kernel must be one of {sorted(KERNELS)}")
        if not self.bandwidth > 0:
            raise ValidationError("bandwidth must be positive")

    def weight(self, u) -> np.ndarray:
        return KERNELS[self.kernel](np.asarray(u, dtype=float))


OutcomeModel = Union[FittedModel, Callable[[np.ndarray, np.ndarray], np.ndarray]]


def _outcome(qhat: OutcomeModel, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    if isinstance(qhat, FittedModel):
        return qhat.predict_many(np.column_stack([x, a]))
    return np.asarray(qhat(x, a), dtype=float) * np.ones(len(a))


def _density(bhat, x: np.ndarray, a: np.ndarray) -> np.ndarray:
    if callable(bhat):
        dens = np.asarray(bhat(x, a), dtype=float) * np.ones(len(a))
    else:
        dens = np.full(len(a), float(bhat))
    if not np.all(np.isfinite(dens)) or np.any(dens <= 0):
        raise ValidationError("behavior density must be positive on the sample")
    return dens


def kernel_dr_summands(dataset: Dataset, policy: Policy, qhat: OutcomeModel, bhat_density,
                       spec: KernelSpec) -> np.ndarray:
    """Per-row terms ``q(x, pi(x)) + K((a - pi(x)) / h) / (h b(a|x)) * (y - q(x, a))``."""
    x, a, y = dataset.features, dataset.actions, dataset.rewards
    target = policy.actions(x)
    dens = _density(bhat_density, x, a)
    h = spec.bandwidth
    weight = spec.weight((a - target) / h) / (h * dens)
    return _outcome(qhat, x, target) + weight * (y - _outcome(qhat, x, a))


def kernel_dr_value(dataset: Dataset, policy: Policy, qhat: OutcomeModel, bhat_density,
                    spec: KernelSpec) -> float:
    """Kernel-smoothed doubly robust value estimate.

    Parameters
    ----------
    qhat : FittedModel over ``(x, a)`` inputs, or callable ``(X, A) -> values``
    bhat_density : float or callable ``(X, A) -> densities``
        Behavior density of the logged action; must be positive.
    spec : KernelSpec
    """
    return float(np.mean(kernel_dr_summands(dataset, policy, qhat, bhat_density, spec)))


def bandwidth_grid(dataset_or_actions, multipliers=BANDWIDTH_MULTIPLIERS) -> list:
    """Bandwidths ``c * sd(A) * n**-0.2`` for each multiplier ``c``."""
    if isinstance(dataset_or_actions, Dataset):
        a = dataset_or_actions.actions
    else:
        a = np.asarray(dataset_or_actions, dtype=float).ravel()
    n = a.size
    if n < 2:
        raise ValidationError("bandwidth grid needs at least two actions")
    if np.ptp(a) == 0.0:
        raise ValidationError("actions have zero variance")
    sd = float(np.std(a, ddof=1))
    return [c * sd * n ** -0.2 for c in multipliers]


def bandwidth_rescale(h_star: float, n0: int, n: int) -> float:
    """Carry a bandwidth tuned at sample size ``n0`` over to size ``n``."""
    if h_star <= 0 or n0 <= 0 or n <= 0:
        raise ValidationError("bandwidth and sample sizes must be positive")
    return h_star * (n0 / n) ** 0.2


def fit_outcome_model(dataset: Dataset, spec: MlpSpec, seed: int = 0) -> FittedModel:
    """One network over the joint ``(x, a)`` input."""
    xa = np.column_stack([dataset.features, dataset.actions])
    return fit(xa, dataset.rewards, np.ones(dataset.n, dtype=bool), spec, seed)


def crossfit_kernel_values(dataset: Dataset, policy: Policy, bandwidths, mlp: MlpSpec,
                           bhat_density=1.0, kernel: str = "gaussian", folds: int = 2,
                           seed: int = 0) -> list:
    """Cross-fitted kernel DR estimates, one per bandwidth.

    The outcome network is trained on the complement of each fold and
    scores only that fold, so no row is evaluated by a model that saw it.
    """
    from .estimator import derive_seed, split_folds

    plan = split_folds(dataset.n, folds, seed)
    totals = np.zeros(len(bandwidths))
    for k, test in enumerate(plan.folds):
        qhat = fit_outcome_model(dataset.subset(plan.train_rows(k)), mlp, derive_seed(seed, 7, k))
        part = dataset.subset(test)
        for i, h in enumerate(bandwidths):
            totals[i] += kernel_dr_summands(part, policy, qhat, bhat_density,
                                            KernelSpec(kernel, h)).sum()
    return [float(t / dataset.n) for t in totals]
