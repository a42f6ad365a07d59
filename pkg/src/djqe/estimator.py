"""Deep jump Q-evaluation: cross-fitted doubly robust value of a target policy.

For each fold the complement is used to learn a grid partition of the
action space together with one outcome model and one propensity model per
interval; the fold itself is then scored with the doubly robust summand.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import Dataset, EvalConfig, Partition, Policy, ValidationError
from .costs import CostCache
from .partition import PartitionResult, solve
from .regressor import FittedModel, fit

logger = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# stream tags for derive_seed
_FOLDS, _COSTS, _PROPENSITY, _CV = 1, 2, 3, 4


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    def train_rows(self, fold: int) -> np.ndarray:
        return np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != fold]))

    def __len__(self):
        return len(self.folds)


def split_folds(n: int, n_folds: int, seed: int = 0) -> FoldPlan:
    """Seeded random split of ``range(n)`` into near-equal folds."""
    if n_folds < 2:
        raise ValidationError("need at least two folds")
    if n < n_folds:
        raise ValidationError(f"cannot split {n} samples into {n_folds} folds")
    perm = np.random.default_rng(derive_seed(seed, _FOLDS, n, n_folds)).permutation(n)
    return FoldPlan(tuple(np.sort(chunk) for chunk in np.array_split(perm, n_folds)), seed)


@dataclass(frozen=True)
class FittedFold:
    """Nuisance models learned on one training fold.

    ``q_models[j]`` and ``b_models[j]`` belong to ``partition.intervals[j]``.
    Propensity predictions are clipped to ``[clip, 1]`` whenever used.
    """

    partition: Partition
    q_models: tuple
    b_models: tuple
    fold_id: int = 0
    train_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    clip: float = 0.05
    objective: float = float("nan")
    gamma: float = float("nan")
    interval_counts: tuple = ()
    evaluations: int = 0
    solution: Optional[PartitionResult] = None

    def __post_init__(self):
        if not (len(self.q_models) == len(self.b_models) == len(self.partition)):
            raise ValidationError("need one outcome and one propensity model per interval")

    def propensity(self, j: int, features) -> np.ndarray:
        return np.clip(self.b_models[j].predict_many(features), self.clip, 1.0)


def fit_propensities(dataset: Dataset, rows, partition: Partition, config: EvalConfig,
                     seed: int) -> tuple:
    """Regress the interval indicator on the features over ``rows``, one model per interval."""
    rows = np.asarray(rows, dtype=int)
    x = dataset.features[rows]
    loc = partition.locate(dataset.actions[rows])
    spec = replace(config.mlp, output_clamp=1.0)
    everyone = np.ones(len(rows), dtype=bool)
    models = []
    for j, iv in enumerate(partition):
        target = (loc == j).astype(float)
        models.append(fit(x, target, everyone, spec, derive_seed(seed, iv.lo, iv.hi)))
    return tuple(models)


def fit_fold(dataset: Dataset, train_rows, config: EvalConfig, gamma: Optional[float] = None,
             fold_id: int = 0, cache: Optional[CostCache] = None) -> FittedFold:
    """Learn the partition and interval models on ``train_rows``.

    ``config`` must carry a resolved ``m``; ``gamma`` defaults to the
    config's scalar penalty. A prebuilt ``cache`` on the same rows may be
    passed to reuse interval fits across penalties.
    """
    train_rows = np.asarray(train_rows, dtype=int)
    if train_rows.size == 0:
        raise ValidationError("train_rows must be non-empty")
    config = config.resolve(dataset.n)
    if gamma is None:
        if len(config.gamma_grid) != 1:
            raise ValidationError("fit_fold needs a single gamma; run select_gamma first")
        gamma = config.gamma_grid[0]
    if cache is None:
        cache = CostCache(dataset, train_rows, config.m, config.mlp,
                          seed=derive_seed(config.seed, _COSTS, fold_id))
    result = solve(cache, config.m, gamma, config.partitioner)
    entries = [cache.cost(iv) for iv in result.partition]
    b_models = fit_propensities(dataset, train_rows, result.partition, config,
                                derive_seed(config.seed, _PROPENSITY, fold_id))
    return FittedFold(
        partition=result.partition,
        q_models=tuple(e.model for e in entries),
        b_models=b_models,
        fold_id=fold_id,
        train_rows=train_rows,
        clip=config.propensity_clip,
        objective=result.objective,
        gamma=gamma,
        interval_counts=tuple(e.n_samples for e in entries),
        evaluations=result.evaluations,
        solution=result,
    )


def dr_summands(dataset: Dataset, test_rows, fold: FittedFold, policy: Policy,
                variant: str = "standard_dr"):
    """Per-row doubly robust contributions, plus counts of propensities used and clipped.

    ``standard_dr`` pairs the plug-in term with the target action's interval;
    ``paper_literal`` pairs it with the logged action's interval.
    """
    if variant not in ("standard_dr", "paper_literal"):
        raise ValidationError(f"unknown estimator variant {variant!r}")
    test_rows = np.asarray(test_rows, dtype=int)
    if np.intersect1d(test_rows, fold.train_rows).size:
        raise ValidationError("test rows overlap the fold's training rows")
    x = dataset.features[test_rows]
    a = dataset.actions[test_rows]
    y = dataset.rewards[test_rows]
    target = policy.actions(x, rows=test_rows)
    in_target = fold.partition.locate(target)
    in_logged = fold.partition.locate(a)
    out = np.zeros(len(test_rows))
    clipped = used = 0
    for j in range(len(fold.partition)):
        q = fold.q_models[j].predict_many(x)
        raw_b = fold.b_models[j].predict_many(x)
        b = np.clip(raw_b, fold.clip, 1.0)
        hit_t = in_target == j
        hit_a = in_logged == j
        both = hit_t & hit_a
        clipped += int(np.count_nonzero((raw_b < fold.clip) & both))
        used += int(np.count_nonzero(both))
        plug = q * (hit_t if variant == "standard_dr" else hit_a)
        out += plug + np.where(both, (y - q) / b, 0.0)
    return out, used, clipped


def dr_partial_sum(dataset: Dataset, test_rows, fold: FittedFold, policy: Policy,
                   variant: str = "standard_dr") -> float:
    return float(dr_summands(dataset, test_rows, fold, policy, variant)[0].sum())


def heldout_loss(dataset: Dataset, rows, partition: Partition, models) -> float:
    """Summed piecewise squared error of interval models on ``rows``."""
    rows = np.asarray(rows, dtype=int)
    x = dataset.features[rows]
    y = dataset.rewards[rows]
    loc = partition.locate(dataset.actions[rows])
    total = 0.0
    for j, model in enumerate(models):
        hit = loc == j
        if hit.any():
            r = model.predict_many(x[hit]) - y[hit]
            total += float(r @ r)
    return total


def gamma_cv_fold_losses(dataset: Dataset, config: EvalConfig) -> dict:
    """Held-out piecewise loss of each candidate penalty on every CV split.

    Returns ``{gamma: array of per-split losses}``. One cost cache per split
    serves every penalty on the grid.
    """
    config = config.resolve(dataset.n)
    grid = config.gamma_grid
    plan = split_folds(dataset.n, config.cv_folds, derive_seed(config.seed, _CV))
    losses = {g: np.zeros(len(plan)) for g in grid}
    for k in range(len(plan)):
        train = plan.train_rows(k)
        cache = CostCache(dataset, train, config.m, config.mlp,
                          seed=derive_seed(config.seed, _CV, _COSTS, k))
        for g in grid:
            result = solve(cache, config.m, g, config.partitioner)
            models = [cache.model_for(iv) for iv in result.partition]
            losses[g][k] = heldout_loss(dataset, plan.folds[k], result.partition, models)
    return losses


def gamma_cv_losses(dataset: Dataset, config: EvalConfig) -> dict:
    """Mean held-out piecewise loss of each candidate penalty under K-fold CV."""
    return {g: float(v.mean()) for g, v in gamma_cv_fold_losses(dataset, config).items()}


def pick_gamma(fold_losses: dict, rule: str = "one_se") -> float:
    """Choose a penalty from per-split CV losses.

    ``min`` returns the penalty with the smallest mean loss; ``one_se``
    returns the largest penalty whose mean loss is within one standard
    error of that minimum. Exact ties go to the larger penalty.
    """
    means = {g: float(np.mean(v)) for g, v in fold_losses.items()}
    best_g = min(means, key=lambda g: (means[g], -g))
    best = means[best_g]
    slack = 1e-12 * max(1.0, abs(best))
    if rule == "one_se":
        v = np.asarray(fold_losses[best_g], dtype=float)
        if v.size > 1:
            slack += float(np.std(v, ddof=1) / np.sqrt(v.size))
    elif rule != "min":
        raise ValidationError(f"unknown cv rule {rule!r}")
    return max(g for g, loss in means.items() if loss <= best + slack)


def select_gamma(dataset: Dataset, config: EvalConfig) -> float:
    """Penalty chosen by cross-validation under ``config.cv_rule``."""
    config = config.resolve(dataset.n)
    grid = config.gamma_grid
    if len(grid) == 1:
        return grid[0]
    return pick_gamma(gamma_cv_fold_losses(dataset, config), config.cv_rule)


@dataclass
class EvalReport:
    """Outcome of :func:`djqe_evaluate`.

    ``contributions`` holds each row's doubly robust summand so that
    ``value == contributions.mean()``; it and ``fitted`` are kept in memory
    only and are not serialized.
    """

    value: float
    gamma: float
    estimator_variant: str
    folds: list
    clip_rate: float
    config: dict
    cv_losses: Optional[dict] = None
    policy: str = ""
    contributions: Optional[np.ndarray] = None
    fitted: list = field(default_factory=list)
    plan: Optional[FoldPlan] = None

    def to_dict(self) -> dict:
        doc = {
            "value": self.value,
            "gamma": self.gamma,
            "estimator_variant": self.estimator_variant,
            "policy": self.policy,
            "folds": self.folds,
            "diagnostics": {"propensity_clip_rate": self.clip_rate},
            "config": self.config,
        }
        if self.cv_losses is not None:
            doc["cv_losses"] = [{"gamma": g, "loss": l} for g, l in self.cv_losses.items()]
        return doc

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def djqe_evaluate(dataset: Dataset, policy: Policy, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Cross-fitted doubly robust estimate of the target policy's value."""
    config = config.resolve(dataset.n)
    cv_losses = None
    if len(config.gamma_grid) > 1:
        fold_losses = gamma_cv_fold_losses(dataset, config)
        cv_losses = {g: float(v.mean()) for g, v in fold_losses.items()}
        gamma = pick_gamma(fold_losses, config.cv_rule)
    else:
        gamma = config.gamma_grid[0]
    logger.debug("gamma=%g", gamma)

    plan = split_folds(dataset.n, config.folds, config.seed)
    contributions = np.zeros(dataset.n)
    fold_docs, fitted = [], []
    clipped_total = used_total = 0
    for k in range(len(plan)):
        fold = fit_fold(dataset, plan.train_rows(k), config, gamma=gamma, fold_id=k)
        test = plan.folds[k]
        summands, used, clipped = dr_summands(dataset, test, fold, policy,
                                              config.estimator_variant)
        contributions[test] = summands
        used_total += used
        clipped_total += clipped
        fitted.append(fold)
        fold_docs.append({
            "fold": k,
            "train_size": int(len(fold.train_rows)),
            "test_size": int(len(test)),
            "changepoints": fold.partition.changepoints,
            "n_intervals": len(fold.partition),
            "objective": fold.objective,
            "partial_sum": float(summands.sum()),
            "interval_sample_counts": list(fold.interval_counts),
            "cost_evaluations": fold.evaluations,
        })
    value = float(contributions.sum() / dataset.n)
    if not np.isfinite(value):
        raise ArithmeticError("value estimate is not finite")
    return EvalReport(
        value=value,
        gamma=gamma,
        estimator_variant=config.estimator_variant,
        folds=fold_docs,
        clip_rate=clipped_total / used_total if used_total else 0.0,
        config=config.to_dict(),
        cv_losses=cv_losses,
        policy=policy.name,
        contributions=contributions,
        fitted=fitted,
        plan=plan,
    )
