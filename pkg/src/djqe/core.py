"""Shared domain types: datasets, grid intervals, partitions, policies and run configuration."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


@dataclass(frozen=True)
class Dataset:
    """Logged bandit data ``(X, A, Y)`` with actions on the unit interval.

    Attributes
    ----------
    features : numpy.ndarray, shape (n, p)
    actions : numpy.ndarray, shape (n,)
        Actions in ``[0, 1]``.
    rewards : numpy.ndarray, shape (n,)
    action_offset, action_scale : float
        Affine map back to original action units: ``raw = offset + scale * a``.
    """

    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    action_offset: float = 0.0
    action_scale: float = 1.0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.actions, dtype=float).ravel()
        y = np.asarray(self.rewards, dtype=float).ravel()
        if x.ndim != 2:
            raise ValidationError("features must be a 2-d array")
        n = x.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one sample")
        if a.shape[0] != n or y.shape[0] != n:
            raise ValidationError(
                f"length mismatch: features {n}, actions {a.shape[0]}, rewards {y.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        if not np.all(np.isfinite(y)):
            raise ValidationError("rewards contain non-finite values")
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise ValidationError("actions must lie in [0, 1]; use Dataset.from_raw to normalize")
        for name, arr in (("features", x), ("actions", a), ("rewards", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_raw(cls, features, actions, rewards) -> "Dataset":
        """Build a dataset, min-max normalizing the actions onto ``[0, 1]``."""
        a = np.asarray(actions, dtype=float).ravel()
        if a.size == 0:
            raise ValidationError("dataset must contain at least one sample")
        if not np.all(np.isfinite(a)):
            raise ValidationError("actions contain non-finite values")
        lo, hi = float(a.min()), float(a.max())
        if lo >= 0.0 and hi <= 1.0:
            return cls(features, a, rewards)
        span = hi - lo
        if span == 0.0:
            normalized = np.zeros_like(a)
            span = 1.0
        else:
            normalized = np.clip((a - lo) / span, 0.0, 1.0)
        return cls(features, normalized, rewards, action_offset=lo, action_scale=span)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, features=self.features[rows], actions=self.actions[rows],
                       rewards=self.rewards[rows])

    def to_original_units(self, a):
        return self.action_offset + self.action_scale * np.asarray(a, dtype=float)


@dataclass(frozen=True, order=True)
class Interval:
    """Grid interval ``[lo/m, hi/m)``, closed on the right when ``hi == m``."""

    lo: int
    hi: int
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"grid resolution must be positive, got {self.m}")
        if not 0 <= self.lo < self.hi <= self.m:
            raise ValidationError(f"invalid interval lo={self.lo}, hi={self.hi}, m={self.m}")

    @property
    def left(self) -> float:
        return self.lo / self.m

    @property
    def right(self) -> float:
        return self.hi / self.m

    @property
    def length(self) -> float:
        return (self.hi - self.lo) / self.m

    def contains(self, a) -> Union[bool, np.ndarray]:
        """Vectorized membership test."""
        return interval_contains(self, a)

    def __str__(self):
        close = "]" if self.hi == self.m else ")"
        return f"[{self.left:g}, {self.right:g}{close}"


def interval_contains(iv: Interval, a):
    # a < hi/m written as a*m < hi keeps grid points exact
    a_arr = np.asarray(a, dtype=float)
    scaled = a_arr * iv.m
    inside = scaled >= iv.lo
    if iv.hi == iv.m:
        inside = inside & (a_arr <= 1.0)
    else:
        inside = inside & (scaled < iv.hi)
    if inside.ndim == 0:
        return bool(inside)
    return inside


def grid_index(a, m: int) -> np.ndarray:
    """Index ``j`` of the unit cell ``[j/m, (j+1)/m)`` holding each action; 1.0 maps to ``m - 1``."""
    idx = np.floor(np.asarray(a, dtype=float) * m).astype(int)
    return np.clip(idx, 0, m - 1)


@dataclass(frozen=True)
class Partition:
    """Ordered, contiguous cover of ``[0, 1]`` by grid intervals."""

    intervals: tuple

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if not ivs:
            raise ValidationError("a partition needs at least one interval")
        m = ivs[0].m
        if ivs[0].lo != 0 or ivs[-1].hi != m:
            raise ValidationError("partition must start at 0 and end at m")
        for left, right in zip(ivs, ivs[1:]):
            if left.m != m or right.m != m:
                raise ValidationError("all intervals must share one grid")
            if left.hi != right.lo:
                raise ValidationError("intervals must be contiguous and disjoint")
        object.__setattr__(self, "intervals", ivs)

    @property
    def m(self) -> int:
        return self.intervals[0].m

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    @property
    def changepoint_indices(self) -> list:
        return [iv.lo for iv in self.intervals[1:]]

    @property
    def changepoints(self) -> list:
        """Interior endpoints as fractions of the unit interval."""
        return [j / self.m for j in self.changepoint_indices]

    def locate(self, a) -> np.ndarray:
        """Position (within ``intervals``) of the interval containing each action."""
        cells = grid_index(a, self.m)
        return np.searchsorted(np.asarray(self.changepoint_indices, dtype=int), cells, side="right")

    def __str__(self):
        return " ".join(str(iv) for iv in self.intervals)


def partition_from_changepoints(taus: Sequence[int], m: int) -> Partition:
    taus = [int(t) for t in taus]
    for t in taus:
        if not 0 < t < m:
            raise ValidationError(f"change point {t} outside (0, {m})")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ValidationError(f"change points must be strictly increasing: {taus}")
    edges = [0, *taus, m]
    return Partition(tuple(Interval(lo, hi, m) for lo, hi in zip(edges, edges[1:])))


def changepoint_hausdorff(estimated, truth) -> float:
    """Largest distance from a true change point to its nearest estimated one.

    Both arguments may be :class:`Partition` objects or plain sequences of
    change-point locations in ``[0, 1]``. Returns ``inf`` when nothing was
    estimated.
    """
    est = estimated.changepoints if isinstance(estimated, Partition) else list(estimated)
    tru = truth.changepoints if isinstance(truth, Partition) else list(truth)
    if not tru:
        raise ValidationError("truth must contain at least one change point")
    if not est:
        return math.inf
    est_arr = np.asarray(est, dtype=float)
    return float(max(np.min(np.abs(est_arr - t)) for t in tru))


@dataclass(frozen=True)
class Policy:
    """Deterministic target policy.

    Either ``fn`` maps an ``(n, p)`` feature matrix to actions, or ``table``
    holds one pre-computed action per dataset row.
    """

    name: str
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    table: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.fn is None) == (self.table is None):
            raise ValidationError("policy needs exactly one of fn or table")
        if self.table is not None:
            t = np.asarray(self.table, dtype=float).ravel()
            _check_actions(t)
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    def actions(self, features: np.ndarray, rows=None) -> np.ndarray:
        """Actions for ``features``; ``rows`` selects table entries for tabulated policies."""
        if self.table is not None:
            out = self.table if rows is None else self.table[np.asarray(rows)]
            if len(out) != len(features):
                raise ValidationError("tabulated policy length does not match the data")
            return out
        out = np.asarray(self.fn(np.atleast_2d(features)), dtype=float).ravel()
        _check_actions(out)
        return out

    def __call__(self, x) -> float:
        return float(self.actions(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    @classmethod
    def constant(cls, value: float) -> "Policy":
        value = float(value)
        _check_actions(np.array([value]))
        return cls(name=f"constant({value:g})", fn=lambda x: np.full(len(x), value))


def _check_actions(a: np.ndarray):
    if not np.all(np.isfinite(a)) or a.min(initial=0.0) < 0.0 or a.max(initial=0.0) > 1.0:
        raise ValidationError("policy actions must lie in [0, 1]")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture and training budget for interval regressors.

    ``hidden_layers`` is the network depth; it is unrelated to the number of
    cross-fitting folds. ``output_clamp`` of ``None`` means ``2 * max|y|`` of
    the training targets. A positive ``validation_fraction`` holds out that
    share of each fit's rows for early stopping and for a held-out
    comparison against the constant mean; the default 0 trains on every
    row for the full epoch budget. Held-out fitting regularizes small
    intervals but makes interval costs far from superadditive, which
    breaks the exactness of pruned partitioning.
    """

    hidden_layers: int = 1
    hidden_width: int = 10
    epochs: int = 200
    learning_rate: float = 0.03
    batch_size: Optional[int] = None
    weight_decay: float = 0.1
    validation_fraction: float = 0.0
    output_clamp: Optional[float] = None

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1:
            raise ValidationError("hidden_layers and hidden_width must be >= 1")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValidationError("epochs must be >= 0 and learning_rate > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("batch_size must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValidationError("validation_fraction must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.output_clamp is not None and not self.output_clamp > 0:
            raise ValidationError("output_clamp must be positive")


GAMMA_MULTIPLIERS = (0.1, 0.2, 0.3, 0.4, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)
ESTIMATOR_VARIANTS = ("standard_dr", "paper_literal")
PARTITIONERS = ("pelt", "exact_dp")
CV_RULES = ("one_se", "min")


def default_m(n: int) -> int:
    return max(2, math.ceil(n / 10))


def default_gamma_grid(n: int) -> list:
    """Penalty grid ``c * n**0.4`` expressed per training sample.

    The multipliers penalize the summed squared error; dividing by ``n``
    puts them on the scale of the fold-normalized interval costs. The base
    multipliers ``0.1 ... 0.5`` are followed by the same values times ten,
    because at a few hundred noisy samples the held-out loss keeps falling
    past the top of the base range.
    """
    return [c * n ** 0.4 / n for c in GAMMA_MULTIPLIERS]


@dataclass(frozen=True)
class EvalConfig:
    """Configuration of a DJQE run.

    ``m`` and ``gamma`` of ``None`` resolve from the dataset size through
    :meth:`resolve`. A scalar ``gamma`` is used as-is; a sequence triggers
    cross-validated selection. ``cv_rule`` picks from the cross-validated
    losses: ``min`` takes the smallest mean loss, ``one_se`` the largest
    penalty whose mean loss is within one standard error of that minimum.
    """

    m: Optional[int] = None
    gamma: Union[None, float, tuple] = None
    folds: int = 2
    mlp: MlpSpec = field(default_factory=MlpSpec)
    seed: int = 0
    propensity_clip: float = 0.05
    estimator_variant: str = "standard_dr"
    partitioner: str = "pelt"
    cv_folds: int = 5
    cv_rule: str = "one_se"

    def __post_init__(self):
        if self.m is not None and self.m < 2:
            raise ValidationError("m must be >= 2")
        if self.folds < 2:
            raise ValidationError("number of folds must be >= 2")
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be >= 2")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if not 0.0 < self.propensity_clip < 0.5:
            raise ValidationError("propensity_clip must lie in (0, 0.5)")
        if self.estimator_variant not in ESTIMATOR_VARIANTS:
            raise ValidationError(f"estimator_variant must be one of {ESTIMATOR_VARIANTS}")
        if self.partitioner not in PARTITIONERS:
            raise ValidationError(f"partitioner must be one of {PARTITIONERS}")
        if self.cv_rule not in CV_RULES:
            raise ValidationError(f"cv_rule must be one of {CV_RULES}")
        if self.gamma is not None:
            if np.ndim(self.gamma) == 0:
                g = float(self.gamma)
                if not g >= 0:
                    raise ValidationError("gamma must be >= 0")
                object.__setattr__(self, "gamma", g)
            else:
                grid = tuple(float(g) for g in self.gamma)
                if not grid or any(not g >= 0 for g in grid):
                    raise ValidationError("gamma grid must be non-empty with entries >= 0")
                object.__setattr__(self, "gamma", grid)

    def resolve(self, n: int) -> "EvalConfig":
        """Fill in data-dependent defaults for a dataset of size ``n``."""
        m = self.m if self.m is not None else default_m(n)
        gamma = self.gamma if self.gamma is not None else tuple(default_gamma_grid(n))
        return replace(self, m=m, gamma=gamma)

    @property
    def gamma_grid(self) -> tuple:
        if self.gamma is None:
            raise ValidationError("config not resolved")
        return self.gamma if isinstance(self.gamma, tuple) else (self.gamma,)

    def to_dict(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        if isinstance(d["gamma"], tuple):
            d["gamma"] = list(d["gamma"])
        return d


# CSV -------------------------------------------------------------------------

def read_csv(path) -> Dataset:
    """Load ``x_1,...,x_p,a,y`` rows; actions are min-max normalized on load."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[-2:] != ["a", "y"]:
            raise ValidationError(f"{path}: header must be x_1,...,x_p,a,y")
        expected = [f"x_{j}" for j in range(1, len(header) - 1)]
        if header[:-2] != expected:
            raise ValidationError(f"{path}: feature columns must be named {expected}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise ValidationError(f"{path}: row {lineno} has a non-numeric field") from None
            if not all(math.isfinite(v) for v in values):
                raise ValidationError(f"{path}: row {lineno} has a non-finite field")
            rows.append(values)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = np.array(rows)
    return Dataset.from_raw(data[:, :-2], data[:, -2], data[:, -1])


def write_csv(dataset: Dataset, path, raw_actions: bool = False):
    path = Path(path)
    header = [f"x_{j}" for j in range(1, dataset.p + 1)] + ["a", "y"]
    actions = dataset.to_original_units(dataset.actions) if raw_actions else dataset.actions
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, a, y in zip(dataset.features, actions, dataset.rewards):
            w.writerow([repr(float(v)) for v in x] + [repr(float(a)), repr(float(y))])


def read_action_column(path, check: bool = True) -> np.ndarray:
    """Tabulated policy: one action per line, optional header ``a``.

    ``check=False`` skips the ``[0, 1]`` range test, for columns in raw units.
    """
    values = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or (lineno == 1 and s in ("a", "action", "pi")):
                continue
            try:
                values.append(float(s))
            except ValueError:
                raise ValidationError(f"{path}: line {lineno} is not a number") from None
    arr = np.array(values)
    if check:
        _check_actions(arr)
    return arr
