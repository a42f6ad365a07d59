"""Synthetic scenarios with known Q-functions, calibration, and the replication harness."""
from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .core import Dataset, EvalConfig, MlpSpec, Policy, ValidationError
from .estimator import EvalReport, djqe_evaluate, dr_summands
from .kernel import BANDWIDTH_MULTIPLIERS, bandwidth_grid, crossfit_kernel_values, fit_outcome_model
from .regressor import FittedModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scenario:
    """Data-generating law: ``X ~ Unif[low, high]^p``, ``A ~ Unif[0, 1]``, ``Y ~ N(Q(X, A), sd^2)``."""

    id: str
    min_p: int
    feature_low: float = -1.0
    feature_high: float = 1.0
    noise_sd: float = 1.0
    piecewise: bool = False
    breaks: tuple = ()


SCENARIOS = {
    "S1": Scenario("S1", 2, piecewise=True, breaks=(0.35, 0.65)),
    "S2": Scenario("S2", 1, piecewise=True, breaks=(0.25, 0.5, 0.75)),
    "S3": Scenario("S3", 1),
    "S4": Scenario("S4", 3),
    "TOY": Scenario("TOY", 1, feature_low=0.0, feature_high=1.0),
}

# representative actions inside each S1 piece
_S1_ACTIONS = (0.175, 0.5, 0.825)
_S2_ACTION = 0.1


def get_scenario(scenario) -> Scenario:
    if isinstance(scenario, Scenario):
        return scenario
    key = str(scenario).upper()
    if key not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    return SCENARIOS[key]


def _columns(x, need: int):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] < need:
        raise ValidationError(f"scenario needs at least {need} features, got {x.shape[1]}")
    return x


def q_true(scenario, x, a) -> np.ndarray:
    """Mean reward ``Q(x, a)``; ``x`` is one feature vector or an ``(n, p)`` matrix."""
    sc = get_scenario(scenario)
    single = np.ndim(x) == 1
    x = _columns(x, sc.min_p)
    a = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0],))
    x1 = x[:, 0]
    if sc.id == "S1":
        x2 = x[:, 1]
        out = np.where(a < 0.35, 1 + x1, np.where(a < 0.65, x1 - x2, 1 - x2))
    elif sc.id == "S2":
        out = np.select(
            [a < 0.25, a < 0.5, a < 0.75],
            [np.ones_like(x1), np.sin(2 * np.pi * x1), 0.5 - 8 * (x1 - 0.75) ** 2],
            0.5)
    elif sc.id in ("S3", "TOY"):
        out = 10 * np.maximum(a * a - 0.25, 0.0) * np.log(x1 + 2)
    else:
        x2, x3 = x[:, 1], x[:, 2]
        out = 0.2 * (8 + 4 * x1 - 2 * x2 - 2 * x3) - 2 * (1 + 0.5 * x1 + 0.5 * x2 - 2 * a) ** 2
    return float(out[0]) if single else out


def optimal_policy(scenario, x) -> np.ndarray:
    """Action maximizing ``Q(x, .)``; one fixed representative where the argmax is a set."""
    sc = get_scenario(scenario)
    single = np.ndim(x) == 1
    x = _columns(x, sc.min_p)
    n = x.shape[0]
    if sc.id == "S1":
        values = np.column_stack([q_true(sc, x, a) for a in _S1_ACTIONS])
        out = np.asarray(_S1_ACTIONS)[np.argmax(values, axis=1)]
    elif sc.id == "S2":
        out = np.full(n, _S2_ACTION)
    elif sc.id in ("S3", "TOY"):
        out = np.ones(n)
    else:
        out = np.clip((1 + 0.5 * x[:, 0] + 0.5 * x[:, 1]) / 2, 0.0, 1.0)
    return float(out[0]) if single else out


def toy_policy() -> Policy:
    return Policy(name="identity", fn=lambda x: np.clip(np.asarray(x)[:, 0], 0.0, 1.0))


def target_policy(scenario) -> Policy:
    """Policy evaluated in benchmarks: the optimal one, or ``pi(x) = x`` for TOY."""
    sc = get_scenario(scenario)
    if sc.id == "TOY":
        return toy_policy()
    return Policy(name=f"optimal-{sc.id}", fn=lambda x: optimal_policy(sc, x))


def closed_form_value(scenario) -> float:
    """``E max_a Q(X, a)`` in closed form."""
    sc = get_scenario(scenario)
    if sc.id == "S1":
        return 4.0 / 3.0
    if sc.id == "S2":
        return 1.0
    if sc.id == "S3":
        # E log(X + 2), X ~ Unif[-1, 1]
        return 7.5 * (3 * math.log(3) - 2) / 2
    if sc.id == "S4":
        return 1.6
    return 7.5 * (3 * math.log(3) - 2 * math.log(2) - 1)


def toy_values() -> tuple:
    """``(V1, V2)`` of ``pi(x) = x`` under TOY, split at ``pi(x) <= 0.5``."""
    v2, _ = integrate.quad(lambda t: 10 * (t * t - 0.25) * math.log(t + 2), 0.5, 1.0)
    return 0.0, v2


def target_value(scenario) -> float:
    sc = get_scenario(scenario)
    if sc.id == "TOY":
        return sum(toy_values())
    return closed_form_value(sc)


def _draw_features(sc: Scenario, n: int, p: int, rng) -> np.ndarray:
    return rng.uniform(sc.feature_low, sc.feature_high, size=(n, p))


def gen_data(scenario, n: int, p: int, seed: int = 0, noise_sd: Optional[float] = None) -> Dataset:
    sc = get_scenario(scenario)
    if p < sc.min_p:
        raise ValidationError(f"scenario {sc.id} needs p >= {sc.min_p}, got {p}")
    if n < 1:
        raise ValidationError("n must be >= 1")
    sd = sc.noise_sd if noise_sd is None else float(noise_sd)
    rng = np.random.default_rng(seed)
    x = _draw_features(sc, n, p, rng)
    a = rng.uniform(0.0, 1.0, size=n)
    noise = rng.standard_normal(n)
    y = q_true(sc, x, a) + sd * noise
    return Dataset(x, a, y)


def oracle_value(scenario, mc_samples: int = 10 ** 6, seed: int = 0,
                 return_stderr: bool = False):
    """Monte Carlo estimate of ``E max_a Q(X, a)``."""
    if mc_samples < 10 ** 4:
        raise ValidationError("mc_samples must be >= 10**4")
    sc = get_scenario(scenario)
    rng = np.random.default_rng(seed)
    x = _draw_features(sc, mc_samples, sc.min_p, rng)
    vals = q_true(sc, x, optimal_policy(sc, x))
    est = float(vals.mean())
    if return_stderr:
        return est, float(vals.std(ddof=1) / math.sqrt(mc_samples))
    return est


def toy_decomposition(dataset: Dataset, policy: Policy, fitted: EvalReport,
                      variant: Optional[str] = None) -> dict:
    """Split a cross-fitted estimate at ``pi(x) <= 0.5`` into ``v1 + v2``."""
    if fitted.contributions is None or fitted.plan is None:
        raise ValidationError("report carries no per-row contributions")
    contrib = fitted.contributions
    if variant is not None and variant != fitted.estimator_variant:
        contrib = np.zeros(dataset.n)
        for fold, test in zip(fitted.fitted, fitted.plan.folds):
            contrib[test] = dr_summands(dataset, test, fold, policy, variant)[0]
    low = policy.actions(dataset.features) <= 0.5
    return {"v1": float(np.sum(contrib * low) / dataset.n),
            "v2": float(np.sum(contrib * ~low) / dataset.n)}


# calibration -----------------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    """Semi-synthetic simulator fitted to a real dataset."""

    qhat: FittedModel
    sigma_hat: float
    features: np.ndarray
    actions: np.ndarray
    grid: int = 1000

    def mean_reward(self, x, a) -> np.ndarray:
        x = np.atleast_2d(x)
        a = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0],))
        return self.qhat.predict_many(np.column_stack([x, a]))

    def draw_rewards(self, x, a, seed: int = 0) -> np.ndarray:
        mean = self.mean_reward(x, a)
        return mean + self.sigma_hat * np.random.default_rng(seed).standard_normal(len(mean))

    def simulate(self, n: int, seed: int = 0) -> Dataset:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, len(self.actions), size=n)
        x, a = self.features[idx], self.actions[idx]
        r = self.mean_reward(x, a) + self.sigma_hat * rng.standard_normal(n)
        return Dataset(x, a, r)

    def optimal_actions(self, x) -> np.ndarray:
        """Grid argmax of the fitted Q over ``{j / grid}``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        levels = np.arange(self.grid + 1) / self.grid
        out = np.empty(x.shape[0])
        chunk = max(1, 200_000 // len(levels))
        for s in range(0, x.shape[0], chunk):
            xs = x[s:s + chunk]
            xa = np.column_stack([np.repeat(xs, len(levels), axis=0), np.tile(levels, len(xs))])
            vals = self.qhat.predict_many(xa).reshape(len(xs), len(levels))
            out[s:s + chunk] = levels[np.argmax(vals, axis=1)]
        return out

    def policy(self) -> Policy:
        return Policy(name="calibrated-optimal", fn=self.optimal_actions)

    def oracle_value(self, x) -> float:
        return float(np.mean(self.mean_reward(x, self.optimal_actions(x))))


def calibrate(dataset: Dataset, mlp_spec: MlpSpec, seed: int = 0, grid: int = 1000) -> Calibration:
    """Fit ``Q(x, a)`` on the full data and the residual spread around it."""
    qhat = fit_outcome_model(dataset, mlp_spec, seed)
    resid = dataset.rewards - qhat.predict_many(np.column_stack([dataset.features, dataset.actions]))
    sigma = float(np.std(resid, ddof=1)) if dataset.n > 1 else 0.0
    return Calibration(qhat, sigma, dataset.features, dataset.actions, grid)


# benchmark harness -------------------------------------------------------------

METHODS = ("djqe", "kernel-dr", "oracle")


@dataclass
class MethodSummary:
    method: str
    estimates: np.ndarray
    truth: float
    note: str = ""

    @property
    def reps(self) -> int:
        return len(self.estimates)

    @property
    def bias(self) -> float:
        return float(np.mean(self.estimates) - self.truth)

    @property
    def sd(self) -> float:
        return float(np.std(self.estimates, ddof=1)) if self.reps > 1 else 0.0

    @property
    def mse(self) -> float:
        return float(np.mean((self.estimates - self.truth) ** 2))


@dataclass
class BenchmarkResult:
    scenario: str
    n: int
    p: int
    reps: int
    seed: int
    truth: float
    summaries: list = field(default_factory=list)

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def rows(self) -> list:
        return [{"scenario": self.scenario, "n": self.n, "method": s.method, "bias": s.bias,
                 "sd": s.sd, "mse": s.mse, "reps": s.reps, "seed": self.seed}
                for s in self.summaries]


CSV_FIELDS = ["scenario", "n", "method", "bias", "sd", "mse", "reps", "seed"]


def results_to_csv(results: Sequence[BenchmarkResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for res in results:
        for row in res.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def format_table(results: Sequence[BenchmarkResult]) -> str:
    """Bias (sd) per method and sample size, one block per scenario."""
    lines = []
    by_scenario: dict = {}
    for res in results:
        by_scenario.setdefault(res.scenario, []).append(res)
    for scenario, group in by_scenario.items():
        group = sorted(group, key=lambda r: r.n)
        ns = [r.n for r in group]
        lines.append(f"Scenario {scenario}  V = {group[0].truth:.2f}")
        lines.append(f"{'method':<12}" + "".join(f"{'n=' + str(n):>18}" for n in ns))
        methods = list(dict.fromkeys(s.method for r in group for s in r.summaries))
        for method in methods:
            cells = []
            for r in group:
                s = r.summary(method)
                cells.append(f"{abs(s.bias):.3f}({s.sd:.3f})")
            lines.append(f"{method:<12}" + "".join(f"{c:>18}" for c in cells))
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class BenchmarkTask:
    scenario: str
    n: int
    p: int
    seed: int
    methods: tuple
    config: EvalConfig
    kernel: str
    kernel_mlp: MlpSpec
    multipliers: tuple = BANDWIDTH_MULTIPLIERS
    bandwidth: Optional[float] = None


def _run_replication(task: BenchmarkTask) -> dict:
    sc = get_scenario(task.scenario)
    data = gen_data(sc, task.n, task.p, task.seed)
    policy = target_policy(sc)
    out = {}
    for method in task.methods:
        if method == "oracle":
            out[method] = [target_value(sc)]
        elif method == "djqe":
            report = djqe_evaluate(data, policy, replace(task.config, seed=task.seed))
            out[method] = [report.value]
        elif method == "kernel-dr":
            if task.bandwidth is not None:
                hs = [task.bandwidth]
            else:
                hs = bandwidth_grid(data, task.multipliers)
            out[method] = crossfit_kernel_values(data, policy, hs, task.kernel_mlp, 1.0,
                                                 task.kernel, task.config.folds, task.seed)
        else:
            raise ValidationError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    return out


def run_benchmark(scenario, n: int, p: int, reps: int, methods=("djqe", "kernel-dr"),
                  config: EvalConfig = EvalConfig(), seed: int = 0, jobs: int = 1,
                  kernel: str = "gaussian", kernel_mlp: Optional[MlpSpec] = None,
                  multipliers=BANDWIDTH_MULTIPLIERS,
                  bandwidth: Optional[float] = None) -> BenchmarkResult:
    """Replicate each method ``reps`` times on fresh data and summarize bias, sd and MSE.

    Replication ``r`` uses data seed ``seed + r``. The kernel baseline is run
    at every bandwidth ``c * sd(A) * n**-0.2`` for ``c`` in ``multipliers``
    and the multiplier with the smallest MSE is reported; a fixed
    ``bandwidth`` replaces the grid.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    sc = get_scenario(scenario)
    if p < sc.min_p:
        raise ValidationError(f"scenario {sc.id} needs p >= {sc.min_p}, got {p}")
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(f"unknown method(s) {unknown}; valid: {', '.join(METHODS)}")
    if reps == 1:
        warnings.warn("a single replication has no spread; sd is reported as 0", stacklevel=2)
    multipliers = tuple(float(c) for c in multipliers)
    if not multipliers or any(not c > 0 for c in multipliers):
        raise ValidationError("bandwidth multipliers must be positive")
    if bandwidth is not None and not bandwidth > 0:
        raise ValidationError("bandwidth must be positive")
    tasks = [BenchmarkTask(sc.id, n, p, seed + r, methods, config, kernel,
                           kernel_mlp or config.mlp, multipliers, bandwidth)
             for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_replication, tasks))
    else:
        outputs = [_run_replication(t) for t in tasks]

    truth = target_value(sc)
    result = BenchmarkResult(sc.id, n, p, reps, seed, truth)
    for method in methods:
        est = np.array([o[method] for o in outputs])
        if method == "kernel-dr":
            mse = np.mean((est - truth) ** 2, axis=0)
            best = int(np.argmin(mse))
            note = f"h={bandwidth:g}" if bandwidth is not None else f"c={multipliers[best]:g}"
            result.summaries.append(MethodSummary(method, est[:, best], truth, note=note))
        else:
            result.summaries.append(MethodSummary(method, est[:, 0], truth))
    return result
