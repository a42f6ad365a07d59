"""End-to-end acceptance criteria, one test each, with a pass/fail line per criterion."""
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from cost_maps import segment_sse_map
from djqe.cli import main
from djqe.core import (Dataset, EvalConfig, Policy, changepoint_hausdorff,
                       partition_from_changepoints)
from djqe.estimator import FittedFold, djqe_evaluate, dr_partial_sum, fit_fold, select_gamma
from djqe.kernel import KernelSpec, bandwidth_grid, kernel_dr_value
from djqe.partition import brute_force, exact_dp, pelt
from djqe.regressor import constant_model, zero_model
from djqe.synthetic import (gen_data, oracle_value, q_true, run_benchmark, toy_decomposition,
                            toy_policy, toy_values)


def report(number: int, title: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_1_partitioner_oracle_equivalence():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, pruned_ok = 0.0, True
    for i in range(200):
        m = int(rng.integers(2, 11))
        gamma = float(rng.choice([0.0, 0.1, 1.0, 10.0]))
        cache = segment_sse_map(m, 10_000 + i)
        p, e, b = pelt(cache, m, gamma), exact_dp(cache, m, gamma), brute_force(cache, m, gamma)
        worst = max(worst, abs(p.objective - e.objective), abs(e.objective - b.objective))
        pruned_ok &= p.evaluations <= e.evaluations
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and pruned_ok and elapsed < 10
    assert report(1, "pelt = exact_dp = brute_force", ok,
                  f"max gap {worst:.1e}, pruned evals <= full: {pruned_ok}, {elapsed:.1f}s")


def test_2_changepoint_recovery():
    hits = []
    for seed in range(20):
        data = gen_data("S1", 2000, 2, seed=seed, noise_sd=0.0)
        cfg = EvalConfig(m=20, seed=seed)
        gamma = select_gamma(data, cfg)
        fold = fit_fold(data, np.arange(1000), cfg, gamma=gamma)
        taus = fold.partition.changepoints
        hits.append(len(fold.partition) == 3 and
                    changepoint_hausdorff(taus, [0.35, 0.65]) <= 2 / 20)
    ok = sum(hits) >= 18
    assert report(2, "noiseless S1 change points recovered", ok, f"{sum(hits)}/20 seeds (need 18)")


def test_3_oracle_values():
    targets = {"S1": 1.333, "S2": 1.000, "S3": 4.859, "S4": 1.600}
    got = {s: oracle_value(s, mc_samples=10 ** 6, seed=0) for s in targets}
    ok = all(abs(got[s] - targets[s]) <= 0.01 for s in targets)
    assert report(3, "Monte Carlo oracle values", ok,
                  ", ".join(f"{s}={v:.4f}" for s, v in got.items()))


@pytest.mark.slow
@pytest.mark.parametrize("scenario", ["S1", "S4"])
def test_4_benchmark_ordering(scenario):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_benchmark(scenario, 200, 5, 20, methods=("djqe", "kernel-dr"),
                            config=EvalConfig(), seed=0)
    dj, kd = res.summary("djqe"), res.summary("kernel-dr")
    ok = abs(dj.bias) < abs(kd.bias) and dj.mse < kd.mse
    assert report(4, f"{scenario} DJQE beats best-bandwidth kernel DR", ok,
                  f"djqe bias {dj.bias:+.3f} mse {dj.mse:.4f}; kernel-dr ({kd.note}) "
                  f"bias {kd.bias:+.3f} mse {kd.mse:.4f}")


def test_5_toy_behavior():
    _, v2_true = toy_values()
    policy = toy_policy()
    v2, unsplit, fits = [], 0, 0
    for seed in range(50):
        data = gen_data("TOY", 100, 1, seed=seed)
        rep = djqe_evaluate(data, policy, EvalConfig(seed=seed))
        v2.append(toy_decomposition(data, policy, rep)["v2"])
        for fold in rep.fitted:
            inside = [t for t in fold.partition.changepoints if 0.0 < t < 0.5]
            unsplit += len(inside) <= 1
            fits += 1
    bias = float(np.mean(v2) - v2_true)
    share = unsplit / fits
    ok = abs(bias) <= 0.5 and share >= 0.7
    assert report(5, "toy example", ok,
                  f"V2 bias {bias:+.3f} (sd {np.std(v2, ddof=1):.3f}), "
                  f"<=1 change point in (0, 0.5) in {share:.0%} of fold fits")


def _two_piece(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, size=(n, 2))
    a = rng.uniform(size=n)
    mean = np.where(a < 0.5, 1 + x[:, 0], x[:, 0] - x[:, 1])
    return Dataset(x, a, mean + rng.normal(size=n))


def test_6_double_robustness():
    # E[(1 + X1) 1(X1 < 0)] + E[(X1 - X2) 1(X1 >= 0)] = 0.25 + 0.25
    truth = 0.5
    policy = Policy("split", fn=lambda x: np.where(x[:, 0] < 0, 0.25, 0.75))
    part = partition_from_changepoints([5], 10)
    fold = FittedFold(partition=part, q_models=(zero_model(), zero_model()),
                      b_models=(constant_model(0.5, 1.0), constant_model(0.5, 1.0)),
                      train_rows=np.array([], dtype=int))
    medians = []
    for n in (250, 1000, 4000):
        errs = [abs(dr_partial_sum(d, np.arange(n), fold, policy) / n - truth)
                for d in (_two_piece(n, s) for s in range(10))]
        medians.append(float(np.median(errs)))
    ok = medians[0] > medians[1] > medians[2]
    assert report(6, "double robustness with true propensities", ok,
                  "median |error| " + " > ".join(f"{v:.4f}" for v in medians))


def test_7_kernel_correctness():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, size=(500, 3))
    a = rng.uniform(size=500)
    clean = Dataset(x, a, q_true("S4", x, a))
    pol = Policy("lin", fn=lambda z: np.clip((z[:, 0] + 1) / 2, 0, 1))
    exact = lambda xs, acts: q_true("S4", xs, acts)
    vals = [kernel_dr_value(clean, pol, exact, 1.0, KernelSpec("gaussian", h))
            for h in bandwidth_grid(clean)]
    spread = max(vals) - min(vals)
    noisy = Dataset(x, a, rng.normal(size=500))
    allpass = kernel_dr_value(noisy, Policy.constant(0.5), lambda xs, acts: np.zeros(len(acts)),
                              1.0, KernelSpec("boxcar", 0.5))
    gap = abs(allpass - noisy.rewards.mean())
    ok = spread <= 1e-12 and gap <= 1e-12
    assert report(7, "kernel baseline identities", ok,
                  f"bandwidth spread {spread:.1e}, all-pass gap {gap:.1e}")


def test_8_benchmark_determinism(tmp_path, capsys):
    args = ["benchmark", "--scenario", "s1", "--n", "80", "--p", "2", "--reps", "2",
            "--methods", "djqe,kernel-dr", "--seed", "3"]
    outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
    codes = [main(args + ["--out", str(o)]) for o in outs]
    capsys.readouterr()
    ok = codes == [0, 0] and outs[0].read_bytes() == outs[1].read_bytes()
    assert report(8, "benchmark CSV byte-identical across runs", ok,
                  f"exit codes {codes}, {len(outs[0].read_bytes())} bytes")
