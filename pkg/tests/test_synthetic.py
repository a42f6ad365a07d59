import math

import numpy as np
import pytest
from scipy import integrate

from djqe.core import Dataset, EvalConfig, MlpSpec, Policy, ValidationError
from djqe.estimator import djqe_evaluate
from djqe.synthetic import (CSV_FIELDS, SCENARIOS, MethodSummary, calibrate, closed_form_value,
                            gen_data, optimal_policy, oracle_value, q_true, results_to_csv,
                            run_benchmark, target_value, toy_decomposition, toy_policy,
                            toy_values)


def test_q_examples():
    assert q_true("TOY", [0.0], 0.3) == 0.0
    assert q_true("S1", [0.2, -0.1, 0.7], 0.1) == pytest.approx(1.2)
    assert q_true("S4", [0.0, 0.0, 0.0, 0.4], 0.25) == pytest.approx(1.1)


def test_q_pieces():
    x = np.array([[0.3, -0.4], [-0.2, 0.6]])
    np.testing.assert_allclose(q_true("S1", x, 0.5), x[:, 0] - x[:, 1])
    np.testing.assert_allclose(q_true("S1", x, 0.9), 1 - x[:, 1])
    np.testing.assert_allclose(q_true("S2", x, 0.1), 1.0)
    np.testing.assert_allclose(q_true("S2", x, 0.3), np.sin(2 * np.pi * x[:, 0]))
    np.testing.assert_allclose(q_true("S2", x, 0.6), 0.5 - 8 * (x[:, 0] - 0.75) ** 2)
    np.testing.assert_allclose(q_true("S2", x, 0.8), 0.5)


def test_s3_flat_below_half():
    x = np.linspace(-1, 1, 41)[:, None]
    for a in np.linspace(0, 0.5, 26):
        assert np.all(q_true("S3", x, a) == 0.0)


def test_feature_dimension_checked():
    with pytest.raises(ValidationError):
        q_true("S4", [0.1, 0.2], 0.5)
    with pytest.raises(ValidationError):
        gen_data("S1", 10, 1)
    with pytest.raises(ValidationError):
        gen_data("S9", 10, 3)
    with pytest.raises(ValidationError):
        gen_data("S1", 0, 2)


def test_optimal_policy_examples():
    assert optimal_policy("S4", [1.0, 1.0, 0.0]) == 1.0
    assert optimal_policy("S4", [0.0, 0.0, 0.0]) == 0.5
    assert optimal_policy("S3", [-0.7]) == 1.0
    assert optimal_policy("S2", [0.4]) < 0.25
    # piece values 1.5, 0, 0.5: the first piece wins
    assert optimal_policy("S1", [0.5, 0.5]) < 0.35


@pytest.mark.parametrize("sid", ["S1", "S2", "S3", "S4", "TOY"])
def test_optimal_policy_beats_dense_grid(sid):
    x = np.random.default_rng(1).uniform(SCENARIOS[sid].feature_low, SCENARIOS[sid].feature_high,
                                         size=(200, SCENARIOS[sid].min_p))
    best = np.max(np.column_stack([q_true(sid, x, a) for a in np.linspace(0, 1, 2001)]), axis=1)
    np.testing.assert_allclose(q_true(sid, x, optimal_policy(sid, x)), best, atol=1e-6)


def test_closed_forms_independently():
    assert closed_form_value("S1") == pytest.approx(1 + 1 / 3)
    # 7.5 * E log(X + 2) with X ~ Unif[-1, 1], by quadrature
    e_log, _ = integrate.quad(lambda t: math.log(t + 2) / 2, -1, 1)
    assert closed_form_value("S3") == pytest.approx(7.5 * e_log, rel=1e-12)
    assert closed_form_value("S3") == pytest.approx(4.859, abs=1e-3)
    toy, _ = integrate.quad(lambda t: 7.5 * math.log(t + 2), 0, 1)
    assert closed_form_value("TOY") == pytest.approx(toy, rel=1e-12)
    v1, v2 = toy_values()
    assert v1 == 0.0
    assert v2 == pytest.approx(sum(toy_values()))
    assert target_value("TOY") == pytest.approx(v2)


@pytest.mark.parametrize("sid,published", [("S1", 1.33), ("S2", 1.00), ("S3", 4.86), ("S4", 1.60)])
def test_monte_carlo_matches_closed_form(sid, published):
    est, se = oracle_value(sid, mc_samples=200_000, seed=3, return_stderr=True)
    assert abs(est - closed_form_value(sid)) <= 3 * se + 1e-12
    assert round(closed_form_value(sid), 2) == published


def test_oracle_sample_floor():
    with pytest.raises(ValidationError):
        oracle_value("S1", mc_samples=100)


def test_gen_data_determinism_and_laws():
    a, b = gen_data("S4", 50, 4, seed=7), gen_data("S4", 50, 4, seed=7)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.rewards, b.rewards)
    assert not np.array_equal(a.rewards, gen_data("S4", 50, 4, seed=8).rewards)
    big = gen_data("S1", 100_000, 2, seed=0)
    assert abs(big.actions.mean() - 0.5) <= 0.01
    assert big.features.min() >= -1 and big.features.max() <= 1
    clean = gen_data("S2", 300, 1, seed=2, noise_sd=0.0)
    np.testing.assert_array_equal(clean.rewards, q_true("S2", clean.features, clean.actions))
    toy = gen_data("TOY", 1000, 1, seed=0)
    assert toy.features.min() >= 0
    noise = big.rewards - q_true("S1", big.features, big.actions)
    assert np.std(noise) == pytest.approx(1.0, abs=0.02)


def test_toy_decomposition_sums_and_empty_mask():
    data = gen_data("TOY", 60, 1, seed=1)
    report = djqe_evaluate(data, toy_policy(), EvalConfig(gamma=0.05, m=6))
    parts = toy_decomposition(data, toy_policy(), report)
    assert parts["v1"] + parts["v2"] == pytest.approx(report.value, abs=1e-12)
    low = Policy.constant(0.2)
    rep_low = djqe_evaluate(data, low, EvalConfig(gamma=0.05, m=6))
    assert toy_decomposition(data, low, rep_low)["v2"] == 0.0
    other = toy_decomposition(data, toy_policy(), report, variant="paper_literal")
    assert set(other) == {"v1", "v2"}


def test_calibration_noiseless_residual_small():
    data = gen_data("S4", 600, 3, seed=0, noise_sd=0.0)
    cal = calibrate(data, MlpSpec(epochs=1500, weight_decay=1e-4, hidden_width=20), seed=0)
    assert cal.sigma_hat <= 0.1


def test_calibration_simulator_spread_and_argmax():
    data = gen_data("S4", 600, 3, seed=1)
    cal = calibrate(data, MlpSpec(epochs=400, weight_decay=1e-4, hidden_width=20), seed=0, grid=1000)
    x0 = np.array([[0.1, -0.2, 0.3]])
    draws = cal.draw_rewards(np.repeat(x0, 100_000, axis=0), 0.4, seed=5)
    assert np.std(draws) == pytest.approx(cal.sigma_hat, rel=0.02)
    sim = cal.simulate(500, seed=3)
    assert sim.n == 500
    assert set(map(tuple, sim.features)).issubset(set(map(tuple, data.features)))
    # grid argmax agrees with a continuous maximizer of the same fitted function within 1/G
    xs = np.random.default_rng(0).uniform(-1, 1, size=(20, 3))
    grid_best = cal.optimal_actions(xs)
    fine = np.linspace(0, 1, 100_001)
    for x, g in zip(xs, grid_best):
        vals = cal.mean_reward(np.repeat(x[None, :], fine.size, axis=0), fine)
        assert abs(g - fine[np.argmax(vals)]) <= 1e-3 + 1e-9
    # and the fitted vertex sits near the true quadratic vertex
    assert np.mean(np.abs(grid_best - optimal_policy("S4", xs))) < 0.15


def test_zero_residual_calibration_reproduces_fit():
    data = gen_data("S4", 200, 3, seed=4)
    cal = calibrate(data, MlpSpec(epochs=50), seed=1)
    fitted = cal.mean_reward(data.features, data.actions)
    exact = Dataset(data.features, data.actions, fitted)
    cal2 = calibrate(exact, MlpSpec(epochs=50), seed=1)
    assert cal2.sigma_hat >= 0.0
    zero = type(cal)(cal.qhat, 0.0, data.features, data.actions)
    np.testing.assert_array_equal(zero.simulate(50, seed=2).rewards,
                                  zero.mean_reward(*_resampled(data, 50, 2)))


def _resampled(data, n, seed):
    idx = np.random.default_rng(seed).integers(0, data.n, size=n)
    return data.features[idx], data.actions[idx]


def test_mse_identity():
    s = MethodSummary("x", np.array([1.0, 1.5, 0.2, 0.9, 1.1]), 1.0)
    assert s.mse == pytest.approx(s.bias ** 2 + s.sd ** 2 * (s.reps - 1) / s.reps, abs=1e-12)


def test_benchmark_oracle_single_rep_warns():
    with pytest.warns(UserWarning):
        res = run_benchmark("S2", 50, 1, 1, methods=("oracle",))
    s = res.summary("oracle")
    assert s.bias == 0.0 and s.sd == 0.0


def test_benchmark_rows_and_identity():
    cfg = EvalConfig(gamma=0.1, m=5, mlp=MlpSpec(epochs=30))
    res = run_benchmark("S1", 60, 2, 3, methods=("djqe", "kernel-dr"), config=cfg, seed=2)
    text = results_to_csv([res])
    assert text.splitlines()[0] == ",".join(CSV_FIELDS)
    assert len(text.splitlines()) == 3
    for s in res.summaries:
        assert s.mse == pytest.approx(s.bias ** 2 + s.sd ** 2 * (s.reps - 1) / s.reps, abs=1e-9)
    assert res.summary("kernel-dr").note.startswith("c=")


def test_benchmark_input_errors():
    with pytest.raises(ValidationError):
        run_benchmark("S1", 60, 2, 2, methods=("djqe", "ipw"))
    with pytest.raises(ValidationError):
        run_benchmark("S1", 60, 2, 0)
    with pytest.raises(ValidationError):
        run_benchmark("S4", 60, 2, 2)
