"""Command-line front end: ``generate``, ``evaluate``, ``benchmark`` and ``calibrate``.

Settings are layered: built-in defaults, then a JSON file given with
``--config``, then explicit flags. Exit codes are 0 on success, 1 for
invalid input or usage, 2 for I/O failures and 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import (CV_RULES, Dataset, EvalConfig, MlpSpec, Policy, ValidationError, read_action_column,
                   read_csv, write_csv)
from .estimator import djqe_evaluate
from .kernel import BANDWIDTH_MULTIPLIERS, KERNELS
from .partition import dump_bellman
from .regressor import TrainingDivergedError
from .synthetic import (METHODS, SCENARIOS, calibrate, format_table, gen_data, get_scenario,
                        optimal_policy, results_to_csv, run_benchmark, target_value, toy_policy)

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("djqe")

# built-in values for settings that are not part of EvalConfig
DEFAULTS = {
    "scenario": "s1",
    "n": None,
    "p": 5,
    "reps": 20,
    "methods": "djqe,kernel-dr",
    "kernel": "gaussian",
    "bandwidth": None,
    "bandwidth_grid": None,
    "jobs": 1,
    "policy": None,
    "noise_sd": None,
    "sim_n": None,
    "grid": 1000,
}

EVAL_KEYS = ("m", "gamma", "gamma_grid", "folds", "seed", "partitioner", "estimator_variant",
             "clip_eps", "mlp_depth", "mlp_width", "mlp_epochs", "cv_rule")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage mistakes are input errors; 2 is reserved for I/O failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(text: str) -> list:
    names = [t.strip().lower() for t in str(text).split(",") if t.strip()]
    bad = [t for t in names if t not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {', '.join(bad) or '(none)'}; valid: {', '.join(METHODS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--config", type=Path, help="JSON file of settings; flags take precedence")
    g.add_argument("--m", type=int, help="grid resolution (default ceil(n/10))")
    g.add_argument("--gamma", type=float, help="fixed penalty; skips cross-validation")
    g.add_argument("--gamma-grid", type=_float_list, help="comma-separated penalties for cross-validation")
    g.add_argument("--folds", type=int, help="cross-fitting folds (default 2)")
    g.add_argument("--seed", type=int, help="master seed (default 0)")
    g.add_argument("--partitioner", choices=("pelt", "exact-dp"))
    g.add_argument("--estimator-variant", choices=("standard-dr", "paper-literal"))
    g.add_argument("--cv-rule", choices=tuple(r.replace("_", "-") for r in CV_RULES))
    g.add_argument("--clip-eps", type=float, help="propensity clip (default 0.05)")
    g.add_argument("--mlp-depth", type=int, help="hidden layers per network")
    g.add_argument("--mlp-width", type=int, help="units per hidden layer")
    g.add_argument("--mlp-epochs", type=int, help="training epochs per network")
    g.add_argument("--jobs", type=int, help="worker processes for benchmark replications")
    g.add_argument("--out", type=Path, help="output path (or prefix for calibrate)")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="djqe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[shared], help="write a synthetic dataset")
    gen.add_argument("--scenario", type=str.lower, choices=[s.lower() for s in SCENARIOS])
    gen.add_argument("--n", type=int)
    gen.add_argument("--p", type=int)
    gen.add_argument("--noise-sd", type=float)

    ev = sub.add_parser("evaluate", parents=[shared], help="estimate a policy's value from a CSV")
    ev.add_argument("--data", type=Path)
    ev.add_argument("--policy", help="constant:<a>, identity, optimal:<scenario>, or a file of actions")
    ev.add_argument("--dump-bellman", type=Path, metavar="PREFIX",
                    help="write each fold's Bellman table to PREFIX_fold<k>.csv")

    bench = sub.add_parser("benchmark", parents=[shared], help="replicate methods on a scenario")
    bench.add_argument("--scenario", type=str.lower, choices=[s.lower() for s in SCENARIOS])
    bench.add_argument("--n", type=_int_list, help="comma-separated sample sizes")
    bench.add_argument("--p", type=int)
    bench.add_argument("--reps", type=int)
    bench.add_argument("--methods", type=_methods, help=f"comma-separated subset of {','.join(METHODS)}")
    bench.add_argument("--kernel", choices=sorted(KERNELS))
    bench.add_argument("--bandwidth", type=float, help="fixed kernel bandwidth instead of the grid")
    bench.add_argument("--bandwidth-grid", type=_float_list,
                       help="bandwidth multipliers c in c*sd(A)*n^-0.2")

    cal = sub.add_parser("calibrate", parents=[shared], help="fit a simulator to a CSV")
    cal.add_argument("--data", type=Path)
    cal.add_argument("--sim-n", type=int, help="rows to simulate (default: input size)")
    cal.add_argument("--grid", type=int, help="argmax grid size for the optimal policy")
    return parser


def load_config_file(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be an object")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    known = set(DEFAULTS) | set(EVAL_KEYS) | {"out", "data", "dump_bellman"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"{path}: unknown setting(s) {', '.join(unknown)}")
    return doc


def merge_settings(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then flags that were actually given."""
    settings = dict(DEFAULTS)
    if args.config is not None:
        settings.update(load_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command", "verbose") or value is None:
            continue
        settings[key] = value
        # a fixed penalty on the command line replaces a grid from the file, and vice versa
        if key == "gamma":
            settings.pop("gamma_grid", None)
        elif key == "gamma_grid":
            settings.pop("gamma", None)
    for key in ("data", "out", "dump_bellman"):
        if settings.get(key) is not None:
            settings[key] = Path(settings[key])
    return settings


def eval_config(settings: dict) -> EvalConfig:
    """Build and validate an :class:`EvalConfig` from merged settings."""
    mlp = MlpSpec()
    for key, field_name in (("mlp_depth", "hidden_layers"), ("mlp_width", "hidden_width"),
                            ("mlp_epochs", "epochs")):
        if settings.get(key) is not None:
            mlp = replace(mlp, **{field_name: int(settings[key])})
    gamma = None
    if settings.get("gamma") is not None and settings.get("gamma_grid") is not None:
        raise ValidationError("give either a fixed gamma or a gamma grid, not both")
    if settings.get("gamma") is not None:
        gamma = float(settings["gamma"])
    elif settings.get("gamma_grid") is not None:
        grid = settings["gamma_grid"]
        gamma = tuple(_float_list(grid) if isinstance(grid, str) else grid)
    kwargs = {"mlp": mlp, "gamma": gamma}
    for key, name in (("m", "m"), ("folds", "folds"), ("seed", "seed"), ("clip_eps", "propensity_clip")):
        if settings.get(key) is not None:
            kwargs[name] = settings[key]
    for key in ("partitioner", "estimator_variant", "cv_rule"):
        if settings.get(key) is not None:
            kwargs[key] = str(settings[key]).replace("-", "_")
    return EvalConfig(**kwargs)


def parse_policy(spec: str, dataset: Dataset) -> Policy:
    """Resolve ``constant:<a>``, ``identity``, ``optimal:<scenario>`` or a file of actions."""
    if spec is None:
        raise ValidationError("evaluate needs --policy")
    text = str(spec)
    if text.startswith("constant:"):
        try:
            value = float(text.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"bad constant policy {text!r}") from None
        return Policy.constant((value - dataset.action_offset) / dataset.action_scale)
    if text == "identity":
        return toy_policy()
    if text.startswith("optimal:"):
        sc = get_scenario(text.split(":", 1)[1])
        if dataset.p < sc.min_p:
            raise ValidationError(f"scenario {sc.id} policy needs p >= {sc.min_p}")
        return Policy(name=f"optimal({sc.id})", fn=lambda x: optimal_policy(sc, x))
    path = Path(text)
    if not path.exists():
        raise ValidationError(
            f"unknown policy {text!r}: use constant:<a>, identity, optimal:<scenario>, or a file path")
    raw = read_action_column(path, check=False)
    table = (raw - dataset.action_offset) / dataset.action_scale
    if len(table) != dataset.n:
        raise ValidationError(f"{path}: {len(table)} actions for {dataset.n} rows")
    return Policy(name=str(path), table=table)


def _header(command: str, settings: dict, config: EvalConfig = None) -> str:
    shown = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(settings.items())}
    doc = {"command": command, "settings": shown}
    if config is not None:
        doc["config"] = config.to_dict()
    return "# " + json.dumps(doc, sort_keys=True)


def _require(settings: dict, *keys):
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-")
                                                                   for k in missing))


def cmd_generate(settings: dict) -> int:
    _require(settings, "n", "out")
    sc = get_scenario(settings["scenario"])
    seed = int(settings.get("seed") or 0)
    data = gen_data(sc, int(settings["n"]), int(settings["p"]), seed, settings.get("noise_sd"))
    write_csv(data, settings["out"])
    print(_header("generate", settings))
    print(f"wrote {data.n} rows x {data.p} features to {settings['out']}")
    print(f"oracle value {target_value(sc):.6f}")
    return EXIT_OK


def cmd_evaluate(settings: dict) -> int:
    _require(settings, "data", "policy")
    data = read_csv(settings["data"])
    policy = parse_policy(settings["policy"], data)
    config = eval_config(settings).resolve(data.n)
    report = djqe_evaluate(data, policy, config)
    doc = report.to_dict()
    doc["data"] = str(settings["data"])
    text = json.dumps(doc, indent=2)
    if settings.get("out") is not None:
        Path(settings["out"]).write_text(text + "\n", encoding="utf-8")
    if settings.get("dump_bellman") is not None:
        prefix = settings["dump_bellman"]
        for fold in report.fitted:
            dump_bellman(fold.solution, f"{prefix}_fold{fold.fold_id}.csv")
    print(_header("evaluate", settings, config))
    print(f"policy {policy.name}  value {report.value:.6f}  gamma {report.gamma:.6g}  "
          f"variant {report.estimator_variant}")
    for fold in doc["folds"]:
        print(f"  fold {fold['fold']}: {fold['n_intervals']} intervals, "
              f"change points {fold['changepoints']}")
    print(f"  propensity clip rate {report.clip_rate:.3f}")
    return EXIT_OK


def cmd_benchmark(settings: dict) -> int:
    _require(settings, "n")
    methods = settings["methods"]
    if isinstance(methods, str):
        try:
            methods = _methods(methods)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
    ns = settings["n"]
    ns = _int_list(ns) if isinstance(ns, str) else ([ns] if isinstance(ns, int) else list(ns))
    config = eval_config(settings)
    reps = int(settings["reps"])
    multipliers = settings.get("bandwidth_grid") or BANDWIDTH_MULTIPLIERS
    if isinstance(multipliers, str):
        multipliers = _float_list(multipliers)
    if reps == 1:
        print("warning: a single replication has no spread; sd is reported as 0", file=sys.stderr)
    results = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in ns:
            results.append(run_benchmark(settings["scenario"], n, int(settings["p"]), reps, methods,
                                         config, int(settings.get("seed") or 0),
                                         int(settings.get("jobs") or 1), settings["kernel"],
                                         multipliers=multipliers, bandwidth=settings.get("bandwidth")))
    csv_text = results_to_csv(results)
    if settings.get("out") is not None:
        Path(settings["out"]).write_text(csv_text, encoding="utf-8")
    print(_header("benchmark", settings, config))
    print(format_table(results))
    if settings.get("out") is None:
        print(csv_text, end="")
    return EXIT_OK


def cmd_calibrate(settings: dict) -> int:
    _require(settings, "data", "out")
    data = read_csv(settings["data"])
    config = eval_config(settings)
    cal = calibrate(data, config.mlp, seed=config.seed, grid=int(settings["grid"]))
    sim_n = int(settings.get("sim_n") or data.n)
    if sim_n < 1:
        raise ValidationError("--sim-n must be positive")
    sim = cal.simulate(sim_n, seed=config.seed + 1)
    pi_star = cal.optimal_actions(sim.features)
    value = float(np.mean(cal.mean_reward(sim.features, pi_star)))
    # everything is computed before the first file is written
    prefix = Path(settings["out"])
    data_path = prefix.with_name(prefix.name + "_data.csv")
    policy_path = prefix.with_name(prefix.name + "_policy.csv")
    info_path = prefix.with_name(prefix.name + "_calibration.json")
    write_csv(sim, data_path)
    policy_path.write_text("a\n" + "".join(f"{a!r}\n" for a in pi_star.tolist()), encoding="utf-8")
    info = {"sigma_hat": cal.sigma_hat, "n_input": data.n, "n_simulated": sim_n,
            "oracle_value": value, "grid": cal.grid, "data": str(data_path),
            "policy": str(policy_path), "config": config.to_dict()}
    info_path.write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    print(_header("calibrate", settings, config))
    print(f"sigma_hat {cal.sigma_hat:.6f}")
    print(f"simulated {sim_n} rows to {data_path}; optimal actions in {policy_path}")
    print(f"oracle value of the calibrated optimal policy {value:.6f}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "evaluate": cmd_evaluate, "benchmark": cmd_benchmark,
            "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = merge_settings(args)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"djqe: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationError as exc:
        print(f"djqe: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDivergedError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"djqe: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"djqe: I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
