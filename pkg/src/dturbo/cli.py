"""``dturbo`` command-line interface.

Subcommands::

    dturbo recover --config c.json --out dir/ [overrides]
    dturbo evolve --config c.json [--out dir/] [overrides]
    dturbo operator-check --n 64 --m 32 --seed 0 [--transform DCT] [--variant SIGN_FLIPPED]
    dturbo qq --config c.json --out qq.csv [--iteration 2]

Flags override the matching config fields; ``--set a.b=value`` overrides any
field (the value is parsed as JSON when possible).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error, 1 operator check failed.
"""

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .errors import ConfigError, DegenerateExtrinsic, PGMError, SolveFailure
from .experiments import ExperimentConfig, ExperimentKind, build_problem, recover, run_evolution, run_experiment
from .sensing import build_operator

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

# flag name -> config path
_OVERRIDES = {
    "experiment": "experiment",
    "rate": "operator.rate",
    "m": "operator.m",
    "transform": "operator.transform",
    "variant": "operator.variant",
    "operator_seed": "operator.seed",
    "noise_variance": "noise.variance",
    "epsilon": "stopping.epsilon",
    "max_iters": "stopping.max_iters",
    "engine": "engine",
    "seed": "seed",
    "image": "signal.path",
    "mc_trials": "evolution.mc_trials",
}


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_path(raw, path, value):
    keys = path.split(".")
    node = raw
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise ConfigError("cannot set a field inside a non-object", path)
        node = child
    node[keys[-1]] = value


def apply_overrides(raw, args):
    """Config dict with command-line flags applied on top."""
    raw = copy.deepcopy(raw)
    for flag, path in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            _set_path(raw, path, value)
    if getattr(args, "denoiser", None):
        raw["denoiser"] = {"kind": args.denoiser, "params": {}}
    for item in getattr(args, "set", None) or []:
        path, sep, text = item.partition("=")
        if not sep or not path:
            raise ConfigError(f"expected key=value, got {item!r}", "--set")
        _set_path(raw, path, _parse_value(text))
    return raw


def _load_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    return ExperimentConfig.from_dict(apply_overrides(raw, args))


def _add_config_flags(p):
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--experiment", choices=[k.value for k in ExperimentKind])
    p.add_argument("--rate", type=float, help="measurement rate m/n")
    p.add_argument("--m", type=int, help="number of measurements (overrides --rate)")
    p.add_argument("--transform", choices=["DCT", "HAAR"])
    p.add_argument("--variant", choices=["PLAIN", "SIGN_FLIPPED"])
    p.add_argument("--operator-seed", type=int)
    p.add_argument("--denoiser", choices=["MMSE_BG", "SURE_LET", "SVT", "BLACK_BOX", "SOFT_THRESHOLD"])
    p.add_argument("--engine", choices=["d_turbo", "turbo"])
    p.add_argument("--noise-variance", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--image", help="input image path (IMAGE experiments) or 'fixture'")
    p.add_argument("--mc-trials", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config field")


def cmd_recover(args):
    config = _load_config(args)
    out = args.out or config.output_dir
    report = run_experiment(config, out)
    summary = report.to_dict()
    print(json.dumps({k: summary[k] for k in ("final_nmse_db", "final_psnr_db", "iterations", "converged")}))
    return EXIT_OK


def cmd_evolve(args):
    config = _load_config(args)
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ev = run_evolution(config, horizon=args.horizon)
    ev.write_csv(out / "evolution.csv")
    print(out / "evolution.csv")
    return EXIT_OK


def operator_check(n, m, seed, transform="DCT", variant=None, tol=1e-10):
    """Orthonormality checks on one or both operator variants; returns failure messages."""
    failures = []
    variants = [variant] if variant else ["PLAIN", "SIGN_FLIPPED"]
    rng = np.random.default_rng(seed)
    for var in variants:
        op = build_operator(n, m, transform, var, seed)
        if n <= 4096:
            A = op.materialize()
            gram_err = np.abs(A @ A.T - np.eye(m)).max()
        else:
            # sample A A^T on random probes instead of forming A
            Y = rng.standard_normal((m, 8))
            gram_err = max(np.abs(op.apply(op.adjoint(Y[:, k])) - Y[:, k]).max() for k in range(8))
        x = rng.standard_normal(n)
        y = rng.standard_normal(m)
        adj_err = abs(op.apply(x) @ y - x @ op.adjoint(y)) / max(1.0, np.linalg.norm(x) * np.linalg.norm(y))
        for name, err in (("A A^T = I", gram_err), ("<Ax, y> = <x, A^T y>", adj_err)):
            status = "ok" if err <= tol else "FAILED"
            print(f"{var:13s} {name:22s} max error {err:.3e} {status}")
            if err > tol:
                failures.append(f"{var}: {name}")
    return failures


def cmd_operator_check(args):
    if not 1 <= args.m <= args.n:
        raise ConfigError(f"need 1 <= m <= n, got m={args.m}, n={args.n}", "m")
    try:
        failures = operator_check(args.n, args.m, args.seed, args.transform, args.variant)
    except ValueError as exc:
        raise ConfigError(str(exc), "transform") from None
    return EXIT_OK if not failures else EXIT_CHECK_FAILED


def cmd_qq(args):
    """QQ table of the standardized Module-A error at one iteration."""
    config = _load_config(args)
    captured = {}

    def grab(t, state):
        if t == args.iteration:
            captured.update(state)

    problem = build_problem(config)
    recover(config, problem, callback=grab)
    if not captured:
        raise ConfigError(f"recovery stopped before iteration {args.iteration}", "--iteration")
    err = (captured["x_B_pri"] - problem.x) / np.sqrt(captured["v_B_pri"])
    table = metrics.qq_data(err)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_qq_csv(out, table)
    skew, kurt = metrics.error_moments(err)
    print(json.dumps({"iteration": args.iteration, "skew": skew, "kurtosis": kurt,
                      "gaussian": metrics.gaussian_moments_ok(skew, kurt)}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="dturbo", description="Turbo compressed-sensing recovery experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recover", help="run one recovery experiment and write artifacts")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("evolve", help="run the MSE evolution and write evolution.csv")
    _add_config_flags(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--horizon", type=int, help="number of evolution steps")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("operator-check", help="verify operator orthonormality")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transform", default="DCT", choices=["DCT", "HAAR"])
    p.add_argument("--variant", choices=["PLAIN", "SIGN_FLIPPED"])
    p.set_defaults(func=cmd_operator_check)

    p = sub.add_parser("qq", help="export QQ data of the Module-A error")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--iteration", type=int, default=2)
    p.set_defaults(func=cmd_qq)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateExtrinsic, SolveFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, PGMError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
