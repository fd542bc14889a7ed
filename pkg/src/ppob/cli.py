"""Command line: train, eval, demo-barrier, compare."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ppob import barrier
from ppob.config import KEYS, PRESETS, TrainerConfig, canonical_key, parse_config, serialize
from ppob.errors import ConfigError, NumericFault, UsageError

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="key = value config file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    for key in KEYS:
        g.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V")


def _overrides(args) -> dict:
    out = {}
    for key in KEYS:
        v = getattr(args, f"cfg_{key}", None)
        if v is not None:
            out[key] = v
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=VALUE")
        k, v = item.split("=", 1)
        out[canonical_key(k)] = v
    return out


def _resolve(args, **extra) -> TrainerConfig:
    return parse_config(args.config, args.preset, {**_overrides(args), **extra})


def cmd_train(args) -> int:
    from ppob.runs import config_from_manifest, run_dir_name, run_training

    if args.manifest:
        cfg = config_from_manifest(args.manifest)
        if _overrides(args):
            raise UsageError("--manifest reproduces a run exactly; drop the overrides")
    else:
        cfg = _resolve(args)
    if args.print_config:
        sys.stdout.write(serialize(cfg))
        return 0
    run_dir = args.out or Path(args.runs_root) / run_dir_name(cfg)
    _, metrics = run_training(cfg, run_dir, force=args.force, dump_batches=args.dump_batches)
    last = metrics.rows[-1]
    print(f"run: {run_dir}")
    print(f"iterations {last.iteration}  steps {last.steps}  train_return {last.train_return:.4g}  "
          f"eval_return {last.eval_return:.4g}  violation_fraction {metrics.violation_fraction:.3g}")
    return 0


def cmd_eval(args) -> int:
    from ppob.envs import dump_trace, make_env
    from ppob.net import forward, load_checkpoint
    from ppob.trainer import evaluate

    params, header = load_checkpoint(args.checkpoint)
    env_id = args.env or header.get("env")
    if env_id is None:
        raise UsageError("checkpoint carries no env id; pass --env")
    mean, returns = evaluate(params, env_id, args.episodes, args.seed, greedy=not args.stochastic)
    print(f"mean_return {mean!r}")
    for i, r in enumerate(returns):
        print(f"episode {i} return {r!r}")
    if args.trace:
        env = make_env(env_id)
        s = env.reset(seed=args.seed)
        trace = []
        while True:
            dist, _ = forward(params, s)
            a = dist.mode()
            tr = env.step(int(a) if params.layout.head.kind == "categorical" else a)
            trace.append(tr)
            s = tr.next_state
            if tr.done:
                break
        dump_trace(trace, args.trace)
    return 0


def cmd_demo_barrier(args) -> int:
    mus = args.mu or list(barrier.DEFAULT_MUS)
    if args.f or args.constraint:
        if not (args.f and args.constraint and args.domain):
            raise UsageError("a custom problem needs --f, at least one --constraint, and --domain")
        problem = barrier.BarrierProblem(barrier.compile_expr(args.f),
                                         [barrier.compile_expr(c) for c in args.constraint],
                                         mus[0], domain=tuple(args.domain))
    else:
        problem = barrier.default_problem(mus[0])
    curves = barrier.emit_curves(problem, mus, args.grid, out=args.out)
    print(f"{'mu':>10} {'x(mu)':>20} {'P(x(mu))':>20} {'iterations':>10}")
    for c in curves:
        print(f"{c.mu:>10g} {c.minimizer:>20.12f} {c.minimum:>20.12f} {c.iterations:>10d}")
    if args.out:
        print(f"curves written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    from ppob.runs import run_compare, scorecard_from_dirs

    if args.from_runs:
        card = scorecard_from_dirs(args.from_runs)
    else:
        algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        envs = [e.strip() for e in args.envs.split(",")] if args.envs else None
        result = run_compare(lambda alg: _resolve(args, objective=alg), algorithms, seeds,
                             args.out, envs=envs, workers=args.workers, force=args.force)
        card = result.scorecard
        for key, msg in result.failures.items():
            print(f"warning: run {key} failed: {msg}", file=sys.stderr)
    sys.stdout.write(card.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppob", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run into a run directory")
    _add_config_flags(p)
    p.add_argument("--manifest", type=Path, help="re-run exactly from a run's manifest.json")
    p.add_argument("--out", type=Path, help="run directory (default: <runs-root>/<env>_<objective>_<seed>_<time>)")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
    p.add_argument("--dump-batches", action="store_true", help="write every rollout batch as CSV")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--env")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true", help="sample actions instead of greedy/mean")
    p.add_argument("--trace", type=Path, help="write one greedy episode trace as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-barrier", help="emit P(x; mu) curves for the 1-D barrier problem")
    p.add_argument("--mu", type=float, action="append", help="barrier parameter (repeatable)")
    p.add_argument("--grid", type=int, default=201)
    p.add_argument("--out", type=Path)
    p.add_argument("--f", help="objective expression in x (default: x)")
    p.add_argument("--constraint", action="append", help="constraint expression c(x) > 0 (repeatable)")
    p.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"))
    p.set_defaults(func=cmd_demo_barrier)

    p = sub.add_parser("compare", help="train algorithms x seeds x envs and score them")
    _add_config_flags(p)
    p.add_argument("--algorithms", default="clip,adbar")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--envs", help="comma-separated env ids (default: the config's env)")
    p.add_argument("--out", type=Path, default=Path("compare"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.add_argument("--from-runs", nargs="+", type=Path, help="score existing run directories instead")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
