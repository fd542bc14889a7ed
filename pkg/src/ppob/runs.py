"""Run directories, manifests, and multi-run comparison."""
from __future__ import annotations

import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

from ppob import __version__
from ppob.config import TrainerConfig, build, parse_text, serialize, to_flat, with_values
from ppob.errors import NumericFault, UsageError
from ppob.net import save_checkpoint
from ppob.trainer import RunMetrics, scorecard, train

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CONFIG = "config.txt"
METRICS = "metrics.csv"
MINIBATCH = "minibatch.csv"
CHECKPOINT = "checkpoint.npz"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def run_dir_name(cfg: TrainerConfig, stamp: Optional[str] = None) -> str:
    stamp = stamp or time.strftime("%Y%m%d-%H%M%S")
    return f"{cfg.env}_{cfg.objective.kind}_{cfg.seed}_{stamp}"


def prepare_run_dir(path, force: bool = False) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"run directory {path} exists and is not empty; pass --force to overwrite")
        for name in path.iterdir():
            if name.is_file():
                name.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(run_dir: Path, manifest: dict):
    (run_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST
    return json.loads(p.read_text())


def config_from_manifest(path) -> TrainerConfig:
    return build(parse_text(read_manifest(path)["config_text"], str(path)))


def run_training(cfg: TrainerConfig, run_dir, force: bool = False, dump_batches: bool = False):
    """Train into ``run_dir``: manifest first, then metrics, checkpoint, final manifest."""
    run_dir = prepare_run_dir(run_dir, force)
    text = serialize(cfg)
    (run_dir / CONFIG).write_text(text)
    manifest = {
        "preset": cfg.preset,
        "config": to_flat(cfg),
        "config_text": text,
        "seeds": [cfg.seed],
        "artifacts": {"config": CONFIG, "metrics": METRICS, "minibatch": MINIBATCH,
                      "checkpoint": CHECKPOINT},
        "version": __version__,
        "started": _now(),
        "finished": None,
        "status": "running",
    }
    write_manifest(run_dir, manifest)
    try:
        params, metrics = train(cfg, run_dir=run_dir, dump_batches=dump_batches)
    except NumericFault as exc:
        manifest.update(status="numeric-fault", error=str(exc), finished=_now())
        write_manifest(run_dir, manifest)
        raise
    metrics.write_csv(run_dir / METRICS)
    save_checkpoint(params, run_dir / CHECKPOINT, env=cfg.env)
    manifest.update(status="completed", finished=_now(),
                    violation_fraction=metrics.violation_fraction)
    write_manifest(run_dir, manifest)
    return params, metrics


def load_run(run_dir) -> tuple:
    """Return ``(config, RunMetrics)`` for a completed run directory."""
    run_dir = Path(run_dir)
    cfg = config_from_manifest(run_dir)
    m = RunMetrics.read_csv(run_dir / METRICS, eval_episodes=cfg.eval_episodes,
                            samples_per_iteration=cfg.epochs * cfg.batch_size)
    return cfg, m


@dataclass
class CompareResult:
    scorecard: object
    run_dirs: dict  # (env, algorithm, seed) -> Path
    failures: dict  # (env, algorithm, seed) -> message


def _train_job(args):
    cfg, run_dir, force = args
    try:
        _, metrics = run_training(cfg, run_dir, force=force)
        return metrics, None
    except NumericFault as exc:
        return None, str(exc)


def run_compare(config: Union[TrainerConfig, Callable[[str], TrainerConfig]], algorithms: Sequence[str],
                seeds: Sequence[int], out_root, envs: Optional[Sequence[str]] = None,
                workers: int = 1, force: bool = False, stamp: Optional[str] = None) -> CompareResult:
    """Train every (env, algorithm, seed) and score the algorithms against each other.

    ``config`` is a base config or a callable mapping an algorithm name to
    its base config.  Runs that hit a numeric fault are dropped (with every
    algorithm's run for that env and seed) and reported in ``failures``.
    """
    if len(algorithms) < 2:
        raise UsageError("compare needs at least two algorithms")
    if len(seeds) < 1:
        raise UsageError("compare needs at least one seed")
    base_for = config if callable(config) else (lambda alg: with_values(config, objective=alg))
    if envs is None:
        envs = [base_for(algorithms[0]).env]
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    stamp = stamp or time.strftime("%Y%m%d-%H%M%S")
    jobs = []
    for env in envs:
        for alg in algorithms:
            for seed in seeds:
                cfg = with_values(base_for(alg), env=env, objective=alg, seed=seed)
                jobs.append(((env, alg, seed), cfg, out_root / run_dir_name(cfg, stamp)))
    args = [(cfg, d, force) for _, cfg, d in jobs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, args))
    else:
        results = [_train_job(a) for a in args]
    metrics, failures, dirs = {}, {}, {}
    for (key, _, d), (m, err) in zip(jobs, results):
        dirs[key] = d
        if err is None:
            metrics[key] = m
        else:
            failures[key] = err
            warnings.warn(f"run {key} failed: {err}")
    bad = {(env, seed) for env, _, seed in failures}
    runs = {}
    for env in envs:
        ok_seeds = [s for s in seeds if (env, s) not in bad]
        if not ok_seeds:
            continue
        runs[env] = {alg: [metrics[(env, alg, s)] for s in ok_seeds] for alg in algorithms}
    card = scorecard(runs)
    (out_root / "scorecard.txt").write_text(card.to_text())
    (out_root / "scorecard.csv").write_text(card.to_csv())
    return CompareResult(card, dirs, failures)


def scorecard_from_dirs(run_dirs: Sequence) -> object:
    """Score previously recorded run directories, grouped by env and objective."""
    runs = {}
    for d in run_dirs:
        cfg, m = load_run(d)
        runs.setdefault(cfg.env, {}).setdefault(cfg.objective.kind, []).append((cfg.seed, m))
    ordered = {env: {alg: [m for _, m in sorted(v, key=lambda t: t[0])] for alg, v in sorted(by.items())}
               for env, by in runs.items()}
    return scorecard(ordered)
