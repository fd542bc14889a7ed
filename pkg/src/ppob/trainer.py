"""Actor-critic training loop: collect, GAE, K epochs of minibatch updates."""
from __future__ import annotations

import csv
import io
import logging
import math
import tempfile
from dataclasses import astuple, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ppob.config import TrainerConfig
from ppob.envs import head_for, make_env
from ppob.errors import NumericFault, UsageError
from ppob.net import (OptimizerState, PolicyParams, backward, forward, init_params,
                      optimizer_step, save_checkpoint)
from ppob.objectives import adapt_beta, batch_kl, evaluate_loss
from ppob.rollout import Collector, GaeConfig, compute_gae, dump_batch, minibatches

log = logging.getLogger(__name__)

METRICS_HEADER = ("iteration", "steps", "train_return", "eval_return", "mean_kl", "mean_ad",
                  "violations", "beta", "alpha")
MINIBATCH_HEADER = ("iteration", "epoch", "minibatch", "surrogate", "value_loss", "entropy",
                    "total_loss", "mean_ratio", "mean_kl", "mean_ad", "violations", "clamped")


@dataclass(frozen=True)
class MetricsRow:
    iteration: int
    steps: int
    train_return: float
    eval_return: float  # NaN when no evaluation ran this iteration
    mean_kl: float
    mean_ad: float
    violations: int
    beta: float
    alpha: float


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)
    samples_per_iteration: int = 0
    eval_episodes: int = 1

    def append(self, row: MetricsRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise UsageError("metrics rows are append-only and ordered by iteration")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    @property
    def total_violations(self) -> int:
        return int(sum(r.violations for r in self.rows))

    @property
    def violation_fraction(self) -> float:
        total = self.samples_per_iteration * len(self.rows)
        return self.total_violations / total if total else 0.0

    def eval_returns(self) -> np.ndarray:
        col = self.column("eval_return")
        return col[~np.isnan(col)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow([_fmt(v) for v in astuple(r)])
        return buf.getvalue()

    def write_csv(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, **kw) -> "RunMetrics":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise UsageError(f"unexpected metrics header {header}")
        m = cls(**kw)
        for row in reader:
            vals = {}
            for f, s in zip(fields(MetricsRow), row):
                if f.type == "int":
                    vals[f.name] = int(s)
                else:
                    vals[f.name] = float(s) if s else float("nan")
            m.append(MetricsRow(**vals))
        return m

    @classmethod
    def read_csv(cls, path, **kw) -> "RunMetrics":
        return cls.from_csv(Path(path).read_text(), **kw)


class TrainingFault(NumericFault):
    def __init__(self, iteration, epoch, minibatch, dump_dir, cause):
        where = f"iteration {iteration}, epoch {epoch}, minibatch {minibatch}"
        super().__init__(where, f"{cause}; state dumped to {dump_dir}")
        self.iteration = iteration
        self.epoch = epoch
        self.minibatch = minibatch
        self.dump_dir = dump_dir


def evaluate(params: PolicyParams, env, episodes: int, seed: int, greedy: bool = True):
    """Run ``episodes`` episodes; return ``(mean_return, returns)``.

    Greedy mode takes the argmax (categorical) or mean (gaussian) action.
    """
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    env = make_env(env) if isinstance(env, str) else env
    ss = np.random.SeedSequence(seed)
    returns = []
    for child in ss.spawn(episodes):
        rng = np.random.default_rng(child)
        s = env.reset(seed=int(rng.integers(2**31)))
        total = 0.0
        while True:
            dist, _ = forward(params, s)
            a = dist.mode() if greedy else dist.sample(rng)
            if params.layout.head.kind == "categorical":
                a = int(a)
            tr = env.step(a)
            total += tr.reward
            s = tr.next_state
            if tr.done:
                break
        returns.append(total)
    return float(np.mean(returns)), returns


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _dump_fault(params, batch, run_dir, iteration):
    out = Path(run_dir) if run_dir is not None else Path(tempfile.mkdtemp(prefix="ppob-fault-"))
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / f"fault_iter{iteration}.npz")
    if batch is not None:
        dump_batch(batch, out / f"fault_iter{iteration}_batch.csv")
    return out


def _streams(seed):
    # init, actors, minibatch shuffles, evaluation
    return np.random.SeedSequence(seed).spawn(4)


def initial_params(cfg: TrainerConfig) -> PolicyParams:
    spec = make_env(cfg.env).spec
    params = init_params(spec.observation_dim, head_for(spec), (cfg.hidden, cfg.hidden),
                         seed=_seed_int(_streams(cfg.seed)[0]))
    params.seed = cfg.seed
    return params


def train(cfg: TrainerConfig, run_dir=None, dump_batches: bool = False,
          on_iteration: Optional[Callable[[MetricsRow], None]] = None):
    """Run ``cfg.iterations`` iterations; return ``(params, RunMetrics)``.

    With ``run_dir`` the per-minibatch reports go to ``minibatch.csv`` and,
    if ``dump_batches``, each rollout batch to ``batch_<i>.csv``.
    """
    ocfg = cfg.objective
    init_ss, actor_ss, shuffle_ss, eval_ss = _streams(cfg.seed)
    params = initial_params(cfg)
    collector = Collector([make_env(cfg.env) for _ in range(cfg.actors)], _seed_int(actor_ss))
    opt = OptimizerState("adam", cfg.lr)
    gae = GaeConfig(cfg.gamma, cfg.lam)
    metrics = RunMetrics(samples_per_iteration=cfg.epochs * cfg.batch_size,
                         eval_episodes=cfg.eval_episodes)
    beta = ocfg.beta
    mb_log = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        mb_log = open(run_dir / "minibatch.csv", "w", newline="")
        mb_writer = csv.writer(mb_log, lineterminator="\n")
        mb_writer.writerow(MINIBATCH_HEADER)
    try:
        for it in range(cfg.iterations):
            alpha = 1.0 - it / cfg.iterations if cfg.anneal else 1.0
            icfg = replace(
                ocfg, beta=beta,
                epsilon=ocfg.epsilon * alpha if cfg.anneal_clip else ocfg.epsilon,
                entropy_coeff=ocfg.entropy_coeff * alpha if cfg.anneal_entropy else ocfg.entropy_coeff,
            )
            lr = cfg.lr * alpha
            batch = None
            try:
                batch = compute_gae(collector.collect(params, cfg.horizon), gae)
            except NumericFault as exc:
                raise TrainingFault(it + 1, 0, 0, _dump_fault(params, batch, run_dir, it + 1), exc) from exc
            if dump_batches and run_dir is not None:
                dump_batch(batch, run_dir / f"batch_{it + 1}.csv")
            epoch_rng = np.random.default_rng(shuffle_ss.spawn(1)[0])
            kl_sum = ad_sum = 0.0
            n_eval = 0
            violations = 0
            for epoch in range(cfg.epochs):
                for k, idx in enumerate(minibatches(len(batch), cfg.minibatch, epoch_rng.integers(2**63))):
                    try:
                        ev = evaluate_loss(batch.minibatch(idx), params, icfg)
                        params = optimizer_step(params, backward(ev.graph), opt, lr)
                    except NumericFault as exc:
                        dump = _dump_fault(params, batch, run_dir, it + 1)
                        raise TrainingFault(it + 1, epoch + 1, k + 1, dump, exc) from exc
                    rep = ev.report
                    kl_sum += rep.mean_kl
                    ad_sum += rep.mean_ad
                    n_eval += 1
                    violations += rep.violations
                    if mb_log is not None:
                        mb_writer.writerow([it + 1, epoch + 1, k + 1, *[_fmt(v) for v in (
                            rep.surrogate, rep.value_loss, rep.entropy, rep.total_loss,
                            rep.mean_ratio, rep.mean_kl, rep.mean_ad, rep.violations, rep.clamped)]])
            row_beta = beta
            if ocfg.kind == "klpen":
                beta = adapt_beta(beta, batch_kl(batch.full(), params), ocfg.d_targ)
            eval_return = float("nan")
            if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
                eval_return, _ = evaluate(params, cfg.env, cfg.eval_episodes,
                                          _seed_int(eval_ss) + it)
            row = MetricsRow(
                iteration=it + 1, steps=(it + 1) * cfg.batch_size,
                train_return=collector.mean_return(), eval_return=eval_return,
                mean_kl=kl_sum / n_eval, mean_ad=ad_sum / n_eval, violations=violations,
                beta=row_beta, alpha=alpha,
            )
            metrics.append(row)
            if on_iteration is not None:
                on_iteration(row)
            log.debug("iter %d steps %d train %.3f eval %.3f", row.iteration, row.steps,
                      row.train_return, row.eval_return)
    finally:
        if mb_log is not None:
            mb_log.close()
    assert collector.steps == cfg.iterations * cfg.batch_size
    return params, metrics


@dataclass
class ScoreRow:
    env: str
    reward_100: dict  # algorithm -> score
    reward_all: dict
    winner_100: Optional[str]
    winner_all: Optional[str]


@dataclass
class Scorecard:
    algorithms: list
    rows: list
    wins_100: dict
    wins_all: dict

    def to_text(self) -> str:
        algs = self.algorithms
        w = max(12, *(len(a) + 2 for a in algs))
        lines = [f"{'':<34}" + "".join(f"{a:>{w}}" for a in algs)]
        lines.append(f"{'won: reward over all of training':<34}"
                     + "".join(f"{self.wins_all[a]:>{w}}" for a in algs))
        lines.append(f"{'won: reward over final window':<34}"
                     + "".join(f"{self.wins_100[a]:>{w}}" for a in algs))
        lines.append("")
        lines.append(f"{'env':<12}{'metric':<12}" + "".join(f"{a:>{w}}" for a in algs) + f"{'winner':>{w}}")
        for r in self.rows:
            for metric, vals, win in (("reward_all", r.reward_all, r.winner_all),
                                      ("reward_100", r.reward_100, r.winner_100)):
                lines.append(f"{r.env:<12}{metric:<12}" + "".join(f"{vals[a]:>{w}.4g}" for a in algs)
                             + f"{win or '-':>{w}}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["env", "metric", *self.algorithms, "winner"])
        for r in self.rows:
            wr.writerow([r.env, "reward_all", *[repr(r.reward_all[a]) for a in self.algorithms], r.winner_all or ""])
            wr.writerow([r.env, "reward_100", *[repr(r.reward_100[a]) for a in self.algorithms], r.winner_100 or ""])
        wr.writerow(["won", "reward_all", *[self.wins_all[a] for a in self.algorithms], ""])
        wr.writerow(["won", "reward_100", *[self.wins_100[a] for a in self.algorithms], ""])
        return buf.getvalue()


def _winner(scores: Mapping[str, float], tol: float = 1e-12) -> Optional[str]:
    best = max(scores.values())
    top = [a for a, v in scores.items() if abs(v - best) <= tol * max(1.0, abs(best))]
    return top[0] if len(top) == 1 else None


def final_window(m: RunMetrics, episodes: int = 100) -> np.ndarray:
    """Eval returns covering the last ``episodes`` evaluation episodes."""
    ev = m.eval_returns()
    n = max(1, math.ceil(episodes / max(1, m.eval_episodes)))
    return ev[-n:]


def scorecard(runs: Mapping[str, Mapping[str, Sequence[RunMetrics]]]) -> Scorecard:
    """``runs[env][algorithm]`` is a list of per-seed metrics.

    reward_all is the mean eval return over the whole run, reward_100 over
    the final window; both averaged over seeds.  The best algorithm per env
    and metric wins; ties go to nobody.
    """
    algorithms = None
    rows = []
    for env, by_alg in runs.items():
        algs = list(by_alg)
        if algorithms is None:
            algorithms = algs
        elif sorted(algs) != sorted(algorithms):
            raise UsageError(f"{env}: algorithm set differs from other environments")
        if len(algs) < 2:
            raise UsageError("scorecard needs at least two algorithms")
        lengths = {len(m) for ms in by_alg.values() for m in ms}
        seeds = {len(ms) for ms in by_alg.values()}
        if len(lengths) != 1 or len(seeds) != 1:
            raise UsageError(f"{env}: mismatched run lengths or seed counts")
        r_all, r_100 = {}, {}
        for a in algorithms:
            ms = by_alg[a]
            if any(len(m.eval_returns()) == 0 for m in ms):
                raise UsageError(f"{env}/{a}: a run has no evaluation rows")
            r_all[a] = float(np.mean([m.eval_returns().mean() for m in ms]))
            r_100[a] = float(np.mean([final_window(m).mean() for m in ms]))
        rows.append(ScoreRow(env, r_100, r_all, _winner(r_100), _winner(r_all)))
    if algorithms is None:
        raise UsageError("no runs to score")
    wins_100 = {a: sum(r.winner_100 == a for r in rows) for a in algorithms}
    wins_all = {a: sum(r.winner_all == a for r in rows) for a in algorithms}
    return Scorecard(algorithms, rows, wins_100, wins_all)
