"""Rollout collection under a frozen policy, GAE, and minibatch serving.

Storage is actor-contiguous: slot ``actor * T + t``.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from ppob.envs import Env, make_env
from ppob.errors import ConfigError, UsageError
from ppob.net import PolicyParams, forward_cached, make_distribution


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        for key in ("gamma", "lam"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(key, f"must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class RolloutBatch:
    """Transitions gathered by ``n_actors`` actors for ``horizon`` steps.

    ``old_head`` holds the behaviour policy's logits (categorical) or means
    (gaussian) and ``old_log_std`` its log-std, so KL terms can be evaluated
    against the frozen policy.  ``next_value`` is V(s_{t+1}) as recorded at
    collection time; it is NaN after terminal steps.
    """

    n_actors: int
    horizon: int
    state: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    timeout: np.ndarray
    old_log_prob: np.ndarray
    old_prob_at_action: np.ndarray
    old_value: np.ndarray
    next_value: np.ndarray
    old_head: np.ndarray
    old_log_std: Optional[np.ndarray] = None
    advantage: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    def __len__(self):
        return self.n_actors * self.horizon

    @property
    def terminal(self) -> np.ndarray:
        return self.done & ~self.timeout

    @property
    def bootstrap_value(self) -> np.ndarray:
        """V of the state after step T, per actor (NaN where that step ended an episode by termination)."""
        return self.next_value.reshape(self.n_actors, self.horizon)[:, -1]

    def minibatch(self, idx, normalize: bool = True) -> "MiniBatch":
        if self.advantage is None:
            raise UsageError("advantages must be computed before serving minibatches")
        adv = self.advantage[idx]
        if normalize:
            adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
        return MiniBatch(
            state=self.state[idx], action=self.action[idx],
            old_log_prob=self.old_log_prob[idx], old_prob_at_action=self.old_prob_at_action[idx],
            old_head=self.old_head[idx], old_log_std=self.old_log_std,
            advantage=adv, returns=self.returns[idx],
        )

    def full(self, normalize: bool = False) -> "MiniBatch":
        return self.minibatch(np.arange(len(self)), normalize)


@dataclass(frozen=True)
class MiniBatch:
    state: np.ndarray
    action: np.ndarray
    old_log_prob: np.ndarray
    old_prob_at_action: np.ndarray
    old_head: np.ndarray
    old_log_std: Optional[np.ndarray]
    advantage: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.advantage)


class Collector:
    """Steps N environments in lockstep; episodes persist across calls."""

    def __init__(self, envs: Sequence[Env], seed: int, return_window: int = 100):
        if len(envs) < 1:
            raise ConfigError("actors", "need at least one actor")
        self.envs = list(envs)
        children = np.random.SeedSequence(seed).spawn(len(self.envs))
        self.rngs = [np.random.default_rng(c) for c in children]
        self.obs = [env.reset(seed=int(rng.integers(2**31))) for env, rng in zip(self.envs, self.rngs)]
        self.ep_returns = [0.0] * len(self.envs)
        self.ep_lengths = [0] * len(self.envs)
        self.completed = deque(maxlen=return_window)
        self.completed_lengths = deque(maxlen=return_window)
        self.episodes = 0
        self.steps = 0

    def collect(self, params: PolicyParams, T: int) -> RolloutBatch:
        if T < 1:
            raise ConfigError("horizon", "T must be >= 1")
        N = len(self.envs)
        obs_dim = params.layout.obs_dim
        head = params.layout.head
        gaussian = head.kind == "gaussian"
        states = np.zeros((N, T, obs_dim))
        actions = np.zeros((N, T, head.size)) if gaussian else np.zeros((N, T), dtype=np.int64)
        rewards = np.zeros((N, T))
        dones = np.zeros((N, T), dtype=bool)
        timeouts = np.zeros((N, T), dtype=bool)
        logp = np.zeros((N, T))
        values = np.zeros((N, T))
        next_values = np.full((N, T), np.nan)
        heads = np.zeros((N, T, head.size))
        # (actor, t, final observation) for episodes cut by the step limit
        cut = []
        for t in range(T):
            obs = np.stack(self.obs)
            cache = forward_cached(params, obs)
            dist = make_distribution(params, cache.head_out)
            states[:, t] = obs
            heads[:, t] = cache.head_out
            values[:, t] = cache.values
            for i, env in enumerate(self.envs):
                rng = self.rngs[i]
                if gaussian:
                    a = dist.mean[i] + np.exp(dist.log_std) * rng.standard_normal(head.size)
                    actions[i, t] = a
                    act = a
                else:
                    p = np.exp(dist.log_probs[i])
                    act = int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), head.size - 1))
                    actions[i, t] = act
                try:
                    tr = env.step(act)
                except Exception as exc:
                    raise type(exc)(f"actor {i}: {exc}") from exc
                rewards[i, t] = tr.reward
                dones[i, t] = tr.done
                timeouts[i, t] = tr.timeout
                self.ep_returns[i] += tr.reward
                self.ep_lengths[i] += 1
                if tr.done:
                    if tr.timeout:
                        cut.append((i, t, tr.next_state))
                    self.completed.append(self.ep_returns[i])
                    self.completed_lengths.append(self.ep_lengths[i])
                    self.episodes += 1
                    self.ep_returns[i] = 0.0
                    self.ep_lengths[i] = 0
                    self.obs[i] = env.reset(seed=int(rng.integers(2**31)))
                else:
                    self.obs[i] = tr.next_state
            logp[:, t] = dist.log_prob(actions[:, t])
        self.steps += N * T
        # V(s_{t+1}) within an episode is the next slot's value
        next_values[:, :-1] = np.where(dones[:, :-1], np.nan, values[:, 1:])
        last = forward_cached(params, np.stack(self.obs)).values
        next_values[:, -1] = np.where(dones[:, -1], np.nan, last)
        if cut:
            final_vals = forward_cached(params, np.stack([s for _, _, s in cut])).values
            for (i, t, _), v in zip(cut, final_vals):
                next_values[i, t] = v
        flat = lambda a: a.reshape(N * T, *a.shape[2:])
        return RolloutBatch(
            n_actors=N, horizon=T,
            state=flat(states), action=flat(actions), reward=flat(rewards),
            done=flat(dones), timeout=flat(timeouts),
            old_log_prob=flat(logp), old_prob_at_action=np.exp(flat(logp)),
            old_value=flat(values), next_value=flat(next_values), old_head=flat(heads),
            old_log_std=params["log_std"].copy() if gaussian else None,
        )

    def mean_return(self) -> float:
        return float(np.mean(self.completed)) if self.completed else float("nan")


def collect(params_old: PolicyParams, envs, T: int, seed: int) -> RolloutBatch:
    """One-shot collection from freshly reset environments."""
    envs = [make_env(e) if isinstance(e, str) else e for e in envs]
    return Collector(envs, seed).collect(params_old, T)


def gae_advantages(reward, value, next_value, terminal, done, gamma, lam):
    """Backward GAE recursion over one actor's contiguous slice.

    ``terminal`` zeroes the bootstrap; ``done`` (terminal or timeout) stops
    the recursion at episode boundaries.
    """
    T = len(reward)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        nv = 0.0 if terminal[t] else next_value[t]
        delta = reward[t] + gamma * nv - value[t]
        running = delta + gamma * lam * (0.0 if done[t] else running)
        adv[t] = running
    return adv


def compute_gae(batch: RolloutBatch, gae: GaeConfig, bootstrap_value=None) -> RolloutBatch:
    """Attach advantages and return targets (``advantage + old_value``).

    ``bootstrap_value`` (one per actor) overrides the value recorded for the
    state following the last step of each actor.
    """
    N, T = batch.n_actors, batch.horizon
    nv = batch.next_value.reshape(N, T).copy()
    if bootstrap_value is not None:
        bv = np.asarray(bootstrap_value, dtype=np.float64).reshape(N)
        nv[:, -1] = np.where(batch.terminal.reshape(N, T)[:, -1], np.nan, bv)
    needs = ~batch.terminal.reshape(N, T)
    if np.any(np.isnan(nv) & needs):
        raise UsageError("missing bootstrap value for a non-terminal step")
    adv = np.concatenate([
        gae_advantages(batch.reward.reshape(N, T)[i], batch.old_value.reshape(N, T)[i], nv[i],
                       batch.terminal.reshape(N, T)[i], batch.done.reshape(N, T)[i], gae.gamma, gae.lam)
        for i in range(N)
    ])
    if not np.all(np.isfinite(adv)):
        raise UsageError("non-finite advantages")
    return replace(batch, next_value=nv.reshape(-1), advantage=adv, returns=adv + batch.old_value)


def minibatches(n: int, M: int, epoch_seed) -> list:
    """Seeded shuffle of ``range(n)`` split into ``n // M`` index arrays."""
    if M > n:
        raise ConfigError("minibatch", f"M={M} exceeds N*T={n}")
    if n % M:
        raise ConfigError("minibatch", f"M={M} does not divide N*T={n}")
    perm = np.random.default_rng(epoch_seed).permutation(n)
    return [perm[k:k + M] for k in range(0, n, M)]


def dump_batch(batch: RolloutBatch, path):
    """Debug dump of a batch as CSV, one row per slot."""
    cols = [f.name for f in fields(batch)
            if f.name not in ("n_actors", "horizon", "old_log_std")
            and getattr(batch, f.name) is not None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = []
        arrays = []
        for name in cols:
            a = np.asarray(getattr(batch, name))
            a = a.reshape(len(batch), -1)
            arrays.append(a)
            header += [name] if a.shape[1] == 1 else [f"{name}{j}" for j in range(a.shape[1])]
        w.writerow(["slot", "actor", "t", *header])
        for k in range(len(batch)):
            row = [k, k // batch.horizon, k % batch.horizon]
            for a in arrays:
                row += [repr(v.item()) for v in a[k]]
            w.writerow(row)
