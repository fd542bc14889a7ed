"""Action distributions produced by the policy head.

Both families work on a single state (1-D parameters) or a batch (leading
batch axis); every reduction is over the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ppob.errors import NumericFault, UsageError

LOG_2PI = float(np.log(2.0 * np.pi))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class Categorical:
    logits: np.ndarray

    @property
    def num_actions(self) -> int:
        return self.logits.shape[-1]

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits)

    @property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs)
        return p / p.sum(axis=-1, keepdims=True)

    def _check(self, action):
        a = np.asarray(action)
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise UsageError(f"categorical action must be an integer, got {action!r}")
            a = a.astype(np.int64)
        if np.any(a < 0) or np.any(a >= self.num_actions):
            raise UsageError(f"action {action!r} outside [0, {self.num_actions})")
        return a

    def log_prob(self, action):
        a = self._check(action)
        lp = self.log_probs
        if lp.ndim == 1:
            return float(lp[a])
        return np.take_along_axis(lp, a.reshape(-1, 1), axis=-1)[:, 0]

    def entropy(self):
        p = self.probs
        return -(p * self.log_probs).sum(axis=-1)

    def mode(self):
        return np.argmax(self.logits, axis=-1)

    def sample(self, rng: np.random.Generator):
        p = self.probs
        if p.ndim == 1:
            return int(rng.choice(self.num_actions, p=p))
        u = rng.random(p.shape[0])[:, None]
        idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
        return np.minimum(idx, self.num_actions - 1)


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    log_std: np.ndarray  # shape (action_dim,), state independent

    @property
    def action_dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> np.ndarray:
        return np.broadcast_to(np.exp(self.log_std), self.mean.shape)

    def log_prob(self, action):
        a = np.asarray(action, dtype=np.float64)
        if a.shape[-1:] != self.mean.shape[-1:]:
            raise UsageError(f"action shape {a.shape} does not match mean {self.mean.shape}")
        z = (a - self.mean) / np.exp(self.log_std)
        out = (-0.5 * z * z - self.log_std - 0.5 * LOG_2PI).sum(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def entropy(self):
        h = float((self.log_std + 0.5 * (LOG_2PI + 1.0)).sum())
        if self.mean.ndim == 1:
            return h
        return np.full(self.mean.shape[0], h)

    def mode(self):
        return self.mean.copy()

    def sample(self, rng: np.random.Generator):
        return self.mean + np.exp(self.log_std) * rng.standard_normal(self.mean.shape)


def log_prob(dist, action):
    return dist.log_prob(action)


def kl_divergence(dist_old, dist_new):
    """KL(old || new), per state."""
    if type(dist_old) is not type(dist_new):
        raise UsageError("KL between different distribution families")
    if isinstance(dist_old, Categorical):
        p_old = dist_old.probs
        lp_old, lp_new = dist_old.log_probs, dist_new.log_probs
        if lp_old.shape != lp_new.shape:
            raise UsageError("KL between categoricals of different size")
        if np.any(np.isinf(lp_new) & (p_old > 0)):
            raise NumericFault("kl_divergence", "infinite KL: p_new = 0 where p_old > 0")
        terms = np.where(p_old > 0, p_old * (lp_old - lp_new), 0.0)
        return terms.sum(axis=-1)
    if dist_old.mean.shape[-1] != dist_new.mean.shape[-1]:
        raise UsageError("KL between gaussians of different dimension")
    var_old = np.exp(2.0 * dist_old.log_std)
    var_new = np.exp(2.0 * dist_new.log_std)
    diff = dist_old.mean - dist_new.mean
    terms = (dist_new.log_std - dist_old.log_std) + (var_old + diff * diff) / (2.0 * var_new) - 0.5
    return terms.sum(axis=-1)
