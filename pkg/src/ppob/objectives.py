"""Surrogate objectives, written in ascent form, and the composed loss.

Every surrogate is returned together with its gradient with respect to the
policy head outputs, so :func:`ppob.net.backward` can push it through the
network.  Kinds:

``clip``   mean min(r A, clip(r, 1-eps, 1+eps) A)
``klpen``  mean r A - beta * mean KL(old || new)
``klbar``  mean [r A + mu ln(delta - KL(new || old))]
``adbar``  mean [r A + mu ln(delta - (sqrt p_new - sqrt p_old)^2)]

Barrier log arguments are floored at ``barrier_floor``; floored samples
contribute a constant (zero gradient) and are counted as violations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ppob.distributions import Categorical, DiagGaussian, kl_divergence
from ppob.errors import ConfigError, NumericFault, UsageError
from ppob.net import LossGraph, PolicyParams, forward_cached, make_distribution
from ppob.rollout import MiniBatch

KINDS = ("clip", "klpen", "klbar", "adbar")
RATIO_CLAMP = 30.0


@dataclass(frozen=True)
class ObjectiveConfig:
    kind: str = "adbar"
    epsilon: float = 0.2
    beta: float = 1.0
    d_targ: float = 0.01
    mu: float = 1.0
    delta: float = 0.5
    vf_coeff: float = 1.0
    entropy_coeff: float = 0.0
    barrier_floor: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("objective", f"unknown objective kind {self.kind!r}; choose from {KINDS}")
        for key in ("epsilon", "mu", "delta", "barrier_floor", "d_targ"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, f"must be > 0, got {getattr(self, key)}")
        for key in ("beta", "vf_coeff", "entropy_coeff"):
            if not getattr(self, key) >= 0:
                raise ConfigError(key, f"must be >= 0, got {getattr(self, key)}")


@dataclass(frozen=True)
class ObjectiveReport:
    surrogate: float
    value_loss: float
    entropy: float
    total_loss: float
    mean_ratio: float
    mean_kl: float
    mean_ad: float
    violations: int
    clamped: int
    samples: int


@dataclass
class LossEval:
    loss: float
    report: ObjectiveReport
    graph: LossGraph


def ratio(new_log_prob, old_log_prob):
    """exp(new - old) with the exponent clamped to [-30, 30]."""
    lr = np.clip(np.asarray(new_log_prob, dtype=np.float64) - old_log_prob, -RATIO_CLAMP, RATIO_CLAMP)
    r = np.exp(lr)
    return float(r) if r.ndim == 0 else r


def ad_distance(old_prob_at_action, new_prob_at_action):
    """(sqrt(p_new) - sqrt(p_old))**2."""
    p_old = np.asarray(old_prob_at_action, dtype=np.float64)
    p_new = np.asarray(new_prob_at_action, dtype=np.float64)
    if np.any(p_old < 0) or np.any(p_new < 0):
        raise UsageError("ad_distance needs non-negative probabilities")
    d = (np.sqrt(p_new) - np.sqrt(p_old)) ** 2
    return float(d) if d.ndim == 0 else d


def adapt_beta(beta: float, mean_kl: float, d_targ: float) -> float:
    if mean_kl > 1.5 * d_targ:
        return beta * 2.0
    if mean_kl < d_targ / 1.5:
        return beta / 2.0
    return beta


class _PolicyEval:
    """New-policy quantities on a minibatch, plus log-prob derivatives."""

    def __init__(self, mb: MiniBatch, params: PolicyParams):
        self.mb = mb
        self.params = params
        self.cache = forward_cached(params, mb.state)
        self.dist = make_distribution(params, self.cache.head_out)
        self.gaussian = isinstance(self.dist, DiagGaussian)
        self.B = len(mb)
        self.log_prob = np.asarray(self.dist.log_prob(mb.action), dtype=np.float64).reshape(self.B)
        if self.gaussian:
            self.old_dist = DiagGaussian(mb.old_head, mb.old_log_std)
            sigma = np.exp(self.dist.log_std)
            z = (np.asarray(mb.action).reshape(self.B, -1) - self.dist.mean) / sigma
            self.dlp_head = z / sigma
            self.dlp_log_std = z * z - 1.0
        else:
            self.old_dist = Categorical(mb.old_head)
            onehot = np.zeros_like(self.cache.head_out)
            onehot[np.arange(self.B), np.asarray(mb.action, dtype=np.int64)] = 1.0
            self.dlp_head = onehot - self.dist.probs
            self.dlp_log_std = None
        log_ratio = self.log_prob - mb.old_log_prob
        self.clamped = np.abs(log_ratio) > RATIO_CLAMP
        self.ratio = np.exp(np.clip(log_ratio, -RATIO_CLAMP, RATIO_CLAMP))
        self.dratio = np.where(self.clamped, 0.0, self.ratio)
        self.prob = np.exp(self.log_prob)
        self.ad = ad_distance(mb.old_prob_at_action, self.prob)
        self.kl_old_new = np.asarray(kl_divergence(self.old_dist, self.dist))

    # d/d(head) and d/d(log_std) of the per-sample KL terms

    def dkl_old_new(self):
        if self.gaussian:
            var_new = np.exp(2.0 * self.dist.log_std)
            diff = self.dist.mean - self.old_dist.mean
            var_old = np.exp(2.0 * self.old_dist.log_std)
            return diff / var_new, 1.0 - (var_old + diff * diff) / var_new
        return self.dist.probs - self.old_dist.probs, None

    def kl_new_old(self):
        return np.asarray(kl_divergence(self.dist, self.old_dist))

    def dkl_new_old(self):
        if self.gaussian:
            var_old = np.exp(2.0 * self.old_dist.log_std)
            diff = self.dist.mean - self.old_dist.mean
            var_new = np.exp(2.0 * self.dist.log_std)
            return diff / var_old, var_new / var_old - 1.0
        p = self.dist.probs
        ell = self.dist.log_probs - self.old_dist.log_probs
        kl = (p * ell).sum(axis=-1, keepdims=True)
        return p * (ell - kl), None


def _barrier(gap, mu, floor):
    """mu * ln(max(gap, floor)) and its derivative in gap."""
    ok = gap > floor
    value = mu * np.log(np.where(ok, gap, floor))
    dgap = np.where(ok, mu / np.where(ok, gap, 1.0), 0.0)
    return value, dgap, int((~ok).sum())


def _surrogate(pe: _PolicyEval, cfg: ObjectiveConfig):
    """Return (objective, dJ/dhead, dJ/dlog_std, monitored distance, violations)."""
    A = pe.mb.advantage
    B = pe.B
    d_head = np.zeros_like(pe.cache.head_out)
    d_log_std = np.zeros(pe.dist.action_dim) if pe.gaussian else None
    dlp = np.zeros(B)  # dJ/d(log prob) per sample, before the 1/B mean

    def add_head(dh, dls, weight):
        nonlocal d_log_std
        d_head[...] += weight[:, None] * dh
        if pe.gaussian:
            d_log_std += (weight[:, None] * dls).sum(axis=0)

    violations = 0
    monitored = pe.ad
    if cfg.kind == "clip":
        r = pe.ratio
        rc = np.clip(r, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon)
        take_unclipped = r * A <= rc * A
        per = np.where(take_unclipped, r * A, rc * A)
        dlp += np.where(take_unclipped, A * pe.dratio, 0.0)
    elif cfg.kind == "klpen":
        per = pe.ratio * A - cfg.beta * pe.kl_old_new
        dlp += A * pe.dratio
        dh, dls = pe.dkl_old_new()
        add_head(dh, dls, np.full(B, -cfg.beta / B))
    elif cfg.kind == "klbar":
        kl = pe.kl_new_old()
        bar, dgap, violations = _barrier(cfg.delta - kl, cfg.mu, cfg.barrier_floor)
        per = pe.ratio * A + bar
        dlp += A * pe.dratio
        dh, dls = pe.dkl_new_old()
        add_head(dh, dls, -dgap / B)
        monitored = kl
    else:
        bar, dgap, violations = _barrier(cfg.delta - pe.ad, cfg.mu, cfg.barrier_floor)
        per = pe.ratio * A + bar
        sq_new = np.sqrt(pe.prob)
        dd_dlp = (sq_new - np.sqrt(pe.mb.old_prob_at_action)) * sq_new
        dlp += A * pe.dratio - dgap * dd_dlp
    if cfg.kind in ("clip", "klpen"):
        violations = int((cfg.delta - monitored <= cfg.barrier_floor).sum())
    add_head(pe.dlp_head, pe.dlp_log_std, dlp / B)
    return float(per.mean()), d_head, d_log_std, monitored, violations


def evaluate_loss(mb: MiniBatch, params: PolicyParams, cfg: ObjectiveConfig) -> LossEval:
    """loss = -surrogate + vf_coeff * mean((V - R)^2) - entropy_coeff * mean(H)."""
    pe = _PolicyEval(mb, params)
    B = pe.B
    surr, d_head_J, d_ls_J, _, violations = _surrogate(pe, cfg)

    values = pe.cache.values
    err = values - mb.returns
    value_loss = float(np.mean(err * err))
    d_values = cfg.vf_coeff * 2.0 * err / B

    ent = np.asarray(pe.dist.entropy(), dtype=np.float64)
    entropy = float(ent.mean())
    d_head = -d_head_J
    d_log_std = None if d_ls_J is None else -d_ls_J
    if cfg.entropy_coeff:
        if pe.gaussian:
            d_log_std = d_log_std - cfg.entropy_coeff * np.ones_like(d_log_std)
        else:
            p = pe.dist.probs
            dH = -p * (pe.dist.log_probs + ent[:, None])
            d_head = d_head - cfg.entropy_coeff * dH / B

    total = -surr + cfg.vf_coeff * value_loss - cfg.entropy_coeff * entropy
    if not math.isfinite(total):
        raise NumericFault("total_loss", "non-finite loss")
    report = ObjectiveReport(
        surrogate=surr, value_loss=value_loss, entropy=entropy, total_loss=total,
        mean_ratio=float(pe.ratio.mean()), mean_kl=float(pe.kl_old_new.mean()),
        mean_ad=float(pe.ad.mean()), violations=violations,
        clamped=int(pe.clamped.sum()), samples=B,
    )
    graph = LossGraph(params, pe.cache, d_head=d_head, d_values=d_values, d_log_std=d_log_std)
    return LossEval(total, report, graph)


def total_loss(mb: MiniBatch, params: PolicyParams, cfg: ObjectiveConfig):
    """Return ``(loss, ObjectiveReport)``."""
    ev = evaluate_loss(mb, params, cfg)
    return ev.loss, ev.report


def _surrogate_value(mb, params, cfg):
    return _surrogate(_PolicyEval(mb, params), cfg)[0]


def surrogate_clip(mb: MiniBatch, params: PolicyParams, epsilon: float) -> float:
    return _surrogate_value(mb, params, ObjectiveConfig(kind="clip", epsilon=epsilon))


def surrogate_klpen(mb: MiniBatch, params: PolicyParams, beta: float) -> float:
    return _surrogate_value(mb, params, ObjectiveConfig(kind="klpen", beta=beta))


def surrogate_klbar(mb: MiniBatch, params: PolicyParams, mu: float, delta: float,
                    barrier_floor: float = 1e-8) -> float:
    return _surrogate_value(mb, params, ObjectiveConfig(kind="klbar", mu=mu, delta=delta,
                                                        barrier_floor=barrier_floor))


def surrogate_adbar(mb: MiniBatch, params: PolicyParams, mu: float, delta: float,
                    barrier_floor: float = 1e-8) -> float:
    return _surrogate_value(mb, params, ObjectiveConfig(kind="adbar", mu=mu, delta=delta,
                                                        barrier_floor=barrier_floor))


def batch_kl(mb: MiniBatch, params: PolicyParams) -> float:
    """Mean KL(old || new) over a minibatch."""
    return float(_PolicyEval(mb, params).kl_old_new.mean())


def with_overrides(cfg: ObjectiveConfig, **changes) -> ObjectiveConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
