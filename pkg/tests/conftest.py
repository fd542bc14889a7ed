import numpy as np
import pytest

from ppob.net import HeadSpec, forward, init_params
from ppob.rollout import MiniBatch


def small_params(head="categorical", seed=0, scale=0.3, obs_dim=3, hidden=(6, 6)):
    """A <=200-parameter network with weights pushed away from the init."""
    spec = HeadSpec("categorical", 3) if head == "categorical" else HeadSpec("gaussian", 2)
    p = init_params(obs_dim, spec, hidden=hidden, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    return p.with_flat(p.flat + scale * rng.standard_normal(p.flat.shape))


def synthetic_minibatch(params_old, B=16, seed=0, advantages=None):
    """Samples drawn from ``params_old`` with random advantages and returns."""
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((B, params_old.layout.obs_dim))
    dist, _ = forward(params_old, s)
    a = dist.sample(rng)
    lp = dist.log_prob(a)
    head = dist.logits if params_old.layout.head.kind == "categorical" else dist.mean
    log_std = None if params_old.layout.head.kind == "categorical" else params_old["log_std"].copy()
    adv = rng.standard_normal(B) if advantages is None else np.asarray(advantages, dtype=float)
    return MiniBatch(s, a, lp, np.exp(lp), head.copy(), log_std, adv, rng.standard_normal(B))


def perturbed(params, scale, seed):
    rng = np.random.default_rng(seed)
    return params.with_flat(params.flat + scale * rng.standard_normal(params.flat.shape))


def central_differences(fn, flat, h=1e-5):
    g = np.zeros_like(flat)
    for i in range(len(flat)):
        e = np.zeros_like(flat)
        e[i] = h
        g[i] = (fn(flat + e) - fn(flat - e)) / (2 * h)
    return g


def max_rel_error(analytic, fd, floor=1e-8):
    mask = np.abs(fd) > floor
    return float((np.abs(analytic - fd)[mask] / np.abs(fd[mask])).max())


@pytest.fixture(params=["categorical", "gaussian"])
def head(request):
    return request.param
