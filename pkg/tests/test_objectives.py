import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from ppob.distributions import Categorical, DiagGaussian, kl_divergence
from ppob.errors import ConfigError, UsageError
from ppob.net import HeadSpec, backward, zero_params
from ppob.objectives import (ObjectiveConfig, ad_distance, adapt_beta, evaluate_loss, ratio,
                             surrogate_adbar, surrogate_clip, surrogate_klbar, surrogate_klpen,
                             total_loss)
from ppob.rollout import MiniBatch

from conftest import central_differences, max_rel_error, perturbed, small_params, synthetic_minibatch


def constant_policy(probs):
    """Zero-weight network whose policy logits are ``ln probs`` for every state."""
    p = zero_params(2, HeadSpec("categorical", len(probs)), hidden=(3, 3))
    p["pi.2.b"][:] = np.log(probs)
    return p


def hand_batch(actions, old_probs, adv, old_logits=None, returns=None, n_actions=2):
    B = len(actions)
    old_probs = np.asarray(old_probs, dtype=float)
    head = np.zeros((B, n_actions)) if old_logits is None else np.asarray(old_logits, dtype=float)
    return MiniBatch(np.zeros((B, 2)), np.asarray(actions), np.log(old_probs), old_probs, head, None,
                     np.asarray(adv, dtype=float), np.zeros(B) if returns is None else np.asarray(returns))


# ratio / KL / AD distance


def test_ratio_examples():
    assert ratio(-0.7, -0.7) == 1.0
    assert ratio(math.log(2) - 1.0, -1.0) == pytest.approx(2.0, rel=1e-15)
    assert ratio(-1.0 - math.log(4), -1.0) == pytest.approx(0.25, rel=1e-15)
    assert ratio(100.0, 0.0) == math.exp(30.0)


def test_kl_examples():
    p = Categorical(np.log([0.5, 0.5]))
    assert kl_divergence(p, p) == 0.0
    q = Categorical(np.log([0.25, 0.75]))
    assert kl_divergence(p, q) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-14)
    assert kl_divergence(p, q) == pytest.approx(0.14384, abs=1e-5)
    g0 = DiagGaussian(np.zeros(1), np.zeros(1))
    g1 = DiagGaussian(np.ones(1), np.zeros(1))
    assert kl_divergence(g0, g1) == pytest.approx(0.5, abs=1e-15)


def test_kl_family_mismatch():
    with pytest.raises(UsageError):
        kl_divergence(Categorical(np.zeros(2)), DiagGaussian(np.zeros(2), np.zeros(2)))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-6, 6), min_size=2, max_size=5), st.lists(st.floats(-6, 6), min_size=2, max_size=5))
def test_categorical_kl_nonnegative(a, b):
    n = min(len(a), len(b))
    p, q = Categorical(np.array(a[:n])), Categorical(np.array(b[:n]))
    kl = kl_divergence(p, q)
    assert kl >= -1e-10
    if np.allclose(p.probs, q.probs, atol=0, rtol=0):
        assert abs(kl) <= 1e-10
    # the categorical closed form agrees with a direct sum
    direct = sum(pi * math.log(pi / qi) for pi, qi in zip(p.probs, q.probs) if pi > 0)
    assert kl == pytest.approx(direct, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2))
def test_gaussian_kl_nonnegative(m0, m1, s0, s1):
    kl = kl_divergence(DiagGaussian(np.array([m0]), np.array([s0])), DiagGaussian(np.array([m1]), np.array([s1])))
    assert kl >= -1e-10
    if m0 == m1 and s0 == s1:
        assert abs(kl) <= 1e-10


def test_gaussian_kl_matches_quadrature():
    m0, s0, m1, s1 = 0.3, 0.8, -0.4, 1.3
    x = np.linspace(-12, 12, 200001)
    p = np.exp(-0.5 * ((x - m0) / s0) ** 2) / (s0 * math.sqrt(2 * math.pi))
    q = np.exp(-0.5 * ((x - m1) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
    quad = np.trapezoid(p * np.log(p / q), x)
    closed = kl_divergence(DiagGaussian(np.array([m0]), np.log([s0])), DiagGaussian(np.array([m1]), np.log([s1])))
    assert closed == pytest.approx(quad, abs=1e-8)


def test_ad_distance_examples():
    assert ad_distance(0.3, 0.3) == 0.0
    assert ad_distance(0.25, 0.81) == pytest.approx(0.16, abs=1e-15)
    assert ad_distance(1.0, 0.0) == 1.0
    with pytest.raises(UsageError):
        ad_distance(-0.1, 0.5)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_ad_distance_symmetric_and_bounded(p, q):
    d = ad_distance(p, q)
    assert d == ad_distance(q, p)
    assert 0 <= d <= 1


# surrogates on hand-built batches


def test_clip_examples():
    p = constant_policy([0.5, 0.5])
    # r = 0.5 / old_prob
    assert surrogate_clip(hand_batch([0], [0.5 / 1.3], [1.0]), p, 0.2) == pytest.approx(1.2, abs=1e-12)
    assert surrogate_clip(hand_batch([0], [0.5 / 0.5], [-1.0]), p, 0.2) == pytest.approx(-0.8, abs=1e-12)
    adv = [0.3, -1.2, 2.0]
    assert surrogate_clip(hand_batch([0, 1, 0], [0.5] * 3, adv), p, 0.2) == pytest.approx(np.mean(adv), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.81, 1.19), st.floats(-3, 3)), min_size=1, max_size=8))
def test_clip_inactive_region(samples):
    p = constant_policy([0.5, 0.5])
    r = np.array([s[0] for s in samples])
    adv = np.array([s[1] for s in samples])
    mb = hand_batch(np.zeros(len(r), dtype=int), 0.5 / r, adv)
    assert surrogate_clip(mb, p, 0.2) == pytest.approx(float(np.mean(r * adv)), abs=1e-12)


def test_klpen_identity_and_zero_beta():
    p = constant_policy([0.3, 0.7])
    adv = [1.0, -0.5]
    mb = hand_batch([0, 1], [0.3, 0.7], adv, old_logits=np.log([[0.3, 0.7]] * 2))
    assert surrogate_klpen(mb, p, 1.0) == pytest.approx(np.mean(adv), abs=1e-12)
    mb2 = hand_batch([0, 1], [0.6, 0.35], adv, old_logits=np.log([[0.6, 0.4], [0.65, 0.35]]))
    direct = np.mean([0.3 / 0.6 * 1.0, 0.7 / 0.35 * -0.5])
    assert surrogate_klpen(mb2, p, 0.0) == pytest.approx(direct, abs=1e-12)


def test_klpen_two_sample_direct_evaluation():
    p = constant_policy([0.3, 0.7])
    old = [[0.6, 0.4], [0.65, 0.35]]
    mb = hand_batch([0, 1], [0.6, 0.35], [1.0, -0.5], old_logits=np.log(old))
    kl = [sum(o * math.log(o / n) for o, n in zip(row, [0.3, 0.7])) for row in old]
    direct = np.mean([0.5 * 1.0, 2.0 * -0.5]) - 0.7 * np.mean(kl)
    assert surrogate_klpen(mb, p, 0.7) == pytest.approx(direct, abs=1e-12)


def test_klbar_identity_and_two_sample():
    p = constant_policy([0.3, 0.7])
    mb = hand_batch([0, 1], [0.3, 0.7], [1.0, 2.0], old_logits=np.log([[0.3, 0.7]] * 2))
    assert surrogate_klbar(mb, p, 1.0, 0.5) == pytest.approx(1.5 + math.log(0.5), abs=1e-12)
    old = [[0.5, 0.5], [0.2, 0.8]]
    mb = hand_batch([0, 1], [0.5, 0.8], [1.0, -1.0], old_logits=np.log(old))
    # KL(new || old), as in the barrier objective
    kl = [sum(n * math.log(n / o) for n, o in zip([0.3, 0.7], row)) for row in old]
    direct = np.mean([0.3 / 0.5 * 1.0 + 2.0 * math.log(0.25 - kl[0]),
                      0.7 / 0.8 * -1.0 + 2.0 * math.log(0.25 - kl[1])])
    assert surrogate_klbar(mb, p, 2.0, 0.25) == pytest.approx(direct, abs=1e-12)


def test_klbar_floor_near_boundary():
    p = constant_policy([0.01, 0.99])
    old = [[0.99, 0.01]]
    mb = hand_batch([1], [0.01], [0.0], old_logits=np.log(old))
    val = surrogate_klbar(mb, p, 1.0, 0.5)
    assert val == pytest.approx(math.log(1e-8), abs=1e-12)
    _, rep = total_loss(mb, p, ObjectiveConfig(kind="klbar"))
    assert rep.violations == 1


def test_adbar_examples():
    p = constant_policy([0.19, 0.81])
    mb = hand_batch([1], [0.25], [0.0])
    assert surrogate_adbar(mb, p, 1.0, 0.5) == pytest.approx(math.log(0.34), abs=1e-12)
    assert surrogate_adbar(mb, p, 1.0, 0.5) == pytest.approx(-1.0788, abs=1e-4)
    same = hand_batch([0, 1], [0.19, 0.81], [2.0, 1.0])
    assert surrogate_adbar(same, p, 1.0, 0.5) == pytest.approx(1.5 + math.log(0.5), abs=1e-12)
    assert math.log(0.5) == pytest.approx(-0.6931, abs=1e-4)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_adbar_strictly_decreasing_in_distance(p_old, q1, q2):
    d1, d2 = ad_distance(p_old, q1), ad_distance(p_old, q2)
    assume(d1 + 1e-9 < d2 < 0.5 - 1e-6)
    v1 = surrogate_adbar(hand_batch([0], [p_old], [0.0]), constant_policy([q1, 1 - q1]), 1.0, 0.5)
    v2 = surrogate_adbar(hand_batch([0], [p_old], [0.0]), constant_policy([q2, 1 - q2]), 1.0, 0.5)
    assert v2 < v1


def test_adbar_gaussian_density_can_violate():
    p = zero_params(2, HeadSpec("gaussian", 1), hidden=(3, 3))
    p["log_std"][:] = -3.0  # density at the mean ~ 8
    mb = MiniBatch(np.zeros((1, 2)), np.zeros((1, 1)), np.array([math.log(0.4)]), np.array([0.4]),
                   np.zeros((1, 1)), np.zeros(1), np.zeros(1), np.zeros(1))
    _, rep = total_loss(mb, p, ObjectiveConfig(kind="adbar"))
    assert rep.violations == 1
    assert math.isfinite(rep.total_loss)


# composed loss


@pytest.mark.parametrize("kind", ["clip", "klpen", "klbar", "adbar"])
def test_identity_anchors(head, kind):
    params = small_params(head, seed=4)
    mb = synthetic_minibatch(params, seed=5)
    ev = evaluate_loss(mb, params, ObjectiveConfig(kind=kind, vf_coeff=0.0, entropy_coeff=0.0))
    assert ev.report.mean_ratio == pytest.approx(1.0, abs=1e-12)
    assert abs(ev.report.mean_kl) < 1e-12
    assert abs(ev.report.mean_ad) < 1e-12
    expected = mb.advantage.mean() + (math.log(0.5) if kind in ("klbar", "adbar") else 0.0)
    assert ev.report.surrogate == pytest.approx(expected, abs=1e-10)
    assert ev.loss == pytest.approx(-expected, abs=1e-10)


def test_total_loss_hand_built_adbar():
    p = constant_policy([0.2, 0.8])
    p["v.2.b"][:] = 0.5
    mb = hand_batch([0, 1], [0.25, 0.64], [1.0, -2.0], returns=[1.5, 0.0])
    cfg = ObjectiveConfig(kind="adbar", mu=1.0, delta=0.5, vf_coeff=0.5, entropy_coeff=0.01)
    loss, rep = total_loss(mb, p, cfg)
    surr = np.mean([0.2 / 0.25 * 1.0 + math.log(0.5 - (math.sqrt(0.2) - 0.5) ** 2),
                    0.8 / 0.64 * -2.0 + math.log(0.5 - (math.sqrt(0.8) - 0.8) ** 2)])
    vl = np.mean([(0.5 - 1.5) ** 2, 0.5 ** 2])
    ent = -(0.2 * math.log(0.2) + 0.8 * math.log(0.8))
    assert rep.surrogate == pytest.approx(surr, abs=1e-12)
    assert rep.value_loss == pytest.approx(vl, abs=1e-12)
    assert rep.entropy == pytest.approx(ent, abs=1e-12)
    assert loss == pytest.approx(-surr + 0.5 * vl - 0.01 * ent, abs=1e-12)


def test_total_loss_perfect_critic_deterministic_policy():
    p = constant_policy([1e-12, 1 - 1e-12])
    p["v.2.b"][:] = 2.0
    mb = hand_batch([1, 1], [1 - 1e-12] * 2, [0.0, 0.0], returns=[2.0, 2.0])
    loss, rep = total_loss(mb, p, ObjectiveConfig(kind="clip", vf_coeff=1.0, entropy_coeff=0.01))
    assert rep.value_loss == 0.0
    assert rep.entropy < 1e-9


def test_total_loss_without_extras_is_negated_surrogate():
    params = small_params("gaussian", seed=2)
    mb = synthetic_minibatch(perturbed(params, 0.05, 1), seed=2)
    loss, rep = total_loss(mb, params, ObjectiveConfig(kind="adbar", vf_coeff=0.0, entropy_coeff=0.0))
    assert loss == -rep.surrogate


@pytest.mark.parametrize("kind", ["clip", "klpen", "klbar", "adbar"])
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(head, kind, seed):
    params = small_params(head, seed=seed)
    assert params.layout.size <= 200
    mb = synthetic_minibatch(perturbed(params, 0.05, seed + 10), B=16, seed=seed)
    cfg = ObjectiveConfig(kind=kind, epsilon=0.05, beta=0.7, vf_coeff=0.5, entropy_coeff=0.01)
    ev = evaluate_loss(mb, params, cfg)
    fd = central_differences(lambda f: evaluate_loss(mb, params.with_flat(f), cfg).loss, params.flat)
    assert max_rel_error(backward(ev.graph).flat, fd) <= 1e-4


def test_config_validation():
    with pytest.raises(ConfigError) as e:
        ObjectiveConfig(kind="trpo")
    assert e.value.key == "objective"
    for key in ("delta", "mu", "epsilon", "barrier_floor"):
        with pytest.raises(ConfigError) as e:
            ObjectiveConfig(**{key: 0.0})
        assert e.value.key == key


def test_adaptive_beta_rule():
    assert adapt_beta(1.0, 0.02, 0.01) == 2.0
    assert adapt_beta(1.0, 0.005, 0.01) == 0.5
    assert adapt_beta(1.0, 0.01, 0.01) == 1.0
