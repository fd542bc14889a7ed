import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppob.envs import CartPole, Corridor, Pendulum, dump_trace, exact_values, make_env
from ppob.errors import ConfigError, UsageError


def run(env, seed, actions):
    s = env.reset(seed=seed)
    out = [s]
    for a in actions:
        tr = env.step(a)
        out.append(tr.next_state)
        if tr.done:
            break
    return np.array(out)


def test_corridor_starts_in_cell_zero():
    for seed in (0, 7):
        np.testing.assert_array_equal(Corridor().reset(seed), [1, 0, 0, 0, 0])


def test_corridor_goal_and_wall():
    env = Corridor()
    env.reset(0)
    tr = env.step(0)
    assert Corridor.cell_of(tr.next_state) == 0 and tr.reward == 0.0 and not tr.done
    for _ in range(3):
        tr = env.step(1)
    assert Corridor.cell_of(tr.next_state) == 3
    tr = env.step(1)
    assert tr.reward == 1.0 and tr.done and not tr.timeout


def test_corridor_always_right_returns_one_in_four_steps():
    env = Corridor()
    env.reset(0)
    rewards = []
    while True:
        tr = env.step(1)
        rewards.append(tr.reward)
        if tr.done:
            break
    assert rewards == [0.0, 0.0, 0.0, 1.0]


def test_corridor_timeout_at_twenty():
    env = Corridor()
    env.reset(0)
    for t in range(20):
        tr = env.step(0)
    assert tr.done and tr.timeout


def test_step_after_done_is_usage_error():
    env = Corridor()
    env.reset(0)
    for _ in range(4):
        env.step(1)
    with pytest.raises(UsageError):
        env.step(1)


def test_cartpole_reset_deterministic():
    np.testing.assert_array_equal(CartPole().reset(5), CartPole().reset(5))
    assert np.all(np.abs(CartPole().reset(5)) <= 0.05)


def test_cartpole_euler_step_from_rest():
    # hand-executed: temp = 10/1.1, theta_acc = -temp / (0.5 (4/3 - 0.1/1.1)),
    # x_acc = temp - 0.05 theta_acc / 1.1, then one Euler step of dt = 0.02
    nxt = CartPole.dynamics(np.zeros(4), 10.0)
    np.testing.assert_allclose(nxt, [0.0, 0.1951219512195122, 0.0, -0.2926829268292683], rtol=1e-14)


def test_cartpole_fails_on_angle():
    env = CartPole()
    env.reset(0)
    env.state = np.array([0.0, 0.0, 0.25, 0.0])
    tr = env.step(1)
    assert tr.done and not tr.timeout and tr.reward == 1.0


def test_pendulum_reset_in_range_and_deterministic():
    env = Pendulum()
    s = env.reset(3)
    assert -math.pi <= env.theta <= math.pi and -1 <= env.theta_dot <= 1
    np.testing.assert_allclose(s, [math.cos(env.theta), math.sin(env.theta), env.theta_dot / 8])
    np.testing.assert_array_equal(Pendulum().reset(3), s)


def test_pendulum_torque_clipped():
    a, b = Pendulum(), Pendulum()
    a.reset(1)
    b.reset(1)
    ta, tb = a.step(np.array([50.0])), b.step(np.array([2.0]))
    np.testing.assert_array_equal(ta.next_state, tb.next_state)
    assert ta.reward == tb.reward


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.integers(0, 1), min_size=1, max_size=60))
def test_same_seed_same_actions_same_trajectory(seed, actions):
    for env_id in ("corridor", "cartpole"):
        a = run(make_env(env_id), seed, actions)
        b = run(make_env(env_id), seed, actions)
        assert a.tobytes() == b.tobytes()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(-3, 3), min_size=1, max_size=50))
def test_reward_signs(seed, torques):
    env = Pendulum()
    env.reset(seed)
    for u in torques:
        assert env.step(np.array([u])).reward <= 0
    env = CartPole()
    env.reset(seed)
    for u in torques:
        tr = env.step(int(u > 0))
        assert tr.reward == 1.0
        if tr.done:
            break


def test_pendulum_has_no_terminal():
    env = Pendulum()
    env.reset(0)
    for t in range(200):
        tr = env.step(np.zeros(1))
    assert tr.done and tr.timeout


def test_exact_values_optimal():
    np.testing.assert_array_equal(exact_values("corridor", 1.0), [1, 1, 1, 1])
    assert exact_values("corridor", 0.5)[0] == 0.125


def test_exact_values_uniform_policy_matches_iterative_evaluation():
    # frozen from 5000 sweeps of iterative policy evaluation
    expected = [0.2748765129520003, 0.3359601824968892, 0.47170167037442023, 0.7122657516684892]
    np.testing.assert_allclose(exact_values("corridor", 0.9, np.full((4, 2), 0.5)), expected, atol=1e-12)


def test_exact_values_rejects_other_envs():
    with pytest.raises(UsageError):
        exact_values("cartpole", 0.9)


def test_unknown_env():
    with pytest.raises(ConfigError):
        make_env("atari")


def test_trace_csv(tmp_path):
    env = Corridor()
    env.reset(0)
    trs = [env.step(1) for _ in range(4)]
    dump_trace(trs, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,s0,s1,s2,s3,s4,action,reward,done"
    assert lines[-1].endswith(",1,1.0,1")
    assert len(lines) == 5
