"""Seedable desk-scale environments: corridor, cartpole, pendulum."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ppob.errors import ConfigError, UsageError


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Continuous:
    dim: int
    low: float
    high: float


@dataclass(frozen=True)
class EnvSpec:
    id: str
    observation_dim: int
    action_space: Any
    max_episode_steps: int

    def __post_init__(self):
        if self.observation_dim < 1 or self.max_episode_steps < 1:
            raise ConfigError("env", "dimensions must be positive")
        sp = self.action_space
        if isinstance(sp, Discrete) and sp.n < 1:
            raise ConfigError("env", "empty discrete action space")
        if isinstance(sp, Continuous):
            if not (math.isfinite(sp.low) and math.isfinite(sp.high) and sp.low < sp.high):
                raise ConfigError("env", "continuous bounds must be finite with low < high")


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: Any
    reward: float
    next_state: np.ndarray
    done: bool
    timeout: bool = False


class Env:
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._done = True

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        self._rng = np.random.default_rng(seed)
        self._t = 0
        self._done = False
        self._reset()
        return self._obs()

    def step(self, action) -> Transition:
        if self._done:
            raise UsageError(f"{self.spec.id}: step() on a finished episode; call reset()")
        state = self._obs()
        reward, terminal = self._step(action)
        self._t += 1
        timeout = not terminal and self._t >= self.spec.max_episode_steps
        self._done = terminal or timeout
        return Transition(state, action, float(reward), self._obs(), self._done, timeout)

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError


class Corridor(Env):
    """Five cells in a line; start at 0, +1 on entering cell 4 (terminal).

    Actions: 0 = left, 1 = right.
    """

    n_cells = 5
    goal = 4
    spec = EnvSpec("corridor", 5, Discrete(2), 20)

    def _reset(self):
        self.cell = 0

    def _step(self, action):
        if action not in (0, 1):
            raise UsageError(f"corridor action must be 0 or 1, got {action!r}")
        self.cell = min(self.cell + 1, self.goal) if action == 1 else max(self.cell - 1, 0)
        reached = self.cell == self.goal
        return (1.0 if reached else 0.0), reached

    def _obs(self):
        s = np.zeros(self.n_cells)
        s[self.cell] = 1.0
        return s

    @staticmethod
    def cell_of(state) -> int:
        return int(np.argmax(state))


class CartPole(Env):
    """Classic cart-pole with explicit Euler integration."""

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5  # half the pole length
    force_mag = 10.0
    tau = 0.02
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4
    spec = EnvSpec("cartpole", 4, Discrete(2), 500)

    def _reset(self):
        self.state = self._rng.uniform(-0.05, 0.05, size=4)

    def _step(self, action):
        if action not in (0, 1):
            raise UsageError(f"cartpole action must be 0 or 1, got {action!r}")
        self.state = self.dynamics(self.state, self.force_mag if action == 1 else -self.force_mag)
        x, _, theta, _ = self.state
        failed = abs(x) > self.x_limit or abs(theta) > self.theta_limit
        return 1.0, bool(failed)

    @classmethod
    def dynamics(cls, state, force):
        x, x_dot, theta, theta_dot = state
        total_mass = cls.masscart + cls.masspole
        polemass_length = cls.masspole * cls.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + polemass_length * theta_dot ** 2 * sin) / total_mass
        theta_acc = (cls.gravity * sin - cos * temp) / (
            cls.length * (4.0 / 3.0 - cls.masspole * cos ** 2 / total_mass))
        x_acc = temp - polemass_length * theta_acc * cos / total_mass
        return np.array([
            x + cls.tau * x_dot,
            x_dot + cls.tau * x_acc,
            theta + cls.tau * theta_dot,
            theta_dot + cls.tau * theta_acc,
        ])

    def _obs(self):
        return self.state.copy()


class Pendulum(Env):
    """Torque-controlled swing-up; angle 0 is upright, no terminal state."""

    max_torque = 2.0
    max_speed = 8.0
    dt = 0.05
    g = 10.0
    m = 1.0
    l = 1.0
    spec = EnvSpec("pendulum", 3, Continuous(1, -2.0, 2.0), 200)

    def _reset(self):
        self.theta = float(self._rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self._rng.uniform(-1.0, 1.0))

    def _step(self, action):
        u = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0],
                          -self.max_torque, self.max_torque))
        angle = ((self.theta + math.pi) % (2 * math.pi)) - math.pi
        reward = -(angle ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * u ** 2)
        theta_dot = self.theta_dot + (3 * self.g / (2 * self.l) * math.sin(self.theta)
                                      + 3.0 / (self.m * self.l ** 2) * u) * self.dt
        self.theta_dot = float(np.clip(theta_dot, -self.max_speed, self.max_speed))
        self.theta = self.theta + self.theta_dot * self.dt
        return reward, False

    def _obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot / 8.0])


ENVS = {"corridor": Corridor, "cartpole": CartPole, "pendulum": Pendulum}


def make_env(env_id: str) -> Env:
    try:
        return ENVS[env_id]()
    except KeyError:
        raise ConfigError("env", f"unknown environment {env_id!r}; choose from {sorted(ENVS)}") from None


def head_for(spec: EnvSpec):
    from ppob.net import HeadSpec

    if isinstance(spec.action_space, Discrete):
        return HeadSpec("categorical", spec.action_space.n)
    return HeadSpec("gaussian", spec.action_space.dim)


def _corridor_transition(policy):
    """Transition matrix among non-terminal cells 0..3 and expected reward."""
    pi = np.asarray(policy, dtype=np.float64)
    if pi.shape != (4, 2):
        raise UsageError("tabular corridor policy must have shape (4, 2): cells 0-3 x (left, right)")
    P = np.zeros((4, 4))
    R = np.zeros(4)
    for k in range(4):
        left, right = pi[k]
        P[k, max(k - 1, 0)] += left
        if k + 1 < 4:
            P[k, k + 1] += right
        else:
            R[k] = right
    return P, R


def exact_values(env, gamma: float, policy=None) -> np.ndarray:
    """State values of the corridor's non-terminal cells 0..3.

    Without ``policy`` returns the optimal values ``gamma ** (3 - k)``.  With
    a (4, 2) table of (left, right) probabilities, solves
    ``(I - gamma P) V = R`` for that policy.  The terminal cell has value 0
    and the step limit is ignored.
    """
    env_id = env if isinstance(env, str) else env.spec.id
    if env_id != "corridor":
        raise UsageError(f"exact_values needs the tabular corridor, got {env_id!r}")
    if policy is None:
        return np.array([gamma ** (3 - k) for k in range(4)], dtype=np.float64)
    P, R = _corridor_transition(policy)
    return np.linalg.solve(np.eye(4) - gamma * P, R)


def dump_trace(transitions, path):
    """Write an episode trace as CSV: t, state..., action, reward, done."""
    transitions = list(transitions)
    if not transitions:
        raise UsageError("empty trace")
    n_s = len(np.atleast_1d(transitions[0].state))
    n_a = len(np.atleast_1d(transitions[0].action))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *[f"s{i}" for i in range(n_s)],
                    *(["action"] if n_a == 1 else [f"a{i}" for i in range(n_a)]), "reward", "done"])
        for t, tr in enumerate(transitions):
            w.writerow([t, *[repr(float(v)) for v in np.atleast_1d(tr.state)],
                        *[repr(v.item()) for v in np.atleast_1d(tr.action)],
                        repr(tr.reward), int(tr.done)])
