"""Classic-control environments and a sparse corridor, with no gym dependency.

CartPole and MountainCar follow the usual classic-control dynamics (explicit
Euler, standard constants) so returns are comparable with published numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .nn import ConfigurationError

ENV_IDS = ("cartpole", "mountaincar", "chainworld")


@dataclass(frozen=True)
class EnvSpec:
    id: str
    observation_width: int
    action_count: int
    max_episode_steps: int

    def __post_init__(self):
        if self.action_count < 2:
            raise ConfigurationError("action_count must be >= 2")
        if self.max_episode_steps < 1:
            raise ConfigurationError("max_episode_steps must be >= 1")


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


class Env:
    """Episodic interface shared by every environment.

    ``done`` marks a true terminal state; ``truncated`` marks the time limit.
    Stepping again after either is an error until :meth:`reset`.
    """

    spec: EnvSpec

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._over = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._over = False
        self._reset()
        return self._obs()

    def step(self, action: int) -> StepResult:
        if self._over:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        action = int(action)
        if not 0 <= action < self.spec.action_count:
            raise ValueError(f"action {action} outside [0, {self.spec.action_count})")
        reward, done = self._step(action)
        self.steps += 1
        truncated = not done and self.steps >= self.spec.max_episode_steps
        self._over = done or truncated
        return StepResult(self._obs(), float(reward), done, truncated)

    def _reset(self):
        raise NotImplementedError

    def _step(self, action: int) -> tuple[float, bool]:
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError


class CartPole(Env):
    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    total_mass = masscart + masspole
    length = 0.5  # half the pole length
    polemass_length = masspole * length
    force_mag = 10.0
    tau = 0.02
    theta_threshold = 12 * 2 * math.pi / 360
    x_threshold = 2.4

    def __init__(self, seed: int | None = None, max_episode_steps: int = 200):
        super().__init__(seed)
        self.spec = EnvSpec("cartpole", 4, 2, max_episode_steps)
        self.state = np.zeros(4)

    def _reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)

    def _step(self, action):
        self.state = cartpole_dynamics(self.state, action)
        x, _, theta, _ = self.state
        done = bool(x < -self.x_threshold or x > self.x_threshold
                    or theta < -self.theta_threshold or theta > self.theta_threshold)
        return 1.0, done

    def _obs(self):
        return self.state.copy()


def cartpole_dynamics(state: np.ndarray, action: int) -> np.ndarray:
    c = CartPole
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    force = c.force_mag if action == 1 else -c.force_mag
    costheta, sintheta = math.cos(theta), math.sin(theta)
    temp = (force + c.polemass_length * theta_dot ** 2 * sintheta) / c.total_mass
    thetaacc = (c.gravity * sintheta - costheta * temp) / (
        c.length * (4.0 / 3.0 - c.masspole * costheta ** 2 / c.total_mass))
    xacc = temp - c.polemass_length * thetaacc * costheta / c.total_mass
    x = x + c.tau * x_dot
    x_dot = x_dot + c.tau * xacc
    theta = theta + c.tau * theta_dot
    theta_dot = theta_dot + c.tau * thetaacc
    return np.array([x, x_dot, theta, theta_dot])


class MountainCar(Env):
    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.5
    force = 0.001
    gravity = 0.0025

    def __init__(self, seed: int | None = None, max_episode_steps: int = 200):
        super().__init__(seed)
        self.spec = EnvSpec("mountaincar", 2, 3, max_episode_steps)
        self.state = np.zeros(2)

    def _reset(self):
        self.state = np.array([self.rng.uniform(-0.6, -0.4), 0.0])

    def _step(self, action):
        position, velocity = (float(v) for v in self.state)
        velocity += (action - 1) * self.force + math.cos(3 * position) * (-self.gravity)
        velocity = min(max(velocity, -self.max_speed), self.max_speed)
        position += velocity
        position = min(max(position, self.min_position), self.max_position)
        if position == self.min_position and velocity < 0:
            velocity = 0.0
        self.state = np.array([position, velocity])
        return -1.0, bool(position >= self.goal_position)

    def _obs(self):
        return self.state.copy()


class ChainWorld(Env):
    """Corridor of ``length`` cells; action 0 moves forward, 1 moves back.

    Moving forward from the last cell ends the episode with reward 1, so the
    always-forward policy collects its only reward on step ``length``.
    """

    FORWARD, BACK = 0, 1

    def __init__(self, seed: int | None = None, length: int = 5,
                 max_episode_steps: int | None = None):
        super().__init__(seed)
        if length < 1:
            raise ConfigurationError("chain length must be >= 1")
        self.length = length
        self.spec = EnvSpec("chainworld", length, 2, max_episode_steps or 10 * length)
        self.position = 0

    def _reset(self):
        self.position = 0

    def _step(self, action):
        if action == self.FORWARD:
            if self.position == self.length - 1:
                return 1.0, True
            self.position += 1
        else:
            self.position = max(self.position - 1, 0)
        return 0.0, False

    def _obs(self):
        obs = np.zeros(self.length)
        obs[self.position] = 1.0
        return obs


def make_env(env_id: str, seed: int | None = None, **kw) -> Env:
    if env_id == "cartpole":
        return CartPole(seed, **kw)
    if env_id == "mountaincar":
        return MountainCar(seed, **kw)
    if env_id == "chainworld":
        return ChainWorld(seed, **kw)
    raise ConfigurationError(f"unknown env {env_id!r}; expected one of {ENV_IDS}")


def max_return(spec: EnvSpec) -> float:
    """Best attainable (or, for MountainCar, conventional solve) episode return."""
    if spec.id == "cartpole":
        return float(spec.max_episode_steps)
    if spec.id == "chainworld":
        return 1.0
    if spec.id == "mountaincar":
        return -110.0
    raise ConfigurationError(f"unknown env {spec.id!r}")


def default_solve_threshold(spec: EnvSpec) -> float:
    if spec.id == "cartpole":
        return 195.0
    return max_return(spec)
