"""Synchronous multi-worker experience collection and barrier updates."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .envs import make_env
from .nn import NumericError


@dataclass
class RolloutSegment:
    observations: np.ndarray   # (T, obs_width)
    actions: np.ndarray        # (T,)
    rewards: np.ndarray        # (T,)
    dones: np.ndarray          # (T,) true termination
    truncated: np.ndarray      # (T,) time-limit cut
    final_observation: np.ndarray
    worker_id: int = 0
    episode_returns: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.actions)
        for name in ("observations", "rewards", "dones", "truncated"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"segment field {name} has length {len(getattr(self, name))} != {n}")
        ends = np.flatnonzero(np.asarray(self.dones) | np.asarray(self.truncated))
        if len(ends) > 1 or (len(ends) == 1 and ends[0] != n - 1):
            raise ValueError("an episode end may only appear at the last step of a segment")

    def __len__(self):
        return len(self.actions)

    @property
    def terminal(self) -> bool:
        """True if the segment ends in a real terminal state (no bootstrap)."""
        return bool(len(self) and self.dones[-1])

    def transitions(self):
        from .agents import Transition

        nxt = list(self.observations[1:]) + [self.final_observation]
        for t in range(len(self)):
            yield Transition(self.observations[t], int(self.actions[t]), float(self.rewards[t]),
                             nxt[t], bool(self.dones[t]))


class WorkerPool:
    """One environment and one private random stream per worker.

    Worker ``i`` derives all its randomness from ``seed + i``; the environment
    and the action sampler get independent child streams of that seed.
    """

    def __init__(self, env_id: str, num_workers: int, seed: int, parallel: bool = False,
                 env_kwargs: dict | None = None):
        self.env_id = env_id
        self.parallel = parallel
        self.envs, self.rngs, self.obs = [], [], []
        self.episode_return = [0.0] * num_workers
        for i in range(num_workers):
            env_ss, act_ss = np.random.SeedSequence(seed + i).spawn(2)
            env = make_env(env_id, None, **(env_kwargs or {}))
            env.rng = np.random.default_rng(env_ss)
            self.envs.append(env)
            self.rngs.append(np.random.default_rng(act_ss))
            self.obs.append(env.reset())
        self._executor = ThreadPoolExecutor(num_workers) if parallel and num_workers > 1 else None

    @property
    def num_workers(self) -> int:
        return len(self.envs)

    @property
    def spec(self):
        return self.envs[0].spec

    def close(self):
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def run_worker(self, i: int, policy, n_steps: int) -> RolloutSegment:
        env, rng = self.envs[i], self.rngs[i]
        obs = self.obs[i]
        observations, actions, rewards, dones, truncs, finished = [], [], [], [], [], []
        for _ in range(n_steps):
            a = policy(obs, rng)
            res = env.step(a)
            observations.append(obs)
            actions.append(a)
            rewards.append(res.reward)
            dones.append(res.done)
            truncs.append(res.truncated)
            self.episode_return[i] += res.reward
            obs = res.observation
            if res.done or res.truncated:
                finished.append(self.episode_return[i])
                self.episode_return[i] = 0.0
                final = obs
                self.obs[i] = env.reset()
                break
        else:
            final = obs
            self.obs[i] = obs
        return RolloutSegment(np.array(observations), np.array(actions, dtype=np.int64),
                              np.array(rewards), np.array(dones, dtype=bool),
                              np.array(truncs, dtype=bool), final, i, finished)


def collect(pool: WorkerPool, agent, params, n_steps: int, **act_kwargs) -> list[RolloutSegment]:
    """Advance every worker up to ``n_steps`` under one parameter snapshot.

    A segment is shorter than ``n_steps`` only when its episode ended; the
    worker's environment is reset for the next call.
    """
    def policy(obs, rng):
        return agent.act(params, obs, rng, **act_kwargs)

    ids = range(pool.num_workers)
    if pool._executor is not None:
        return list(pool._executor.map(lambda i: pool.run_worker(i, policy, n_steps), ids))
    return [pool.run_worker(i, policy, n_steps) for i in ids]


def average_grads(grads: list) -> nn.Tree:
    k = len(grads)
    return nn.tree_map(lambda *gs: sum(gs[1:], gs[0]) / k, grads[0], *grads[1:])


def synchronous_update(segments: list[RolloutSegment], agent, params, optimizer: nn.Adam,
                       grad_clip: float):
    """Average per-segment gradients, clip the global norm, take one Adam step.

    Returns ``(new_params, mean_loss)``.
    """
    losses, grads = [], []
    for seg in segments:
        loss, g = agent.loss_and_grad(params, seg)
        losses.append(loss)
        grads.append(g)
    avg = average_grads(grads)
    if not np.isfinite(nn.global_norm(avg)):
        raise NumericError("non-finite averaged gradient")
    avg = nn.clip_global_norm(avg, grad_clip)
    return optimizer.step(params, avg), float(np.mean(losses))
