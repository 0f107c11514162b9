"""A2C, QR-A2C and QR-DQN as loss/update definitions over :mod:`qra2c.nn` networks."""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import nn
from .distributional import mean_of, quantile_huber_loss, quantile_midpoints, segment_targets
from .envs import EnvSpec
from .nn import ConfigurationError, NumericError
from .rollout import RolloutSegment

ALGOS = ("a2c", "qr_a2c", "qr_dqn")


@dataclass
class AgentConfig:
    algo: str = "qr_a2c"
    learning_rate: float = 7e-4
    n_steps: int = 100
    gamma: float = 0.99
    num_atoms: int = 64
    grad_clip: float = 0.5
    entropy_coef: float = 0.01
    value_loss_coef: float = 0.5
    num_workers: int = 1
    shared_trunk: bool = True
    kappa: float = 1.0
    hidden: tuple = (64, 64, 64)
    # qr_dqn only
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 10_000
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_sync_interval: int = 500
    learning_starts: int = 1000
    train_freq: int = 4

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        def bad(name, why):
            raise ConfigurationError(f"{name}: {why} (got {getattr(self, name)!r})")

        if self.algo not in ALGOS:
            bad("algo", f"must be one of {ALGOS}")
        if not 0.0 <= self.gamma <= 1.0:
            bad("gamma", "must lie in [0, 1]")
        if self.num_atoms < 1:
            bad("num_atoms", "must be >= 1")
        if self.entropy_coef < 0:
            bad("entropy_coef", "must be >= 0")
        if not self.learning_rate > 0:
            bad("learning_rate", "must be > 0")
        if not self.grad_clip > 0:
            bad("grad_clip", "must be > 0")
        if not self.kappa > 0:
            bad("kappa", "must be > 0")
        for name in ("n_steps", "num_workers", "batch_size", "replay_capacity",
                     "target_sync_interval", "train_freq"):
            if getattr(self, name) < 1:
                bad(name, "must be >= 1")
        if not self.hidden or min(self.hidden) < 1:
            bad("hidden", "needs at least one positive width")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            bad("epsilon_start", "need 0 <= epsilon_end <= epsilon_start <= 1")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# -- policy helpers -------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def policy_loss_and_grad(logits: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
                         entropy_coef: float) -> tuple[float, np.ndarray]:
    """-(1/n) sum[log pi(a|s) * A + beta * H(pi(.|s))] and its gradient w.r.t. logits.

    ``advantages`` are treated as constants.
    """
    n = logits.shape[0]
    logp = log_softmax(logits)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=-1)
    idx = np.arange(n)
    loss = -float(np.sum(logp[idx, actions] * advantages + entropy_coef * ent)) / n
    onehot = np.zeros_like(p)
    onehot[idx, actions] = 1.0
    d_ent = -p * (logp + ent[:, None])
    grad = -(advantages[:, None] * (onehot - p) + entropy_coef * d_ent) / n
    return loss, grad


# -- actor-critic network -------------------------------------------------

class ActorCriticNetwork:
    """Trunk of relu layers feeding a policy-logit head and a critic head.

    With ``shared`` the two heads sit on one trunk; otherwise actor and critic
    own disjoint trunks. Parameters live in a plain dict keyed by part name.
    """

    def __init__(self, obs_width: int, num_actions: int, critic_width: int,
                 shared: bool = True, hidden=(64, 64, 64)):
        self.obs_width = obs_width
        self.num_actions = num_actions
        self.critic_width = critic_width
        self.shared = shared
        self.hidden = tuple(hidden)

    def init(self, rng: np.random.Generator) -> dict:
        trunk = nn.mlp_specs(self.obs_width, self.hidden)
        h = self.hidden[-1]
        policy = [nn.LayerSpec(h, self.num_actions, "softmax-logits")]
        critic = [nn.LayerSpec(h, self.critic_width, "linear")]
        if self.shared:
            params = {"trunk": nn.init_params(trunk, rng)}
        else:
            params = {"actor_trunk": nn.init_params(trunk, rng),
                      "critic_trunk": nn.init_params(trunk, rng)}
        params["policy"] = nn.init_params(policy, rng)
        params["critic"] = nn.init_params(critic, rng)
        return params

    def forward(self, params: dict, obs: np.ndarray):
        """Return ``(logits, critic_out, cache)`` for a batch of observations."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        cache = {}
        if self.shared:
            h, cache["trunk"] = nn.forward(params["trunk"], obs)
            ha = hc = h
        else:
            ha, cache["actor_trunk"] = nn.forward(params["actor_trunk"], obs)
            hc, cache["critic_trunk"] = nn.forward(params["critic_trunk"], obs)
        logits, cache["policy"] = nn.forward(params["policy"], ha)
        critic, cache["critic"] = nn.forward(params["critic"], hc)
        return logits, critic, cache

    def logits(self, params: dict, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        key = "trunk" if self.shared else "actor_trunk"
        h, _ = nn.forward(params[key], obs)
        return nn.forward(params["policy"], h)[0]

    def critic(self, params: dict, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        key = "trunk" if self.shared else "critic_trunk"
        h, _ = nn.forward(params[key], obs)
        return nn.forward(params["critic"], h)[0]

    def backward(self, params: dict, cache: dict, d_logits: np.ndarray,
                 d_critic: np.ndarray) -> dict:
        grads = {}
        grads["policy"], dha = nn.backward(params["policy"], cache["policy"], d_logits, True)
        grads["critic"], dhc = nn.backward(params["critic"], cache["critic"], d_critic, True)
        if self.shared:
            grads["trunk"] = nn.backward(params["trunk"], cache["trunk"], dha + dhc)
        else:
            grads["actor_trunk"] = nn.backward(params["actor_trunk"], cache["actor_trunk"], dha)
            grads["critic_trunk"] = nn.backward(params["critic_trunk"], cache["critic_trunk"], dhc)
        return grads


def nstep_returns(rewards: np.ndarray, gamma: float, bootstrap_value: float) -> np.ndarray:
    """Discounted n-step returns for every step, bootstrapped at the end of the segment.

    Pass ``bootstrap_value = 0`` when the segment ends in a true terminal state.
    Accepts a :class:`RolloutSegment` in place of the reward array.
    """
    if isinstance(rewards, RolloutSegment):
        rewards = rewards.rewards
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    running = float(bootstrap_value)
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def advantage(returns: np.ndarray, baselines: np.ndarray) -> np.ndarray:
    returns = np.asarray(returns, dtype=np.float64)
    baselines = np.asarray(baselines, dtype=np.float64)
    if returns.shape != baselines.shape:
        raise ValueError(f"returns {returns.shape} and baselines {baselines.shape} differ")
    return returns - baselines


def _check_finite(loss):
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")


def a2c_loss(net: ActorCriticNetwork, params: dict, segment: RolloutSegment, returns: np.ndarray,
             entropy_coef: float = 0.01, value_loss_coef: float = 0.5):
    """Policy-gradient + entropy + squared-error critic loss over one segment."""
    n = len(segment)
    if n < 1:
        raise ValueError("empty segment")
    logits, values, cache = net.forward(params, segment.observations)
    values = values[:, 0]
    adv = advantage(returns, values)
    pol_loss, d_logits = policy_loss_and_grad(logits, segment.actions, adv, entropy_coef)
    err = returns - values
    val_loss = value_loss_coef * float(np.mean(err * err))
    d_values = (-2.0 * value_loss_coef / n * err)[:, None]
    loss = pol_loss + val_loss
    _check_finite(loss)
    return loss, net.backward(params, cache, d_logits, d_values)


def qr_a2c_loss(net: ActorCriticNetwork, params: dict, segment: RolloutSegment,
                targets: np.ndarray, entropy_coef: float = 0.01, value_loss_coef: float = 0.5,
                kappa: float = 1.0):
    """Actor term as in A2C with baseline = mean of critic atoms; quantile-Huber critic.

    ``targets`` has one row of target samples per step, shape ``(n, M)``.
    """
    n = len(segment)
    if n < 1:
        raise ValueError("empty segment")
    if net.critic_width < 1:
        raise ConfigurationError("critic head must have num_atoms outputs")
    logits, atoms, cache = net.forward(params, segment.observations)
    targets = np.asarray(targets, dtype=np.float64)
    adv = advantage(mean_of(targets), mean_of(atoms))
    pol_loss, d_logits = policy_loss_and_grad(logits, segment.actions, adv, entropy_coef)
    qh, d_atoms = quantile_huber_loss(atoms, targets, quantile_midpoints(net.critic_width), kappa)
    loss = pol_loss + value_loss_coef * qh
    _check_finite(loss)
    return loss, net.backward(params, cache, d_logits, value_loss_coef * d_atoms)


class ActorCriticAgent:
    """A2C (scalar critic) or QR-A2C (quantile critic), chosen by ``config.algo``."""

    def __init__(self, config: AgentConfig, spec: EnvSpec):
        if config.algo not in ("a2c", "qr_a2c"):
            raise ConfigurationError(f"algo: {config.algo!r} is not an actor-critic method")
        self.config = config
        self.spec = spec
        self.distributional = config.algo == "qr_a2c"
        width = config.num_atoms if self.distributional else 1
        self.net = ActorCriticNetwork(spec.observation_width, spec.action_count, width,
                                      config.shared_trunk, config.hidden)

    def init_params(self, rng: np.random.Generator) -> dict:
        return self.net.init(rng)

    def act(self, params: dict, obs: np.ndarray, rng: np.random.Generator) -> int:
        p = softmax(self.net.logits(params, obs)[0])
        return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), len(p) - 1))

    def greedy_action(self, params: dict, obs: np.ndarray) -> int:
        return int(np.argmax(self.net.logits(params, obs)[0]))

    def greedy_actions(self, params: dict, obs: np.ndarray) -> np.ndarray:
        return np.argmax(self.net.logits(params, obs), axis=-1)

    def bootstrap(self, params: dict, segment: RolloutSegment) -> np.ndarray:
        """Critic output at the segment's final state, zeroed after true termination."""
        out = self.net.critic(params, segment.final_observation)[0]
        return np.zeros_like(out) if segment.terminal else out

    def loss_and_grad(self, params: dict, segment: RolloutSegment):
        c = self.config
        boot = self.bootstrap(params, segment)
        if self.distributional:
            targets = segment_targets(segment.rewards, c.gamma, boot, segment.terminal)
            return qr_a2c_loss(self.net, params, segment, targets, c.entropy_coef,
                               c.value_loss_coef, c.kappa)
        returns = nstep_returns(segment.rewards, c.gamma, float(boot[0]))
        return a2c_loss(self.net, params, segment, returns, c.entropy_coef, c.value_loss_coef)


# -- QR-DQN ---------------------------------------------------------------

@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_width: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, obs_width))
        self.next_states = np.zeros((capacity, obs_width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition):
        i = self._next
        self.states[i] = t.state
        self.next_states[i] = t.next_state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.dones[i] = t.done
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_segment(self, seg: RolloutSegment):
        for t in seg.transitions():
            self.add(t)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} < batch_size {batch_size}")
        idx = rng.integers(self.size, size=batch_size)
        return {"states": self.states[idx], "actions": self.actions[idx],
                "rewards": self.rewards[idx], "next_states": self.next_states[idx],
                "dones": self.dones[idx]}


def batch_from_transitions(batch) -> dict:
    return {"states": np.array([t.state for t in batch], dtype=np.float64),
            "actions": np.array([t.action for t in batch], dtype=np.int64),
            "rewards": np.array([t.reward for t in batch], dtype=np.float64),
            "next_states": np.array([t.next_state for t in batch], dtype=np.float64),
            "dones": np.array([t.done for t in batch], dtype=bool)}


class QuantileQNetwork:
    """Relu trunk with a linear head of ``num_actions * num_atoms`` outputs."""

    def __init__(self, obs_width: int, num_actions: int, num_atoms: int, hidden=(64, 64, 64)):
        self.obs_width = obs_width
        self.num_actions = num_actions
        self.num_atoms = num_atoms
        self.hidden = tuple(hidden)

    def init(self, rng: np.random.Generator) -> dict:
        specs = nn.mlp_specs(self.obs_width, self.hidden, self.num_actions * self.num_atoms)
        return {"q": nn.init_params(specs, rng)}

    def quantiles(self, params: dict, obs: np.ndarray, with_cache: bool = False):
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        out, cache = nn.forward(params["q"], obs)
        q = out.reshape(len(obs), self.num_actions, self.num_atoms)
        return (q, cache) if with_cache else q


def qr_dqn_act(net: QuantileQNetwork, params: dict, state: np.ndarray, epsilon: float,
               rng: np.random.Generator) -> int:
    """Epsilon-greedy on the mean of each action's quantiles; ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigurationError(f"epsilon must lie in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(net.num_actions))
    return int(np.argmax(mean_of(net.quantiles(params, state)[0])))


def qr_dqn_targets(net: QuantileQNetwork, target_params: dict, batch, gamma: float) -> np.ndarray:
    """r + gamma * target quantiles of the greedy next action; bootstrap cut at terminals."""
    if not isinstance(batch, dict):
        batch = batch_from_transitions(batch)
    next_q = net.quantiles(target_params, batch["next_states"])
    greedy = np.argmax(next_q.mean(axis=-1), axis=-1)
    boot = next_q[np.arange(len(greedy)), greedy]
    not_done = (~batch["dones"]).astype(np.float64)[:, None]
    return batch["rewards"][:, None] + gamma * not_done * boot


def qr_dqn_update(net: QuantileQNetwork, params: dict, target_params: dict, batch,
                  gamma: float, kappa: float = 1.0):
    """Quantile-regression TD loss on a batch and its gradient w.r.t. ``params``.

    ``batch`` is a list of :class:`Transition` or a dict of stacked arrays.
    """
    if not isinstance(batch, dict):
        batch = batch_from_transitions(batch)
    b = len(batch["actions"])
    idx = np.arange(b)
    targets = qr_dqn_targets(net, target_params, batch, gamma)
    q, cache = net.quantiles(params, batch["states"], with_cache=True)
    chosen = q[idx, batch["actions"]]
    loss, d_chosen = quantile_huber_loss(chosen, targets, quantile_midpoints(net.num_atoms), kappa)
    d_q = np.zeros_like(q)
    d_q[idx, batch["actions"]] = d_chosen
    grads = {"q": nn.backward(params["q"], cache, d_q.reshape(b, -1))}
    _check_finite(loss)
    return loss, grads


def epsilon_at(step: int, start: float, end: float, decay_steps: int) -> float:
    if decay_steps <= 0 or step >= decay_steps:
        return end
    return start + (end - start) * step / decay_steps


class QRDQNAgent:
    def __init__(self, config: AgentConfig, spec: EnvSpec):
        if config.algo != "qr_dqn":
            raise ConfigurationError(f"algo: {config.algo!r} is not qr_dqn")
        self.config = config
        self.spec = spec
        self.net = QuantileQNetwork(spec.observation_width, spec.action_count,
                                    config.num_atoms, config.hidden)

    def init_params(self, rng: np.random.Generator) -> dict:
        return self.net.init(rng)

    def act(self, params: dict, obs: np.ndarray, rng: np.random.Generator,
            epsilon: float = 0.0) -> int:
        return qr_dqn_act(self.net, params, obs, epsilon, rng)

    def greedy_action(self, params: dict, obs: np.ndarray) -> int:
        return int(np.argmax(mean_of(self.net.quantiles(params, obs)[0])))

    def greedy_actions(self, params: dict, obs: np.ndarray) -> np.ndarray:
        return np.argmax(self.net.quantiles(params, obs).mean(axis=-1), axis=-1)

    def epsilon(self, env_steps: int) -> float:
        c = self.config
        return epsilon_at(env_steps, c.epsilon_start, c.epsilon_end, c.epsilon_decay_steps)

    def loss_and_grad(self, params: dict, target_params: dict, batch):
        return qr_dqn_update(self.net, params, target_params, batch, self.config.gamma,
                             self.config.kappa)


def make_agent(config: AgentConfig, spec: EnvSpec):
    if config.algo == "qr_dqn":
        return QRDQNAgent(config, spec)
    return ActorCriticAgent(config, spec)
