import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qra2c import nn
from qra2c.agents import (ActorCriticAgent, ActorCriticNetwork, AgentConfig, QRDQNAgent,
                          QuantileQNetwork, ReplayBuffer, Transition, a2c_loss, advantage,
                          entropy, epsilon_at, nstep_returns, policy_loss_and_grad, qr_a2c_loss,
                          qr_dqn_act, qr_dqn_targets, qr_dqn_update, softmax)
from qra2c.distributional import mean_of, quantile_midpoints, segment_targets
from qra2c.envs import CartPole
from qra2c.nn import ConfigurationError
from qra2c.rollout import RolloutSegment

from oracles import a2c_surrogate, fd_error, qr_a2c_surrogate, rho


def random_segment(rng, n=3, obs_width=4, num_actions=2, terminal=False):
    dones = np.zeros(n, dtype=bool)
    dones[-1] = terminal
    return RolloutSegment(rng.normal(size=(n, obs_width)), rng.integers(num_actions, size=n),
                          rng.normal(size=n), dones, np.zeros(n, dtype=bool),
                          rng.normal(size=obs_width))


def jitter_biases(params, rng):
    # non-zero biases so no relu sits exactly at its kink
    return {k: p.map(lambda a: a + rng.normal(scale=0.1, size=a.shape) if a.ndim == 1 else a)
            for k, p in params.items()}


# -- returns and advantages ------------------------------------------------

def test_nstep_returns_examples():
    assert nstep_returns([1.0, 1.0, 1.0], 0.99, 0.0)[0] == pytest.approx(2.9701, abs=1e-12)
    r = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(nstep_returns(r, 0.0, 100.0), r)
    assert nstep_returns([0.0, 0.0], 0.9, 5.0)[0] == pytest.approx(4.05, abs=1e-12)


def test_nstep_returns_accepts_segment():
    seg = random_segment(np.random.default_rng(0), n=4)
    np.testing.assert_array_equal(nstep_returns(seg, 0.9, 1.0), nstep_returns(seg.rewards, 0.9, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(0, 1), st.floats(-20, 20))
def test_nstep_returns_match_direct_sum(rewards, gamma, boot):
    out = nstep_returns(rewards, gamma, boot)
    n = len(rewards)
    for t in range(n):
        direct = sum(gamma ** k * rewards[t + k] for k in range(n - t)) + gamma ** (n - t) * boot
        assert out[t] == pytest.approx(direct, abs=1e-9)


def test_advantage_examples():
    assert advantage([5.0], [3.0]).tolist() == [2.0]
    assert advantage([1.5, -2.0], [1.5, -2.0]).tolist() == [0.0, 0.0]
    assert advantage([5.0], [mean_of([1.0, 2.0, 3.0, 4.0])]).tolist() == [2.5]
    with pytest.raises(ValueError):
        advantage([1.0, 2.0], [1.0])


# -- policy head -----------------------------------------------------------

def test_uniform_policy_entropy_is_ln2():
    assert entropy(np.zeros((3, 2))) == pytest.approx([math.log(2)] * 3, abs=1e-15)


def test_zero_advantage_zero_beta_gives_zero_policy_gradient():
    rng = np.random.default_rng(0)
    loss, grad = policy_loss_and_grad(rng.normal(size=(4, 3)), np.array([0, 2, 1, 1]), np.zeros(4), 0.0)
    assert loss == 0.0
    assert not grad.any()


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=6))
def test_softmax_is_a_distribution(logits):
    p = softmax(np.array(logits))
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.all(p > 0)


@pytest.mark.parametrize("seed", range(3))
def test_policy_logit_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits, actions, adv = rng.normal(size=(5, 3)), rng.integers(3, size=5), rng.normal(size=5)
    _, grad = policy_loss_and_grad(logits, actions, adv, 0.05)
    eps = 1e-6
    for idx in np.ndindex(logits.shape):
        d = np.zeros_like(logits)
        d[idx] = eps
        num = (policy_loss_and_grad(logits + d, actions, adv, 0.05)[0]
               - policy_loss_and_grad(logits - d, actions, adv, 0.05)[0]) / (2 * eps)
        assert abs(num - grad[idx]) < 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_larger_entropy_coef_never_lowers_post_update_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(1, 3)) * 2
    action, adv = np.array([int(rng.integers(3))]), np.array([rng.normal()])
    after = []
    for beta in (0.0, 0.01, 0.1, 1.0):
        _, g = policy_loss_and_grad(logits, action, adv, beta)
        after.append(entropy(logits - 1e-3 * g)[0])
    assert all(b >= a - 1e-12 for a, b in zip(after, after[1:]))


# -- actor-critic losses ---------------------------------------------------

@pytest.mark.parametrize("shared", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_a2c_loss_gradient_matches_finite_differences(shared, seed):
    rng = np.random.default_rng(seed)
    net = ActorCriticNetwork(4, 2, 1, shared=shared, hidden=(8, 8, 8))
    params = jitter_biases(net.init(rng), rng)
    seg = random_segment(rng, n=3)
    returns = rng.normal(size=3) * 2
    frozen = returns - net.critic(params, seg.observations)[:, 0]
    err = fd_error(params, a2c_surrogate(net, seg, returns, 0.01, 0.5, frozen),
                   lambda p: a2c_loss(net, p, seg, returns, 0.01, 0.5))
    assert err < 1e-4


def kink_free_targets(net, params, seg, rng, margin=1e-3):
    atoms = net.critic(params, seg.observations)
    while True:
        targets = rng.normal(size=atoms.shape) * 2
        u = targets[:, None, :] - atoms[:, :, None]
        if np.min(np.abs(u)) > margin and np.min(np.abs(np.abs(u) - 1.0)) > margin:
            return targets


@pytest.mark.parametrize("shared", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_qr_a2c_loss_gradient_matches_finite_differences(shared, seed):
    rng = np.random.default_rng(seed)
    net = ActorCriticNetwork(4, 2, 16, shared=shared, hidden=(8, 8, 8))
    params = jitter_biases(net.init(rng), rng)
    seg = random_segment(rng, n=3)
    targets = kink_free_targets(net, params, seg, rng)
    frozen = mean_of(targets) - mean_of(net.critic(params, seg.observations))
    err = fd_error(params, qr_a2c_surrogate(net, seg, targets, 0.01, 0.5, 1.0, frozen),
                   lambda p: qr_a2c_loss(net, p, seg, targets, 0.01, 0.5, 1.0))
    assert err < 1e-4


def test_qr_a2c_critic_loss_zero_when_atoms_equal_targets():
    rng = np.random.default_rng(0)
    net = ActorCriticNetwork(4, 2, 8)
    params = net.init(rng)
    params["critic"].weights[0][:] = 0.0
    params["critic"].biases[0][:] = 1.25  # every atom sits on the single target value
    seg = random_segment(rng, n=3)
    targets = np.full((3, 8), 1.25)
    total, grads = qr_a2c_loss(net, params, seg, targets, 0.0, 0.5)
    # advantage is zero too, so nothing remains
    assert total == 0.0
    assert all(not a.any() for a in nn.tree_leaves(grads))


def test_single_atom_policy_gradient_matches_a2c():
    rng = np.random.default_rng(1)
    net = ActorCriticNetwork(4, 2, 1, shared=False, hidden=(8, 8, 8))
    params = net.init(rng)
    seg = random_segment(rng, n=4)
    returns = rng.normal(size=4)
    _, g_a2c = a2c_loss(net, params, seg, returns, 0.01, 0.5)
    _, g_qr = qr_a2c_loss(net, params, seg, returns[:, None], 0.01, 0.5)
    for key in ("actor_trunk", "policy"):
        for a, b in zip(g_a2c[key].arrays(), g_qr[key].arrays()):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_advantages_are_constants_in_policy_term():
    rng = np.random.default_rng(2)
    net = ActorCriticNetwork(4, 2, 1, shared=False, hidden=(8,))
    params = net.init(rng)
    seg = random_segment(rng, n=5)
    values = net.critic(params, seg.observations)[:, 0]
    adv = rng.normal(size=5)
    returns = values + adv
    _, g1 = a2c_loss(net, params, seg, returns, 0.01, 0.5)
    moved = dict(params)
    moved["critic"] = params["critic"].map(lambda a: a + 0.3)
    values2 = net.critic(moved, seg.observations)[:, 0]
    _, g2 = a2c_loss(net, moved, seg, values2 + adv, 0.01, 0.5)
    for a, b in zip(g1["policy"].arrays(), g2["policy"].arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    _, g3 = a2c_loss(net, moved, seg, returns, 0.01, 0.5)
    assert not np.allclose(g1["critic"].biases[0], g3["critic"].biases[0])


@pytest.mark.parametrize("distributional", [False, True])
def test_separate_trunks_receive_only_their_own_gradients(distributional):
    rng = np.random.default_rng(3)
    width = 8 if distributional else 1
    net = ActorCriticNetwork(4, 2, width, shared=False, hidden=(8, 8))
    params = net.init(rng)
    seg = random_segment(rng, n=4)
    logits, critic, cache = net.forward(params, seg.observations)
    only_critic = net.backward(params, cache, np.zeros_like(logits), rng.normal(size=critic.shape))
    only_actor = net.backward(params, cache, rng.normal(size=logits.shape), np.zeros_like(critic))
    assert all(not a.any() for a in only_critic["actor_trunk"].arrays())
    assert all(not a.any() for a in only_actor["critic_trunk"].arrays())
    assert any(a.any() for a in only_critic["critic_trunk"].arrays())


def test_network_head_widths():
    net = ActorCriticNetwork(4, 3, 16)
    params = net.init(np.random.default_rng(0))
    assert set(params) == {"trunk", "policy", "critic"}
    logits, critic, _ = net.forward(params, np.zeros((2, 4)))
    assert logits.shape == (2, 3) and critic.shape == (2, 16)
    assert set(ActorCriticNetwork(4, 3, 1, shared=False).init(np.random.default_rng(0))) == \
        {"actor_trunk", "critic_trunk", "policy", "critic"}


def test_single_atom_and_a2c_agents_pick_same_greedy_actions():
    spec = CartPole().spec
    a2c = ActorCriticAgent(AgentConfig(algo="a2c"), spec)
    qr = ActorCriticAgent(AgentConfig(algo="qr_a2c", num_atoms=1), spec)
    pa = a2c.init_params(np.random.default_rng(7))
    pq = qr.init_params(np.random.default_rng(7))
    obs = np.random.default_rng(8).normal(size=(50, 4))
    assert np.array_equal(a2c.greedy_actions(pa, obs), qr.greedy_actions(pq, obs))


def test_agent_bootstrap_zeroed_after_termination():
    rng = np.random.default_rng(0)
    agent = ActorCriticAgent(AgentConfig(num_atoms=4), CartPole().spec)
    params = agent.init_params(rng)
    assert not agent.bootstrap(params, random_segment(rng, terminal=True)).any()
    assert agent.bootstrap(params, random_segment(rng, terminal=False)).any()


def test_agent_loss_uses_segment_targets():
    rng = np.random.default_rng(4)
    cfg = AgentConfig(num_atoms=4, gamma=0.9)
    agent = ActorCriticAgent(cfg, CartPole().spec)
    params = agent.init_params(rng)
    seg = random_segment(rng, n=5)
    targets = segment_targets(seg.rewards, 0.9, agent.bootstrap(params, seg), False)
    direct = qr_a2c_loss(agent.net, params, seg, targets, cfg.entropy_coef, cfg.value_loss_coef)
    assert agent.loss_and_grad(params, seg)[0] == direct[0]


def test_act_samples_from_policy():
    agent = ActorCriticAgent(AgentConfig(algo="a2c"), CartPole().spec)
    params = agent.init_params(np.random.default_rng(0))
    obs = np.array([0.01, 0.0, -0.02, 0.0])
    p = softmax(agent.net.logits(params, obs)[0])
    rng = np.random.default_rng(1)
    draws = np.array([agent.act(params, obs, rng) for _ in range(4000)])
    sigma = math.sqrt(p[1] * (1 - p[1]) / 4000)
    assert abs(draws.mean() - p[1]) < 4 * sigma


# -- config ----------------------------------------------------------------

@pytest.mark.parametrize("field, value", [("gamma", 1.5), ("num_atoms", 0), ("entropy_coef", -0.1),
                                          ("algo", "dqn"), ("n_steps", 0)])
def test_config_rejects_invalid_fields(field, value):
    with pytest.raises(ConfigurationError, match=f"^{field}"):
        AgentConfig(**{field: value})


def test_config_defaults_follow_classic_control_setup():
    c = AgentConfig()
    assert (c.learning_rate, c.n_steps, c.gamma, c.grad_clip) == (7e-4, 100, 0.99, 0.5)
    assert (c.entropy_coef, c.value_loss_coef, c.num_workers, c.hidden) == (0.01, 0.5, 1, (64, 64, 64))


# -- QR-DQN ----------------------------------------------------------------

def fixed_quantile_net(action_atoms):
    """Zero-weight net whose biases spell out the given per-action atoms."""
    action_atoms = np.asarray(action_atoms, dtype=np.float64)
    a, n = action_atoms.shape
    net = QuantileQNetwork(2, a, n, hidden=())
    params = net.init(np.random.default_rng(0))
    params["q"].weights[0][:] = 0.0
    params["q"].biases[0][:] = action_atoms.ravel()
    return net, params


def test_qr_dqn_act_picks_largest_mean():
    net, params = fixed_quantile_net([[5.0, 5.0], [1.0, 1.0]])
    assert qr_dqn_act(net, params, np.zeros(2), 0.0, np.random.default_rng(0)) == 0
    net, params = fixed_quantile_net([[0.0, 1.0], [-1.0, 3.0]])
    assert qr_dqn_act(net, params, np.zeros(2), 0.0, np.random.default_rng(0)) == 1


def test_qr_dqn_act_ties_go_to_lowest_index():
    net, params = fixed_quantile_net([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0]])
    assert qr_dqn_act(net, params, np.zeros(2), 0.0, np.random.default_rng(0)) == 0


def test_qr_dqn_act_full_exploration_is_uniform():
    net, params = fixed_quantile_net([[5.0], [1.0], [0.0], [-3.0]])
    rng = np.random.default_rng(0)
    draws = np.bincount([qr_dqn_act(net, params, np.zeros(2), 1.0, rng) for _ in range(10_000)],
                        minlength=4)
    sigma = math.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(draws - 2500) < 3 * sigma)


def test_qr_dqn_act_rejects_bad_epsilon():
    net, params = fixed_quantile_net([[0.0], [1.0]])
    with pytest.raises(ConfigurationError):
        qr_dqn_act(net, params, np.zeros(2), 1.5, np.random.default_rng(0))


def test_qr_dqn_terminal_and_zero_discount_targets():
    net, params = fixed_quantile_net([[5.0, 7.0], [1.0, 2.0]])
    terminal = [Transition(np.zeros(2), 0, 1.0, np.ones(2), True)]
    assert qr_dqn_targets(net, params, terminal, 0.99).tolist() == [[1.0, 1.0]]
    live = [Transition(np.zeros(2), 0, 2.0, np.ones(2), False)]
    assert qr_dqn_targets(net, params, live, 0.0).tolist() == [[2.0, 2.0]]
    np.testing.assert_allclose(qr_dqn_targets(net, params, live, 0.5), [[4.5, 5.5]], rtol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_qr_dqn_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = QuantileQNetwork(3, 2, 8, hidden=(8, 8, 8))
    params = {"q": jitter_biases({"q": net.init(rng)["q"]}, rng)["q"]}
    target = net.init(rng)
    while True:
        batch = [Transition(rng.normal(size=3), int(rng.integers(2)), float(rng.normal() * 2),
                            rng.normal(size=3), bool(rng.random() < 0.3)) for _ in range(4)]
        chosen = net.quantiles(params, np.array([t.state for t in batch]))
        chosen = chosen[np.arange(4), [t.action for t in batch]]
        u = qr_dqn_targets(net, target, batch, 0.9)[:, None, :] - chosen[:, :, None]
        if np.min(np.abs(u)) > 1e-3 and np.min(np.abs(np.abs(u) - 1.0)) > 1e-3:
            break
    err = nn.gradient_check(params, lambda p: qr_dqn_update(net, p, target, batch, 0.9), 1e-6)
    assert err < 1e-4


def test_qr_dqn_matches_value_iteration_on_two_state_mdp():
    # s0: a0 -> s1 (r 0), a1 -> end (r 1); s1: a0 -> s0 (r 0.5), a1 -> end (r 0)
    gamma = 0.9
    nxt = {(0, 0): 1, (0, 1): None, (1, 0): 0, (1, 1): None}
    rew = {(0, 0): 0.0, (0, 1): 1.0, (1, 0): 0.5, (1, 1): 0.0}
    q = np.zeros((2, 2))
    for _ in range(2000):
        v = q.max(axis=1)
        q = np.array([[rew[s, a] + (gamma * v[nxt[s, a]] if nxt[s, a] is not None else 0.0)
                       for a in range(2)] for s in range(2)])

    eye = np.eye(2)
    batch = [Transition(eye[s], a, rew[s, a], eye[nxt[s, a] if nxt[s, a] is not None else 0],
                        nxt[s, a] is None) for s in range(2) for a in range(2)]
    net = QuantileQNetwork(2, 2, 4, hidden=())
    params = net.init(np.random.default_rng(0))
    target = nn.tree_map(np.copy, params)
    opt = nn.Adam(params, 0.01)
    for step in range(10_000):
        if step % 100 == 0:
            target = nn.tree_map(np.copy, params)
        _, g = qr_dqn_update(net, params, target, batch, gamma)
        params = opt.step(params, g)
    learned = net.quantiles(params, eye).mean(axis=-1)
    np.testing.assert_allclose(learned, q, atol=0.01)


def test_replay_buffer_ring_and_sampling():
    buf = ReplayBuffer(3, 1)
    for i in range(5):
        buf.add(Transition(np.array([float(i)]), 0, float(i), np.array([i + 1.0]), False))
    assert len(buf) == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]
    batch = buf.sample(3, np.random.default_rng(0))
    assert set(batch["rewards"].tolist()) <= {2.0, 3.0, 4.0}
    np.testing.assert_array_equal(batch["next_states"][:, 0], batch["states"][:, 0] + 1)
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))


def test_transition_rejects_non_finite_reward():
    with pytest.raises(ValueError):
        Transition(np.zeros(1), 0, float("nan"), np.zeros(1), False)


def test_segment_transitions_link_next_states():
    seg = random_segment(np.random.default_rng(0), n=3, terminal=True)
    ts = list(seg.transitions())
    np.testing.assert_array_equal(ts[0].next_state, seg.observations[1])
    np.testing.assert_array_equal(ts[-1].next_state, seg.final_observation)
    assert [t.done for t in ts] == [False, False, True]


def test_epsilon_schedule():
    assert epsilon_at(0, 1.0, 0.05, 10_000) == 1.0
    assert epsilon_at(5000, 1.0, 0.05, 10_000) == pytest.approx(0.525)
    assert epsilon_at(20_000, 1.0, 0.05, 10_000) == pytest.approx(0.05, abs=1e-15)
    agent = QRDQNAgent(AgentConfig(algo="qr_dqn"), CartPole().spec)
    assert agent.epsilon(10_000) == pytest.approx(0.05, abs=1e-15)
