import numpy as np
import pytest

from qra2c import nn
from qra2c.agents import ActorCriticAgent, AgentConfig, nstep_returns
from qra2c.envs import ChainWorld, make_env
from qra2c.nn import NumericError
from qra2c.rollout import RolloutSegment, WorkerPool, average_grads, collect, synchronous_update


def a2c_agent(env_id="chainworld", env_kwargs=None, **kw):
    env = make_env(env_id, **(env_kwargs or {}))
    return ActorCriticAgent(AgentConfig(algo=kw.pop("algo", "a2c"), hidden=(16, 16), **kw), env.spec)


def segments_equal(a, b):
    return all(np.array_equal(getattr(a, f), getattr(b, f))
               for f in ("observations", "actions", "rewards", "dones", "truncated",
                         "final_observation")) and a.episode_returns == b.episode_returns


def test_single_worker_matches_reference_loop():
    agent = a2c_agent()
    params = agent.init_params(np.random.default_rng(0))
    pool = WorkerPool("chainworld", 1, seed=3)
    seg = collect(pool, agent, params, 5)[0]

    env_ss, act_ss = np.random.SeedSequence(3).spawn(2)
    env = ChainWorld()
    env.rng = np.random.default_rng(env_ss)
    rng = np.random.default_rng(act_ss)
    obs = env.reset()
    observations, actions, rewards = [], [], []
    for _ in range(5):
        a = agent.act(params, obs, rng)
        res = env.step(a)
        observations.append(obs)
        actions.append(a)
        rewards.append(res.reward)
        obs = res.observation
        if res.done or res.truncated:
            break
    np.testing.assert_array_equal(seg.observations, observations)
    np.testing.assert_array_equal(seg.actions, actions)
    np.testing.assert_array_equal(seg.rewards, rewards)
    np.testing.assert_array_equal(seg.final_observation, obs)


@pytest.mark.parametrize("env_id", ["cartpole", "chainworld"])
def test_parallel_collection_is_bit_identical(env_id):
    agent = a2c_agent(env_id)
    params = agent.init_params(np.random.default_rng(1))
    seq = WorkerPool(env_id, 4, seed=11)
    par = WorkerPool(env_id, 4, seed=11, parallel=True)
    try:
        for _ in range(10):
            for a, b in zip(collect(seq, agent, params, 20), collect(par, agent, params, 20)):
                assert segments_equal(a, b)
    finally:
        par.close()


def test_workers_have_distinct_streams():
    pool = WorkerPool("cartpole", 3, seed=0)
    starts = [o.tolist() for o in pool.obs]
    assert len({tuple(s) for s in starts}) == 3
    again = WorkerPool("cartpole", 3, seed=0)
    assert [o.tolist() for o in again.obs] == starts


def test_episode_end_shortens_segment_and_resets():
    agent = a2c_agent(env_kwargs={"length": 3})
    params = agent.init_params(np.random.default_rng(0))
    pool = WorkerPool("chainworld", 1, seed=0, env_kwargs={"length": 3})
    forward = lambda obs, rng: ChainWorld.FORWARD  # noqa: E731
    seg = pool.run_worker(0, forward, 5)
    assert len(seg) == 3
    assert seg.dones.tolist() == [False, False, True]
    assert seg.terminal
    assert seg.episode_returns == [1.0]
    # the environment was reset: the next segment starts at cell 0 again
    assert pool.obs[0].tolist() == [1.0, 0.0, 0.0]
    nxt = collect(pool, agent, params, 2)[0]
    assert nxt.observations[0].tolist() == [1.0, 0.0, 0.0]


def test_truncation_is_not_terminal():
    pool = WorkerPool("chainworld", 1, seed=0, env_kwargs={"length": 3, "max_episode_steps": 4})
    seg = pool.run_worker(0, lambda obs, rng: ChainWorld.BACK, 10)
    assert len(seg) == 4
    assert seg.truncated[-1] and not seg.dones.any()
    assert not seg.terminal


def test_segment_rejects_mid_segment_episode_end():
    with pytest.raises(ValueError):
        RolloutSegment(np.zeros((3, 1)), np.zeros(3, dtype=int), np.zeros(3),
                       np.array([False, True, False]), np.zeros(3, dtype=bool), np.zeros(1))


def test_rewards_after_done_never_leak_into_previous_episode():
    agent = a2c_agent(env_kwargs={"length": 2})
    params = agent.init_params(np.random.default_rng(0))
    pool = WorkerPool("chainworld", 1, seed=0, env_kwargs={"length": 2})
    ended = 0
    for _ in range(30):
        seg = collect(pool, agent, params, 7)[0]
        boot = float(agent.bootstrap(params, seg)[0])
        ret = nstep_returns(seg, 0.9, boot)
        if seg.terminal:
            # the last return is exactly its own reward: nothing from the next episode
            assert ret[-1] == seg.rewards[-1]
            ended += 1
    assert ended > 0


def random_grads(rng, agent):
    params = agent.init_params(rng)
    return nn.tree_map(lambda a: rng.normal(size=a.shape), params)


def test_average_of_identical_grads_is_the_grad():
    agent = a2c_agent()
    g = random_grads(np.random.default_rng(0), agent)
    avg = average_grads([g, g])
    assert all(np.array_equal(a, b) for a, b in zip(nn.tree_leaves(g), nn.tree_leaves(avg)))
    one = average_grads([g])
    assert all(np.array_equal(a, b) for a, b in zip(nn.tree_leaves(g), nn.tree_leaves(one)))


def test_average_of_four_matches_independent_accumulation():
    agent = a2c_agent()
    rng = np.random.default_rng(1)
    gs = [random_grads(rng, agent) for _ in range(4)]
    avg = average_grads(gs)
    leaves = [nn.tree_leaves(g) for g in gs]
    for k, a in enumerate(nn.tree_leaves(avg)):
        acc = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            acc[idx] = sum(leaves[w][k][idx] for w in range(4)) / 4
        np.testing.assert_allclose(a, acc, rtol=0, atol=1e-12)


def test_single_worker_update_equals_plain_update():
    agent = a2c_agent(algo="qr_a2c", num_atoms=8)
    params = agent.init_params(np.random.default_rng(0))
    pool = WorkerPool("chainworld", 1, seed=5)
    segs = collect(pool, agent, params, 10)
    new, _ = synchronous_update(segs, agent, params, nn.Adam(params, 7e-4), 0.5)
    _, g = agent.loss_and_grad(params, segs[0])
    manual = nn.Adam(params, 7e-4).step(params, nn.clip_global_norm(g, 0.5))
    assert all(np.array_equal(a, b) for a, b in zip(nn.tree_leaves(new), nn.tree_leaves(manual)))


def test_identical_segments_update_like_one():
    agent = a2c_agent()
    params = agent.init_params(np.random.default_rng(0))
    seg = collect(WorkerPool("chainworld", 1, seed=5), agent, params, 10)[0]
    two, _ = synchronous_update([seg, seg], agent, params, nn.Adam(params, 7e-4), 0.5)
    one, _ = synchronous_update([seg], agent, params, nn.Adam(params, 7e-4), 0.5)
    assert all(np.array_equal(a, b) for a, b in zip(nn.tree_leaves(one), nn.tree_leaves(two)))


def test_gradients_come_from_the_published_snapshot():
    agent = a2c_agent()
    params = agent.init_params(np.random.default_rng(0))
    opt = nn.Adam(params, 7e-4)
    pool = WorkerPool("chainworld", 2, seed=0)
    seen = []
    orig = agent.loss_and_grad

    def spy(p, seg):
        seen.append(p)
        return orig(p, seg)

    agent.loss_and_grad = spy
    for _ in range(3):
        segs = collect(pool, agent, params, 5)
        seen.clear()
        new, _ = synchronous_update(segs, agent, params, opt, 0.5)
        assert len(seen) == 2 and all(s is params for s in seen)
        params = new


def test_non_finite_gradient_aborts():
    agent = a2c_agent()
    params = agent.init_params(np.random.default_rng(0))
    seg = collect(WorkerPool("chainworld", 1, seed=0), agent, params, 5)[0]
    agent.loss_and_grad = lambda p, s: (0.0, nn.tree_map(lambda a: np.full_like(a, np.nan), p))
    with pytest.raises(NumericError):
        synchronous_update([seg], agent, params, nn.Adam(params, 7e-4), 0.5)
