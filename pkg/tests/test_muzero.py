import math

import numpy as np
import pytest
from scipy.stats import chisquare

from pqcsearch.circuit import EncodingCircuit
from pqcsearch.evaluation import CircuitEvaluator
from pqcsearch.learners import REGRESSION, ModelConfig, fixed_folds
from pqcsearch.muzero import (
    AgentCorruptError,
    BanditEnv,
    MuZeroAgent,
    MuZeroConfig,
    NetworkSet,
    ReplayBuffer,
    Trajectory,
    loss_and_grads,
    make_batch,
    run_mcts,
    select_action,
    softmax,
)
from pqcsearch.search_env import CircuitSearchEnv

TINY = dict(observation_size=6, num_actions=3, hidden_dim=4, width=5)


def tiny_batch(rng, B=3, K=2, A=3):
    trajs = []
    for _ in range(2):
        n = int(rng.integers(1, 4))
        t = Trajectory(
            rng.normal(size=(n, 6)), rng.integers(A, size=n), rng.normal(size=n),
            rng.dirichlet(np.ones(A), size=n), rng.normal(size=n),
        )
        t.compute_targets(0.9)
        trajs.append(t)
    samples = [(trajs[b % 2], int(rng.integers(len(trajs[b % 2])))) for b in range(B)]
    return make_batch(samples, K, A, rng)


def zero_output_layer(net):
    net.weights[-1][...] = 0
    net.biases[-1][...] = 0


def test_softmax_sums_to_one():
    nets = NetworkSet(MuZeroConfig(seed=1))
    _, logits, _ = nets.initial_inference(np.random.default_rng(0).random(430))
    assert abs(softmax(logits).sum() - 1) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_unrolled_gradient_check(seed):
    rng = np.random.default_rng(seed)
    nets = NetworkSet(MuZeroConfig(**TINY), rng)
    for net in nets.networks.values():
        for b in net.biases:
            b[...] = rng.normal(size=b.shape) * 0.1
    batch = tiny_batch(rng)
    _, _, grads = loss_and_grads(nets, batch)
    h = 1e-5
    worst = 0.0
    for name, net in nets.networks.items():
        for p, g in zip(net.params, grads[name]):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                plus = loss_and_grads(nets, batch)[0]
                p[idx] = old - h
                minus = loss_and_grads(nets, batch)[0]
                p[idx] = old
                num = (plus - minus) / (2 * h)
                worst = max(worst, abs(num - g[idx]) / max(abs(num), 1e-3))
    assert worst <= 1e-4


def test_k0_is_policy_plus_value():
    rng = np.random.default_rng(4)
    nets = NetworkSet(MuZeroConfig(**TINY), rng)
    batch = tiny_batch(rng, K=0)
    total, parts, _ = loss_and_grads(nets, batch)
    assert parts["reward"] == 0.0
    assert total == pytest.approx(parts["policy"] + parts["value"])


def test_mcts_single_simulation():
    nets = NetworkSet(MuZeroConfig(seed=2))
    obs = np.zeros(430)
    policy, _, root = run_mcts(nets, obs, 1)
    expected = int(np.argmax(root.child_prior))
    assert policy[expected] == 1.0 and policy.sum() == 1.0


def check_node(node, gamma):
    assert node.visit_count == node.child_visits.sum() + 1
    for a, child in node.children.items():
        assert child.visit_count == node.child_visits[a]
        assert child.value_sum == pytest.approx(node.child_value_sum[a])
        check_node(child, gamma)


def test_mcts_conservation():
    nets = NetworkSet(MuZeroConfig(seed=3))
    policy, _, root = run_mcts(nets, np.random.default_rng(0).random(430), 60, np.random.default_rng(0), add_noise=True)
    assert root.child_visits.sum() == 60
    assert abs(policy.sum() - 1) < 1e-12
    check_node(root, nets.config.discount)


def test_mcts_uniform_tree_gives_uniform_policy():
    nets = NetworkSet(MuZeroConfig(seed=0))
    zero_output_layer(nets.prediction)
    zero_output_layer(nets.dynamics)
    policy, _, _ = run_mcts(nets, np.zeros(430), 1000)
    assert np.max(np.abs(policy - 1 / 43)) < 0.05


def test_mcts_constant_reward_root_value():
    cfg = MuZeroConfig(seed=0, discount=0.0)
    nets = NetworkSet(cfg)
    zero_output_layer(nets.dynamics)
    nets.dynamics.biases[-1][-1] = 0.7
    _, value, _ = run_mcts(nets, np.random.default_rng(1).random(430), 500)
    assert abs(value - 0.7) < 0.05


def test_mcts_rejects_non_finite():
    nets = NetworkSet(MuZeroConfig(seed=0))
    nets.prediction.biases[-1][0] = np.nan
    with pytest.raises(AgentCorruptError):
        run_mcts(nets, np.zeros(430), 5)
    with pytest.raises(ValueError):
        run_mcts(NetworkSet(MuZeroConfig()), np.zeros(430), 0)


def test_select_action():
    pi = np.array([0.9, 0.1] + [0.0] * 41)
    assert select_action(pi, 0) == 0
    assert select_action(np.full(43, 1 / 43), 0) == 0
    one_hot = np.eye(43)[12]
    rng = np.random.default_rng(0)
    assert all(select_action(one_hot, t, rng) == 12 for t in (0, 0.25, 1.0, 4.0))
    draws = np.array([select_action(np.full(43, 1 / 43), 1.0, rng) for _ in range(10_000)])
    counts = np.bincount(draws, minlength=43)
    # 43 cells at 3 sigma each would fail by chance ~11% of the time; test jointly
    assert chisquare(counts).pvalue > 0.0027


def test_replay_capacity_and_sampling():
    buf = ReplayBuffer(10)
    rng = np.random.default_rng(0)
    for n in (4, 4, 4):
        buf.add(Trajectory(np.zeros((n, 2)), np.zeros(n, int), np.zeros(n), np.zeros((n, 3)), np.zeros(n)))
    assert buf.n_positions == 8 and len(buf.trajectories) == 2
    samples = buf.sample_positions(4000, rng)
    assert all(0 <= t < len(traj) for traj, t in samples)
    slot = {id(traj): i for i, traj in enumerate(buf.trajectories)}
    idx = np.array([4 * slot[id(traj)] + t for traj, t in samples])
    counts = np.bincount(idx, minlength=8)
    assert np.all(np.abs(counts - 500) < 5 * math.sqrt(500))


def test_absorbing_targets():
    t = Trajectory(np.zeros((2, 6)), np.array([1, 2]), np.array([0.5, 1.0]), np.eye(3)[[0, 1]], np.zeros(2))
    t.compute_targets(0.5)
    assert np.allclose(t.value_targets, [1.0, 1.0])
    batch = make_batch([(t, 1)], 3, 3, np.random.default_rng(0))
    assert batch.actions[0, 0] == 2
    assert np.allclose(batch.target_rewards[0], [0, 1.0, 0, 0])
    assert np.allclose(batch.target_values[0], [1.0, 0, 0, 0])
    assert np.allclose(batch.target_policies[0, 2:], 1 / 3)


def test_overfit_one_batch():
    # one-hot policy targets and episodes longer than the unroll, so the loss floor is zero
    agent = MuZeroAgent(MuZeroConfig(seed=0, batch_size=16))
    rng = np.random.default_rng(0)
    samples = []
    for _ in range(16):
        acts = rng.integers(43, size=10)
        t = Trajectory(rng.random((10, 430)).round(), acts, rng.normal(size=10), np.eye(43)[acts], np.zeros(10))
        t.compute_targets(0.99)
        samples.append((t, int(rng.integers(5))))
    batch = make_batch(samples, 5, 43, rng)
    first = loss_and_grads(agent.nets, batch)[0]
    for _ in range(200):
        last = agent.update(batch)["total"]
    assert last <= 0.5 * first


def test_train_step_needs_enough_positions():
    agent = MuZeroAgent(MuZeroConfig(seed=0, batch_size=8))
    assert agent.train_step() is None


def make_env(seed):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(20, 2))
    y = X[:, 0] * X[:, 1]
    ev = CircuitEvaluator(X, y, fixed_folds(20, 5, seed=0), ModelConfig(REGRESSION, reg=1e-3), "toy")
    return CircuitSearchEnv(ev, 2, rng=np.random.default_rng(seed))


def test_self_play_episode_on_circuit_env():
    agent = MuZeroAgent(MuZeroConfig(seed=0, n_simulations=8))
    env = make_env(0)
    for _ in range(3):
        traj = agent.self_play_episode(env)
        prefix = 5 if env.state.restarted else 0
        assert len(traj) == 10 - prefix
        assert np.allclose(traj.policies.sum(axis=1), 1)
    a = MuZeroAgent(MuZeroConfig(seed=7, n_simulations=8)).self_play_episode(make_env(3))
    b = MuZeroAgent(MuZeroConfig(seed=7, n_simulations=8)).self_play_episode(make_env(3))
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.policies, b.policies)


def test_search_respects_budget(tmp_path):
    env = make_env(1)
    env.evaluator.budget = 40
    agent = MuZeroAgent(MuZeroConfig(seed=0, n_simulations=4, batch_size=8))
    log = (tmp_path / "train.log").open("w")
    agent.search(env, log)
    log.close()
    assert env.evaluator.count == 40
    assert (tmp_path / "train.log").read_text().count("\n") >= 1


def test_checkpoint_round_trip(tmp_path):
    agent = MuZeroAgent(MuZeroConfig(seed=0, batch_size=4))
    env = BanditEnv(arm=1)
    for _ in range(5):
        agent.self_play_episode(env)
    agent.train_step()
    agent.save(tmp_path / "agent.ckpt")
    loaded = MuZeroAgent.load(tmp_path / "agent.ckpt")
    for name, net in agent.nets.networks.items():
        for a, b in zip(net.params, loaded.nets.networks[name].params):
            assert np.array_equal(a, b)
    assert loaded.optimizers["dynamics"].step == 1 and loaded.train_steps == 1


def bandit_solved(seed, arm=17, episodes=2000):
    agent = MuZeroAgent(MuZeroConfig(seed=seed))
    env = BanditEnv(arm=arm)
    for ep in range(episodes):
        agent.self_play_episode(env, 1.0)
        agent.train_step()
        if ep % 50 == 49:
            policy, _, _ = run_mcts(agent.nets, env.reset(), agent.config.n_simulations)
            if policy[arm] >= 0.9:
                return True
    return False


@pytest.mark.slow
def test_bandit_solved():
    assert sum(bandit_solved(seed) for seed in range(3)) >= 2
