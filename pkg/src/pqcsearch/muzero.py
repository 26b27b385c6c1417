"""MuZero-style agent: learned model, pUCT tree search, replay and unrolled training.

Three networks share a hidden state of width ``hidden_dim``:

* representation: observation -> hidden state
* dynamics: (hidden state, one-hot action) -> (next hidden state, reward)
* prediction: hidden state -> (policy logits, value)

Hidden states are squashed with ``tanh`` so repeated dynamics steps stay
bounded. Values and rewards are plain scalars trained with squared error.
"""
from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, TextIO

import numpy as np

from .circuit import MAX_DEPTH, NUM_ACTIONS
from .evaluation import BudgetExhausted
from .nnet import AdamState, Mlp, adam_step, backward, forward, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)


class AgentCorruptError(FloatingPointError):
    pass


@dataclass
class MuZeroConfig:
    observation_size: int = MAX_DEPTH * NUM_ACTIONS
    num_actions: int = NUM_ACTIONS
    hidden_dim: int = 64
    width: int = 128
    n_simulations: int = 50
    pb_c_base: float = 19652.0
    pb_c_init: float = 1.25
    value_range_floor: float = 1.0
    dirichlet_alpha: float = 0.3
    exploration_fraction: float = 0.25
    discount: float = 0.99
    unroll_steps: int = 5
    td_steps: int = 10
    batch_size: int = 64
    replay_capacity: int = 5000
    lr: float = 1e-3
    train_steps_per_env_step: float = 1.0
    temperatures: tuple = (1.0, 0.25)
    inference_fraction: float = 0.1
    max_episodes: Optional[int] = None
    seed: int = 0


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class NetworkSet:
    def __init__(self, config: MuZeroConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        d, w, a = config.hidden_dim, config.width, config.num_actions
        self.config = config
        self.representation = Mlp([config.observation_size, w, w, d], rng)
        self.dynamics = Mlp([d + a, w, w, d + 1], rng)
        self.prediction = Mlp([d, w, w, a + 1], rng)

    @property
    def networks(self) -> dict[str, Mlp]:
        return {"representation": self.representation, "dynamics": self.dynamics, "prediction": self.prediction}

    def copy(self) -> "NetworkSet":
        clone = NetworkSet.__new__(NetworkSet)
        clone.config = self.config
        clone.representation = self.representation.copy()
        clone.dynamics = self.dynamics.copy()
        clone.prediction = self.prediction.copy()
        return clone

    def _one_hot(self, actions) -> np.ndarray:
        actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
        out = np.zeros((actions.size, self.config.num_actions))
        out[np.arange(actions.size), actions] = 1.0
        return out

    def represent(self, obs) -> np.ndarray:
        return np.tanh(self.representation(np.atleast_2d(obs)))

    def predict(self, hidden) -> tuple[np.ndarray, np.ndarray]:
        out = self.prediction(np.atleast_2d(hidden))
        return out[:, :-1], out[:, -1]

    def transition(self, hidden, actions) -> tuple[np.ndarray, np.ndarray]:
        out = self.dynamics(np.hstack([np.atleast_2d(hidden), self._one_hot(actions)]))
        return np.tanh(out[:, :-1]), out[:, -1]

    def initial_inference(self, obs):
        """Hidden state, policy logits and value for one observation."""
        s = self.represent(obs)
        logits, v = self.predict(s)
        return s[0], logits[0], float(v[0])

    def recurrent_inference(self, hidden, action: int):
        s, r = self.transition(hidden, [action])
        logits, v = self.predict(s)
        return s[0], float(r[0]), logits[0], float(v[0])


# ---------------------------------------------------------------------------
# tree search
# ---------------------------------------------------------------------------

class MinMaxStats:
    """Running bounds of Q; the range is floored so near-equal noisy values are not stretched to [0, 1]."""

    def __init__(self, floor: float = 0.0):
        self.maximum = -math.inf
        self.minimum = math.inf
        self.floor = floor

    def update(self, value: float) -> None:
        self.maximum = max(self.maximum, value)
        self.minimum = min(self.minimum, value)

    def normalize(self, value):
        span = max(self.maximum - self.minimum, self.floor)
        if span > 0:
            return (value - self.minimum) / span
        return value


class SearchNode:
    """Tree node; per-child statistics live in arrays on the parent."""

    __slots__ = ("hidden", "reward", "visit_count", "value_sum", "child_prior", "child_visits", "child_value_sum", "child_reward", "children")

    def __init__(self, hidden: np.ndarray, reward: float, prior_logits: np.ndarray):
        self.hidden = hidden
        self.reward = reward
        self.visit_count = 0
        self.value_sum = 0.0
        n = prior_logits.shape[0]
        self.child_prior = softmax(prior_logits)
        self.child_visits = np.zeros(n, dtype=np.int64)
        self.child_value_sum = np.zeros(n)
        self.child_reward = np.zeros(n)
        self.children: dict[int, SearchNode] = {}

    @property
    def value(self) -> float:
        return self.value_sum / self.visit_count if self.visit_count else 0.0


def _check_finite(*values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise AgentCorruptError("network produced a non-finite output")


def _select(node: SearchNode, stats: MinMaxStats, config: MuZeroConfig) -> int:
    n = node.visit_count
    pb_c = (math.log((n + config.pb_c_base + 1) / config.pb_c_base) + config.pb_c_init) * math.sqrt(n)
    prior_score = pb_c * node.child_prior / (1.0 + node.child_visits)
    visited = node.child_visits > 0
    q = node.child_reward + config.discount * np.divide(
        node.child_value_sum, node.child_visits, out=np.zeros_like(node.child_value_sum), where=visited
    )
    value_score = np.where(visited, stats.normalize(q), 0.0)
    return int(np.argmax(prior_score + value_score))


def run_mcts(
    nets: NetworkSet,
    observation: np.ndarray,
    n_simulations: int,
    rng: Optional[np.random.Generator] = None,
    add_noise: bool = False,
    config: Optional[MuZeroConfig] = None,
):
    """Search from ``observation`` and return ``(policy, root_value, root)``.

    The policy is the normalised visit count of the root's children. The
    root counts its own expansion as one visit, so every node satisfies
    ``visit_count == sum(child visits) + 1``.
    """
    if n_simulations < 1:
        raise ValueError("need at least one simulation")
    config = config or nets.config
    hidden, logits, value = nets.initial_inference(observation)
    _check_finite(hidden, logits, value)
    root = SearchNode(hidden, 0.0, logits)
    if add_noise:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.dirichlet([config.dirichlet_alpha] * root.child_prior.size)
        frac = config.exploration_fraction
        root.child_prior = (1 - frac) * root.child_prior + frac * noise
    root.visit_count = 1
    root.value_sum = value
    stats = MinMaxStats(config.value_range_floor)
    for _ in range(n_simulations):
        node = root
        path = [root]
        actions = []
        while True:
            a = _select(node, stats, config)
            actions.append(a)
            child = node.children.get(a)
            if child is None:
                break
            node = child
            path.append(node)
        s, r, child_logits, v = nets.recurrent_inference(node.hidden, a)
        _check_finite(s, r, child_logits, v)
        leaf = SearchNode(s, r, child_logits)
        node.children[a] = leaf
        node.child_reward[a] = r
        leaf.visit_count = 1
        leaf.value_sum = v
        # back up: G is the return seen from the current node's state
        g = v
        for parent, a in zip(reversed(path), reversed(actions)):
            child = parent.children[a]
            parent.child_visits[a] += 1
            parent.child_value_sum[a] += g
            stats.update(child.reward + config.discount * child.value)
            g = child.reward + config.discount * g
            parent.visit_count += 1
            parent.value_sum += g
    visits = root.child_visits.astype(np.float64)
    return visits / visits.sum(), root.value, root


def select_action(policy: np.ndarray, temperature: float, rng: Optional[np.random.Generator] = None) -> int:
    """Argmax (lowest index on ties) at temperature 0, else sample from ``policy**(1/T)``."""
    policy = np.asarray(policy, dtype=np.float64)
    if temperature == 0:
        return int(np.argmax(policy))
    rng = rng if rng is not None else np.random.default_rng()
    with np.errstate(divide="ignore"):
        logp = np.where(policy > 0, np.log(policy), -np.inf) / temperature
    p = np.exp(logp - logp.max())
    p /= p.sum()
    return int(rng.choice(policy.size, p=p))


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    policies: np.ndarray
    root_values: np.ndarray
    value_targets: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return int(self.actions.size)

    def compute_targets(self, discount: float) -> None:
        """Discounted return from each step to the end of the episode."""
        out = np.zeros(len(self))
        g = 0.0
        for t in range(len(self) - 1, -1, -1):
            g = self.rewards[t] + discount * g
            out[t] = g
        self.value_targets = out


class ReplayBuffer:
    """FIFO of whole trajectories bounded by the total number of positions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.trajectories: list[Trajectory] = []
        self.n_positions = 0
        self._lock = threading.Lock()

    def add(self, trajectory: Trajectory) -> None:
        with self._lock:
            self.trajectories.append(trajectory)
            self.n_positions += len(trajectory)
            while self.n_positions > self.capacity and len(self.trajectories) > 1:
                self.n_positions -= len(self.trajectories.pop(0))

    def sample_positions(self, n: int, rng: np.random.Generator) -> list[tuple[Trajectory, int]]:
        """Uniform positions over everything stored."""
        with self._lock:
            lengths = np.array([len(t) for t in self.trajectories])
            flat = rng.integers(0, lengths.sum(), size=n)
            bounds = np.cumsum(lengths)
            which = np.searchsorted(bounds, flat, side="right")
            starts = bounds - lengths
            return [(self.trajectories[w], int(f - starts[w])) for w, f in zip(which, flat)]


@dataclass
class Batch:
    observations: np.ndarray  # (B, obs)
    actions: np.ndarray  # (B, K)
    target_policies: np.ndarray  # (B, K+1, A)
    target_values: np.ndarray  # (B, K+1)
    target_rewards: np.ndarray  # (B, K+1); column 0 unused


def make_batch(samples, unroll: int, num_actions: int, rng: np.random.Generator) -> Batch:
    """Targets along stored actions; past the episode end the state is absorbing
    (zero value and reward, uniform policy, random actions)."""
    B = len(samples)
    obs = np.stack([traj.observations[t] for traj, t in samples])
    actions = np.zeros((B, unroll), dtype=np.int64)
    policies = np.full((B, unroll + 1, num_actions), 1.0 / num_actions)
    values = np.zeros((B, unroll + 1))
    rewards = np.zeros((B, unroll + 1))
    for b, (traj, t) in enumerate(samples):
        n = len(traj)
        for k in range(unroll + 1):
            idx = t + k
            if idx < n:
                policies[b, k] = traj.policies[idx]
                values[b, k] = traj.value_targets[idx]
            if k >= 1 and idx - 1 < n:
                rewards[b, k] = traj.rewards[idx - 1]
            if k < unroll:
                actions[b, k] = traj.actions[idx] if idx < n else rng.integers(num_actions)
    return Batch(obs, actions, policies, values, rewards)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def loss_and_grads(nets: NetworkSet, batch: Batch):
    """Unrolled loss and exact gradients for all three networks.

    ``loss = mean_b sum_k [CE(pi_k, target_pi_k) + (v_k - z_k)^2 + [k>=1] (r_k - u_k)^2]``

    Returns ``(total, components, grads)`` where ``grads`` maps network name
    to a gradient list in ``Mlp.params`` order.
    """
    B, K = batch.actions.shape
    d = nets.config.hidden_dim
    A = nets.config.num_actions
    one_hot = np.zeros((B, K, A))
    if K:
        one_hot[np.arange(B)[:, None], np.arange(K)[None, :], batch.actions] = 1.0

    rep_out, rep_cache = forward(nets.representation, batch.observations)
    states = [np.tanh(rep_out)]
    pred_caches, dyn_caches = [], []
    policy_loss = value_loss = reward_loss = 0.0
    d_logits, d_values, d_rewards = [], [], [None]
    for k in range(K + 1):
        out, cache = forward(nets.prediction, states[k])
        pred_caches.append(cache)
        logits, v = out[:, :A], out[:, A]
        p = softmax(logits)
        target = batch.target_policies[:, k]
        policy_loss += -np.sum(target * np.log(np.clip(p, 1e-300, None))) / B
        value_loss += np.sum((v - batch.target_values[:, k]) ** 2) / B
        d_logits.append((p * target.sum(axis=1, keepdims=True) - target) / B)
        d_values.append(2.0 * (v - batch.target_values[:, k]) / B)
        if k < K:
            out, cache = forward(nets.dynamics, np.hstack([states[k], one_hot[:, k]]))
            dyn_caches.append(cache)
            states.append(np.tanh(out[:, :d]))
            r = out[:, d]
            reward_loss += np.sum((r - batch.target_rewards[:, k + 1]) ** 2) / B
            d_rewards.append(2.0 * (r - batch.target_rewards[:, k + 1]) / B)

    grads = {name: [np.zeros_like(p) for p in net.params] for name, net in nets.networks.items()}

    def accumulate(name, gs):
        for acc, g in zip(grads[name], gs):
            acc += g

    d_state = np.zeros((B, d))
    for k in range(K, -1, -1):
        if k < K:
            # dynamics step k produced state k+1 (tanh) and reward k+1
            d_out = np.hstack([d_state * (1.0 - states[k + 1] ** 2), d_rewards[k + 1][:, None]])
            gs, d_in = backward(nets.dynamics, dyn_caches[k], d_out)
            accumulate("dynamics", gs)
            d_state = d_in[:, :d]
        else:
            d_state = np.zeros((B, d))
        gs, d_in = backward(nets.prediction, pred_caches[k], np.hstack([d_logits[k], d_values[k][:, None]]))
        accumulate("prediction", gs)
        d_state = d_state + d_in
    gs, _ = backward(nets.representation, rep_cache, d_state * (1.0 - states[0] ** 2))
    accumulate("representation", gs)
    components = {"policy": float(policy_loss), "value": float(value_loss), "reward": float(reward_loss)}
    return float(policy_loss + value_loss + reward_loss), components, grads


class MuZeroAgent:
    """Networks, optimizers, replay buffer and the self-play/training loop."""

    def __init__(self, config: MuZeroConfig = MuZeroConfig()):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.nets = NetworkSet(config, np.random.default_rng(config.seed + 1))
        self.optimizers = {name: AdamState.for_params(net.params, lr=config.lr) for name, net in self.nets.networks.items()}
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.episodes = 0
        self.train_steps = 0
        self.losses: list[dict] = []

    def act(self, observation, temperature: float, training: bool, nets: Optional[NetworkSet] = None):
        policy, value, _ = run_mcts(
            nets or self.nets, observation, self.config.n_simulations, self.rng, add_noise=training, config=self.config
        )
        return select_action(policy, temperature, self.rng), policy, value

    def self_play_episode(self, env, temperature: float = 1.0, training: bool = True, nets: Optional[NetworkSet] = None) -> Trajectory:
        """Play one episode to the end and store it in the replay buffer.

        Errors raised by the environment (budget exhaustion included) propagate
        and the partial episode is dropped.
        """
        obs = env.reset()
        observations, actions, rewards, policies, values = [], [], [], [], []
        done = False
        while not done:
            a, policy, value = self.act(obs, temperature, training, nets)
            observations.append(obs)
            actions.append(a)
            policies.append(policy)
            values.append(value)
            obs, reward, done = env.step(a)
            rewards.append(reward)
        traj = Trajectory(
            np.array(observations), np.array(actions, dtype=np.int64), np.array(rewards, dtype=np.float64),
            np.array(policies), np.array(values),
        )
        traj.compute_targets(self.config.discount)
        self.buffer.add(traj)
        self.episodes += 1
        return traj

    def train_step(self, batch_size: Optional[int] = None, unroll: Optional[int] = None) -> Optional[dict]:
        """One Adam update of every network; None when the buffer is too small."""
        batch_size = batch_size or self.config.batch_size
        unroll = self.config.unroll_steps if unroll is None else unroll
        if self.buffer.n_positions < batch_size:
            return None
        samples = self.buffer.sample_positions(batch_size, self.rng)
        batch = make_batch(samples, unroll, self.config.num_actions, self.rng)
        return self.update(batch)

    def update(self, batch: Batch) -> dict:
        total, components, grads = loss_and_grads(self.nets, batch)
        for name, net in self.nets.networks.items():
            adam_step(net.params, grads[name], self.optimizers[name])
        self.train_steps += 1
        components = dict(components, total=total)
        self.losses.append(components)
        return components

    def temperature(self, progress: float) -> float:
        hot, cold = self.config.temperatures
        return hot if progress < 0.5 else cold

    def train(self, env, n_episodes: int, log: Optional[TextIO] = None) -> None:
        """Alternate self-play episodes and training for ``n_episodes``."""
        carry = 0.0
        for episode in range(n_episodes):
            traj = self.self_play_episode(env, self.temperature(episode / max(n_episodes, 1)))
            carry += self.config.train_steps_per_env_step * len(traj)
            loss = None
            while carry >= 1.0:
                carry -= 1.0
                loss = self.train_step() or loss
            if log is not None:
                log.write(json.dumps({"episode": self.episodes, "loss": loss}) + "\n")

    def search(self, env, log: Optional[TextIO] = None) -> None:
        """Run self-play until the environment's evaluation budget is spent.

        Training consumes the budget until ``1 - inference_fraction`` of it is
        used; the rest goes to inference episodes with frozen weights, no root
        noise and greedy actions.
        """
        evaluator = env.evaluator
        budget = evaluator.budget
        if budget is None:
            raise ValueError("search needs an evaluator with a finite budget")
        train_until = int(round(budget * (1.0 - self.config.inference_fraction)))
        carry = 0.0
        episodes = 0
        max_episodes = self.config.max_episodes or 50 * budget
        try:
            while evaluator.count < train_until and episodes < max_episodes:
                progress = evaluator.count / max(train_until, 1)
                traj = self.self_play_episode(env, self.temperature(progress))
                episodes += 1
                carry += self.config.train_steps_per_env_step * len(traj)
                loss = None
                while carry >= 1.0:
                    carry -= 1.0
                    loss = self.train_step() or loss
                if log is not None:
                    log.write(json.dumps({"episode": self.episodes, "best_cv": evaluator.best(), "loss": loss}) + "\n")
            frozen = self.nets.copy()
            while episodes < max_episodes:
                self.self_play_episode(env, 0.0, training=False, nets=frozen)
                episodes += 1
        except BudgetExhausted:
            pass

    # -- checkpoints --------------------------------------------------------

    def save(self, path) -> None:
        sections = {}
        for name, net in self.nets.networks.items():
            sections[name] = net.params
            sections[f"{name}.adam_m"] = self.optimizers[name].m
            sections[f"{name}.adam_v"] = self.optimizers[name].v
        meta = {
            "config": {k: v for k, v in asdict(self.config).items()},
            "adam_steps": {name: opt.step for name, opt in self.optimizers.items()},
            "episodes": self.episodes,
            "train_steps": self.train_steps,
        }
        save_checkpoint(path, sections, meta)

    @classmethod
    def load(cls, path) -> "MuZeroAgent":
        sections, meta = load_checkpoint(path)
        cfg = dict(meta["config"])
        cfg["temperatures"] = tuple(cfg["temperatures"])
        agent = cls(MuZeroConfig(**cfg))
        for name, net in agent.nets.networks.items():
            for p, saved in zip(net.params, sections[name]):
                p[...] = saved
            opt = agent.optimizers[name]
            opt.m = sections[f"{name}.adam_m"]
            opt.v = sections[f"{name}.adam_v"]
            opt.step = meta["adam_steps"][name]
        agent.episodes = meta["episodes"]
        agent.train_steps = meta["train_steps"]
        return agent


class BanditEnv:
    """One-step environment: pulling ``arm`` pays 1, every other action pays 0."""

    num_actions = NUM_ACTIONS

    def __init__(self, arm: int, observation_size: int = MAX_DEPTH * NUM_ACTIONS):
        self.arm = arm
        self.observation_size = observation_size

    def reset(self) -> np.ndarray:
        return np.zeros(self.observation_size)

    def step(self, action: int):
        return np.zeros(self.observation_size), float(action == self.arm), True
