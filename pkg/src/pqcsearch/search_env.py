"""Circuit-construction environment for the search agent.

Each step appends one layer action. Circuits with data encoding are scored
by cross-validation and the score is mapped to a tiered reward; circuits
without data encoding get the large penalty and are not scored.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .circuit import (
    DATA_ACTION_IDS,
    MAX_DEPTH,
    NUM_ACTIONS,
    EncodingCircuit,
    encode_observation,
    random_actions,
)
from .evaluation import CircuitEvaluator, SharedBest

SURPASS = "surpass"
MATCH = "match"
IMPROVE = "episode_improve"
NO_IMPROVE = "no_improve"
NO_ENCODING = "no_encoding"
INVALID = "invalid"


@dataclass(frozen=True)
class RewardTable:
    surpass: float = 1.0
    match: float = 0.5
    episode_improve: float = 0.1
    no_improve: float = -0.02
    no_encoding: float = -1.0
    match_tolerance: float = 1e-6

    def __post_init__(self):
        if not self.surpass > self.match > self.episode_improve > 0 > self.no_improve > self.no_encoding:
            raise ValueError("reward tiers must be strictly ordered")


def compute_reward(cv: Optional[float], episode_best: float, global_best: float, table: RewardTable = RewardTable()):
    """Map a CV score to ``(reward, tier, episode_best, global_best)``.

    ``cv`` of None or NaN marks a failed evaluation and earns the
    no-improvement penalty without touching either best.
    """
    if cv is None or not math.isfinite(cv):
        return table.no_improve, INVALID, episode_best, global_best
    if cv > global_best + table.match_tolerance:
        return table.surpass, SURPASS, max(episode_best, cv), cv
    if abs(cv - global_best) <= table.match_tolerance:
        return table.match, MATCH, max(episode_best, cv), max(global_best, cv)
    if cv > episode_best:
        return table.episode_improve, IMPROVE, cv, global_best
    return table.no_improve, NO_IMPROVE, episode_best, global_best


@dataclass
class EnvState:
    circuit: EncodingCircuit
    step_index: int = 0
    episode_best: float = -math.inf
    restarted: bool = False
    done: bool = False
    history: list = field(default_factory=list)


class CircuitSearchEnv:
    """Builds layered circuits one action at a time.

    Args:
        evaluator: Scores circuits; its budget bounds the search.
        max_depth: Layer cap; reaching it ends the episode.
        restart_prob: Chance that a reset starts from ``max_depth // 2``
            random actions (at least one of them a data layer).
        best: Shared running best, so several environments can share it.
        audit: Optional text stream receiving one JSON line per scored circuit.
    """

    num_actions = NUM_ACTIONS

    def __init__(
        self,
        evaluator: CircuitEvaluator,
        num_qubits: int,
        max_depth: int = MAX_DEPTH,
        restart_prob: float = 0.2,
        rewards: RewardTable = RewardTable(),
        rng: Optional[np.random.Generator] = None,
        best: Optional[SharedBest] = None,
        audit: Optional[TextIO] = None,
    ):
        self.evaluator = evaluator
        self.num_qubits = num_qubits
        self.max_depth = max_depth
        self.restart_prob = restart_prob
        self.rewards = rewards
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.best = best if best is not None else SharedBest()
        self.audit = audit
        self.audit_records: list[dict] = []
        self.state = EnvState(EncodingCircuit(num_qubits, (), max_depth))

    @property
    def observation_size(self) -> int:
        return self.max_depth * NUM_ACTIONS

    @property
    def global_best(self) -> float:
        return self.best.value

    def observe(self) -> np.ndarray:
        return encode_observation(self.state.circuit, self.max_depth)

    def restart_prefix(self) -> list[int]:
        n = self.max_depth // 2
        while True:
            ids = random_actions(self.rng, n)
            if any(i in DATA_ACTION_IDS for i in ids):
                return ids

    def reset(self, restart: Optional[bool] = None) -> np.ndarray:
        """Start a new episode; ``restart`` forces or suppresses the random prefix."""
        if restart is None:
            restart = bool(self.rng.random() < self.restart_prob)
        ids = self.restart_prefix() if restart else []
        circuit = EncodingCircuit.from_ids(self.num_qubits, ids, self.max_depth)
        self.state = EnvState(circuit, step_index=len(ids), restarted=restart)
        return self.observe()

    def step(self, action_id: int):
        """Append an action and return ``(observation, reward, done)``."""
        st = self.state
        if st.done:
            raise RuntimeError("episode finished; call reset()")
        circuit = st.circuit.append(int(action_id))
        st.circuit = circuit
        st.step_index += 1
        if not circuit.has_data_encoding():
            reward, tier, score = self.rewards.no_encoding, NO_ENCODING, None
        else:
            score = self.evaluator.evaluate(circuit)
            reward, tier, st.episode_best, new_global = compute_reward(
                score, st.episode_best, self.best.value, self.rewards
            )
            if tier in (SURPASS, MATCH):
                self.best.offer(new_global)
            record = {"circuit": circuit.key, "cv_score": score, "tier": tier, "t": time.time()}
            self.audit_records.append(record)
            if self.audit is not None:
                self.audit.write(json.dumps(record) + "\n")
        st.history.append((int(action_id), reward, tier, score))
        st.done = circuit.depth >= self.max_depth
        return self.observe(), reward, st.done
