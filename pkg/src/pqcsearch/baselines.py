"""Comparison arms: random layered/flexible search, a genetic algorithm and reference circuits."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .circuit import (
    ACTIONS,
    MAX_DEPTH,
    ActionKind,
    FlexGate,
    FlexibleCircuit,
    random_flexible,
    random_layered,
)
from .evaluation import BudgetExhausted, CircuitEvaluator, SearchRecord, top_k
from .learners import UndefinedAlignmentError, kernel_target_alignment
from .pqk import compute_features, gram
from .simulator import GateKind, GateProgram

logger = logging.getLogger(__name__)

LAYERED = "layered"
FLEXIBLE = "flexible"


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------

def random_search(
    evaluator: CircuitEvaluator,
    num_qubits: int,
    generator: str = LAYERED,
    budget: int = 10_000,
    k: int = 5,
    seed: int = 0,
    max_depth: int = MAX_DEPTH,
    gate_budget: Optional[int] = None,
) -> list[SearchRecord]:
    """Score ``budget`` random circuits and return the best ``k``.

    Layered circuits have 2 to ``max_depth`` layers. Flexible circuits have up
    to ``gate_budget`` gates (default ``max_depth * num_qubits``).
    """
    if budget < k:
        raise ValueError("budget must be at least k")
    if generator not in (LAYERED, FLEXIBLE):
        raise ValueError(f"unknown generator {generator!r}")
    rng = np.random.default_rng(seed)
    gate_budget = gate_budget or max_depth * num_qubits
    start = len(evaluator.records)
    try:
        for _ in range(budget):
            if generator == LAYERED:
                circuit = random_layered(rng, num_qubits, 2, max_depth, max_depth)
            else:
                circuit = random_flexible(rng, num_qubits, gate_budget)
            evaluator.evaluate(circuit)
    except BudgetExhausted:
        logger.info("random %s search stopped by the evaluator budget", generator)
    return top_k(evaluator.records[start:], k)


# ---------------------------------------------------------------------------
# genetic algorithm
# ---------------------------------------------------------------------------

# gene columns
ENABLED, ACTION, TARGET, CONTROL, FEATURE, ANGLE = range(6)
_DATA_IDS = np.array([a.id for a in ACTIONS if a.is_data])


@dataclass(frozen=True)
class GaConfig:
    population: int = 30
    generations: Optional[int] = None  # None: run until the evaluator budget is spent
    tournament: int = 3
    crossover_rate: float = 0.7
    mutation_rate: float = 0.05
    elitism: int = 2
    enable_prob: float = 0.5

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be at least 4")
        if not 0 <= self.elitism < self.population:
            raise ValueError("elitism must be smaller than the population")


@dataclass
class GaResult:
    population: list[np.ndarray]
    fitness: np.ndarray
    best_per_generation: list[float]
    top: list[SearchRecord]


def random_gene(rng: np.random.Generator, q: int, enable_prob: float = 0.5) -> np.ndarray:
    return np.array([
        float(rng.random() < enable_prob),
        float(rng.integers(len(ACTIONS))),
        float(rng.integers(q)),
        float(rng.integers(q)),
        float(rng.integers(q)),
        float(rng.uniform(0.0, 2 * np.pi)),
    ])


def random_genome(rng: np.random.Generator, q: int, n_genes: int, enable_prob: float = 0.5) -> np.ndarray:
    return repair(np.stack([random_gene(rng, q, enable_prob) for _ in range(n_genes)]), q, rng)


def _decode_gene(gene: np.ndarray, q: int) -> Optional[FlexGate]:
    if not gene[ENABLED]:
        return None
    act = ACTIONS[int(gene[ACTION])]
    target = int(gene[TARGET])
    control = None
    if act.two_qubit:
        if q < 2:
            return None
        control = int(gene[CONTROL])
        if control == target:
            control = (target + 1) % q
    if act.is_data:
        source = "lin" if act.kind in (ActionKind.RX_DATA, ActionKind.RY_DATA, ActionKind.RZ_DATA) else "atan"
        return FlexGate(act.gate, target, control, source, int(gene[FEATURE]))
    if act.gate.is_rotation:
        return FlexGate(act.gate, target, control, "lit", angle=float(gene[ANGLE]))
    return FlexGate(act.gate, target, control)


def decode(genome: np.ndarray, q: int) -> FlexibleCircuit:
    gates = [g for g in (_decode_gene(gene, q) for gene in genome) if g is not None]
    return FlexibleCircuit(q, tuple(gates))


def _encoded(genome: np.ndarray, q: int) -> set[int]:
    on = genome[:, ENABLED] > 0
    data = np.isin(genome[:, ACTION].astype(int), _DATA_IDS)
    return set(genome[on & data, FEATURE].astype(int).tolist())


def repair(genome: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """Rewrite random non-data slots so every feature is encoded at least once."""
    genome = genome.copy()
    missing = sorted(set(range(q)) - _encoded(genome, q))
    if not missing:
        return genome
    on = genome[:, ENABLED] > 0
    data = np.isin(genome[:, ACTION].astype(int), _DATA_IDS)
    free = np.flatnonzero(~(on & data))
    if free.size < len(missing):
        raise ValueError("genome too short to encode every feature")
    slots = rng.choice(free, size=len(missing), replace=False)
    for slot, f in zip(slots, missing):
        genome[slot, ENABLED] = 1.0
        genome[slot, ACTION] = float(rng.choice(_DATA_IDS))
        genome[slot, FEATURE] = float(f)
    return genome


def _tournament(rng: np.random.Generator, fitness: np.ndarray, k: int) -> int:
    entrants = rng.choice(fitness.size, size=k, replace=False)
    return int(entrants[np.argmax(fitness[entrants])])


def genetic_search(
    evaluator: CircuitEvaluator,
    num_qubits: int,
    config: GaConfig = GaConfig(),
    seed: int = 0,
    max_depth: int = MAX_DEPTH,
    k: int = 5,
) -> GaResult:
    """Single-objective GA with CV score as fitness.

    Elites carry their fitness over, so every evaluation after the first
    generation goes to a new child. Runs until ``config.generations`` are done
    or the evaluator budget is spent.
    """
    q = num_qubits
    rng = np.random.default_rng(seed)
    n_genes = max_depth * q
    start = len(evaluator.records)

    def fitness_of(genome):
        score = evaluator.evaluate(decode(genome, q))
        return score if math.isfinite(score) else -math.inf

    population = [random_genome(rng, q, n_genes, config.enable_prob) for _ in range(config.population)]
    fitness = np.full(config.population, -math.inf)
    history: list[float] = []
    try:
        for i, genome in enumerate(population):
            fitness[i] = fitness_of(genome)
        history.append(float(fitness.max()))
        generation = 1
        while config.generations is None or generation < config.generations:
            order = np.argsort(-fitness, kind="stable")
            new_pop = [population[i] for i in order[: config.elitism]]
            new_fit = [fitness[i] for i in order[: config.elitism]]
            while len(new_pop) < config.population:
                a = population[_tournament(rng, fitness, config.tournament)]
                b = population[_tournament(rng, fitness, config.tournament)]
                if rng.random() < config.crossover_rate:
                    cut = int(rng.integers(1, n_genes))
                    child = np.vstack([a[:cut], b[cut:]])
                else:
                    child = a.copy()
                for g in range(n_genes):
                    if rng.random() < config.mutation_rate:
                        child[g] = random_gene(rng, q, config.enable_prob)
                child = repair(child, q, rng)
                new_fit.append(fitness_of(child))
                new_pop.append(child)
            population, fitness = new_pop, np.array(new_fit)
            history.append(float(fitness.max()))
            generation += 1
    except BudgetExhausted:
        # an unfinished generation is dropped; its evaluations still appear in the records
        logger.info("GA stopped by the evaluator budget after %d generations", len(history))
    return GaResult(list(population), np.asarray(fitness), history, top_k(evaluator.records[start:], k))


# ---------------------------------------------------------------------------
# reference circuits
# ---------------------------------------------------------------------------

HUBREGTSEN_TRAINABLE = "HUBREGTSEN_TRAINABLE"
PETERS_FIXED = "PETERS_FIXED"
HAUG_YZ_CX = "HAUG_YZ_CX"
HAVLICEK_ZZ = "HAVLICEK_ZZ"
TEMPLATES = (HUBREGTSEN_TRAINABLE, PETERS_FIXED, HAUG_YZ_CX, HAVLICEK_ZZ)

# angle rule per gate: ("const", 0), ("x", f), ("2x", f), ("theta", p), ("theta+x", (p, f)), ("2xx", (j, k))
_Rule = tuple


def _chain(q: int) -> list[tuple[int, int]]:
    return [(i, i + 1) for i in range(q - 1)]


def _ring(q: int) -> list[tuple[int, int]]:
    if q < 2:
        return []
    if q == 2:
        return [(0, 1)]
    return [(i, (i + 1) % q) for i in range(q)]


def _layout(template: str, q: int, layers: int) -> tuple[list[tuple[GateKind, int, Optional[int], _Rule]], int]:
    gates = []
    p = 0
    for _ in range(layers):
        if template == HUBREGTSEN_TRAINABLE:
            for i in range(q):
                gates.append((GateKind.RY, i, None, ("theta", p)))
                p += 1
            gates += [(GateKind.CX, t, c, ("const", 0)) for c, t in _ring(q)]
            gates += [(GateKind.RZ, i, None, ("x", i)) for i in range(q)]
        elif template == PETERS_FIXED:
            gates += [(GateKind.H, i, None, ("const", 0)) for i in range(q)]
            gates += [(GateKind.RZ, i, None, ("x", i)) for i in range(q)]
            gates += [(GateKind.CX, t, c, ("const", 0)) for c, t in _chain(q)]
        elif template == HAUG_YZ_CX:
            for i in range(q):
                gates.append((GateKind.RY, i, None, ("theta+x", (p, i))))
                gates.append((GateKind.RZ, i, None, ("theta", p + 1)))
                p += 2
            gates += [(GateKind.CX, t, c, ("const", 0)) for c, t in _chain(q)]
        elif template == HAVLICEK_ZZ:
            gates += [(GateKind.H, i, None, ("const", 0)) for i in range(q)]
            gates += [(GateKind.RZ, i, None, ("2x", i)) for i in range(q)]
            for j, k in _chain(q):
                gates.append((GateKind.CX, k, j, ("const", 0)))
                gates.append((GateKind.RZ, k, None, ("2xx", (j, k))))
                gates.append((GateKind.CX, k, j, ("const", 0)))
        else:
            raise ValueError(f"unknown reference template {template!r}")
    return gates, p


@dataclass(frozen=True)
class ReferenceCircuit:
    template: str
    num_qubits: int
    layers: int
    theta: tuple = ()

    def __post_init__(self):
        if self.num_qubits < 1 or self.layers < 1:
            raise ValueError("q and L must be at least 1")
        _, n = _layout(self.template, self.num_qubits, self.layers)
        object.__setattr__(self, "theta", tuple(float(t) for t in self.theta))
        if len(self.theta) != n:
            raise ValueError(f"{self.template} with q={self.num_qubits}, L={self.layers} takes {n} parameters")

    @property
    def n_params(self) -> int:
        return len(self.theta)

    @property
    def gate_count(self) -> int:
        return len(_layout(self.template, self.num_qubits, self.layers)[0])

    @property
    def key(self) -> str:
        return f"R:{self.template}:{self.num_qubits}:{self.layers}:" + ",".join(repr(t) for t in self.theta)

    def has_data_encoding(self) -> bool:
        return True

    def with_theta(self, theta) -> "ReferenceCircuit":
        return replace(self, theta=tuple(float(t) for t in theta))

    def to_program(self, X, crx_as_printed: bool = True) -> GateProgram:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        layout, _ = _layout(self.template, self.num_qubits, self.layers)
        theta = np.asarray(self.theta)
        n = X.shape[0]
        cols = []
        for _, _, _, (rule, arg) in layout:
            if rule == "const":
                cols.append(np.zeros(n))
            elif rule == "x":
                cols.append(X[:, arg])
            elif rule == "2x":
                cols.append(2.0 * X[:, arg])
            elif rule == "theta":
                cols.append(np.full(n, theta[arg]))
            elif rule == "theta+x":
                cols.append(theta[arg[0]] + X[:, arg[1]])
            else:
                cols.append(2.0 * X[:, arg[0]] * X[:, arg[1]])
        return GateProgram(
            self.num_qubits,
            np.array([int(k) for k, _, _, _ in layout], dtype=np.int64),
            np.array([t for _, t, _, _ in layout], dtype=np.int64),
            np.array([-1 if c is None else c for _, _, c, _ in layout], dtype=np.int64),
            np.ascontiguousarray(np.column_stack(cols)) if cols else np.zeros((n, 0)),
        )


def build_reference(template: str, num_qubits: int, layers: int = 2, theta=None, seed: Optional[int] = None) -> ReferenceCircuit:
    """Template instance; parameters default to zeros, or U[0, 2pi) draws when ``seed`` is given."""
    _, n = _layout(template, num_qubits, layers)
    if theta is None:
        theta = np.zeros(n) if seed is None else np.random.default_rng(seed).uniform(0.0, 2 * np.pi, n)
    return ReferenceCircuit(template, num_qubits, layers, tuple(theta))


@dataclass
class KtaResult:
    circuit: ReferenceCircuit
    alignment: float
    initial_alignment: float
    evaluations: int
    budget_exhausted: bool = False


def optimize_kta(
    ref: ReferenceCircuit,
    X,
    y,
    budget: int = 200,
    restarts: int = 5,
    seed: int = 0,
    gamma: float = 1.0,
) -> KtaResult:
    """Maximize kernel-target alignment over the template parameters with Nelder-Mead.

    The first restart starts from ``ref.theta``, the others from uniform
    draws. Each Gram evaluation counts against ``budget``; the best point seen
    is returned, so the result never aligns worse than the start.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def alignment(theta) -> float:
        F = compute_features(ref.with_theta(theta), X)
        try:
            return kernel_target_alignment(gram(F, None, gamma), y)
        except UndefinedAlignmentError:
            return -math.inf

    initial = alignment(ref.theta)
    if ref.n_params == 0:
        return KtaResult(ref, initial, initial, 1)
    rng = np.random.default_rng(seed)
    state = {"n": 1, "best": initial, "theta": np.array(ref.theta)}

    class _Stop(Exception):
        pass

    def objective(theta):
        if state["n"] >= budget:
            raise _Stop
        state["n"] += 1
        value = alignment(theta)
        if value > state["best"]:
            state["best"], state["theta"] = value, np.array(theta)
        return -value if math.isfinite(value) else 1e300

    per_restart = max(1, (budget - 1) // restarts)
    exhausted = False
    for r in range(restarts):
        start = np.array(ref.theta) if r == 0 else rng.uniform(0.0, 2 * np.pi, ref.n_params)
        try:
            minimize(objective, start, method="Nelder-Mead", options={"maxfev": per_restart, "xatol": 1e-6, "fatol": 1e-10})
        except _Stop:
            exhausted = True
            break
    if exhausted:
        logger.warning("KTA optimization of %s hit its budget of %d Gram evaluations", ref.template, budget)
    return KtaResult(ref.with_theta(state["theta"]), state["best"], initial, state["n"], exhausted)


def reference_search(
    evaluator: CircuitEvaluator,
    num_qubits: int,
    layers: int = 2,
    kta_budget: int = 200,
    seed: int = 0,
    templates: Sequence[str] = TEMPLATES,
) -> tuple[list[SearchRecord], list[KtaResult]]:
    """KTA-tune each template on the evaluator's training data, then CV-score it."""
    results = []
    start = len(evaluator.records)
    for i, template in enumerate(templates):
        ref = build_reference(template, num_qubits, layers, seed=seed + i)
        res = optimize_kta(ref, evaluator.X, evaluator.y, kta_budget, seed=seed + i)
        results.append(res)
        evaluator.evaluate(res.circuit)
    return top_k(evaluator.records[start:], len(templates)), results


def write_results(path, records: Sequence[SearchRecord]) -> None:
    """One JSON object per line, best first."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def parse_circuit(key: str, max_depth: int = MAX_DEPTH):
    """Inverse of ``circuit.key`` for layered, flexible and reference circuits."""
    from .circuit import deserialize

    if key.startswith("R:"):
        _, template, q, layers, theta = key.split(":", 4)
        values = [float(t) for t in theta.split(",")] if theta else []
        return ReferenceCircuit(template, int(q), int(layers), tuple(values))
    return deserialize(key, max_depth)
