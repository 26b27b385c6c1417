import math

import numpy as np
import pytest

from pqcsearch import pqk
from pqcsearch.baselines import (
    FLEXIBLE,
    HAUG_YZ_CX,
    HAVLICEK_ZZ,
    HUBREGTSEN_TRAINABLE,
    LAYERED,
    PETERS_FIXED,
    TEMPLATES,
    GaConfig,
    _encoded,
    build_reference,
    decode,
    genetic_search,
    optimize_kta,
    parse_circuit,
    random_genome,
    random_search,
    reference_search,
    repair,
    write_results,
)
from pqcsearch.evaluation import CircuitEvaluator
from pqcsearch.learners import CLASSIFICATION, REGRESSION, ModelConfig, fixed_folds
from pqcsearch.pqk import FeatureCache, compute_features
from pqcsearch.simulator import dense_unitary_oracle


def evaluator(budget=None, n=24, q=2, seed=0, task=REGRESSION):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, q))
    if task == REGRESSION:
        y = np.sin(np.pi * X[:, 0]) * X[:, -1]
        model = ModelConfig(REGRESSION, reg=1e-3)
    else:
        y = np.where(X[:, 0] * X[:, -1] > 0, 1.0, -1.0)
        model = ModelConfig(CLASSIFICATION, reg=10.0)
    return CircuitEvaluator(X, y, fixed_folds(n, 5, 0), model, "toy", FeatureCache(), budget)


def test_random_search_small_budget_returns_all_sorted():
    ev = evaluator()
    top = random_search(ev, 2, LAYERED, budget=5, k=5, seed=1)
    assert len(top) == len({r.circuit for r in ev.records})
    keys = [(-r.cv_score, r.gate_count, r.circuit) for r in top]
    assert keys == sorted(keys)


def test_random_layered_respects_depth_bounds():
    ev = evaluator()
    random_search(ev, 2, LAYERED, budget=200, seed=2)
    depths = [len(r.circuit.split(":")[1].split(",")) for r in ev.records]
    assert min(depths) >= 2 and max(depths) <= 10


def test_random_search_deterministic_and_cached():
    ev1, ev2 = evaluator(q=1), evaluator(q=1)
    before = pqk.simulation_count()
    top1 = random_search(ev1, 1, LAYERED, budget=300, seed=3, max_depth=2)
    sims = pqk.simulation_count() - before
    top2 = random_search(ev2, 1, LAYERED, budget=300, seed=3, max_depth=2)
    assert top1 == top2
    # two layers leave about 480 distinct data circuits, so draws repeat; each is simulated once
    assert sims < 300 * 24


def test_random_flexible_search():
    ev = evaluator()
    top = random_search(ev, 2, FLEXIBLE, budget=30, seed=0)
    assert all(r.circuit.startswith("F2:") for r in top)
    assert ev.count == 30
    with pytest.raises(ValueError):
        random_search(ev, 2, "spiral", budget=10)


def test_random_search_stops_at_budget():
    ev = evaluator(budget=7)
    random_search(ev, 2, LAYERED, budget=20)
    assert ev.count == 7


def test_repair_guarantees_coverage():
    rng = np.random.default_rng(0)
    for _ in range(200):
        q = int(rng.integers(1, 5))
        genome = random_genome(rng, q, 10 * q, enable_prob=float(rng.random()))
        assert _encoded(genome, q) == set(range(q))
        assert decode(genome, q).has_data_encoding()
    empty = np.zeros((6, 6))
    assert _encoded(repair(empty, 3, rng), 3) == {0, 1, 2}


def test_ga_elitism_without_variation():
    ev = evaluator(budget=None, task=CLASSIFICATION)
    cfg = GaConfig(population=6, generations=6, crossover_rate=0.0, mutation_rate=0.0)
    res = genetic_search(ev, 2, cfg, seed=0)
    best = res.best_per_generation
    assert len(best) == 6
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert ev.count == 6 + 5 * 4


def test_ga_deterministic_and_budgeted():
    cfg = GaConfig(population=5)
    r1 = genetic_search(evaluator(budget=23), 2, cfg, seed=4)
    r2 = genetic_search(evaluator(budget=23), 2, cfg, seed=4)
    assert all(np.array_equal(a, b) for a, b in zip(r1.population, r2.population))
    assert [r.circuit for r in r1.top] == [r.circuit for r in r2.top]
    with pytest.raises(ValueError):
        GaConfig(population=3)


def test_reference_parameter_counts():
    assert build_reference(PETERS_FIXED, 4, 2).n_params == 0
    assert build_reference(HAVLICEK_ZZ, 4, 2).n_params == 0
    assert build_reference(HUBREGTSEN_TRAINABLE, 4, 2).n_params == 8
    assert build_reference(HAUG_YZ_CX, 4, 2).n_params == 16
    with pytest.raises(ValueError):
        build_reference("MYSTERY", 2, 1)
    with pytest.raises(ValueError):
        build_reference(PETERS_FIXED, 2, 0)


@pytest.mark.parametrize("template", TEMPLATES)
def test_reference_encodes_every_feature_each_layer(template):
    # changing feature k alters the state, in every layer count
    ref = build_reference(template, 3, 2, seed=1)
    x = np.array([0.3, -0.7, 0.5])
    base = compute_features(ref, x[None]).values
    for k in range(3):
        xp = x.copy()
        xp[k] += 0.4
        assert not np.allclose(compute_features(ref, xp[None]).values, base)
    program = ref.to_program(x[None])
    assert program.angles.shape == (1, ref.gate_count)


def test_havlicek_zz_phase_matches_exponential():
    # CX - RZ(2 x0 x1) - CX equals exp(-i x0 x1 Z Z) up to the surrounding layers
    ref = build_reference(HAVLICEK_ZZ, 2, 1)
    x = np.array([0.4, -1.1])
    U = dense_unitary_oracle(_ops(ref, x), 2)
    H = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    Z = np.diag([1.0, -1.0])
    def expz(a):
        return np.diag(np.exp(-1j * a * np.diag(Z)))
    zz = np.diag(np.exp(-1j * x[0] * x[1] * np.array([1, -1, -1, 1])))
    expected = zz @ np.kron(expz(x[0]), expz(x[1])) @ np.kron(H, H)
    phase = expected[0, 0] / U[0, 0]
    assert np.allclose(U * phase, expected, atol=1e-12)


def _ops(ref, x):
    from pqcsearch.simulator import GateKind, GateOp

    p = ref.to_program(x[None])
    return [GateOp(GateKind(k), int(t), None if c < 0 else int(c), float(a)) for k, t, c, a in zip(p.kinds, p.targets, p.controls, p.angles[0])]


def test_optimize_kta_keeps_best():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(16, 2))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    ref = build_reference(HUBREGTSEN_TRAINABLE, 2, 1, seed=3)
    res = optimize_kta(ref, X, y, budget=40, seed=1)
    assert res.alignment >= res.initial_alignment
    assert res.evaluations <= 40
    again = optimize_kta(ref, X, y, budget=40, seed=1)
    assert res.circuit.theta == again.circuit.theta
    fixed = optimize_kta(build_reference(PETERS_FIXED, 2, 1), X, y)
    assert fixed.circuit.theta == () and fixed.evaluations == 1


def test_reference_search_and_results_file(tmp_path):
    ev = evaluator()
    top, kta = reference_search(ev, 2, layers=1, kta_budget=10)
    assert len(kta) == 4 and len(top) == 4
    assert all(r.circuit.startswith("R:") for r in top)
    circuit = parse_circuit(top[0].circuit)
    assert circuit.key == top[0].circuit
    path = tmp_path / "results.jsonl"
    write_results(path, top)
    lines = path.read_text().splitlines()
    assert len(lines) == 4 and '"method"' in lines[0]
