"""Build a layered encoding circuit by hand, turn it into projected-kernel
features and score it with cross-validation on the two-curves problem.

    python demos/01_circuit_kernel_walkthrough.py
"""
import numpy as np

from pqcsearch.circuit import ACTIONS, EncodingCircuit
from pqcsearch.data import make_two_curves
from pqcsearch.learners import CLASSIFICATION, ModelConfig, cross_validate, fixed_folds
from pqcsearch.pqk import compute_features, gram

dataset = make_two_curves(seed=0)
view = dataset.train_view()
q = view.X.shape[1]
print(f"two-curves: {view.n} training rows, {q} features, one qubit per feature")

# Hadamard wall, linear RY encoding, a CX chain, then linear RZ encoding.
by_name = {str(a): a.id for a in ACTIONS}
print(f"{len(by_name)} actions, e.g.", ", ".join(list(by_name)[:13]))
ids = [by_name[name] for name in ("H", "RY_DATA", "CX", "RZ_DATA")]
circuit = EncodingCircuit.from_ids(q, ids)
print("circuit key:", circuit.key)

features = compute_features(circuit, view.X)
print("feature matrix shape (rows, 3 * qubits):", features.values.shape)

K = gram(features, None, gamma=1.0)
print(f"Gram matrix: symmetric={np.allclose(K, K.T)}, diagonal={K.diagonal().min():.1f}, "
      f"off-diagonal mean={K[~np.eye(len(K), dtype=bool)].mean():.3f}")

folds = fixed_folds(view.n, 5, seed=0)
for gamma in (0.003, 0.03, 0.3):
    score = cross_validate(features, view.y, folds, ModelConfig(CLASSIFICATION, gamma=gamma, reg=10.0))
    print(f"5-fold CV accuracy at gamma={gamma}: {score:.3f}")
print("a hand-picked circuit is a weak encoder here; demos/03_small_benchmark.py shows searched ones near 0.9")
