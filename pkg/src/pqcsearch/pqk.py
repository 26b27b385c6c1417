"""Projected quantum kernel: Pauli-expectation features and the Gaussian outer kernel.

Features of a data point are the 3q single-qubit expectations of the encoded
state, ordered as all X, then all Y, then all Z. The kernel is
``exp(-gamma * ||f(x) - f(x')||^2)``. Features do not depend on gamma, so they
are cached per (circuit, dataset) and reused while gamma is tuned.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
import struct
import tempfile
import threading
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.spatial.distance import cdist

from .simulator import pauli_features, run_program

logger = logging.getLogger(__name__)

_MAX_CHUNK_AMPLITUDES = 1 << 22
_simulations = 0
_sim_lock = threading.Lock()


def simulation_count() -> int:
    """Total number of data points simulated by :func:`compute_features`."""
    return _simulations


@dataclass
class PqkFeatureMatrix:
    values: np.ndarray
    num_qubits: int
    circuit_key: str = ""

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != 3 * self.num_qubits:
            raise ValueError(f"feature matrix must have 3*q = {3 * self.num_qubits} columns")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def rows(self, index) -> "PqkFeatureMatrix":
        return PqkFeatureMatrix(self.values[index], self.num_qubits, self.circuit_key)


def cache_key(circuit, crx_as_printed: bool = True) -> str:
    key = circuit.key
    return key if crx_as_printed else key + "|crx=pi/n"


def compute_features(circuit, X, crx_as_printed: bool = True) -> PqkFeatureMatrix:
    """Simulate ``circuit`` on every row of ``X`` and return its Pauli features."""
    global _simulations
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    q = circuit.num_qubits
    if X.shape[1] != q:
        raise ValueError(f"data has {X.shape[1]} features but circuit has {q} qubits")
    n = X.shape[0]
    out = np.empty((n, 3 * q))
    chunk = max(1, _MAX_CHUNK_AMPLITUDES >> q)
    for start in range(0, n, chunk):
        block = X[start : start + chunk]
        states = run_program(circuit.to_program(block, crx_as_printed))
        out[start : start + len(block)] = pauli_features(states, q)
    with _sim_lock:
        _simulations += n
    return PqkFeatureMatrix(out, q, cache_key(circuit, crx_as_printed))


def _values(F) -> np.ndarray:
    return F.values if isinstance(F, PqkFeatureMatrix) else np.atleast_2d(np.asarray(F, dtype=np.float64))


def gram(F: Union[PqkFeatureMatrix, np.ndarray], G: Union[PqkFeatureMatrix, np.ndarray, None] = None, gamma: float = 1.0) -> np.ndarray:
    """Gaussian outer kernel between the rows of ``F`` and ``G`` (``G=F`` when omitted)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    a = _values(F)
    b = a if G is None else _values(G)
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature matrices have different column counts")
    return np.exp(-gamma * cdist(a, b, "sqeuclidean"))


# ---------------------------------------------------------------------------
# persistent cache
# ---------------------------------------------------------------------------

class CacheUnavailableError(OSError):
    pass


_MAGIC = b"PQKF"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIQII")  # magic, version, q, N, cols, key length


class FeatureCache:
    """In-memory LRU of feature matrices, optionally backed by a directory.

    Entries are keyed by ``(circuit key, dataset id)``. On disk each entry is
    one file: a little-endian header ``(magic, version, q, N, 3q, key length)``,
    the UTF-8 circuit key, then the float64 payload.
    """

    def __init__(self, directory: Optional[Union[str, Path]] = None, capacity: int = 512, crx_as_printed: bool = True):
        self.directory = Path(directory) if directory is not None else None
        self.capacity = capacity
        self.crx_as_printed = crx_as_printed
        self.hits = 0
        self.misses = 0
        self.simulations = 0
        self._memory: OrderedDict[tuple[str, str], PqkFeatureMatrix] = OrderedDict()
        self._lock = threading.Lock()
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self._memory)

    def path_for(self, key: str, dataset_id: str) -> Path:
        digest = hashlib.sha256(key.encode()).hexdigest()[:24]
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", dataset_id)
        return self.directory / f"{digest}__{safe}.pqk"

    def get_or_compute(self, circuit, dataset_id: str, X) -> PqkFeatureMatrix:
        key = cache_key(circuit, self.crx_as_printed)
        mem_key = (key, dataset_id)
        with self._lock:
            hit = self._memory.get(mem_key)
            if hit is not None:
                self._memory.move_to_end(mem_key)
                self.hits += 1
                return hit
        stored = None
        if self.directory is not None:
            try:
                stored = self._read(key, dataset_id)
            except CacheUnavailableError as exc:
                logger.warning("feature cache read failed, recomputing: %s", exc)
        if stored is not None and stored.n_rows == len(X):
            with self._lock:
                self.hits += 1
                self._remember(mem_key, stored)
            return stored
        features = compute_features(circuit, X, self.crx_as_printed)
        with self._lock:
            self.misses += 1
            self.simulations += features.n_rows
            self._remember(mem_key, features)
        if self.directory is not None:
            try:
                self._write(key, dataset_id, features)
            except CacheUnavailableError as exc:
                logger.warning("feature cache write failed: %s", exc)
        return features

    def _remember(self, mem_key, features: PqkFeatureMatrix) -> None:
        self._memory[mem_key] = features
        self._memory.move_to_end(mem_key)
        while len(self._memory) > self.capacity:
            self._memory.popitem(last=False)

    def _read(self, key: str, dataset_id: str) -> Optional[PqkFeatureMatrix]:
        path = self.path_for(key, dataset_id)
        if not path.exists():
            return None
        try:
            raw = path.read_bytes()
            magic, version, q, n, cols, key_len = _HEADER.unpack_from(raw)
            if magic != _MAGIC or version != _FORMAT_VERSION or cols != 3 * q:
                raise CacheUnavailableError(f"{path}: unrecognised header")
            offset = _HEADER.size
            stored_key = raw[offset : offset + key_len].decode()
            if stored_key != key:
                return None
            offset += key_len
            payload = np.frombuffer(raw, dtype="<f8", count=n * cols, offset=offset)
        except (OSError, struct.error, ValueError, UnicodeDecodeError) as exc:
            raise CacheUnavailableError(f"{path}: {exc}") from exc
        return PqkFeatureMatrix(payload.reshape(n, cols).astype(np.float64), q, key)

    def _write(self, key: str, dataset_id: str, features: PqkFeatureMatrix) -> None:
        path = self.path_for(key, dataset_id)
        encoded = key.encode()
        header = _HEADER.pack(_MAGIC, _FORMAT_VERSION, features.num_qubits, features.n_rows, features.values.shape[1], len(encoded))
        try:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(header)
                fh.write(encoded)
                fh.write(np.ascontiguousarray(features.values, dtype="<f8").tobytes())
            # readers see either the old file or the complete new one
            os.replace(tmp, path)
        except OSError as exc:
            raise CacheUnavailableError(f"{path}: {exc}") from exc
