"""Dense statevector simulation for the encoding-circuit gate set.

Qubit 0 is the most significant bit of the amplitude index, so ``|10>`` on two
qubits is index 2. Rotations follow ``R_a(theta) = exp(-i theta P_a / 2)``.

The main path works on a batch of states (one row per data point) and runs a
whole compiled gate program per row in a single numba kernel, which keeps each
row resident in cache while every gate is applied.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numba
import numpy as np

MAX_QUBITS = 16
ORACLE_MAX_QUBITS = 6


class GateKind(enum.IntEnum):
    X = 0
    Y = 1
    Z = 2
    H = 3
    RX = 4
    RY = 5
    RZ = 6
    CX = 7
    CY = 8
    CZ = 9
    CRX = 10
    CRY = 11
    CRZ = 12

    @property
    def is_controlled(self) -> bool:
        return self >= GateKind.CX

    @property
    def is_rotation(self) -> bool:
        return self in _ROTATIONS


_ROTATIONS = frozenset(
    {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}
)

_UNCONTROLLED = {
    GateKind.CX: GateKind.X,
    GateKind.CY: GateKind.Y,
    GateKind.CZ: GateKind.Z,
    GateKind.CRX: GateKind.RX,
    GateKind.CRY: GateKind.RY,
    GateKind.CRZ: GateKind.RZ,
}

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class GateOp:
    """One gate application.

    Attributes:
        kind: Gate type.
        target: Target qubit index.
        control: Control qubit index, required for controlled kinds only.
        angle: Rotation angle in radians; ignored for non-rotation kinds.
    """

    kind: GateKind
    target: int
    control: Optional[int] = None
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if self.kind.is_controlled:
            if self.control is None:
                raise ValueError(f"{self.kind.name} requires a control qubit")
            if self.control == self.target:
                raise ValueError("control and target must differ")
        elif self.control is not None:
            raise ValueError(f"{self.kind.name} takes no control qubit")


@dataclass
class StateVector:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ValueError("amplitude count must equal 2**num_qubits")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


def _check_qubits(num_qubits: int) -> None:
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise ValueError(f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}")


def init_state(num_qubits: int) -> StateVector:
    """Return ``|0...0>`` on ``num_qubits`` qubits."""
    _check_qubits(num_qubits)
    amps = np.zeros(1 << num_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(amps, num_qubits)


def _check_gate(gate: GateOp, num_qubits: int) -> None:
    for idx in (gate.target, gate.control):
        if idx is not None and not 0 <= idx < num_qubits:
            raise ValueError(f"qubit index {idx} out of range for {num_qubits} qubits")


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _pair_index(g, m):
    # g-th index with bit m cleared, enumerating all such indices in order
    return ((g >> m) << (m + 1)) + (g & ((1 << m) - 1))


@numba.njit(cache=True)
def _apply_single(row, q, kind, target, angle):
    m = q - 1 - target
    tk = 1 << m
    npairs = row.shape[0] >> 1
    if kind == 0:  # X
        for g in range(npairs):
            i = _pair_index(g, m)
            a0 = row[i]
            row[i] = row[i + tk]
            row[i + tk] = a0
    elif kind == 1:  # Y
        for g in range(npairs):
            i = _pair_index(g, m)
            a0 = row[i]
            row[i] = -1j * row[i + tk]
            row[i + tk] = 1j * a0
    elif kind == 2:  # Z
        for g in range(npairs):
            i = _pair_index(g, m) + tk
            row[i] = -row[i]
    elif kind == 3:  # H
        r = 0.7071067811865476
        for g in range(npairs):
            i = _pair_index(g, m)
            a0 = row[i]
            a1 = row[i + tk]
            row[i] = r * (a0 + a1)
            row[i + tk] = r * (a0 - a1)
    elif kind == 4:  # RX
        c = np.cos(0.5 * angle)
        ms = -1j * np.sin(0.5 * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            a0 = row[i]
            a1 = row[i + tk]
            row[i] = c * a0 + ms * a1
            row[i + tk] = ms * a0 + c * a1
    elif kind == 5:  # RY
        c = np.cos(0.5 * angle)
        s = np.sin(0.5 * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            a0 = row[i]
            a1 = row[i + tk]
            row[i] = c * a0 - s * a1
            row[i + tk] = s * a0 + c * a1
    else:  # RZ
        p0 = np.exp(-0.5j * angle)
        p1 = np.exp(0.5j * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            row[i] = p0 * row[i]
            row[i + tk] = p1 * row[i + tk]


@numba.njit(cache=True)
def _apply_controlled(row, q, kind, target, control, angle):
    m = q - 1 - target
    tk = 1 << m
    ck = 1 << (q - 1 - control)
    npairs = row.shape[0] >> 1
    if kind == 7:  # CX
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                a0 = row[i]
                row[i] = row[i + tk]
                row[i + tk] = a0
    elif kind == 8:  # CY
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                a0 = row[i]
                row[i] = -1j * row[i + tk]
                row[i + tk] = 1j * a0
    elif kind == 9:  # CZ
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                row[i + tk] = -row[i + tk]
    elif kind == 10:  # CRX
        c = np.cos(0.5 * angle)
        ms = -1j * np.sin(0.5 * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                a0 = row[i]
                a1 = row[i + tk]
                row[i] = c * a0 + ms * a1
                row[i + tk] = ms * a0 + c * a1
    elif kind == 11:  # CRY
        c = np.cos(0.5 * angle)
        s = np.sin(0.5 * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                a0 = row[i]
                a1 = row[i + tk]
                row[i] = c * a0 - s * a1
                row[i + tk] = s * a0 + c * a1
    else:  # CRZ
        p0 = np.exp(-0.5j * angle)
        p1 = np.exp(0.5j * angle)
        for g in range(npairs):
            i = _pair_index(g, m)
            if i & ck:
                row[i] = p0 * row[i]
                row[i + tk] = p1 * row[i + tk]


@numba.njit(cache=True)
def _run_program(states, q, kinds, targets, controls, angles):
    n_rows = states.shape[0]
    n_gates = kinds.shape[0]
    for b in range(n_rows):
        row = states[b]
        for g in range(n_gates):
            k = kinds[g]
            if k < 7:
                _apply_single(row, q, k, targets[g], angles[b, g])
            else:
                _apply_controlled(row, q, k, targets[g], controls[g], angles[b, g])


@numba.njit(cache=True)
def _pauli_features(states, q):
    n_rows = states.shape[0]
    dim = states.shape[1]
    out = np.zeros((n_rows, 3 * q))
    for b in range(n_rows):
        row = states[b]
        for k in range(q):
            m = q - 1 - k
            tk = 1 << m
            cross = 0.0 + 0.0j
            z = 0.0
            for g in range(dim >> 1):
                i = _pair_index(g, m)
                a0 = row[i]
                a1 = row[i + tk]
                cross += np.conj(a0) * a1
                z += a0.real * a0.real + a0.imag * a0.imag - a1.real * a1.real - a1.imag * a1.imag
            out[b, k] = 2.0 * cross.real
            out[b, q + k] = 2.0 * cross.imag
            out[b, 2 * q + k] = z
    return out


# ---------------------------------------------------------------------------
# batched program interface
# ---------------------------------------------------------------------------

@dataclass
class GateProgram:
    """A gate sequence with per-row angles, ready for the batched kernel.

    ``angles`` has shape ``(n_rows, n_gates)``; non-rotation gates ignore
    their column. ``controls`` holds -1 for single-qubit gates.
    """

    num_qubits: int
    kinds: np.ndarray
    targets: np.ndarray
    controls: np.ndarray
    angles: np.ndarray

    @property
    def n_gates(self) -> int:
        return int(self.kinds.shape[0])

    @property
    def n_rows(self) -> int:
        return int(self.angles.shape[0])

    @classmethod
    def from_gates(cls, gates: Sequence[GateOp], num_qubits: int) -> "GateProgram":
        _check_qubits(num_qubits)
        for gate in gates:
            _check_gate(gate, num_qubits)
        kinds = np.array([int(g.kind) for g in gates], dtype=np.int64)
        targets = np.array([g.target for g in gates], dtype=np.int64)
        controls = np.array([-1 if g.control is None else g.control for g in gates], dtype=np.int64)
        angles = np.array([[float(g.angle) for g in gates]], dtype=np.float64).reshape(1, len(gates))
        return cls(num_qubits, kinds, targets, controls, angles)


def run_program(program: GateProgram, states: Optional[np.ndarray] = None) -> np.ndarray:
    """Apply ``program`` to every row of ``states`` (default ``|0...0>`` rows).

    Returns the ``(n_rows, 2**q)`` complex array; the input is updated in place
    when given.
    """
    q = program.num_qubits
    _check_qubits(q)
    if states is None:
        states = np.zeros((program.n_rows, 1 << q), dtype=np.complex128)
        states[:, 0] = 1.0
    elif states.shape != (program.n_rows, 1 << q):
        raise ValueError(f"states shape {states.shape} does not match program")
    if program.n_gates:
        _run_program(
            states,
            q,
            program.kinds,
            program.targets,
            program.controls,
            np.ascontiguousarray(program.angles, dtype=np.float64),
        )
    return states


def pauli_features(states: np.ndarray, num_qubits: int) -> np.ndarray:
    """Single-qubit Pauli expectations per row, ordered (X_0..X_{q-1}, Y_0.., Z_0..)."""
    if states.ndim != 2 or states.shape[1] != 1 << num_qubits:
        raise ValueError("states must have shape (n_rows, 2**num_qubits)")
    return _pauli_features(np.ascontiguousarray(states), num_qubits)


# ---------------------------------------------------------------------------
# single-state interface
# ---------------------------------------------------------------------------

def apply_gate(state: StateVector, gate: GateOp) -> StateVector:
    """Return a new state with ``gate`` applied."""
    _check_gate(gate, state.num_qubits)
    program = GateProgram.from_gates([gate], state.num_qubits)
    out = state.amplitudes.copy().reshape(1, -1)
    run_program(program, out)
    return StateVector(out[0], state.num_qubits)


def apply_gates(state: StateVector, gates: Sequence[GateOp]) -> StateVector:
    program = GateProgram.from_gates(list(gates), state.num_qubits)
    out = state.amplitudes.copy().reshape(1, -1)
    run_program(program, out)
    return StateVector(out[0], state.num_qubits)


def pauli_expectation(state: StateVector, pauli: str, k: int) -> float:
    """Return ``<psi| P_k |psi>`` for ``P`` in ``{"X", "Y", "Z"}``.

    Raises:
        ValueError: unknown Pauli label or qubit index out of range.
        ArithmeticError: the expectation has an imaginary part above 1e-12,
            which means the state or operator is malformed.
    """
    if pauli not in _PAULI:
        raise ValueError(f"unknown Pauli {pauli!r}")
    q = state.num_qubits
    if not 0 <= k < q:
        raise ValueError(f"qubit index {k} out of range for {q} qubits")
    psi = state.amplitudes.reshape(1 << k, 2, -1)
    p_psi = np.einsum("ij,ajb->aib", _PAULI[pauli], psi)
    value = np.vdot(psi.ravel(), p_psi.ravel())
    if abs(value.imag) > 1e-12:
        raise ArithmeticError(f"non-real expectation value {value}")
    return float(value.real)


# ---------------------------------------------------------------------------
# dense oracle (tests only)
# ---------------------------------------------------------------------------

def gate_matrix_2x2(kind: GateKind, angle: float = 0.0) -> np.ndarray:
    """The 2x2 matrix acting on the target (for controlled kinds, the controlled block)."""
    base = _UNCONTROLLED.get(GateKind(kind), GateKind(kind))
    if base in (GateKind.X, GateKind.Y, GateKind.Z):
        return _PAULI[base.name].copy()
    if base == GateKind.H:
        return np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    pauli = _PAULI[base.name[1]]
    # exp(-i a P / 2) for an involutory P
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * pauli


def _embed(op: np.ndarray, k: int, q: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(1 << k), op), np.eye(1 << (q - 1 - k)))


def dense_unitary_oracle(gates: Sequence[GateOp], num_qubits: int) -> np.ndarray:
    """Full circuit unitary built from explicit Kronecker products.

    Only meant as an independent check of the stride kernels.
    """
    if num_qubits > ORACLE_MAX_QUBITS:
        raise ValueError(f"dense oracle refuses more than {ORACLE_MAX_QUBITS} qubits")
    _check_qubits(num_qubits)
    dim = 1 << num_qubits
    unitary = np.eye(dim, dtype=complex)
    proj0 = np.diag([1.0, 0.0]).astype(complex)
    proj1 = np.diag([0.0, 1.0]).astype(complex)
    for gate in gates:
        _check_gate(gate, num_qubits)
        u = gate_matrix_2x2(gate.kind, gate.angle)
        if gate.kind.is_controlled:
            full = _embed(proj0, gate.control, num_qubits) + _embed(proj1, gate.control, num_qubits) @ _embed(
                u, gate.target, num_qubits
            )
        else:
            full = _embed(u, gate.target, num_qubits)
        unitary = full @ unitary
    return unitary
