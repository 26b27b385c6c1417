"""Layered encoding circuits over the 43-action gate menu, plus flexible circuits.

A layered circuit is a list of actions; each action becomes one gate per qubit
(single-qubit actions) or one gate per nearest-neighbour pair ``(i, i+1)``
(two-qubit actions). Data actions put feature ``k`` on qubit ``k``.
"""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .simulator import GateKind, GateOp, GateProgram

MAX_DEPTH = 10
FIXED_DIVISORS = (1, 2, 3, 4, 8)


class ActionKind(enum.Enum):
    PAULI_X = "X"
    PAULI_Y = "Y"
    PAULI_Z = "Z"
    H = "H"
    CX = "CX"
    CY = "CY"
    CZ = "CZ"
    RX_DATA = "RX_DATA"
    RY_DATA = "RY_DATA"
    RZ_DATA = "RZ_DATA"
    RX_ATAN = "RX_ATAN"
    RY_ATAN = "RY_ATAN"
    RZ_ATAN = "RZ_ATAN"
    RX_FIXED = "RX_FIXED"
    RY_FIXED = "RY_FIXED"
    RZ_FIXED = "RZ_FIXED"
    CRX_FIXED = "CRX_FIXED"
    CRY_FIXED = "CRY_FIXED"
    CRZ_FIXED = "CRZ_FIXED"


_GATE_OF = {
    ActionKind.PAULI_X: GateKind.X,
    ActionKind.PAULI_Y: GateKind.Y,
    ActionKind.PAULI_Z: GateKind.Z,
    ActionKind.H: GateKind.H,
    ActionKind.CX: GateKind.CX,
    ActionKind.CY: GateKind.CY,
    ActionKind.CZ: GateKind.CZ,
    ActionKind.RX_DATA: GateKind.RX,
    ActionKind.RY_DATA: GateKind.RY,
    ActionKind.RZ_DATA: GateKind.RZ,
    ActionKind.RX_ATAN: GateKind.RX,
    ActionKind.RY_ATAN: GateKind.RY,
    ActionKind.RZ_ATAN: GateKind.RZ,
    ActionKind.RX_FIXED: GateKind.RX,
    ActionKind.RY_FIXED: GateKind.RY,
    ActionKind.RZ_FIXED: GateKind.RZ,
    ActionKind.CRX_FIXED: GateKind.CRX,
    ActionKind.CRY_FIXED: GateKind.CRY,
    ActionKind.CRZ_FIXED: GateKind.CRZ,
}

_LINEAR = {ActionKind.RX_DATA, ActionKind.RY_DATA, ActionKind.RZ_DATA}
_ATAN = {ActionKind.RX_ATAN, ActionKind.RY_ATAN, ActionKind.RZ_ATAN}


@dataclass(frozen=True)
class LayerAction:
    id: int
    kind: ActionKind
    n: Optional[int] = None

    @property
    def gate(self) -> GateKind:
        return _GATE_OF[self.kind]

    @property
    def two_qubit(self) -> bool:
        return self.gate.is_controlled

    @property
    def is_data(self) -> bool:
        return self.kind in _LINEAR or self.kind in _ATAN

    def fixed_angle(self, crx_as_printed: bool = True) -> float:
        """Angle of a fixed rotation: pi/n, except CRX which the action table lists as n*pi/8."""
        if self.n is None:
            raise ValueError(f"{self.kind.name} has no fixed angle")
        if self.kind == ActionKind.CRX_FIXED and crx_as_printed:
            return self.n * math.pi / 8
        return math.pi / self.n

    def __str__(self) -> str:
        return self.kind.value if self.n is None else f"{self.kind.value}({self.n})"


def _build_actions() -> tuple[LayerAction, ...]:
    kinds: list[tuple[ActionKind, Optional[int]]] = [
        (k, None)
        for k in (
            ActionKind.PAULI_X,
            ActionKind.PAULI_Y,
            ActionKind.PAULI_Z,
            ActionKind.H,
            ActionKind.CX,
            ActionKind.CY,
            ActionKind.CZ,
            ActionKind.RX_DATA,
            ActionKind.RY_DATA,
            ActionKind.RZ_DATA,
            ActionKind.RX_ATAN,
            ActionKind.RY_ATAN,
            ActionKind.RZ_ATAN,
        )
    ]
    for k in (
        ActionKind.RX_FIXED,
        ActionKind.RY_FIXED,
        ActionKind.RZ_FIXED,
        ActionKind.CRX_FIXED,
        ActionKind.CRY_FIXED,
        ActionKind.CRZ_FIXED,
    ):
        kinds.extend((k, n) for n in FIXED_DIVISORS)
    return tuple(LayerAction(i, k, n) for i, (k, n) in enumerate(kinds))


ACTIONS = _build_actions()
NUM_ACTIONS = len(ACTIONS)
DATA_ACTION_IDS = tuple(a.id for a in ACTIONS if a.is_data)


def action(action_id: int) -> LayerAction:
    if not 0 <= action_id < NUM_ACTIONS:
        raise ValueError(f"unknown action id {action_id}")
    return ACTIONS[action_id]


class DepthExceededError(ValueError):
    pass


class CircuitParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


# ---------------------------------------------------------------------------
# layered circuits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EncodingCircuit:
    num_qubits: int
    layers: tuple[LayerAction, ...] = ()
    max_depth: int = MAX_DEPTH

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("num_qubits must be positive")
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.layers) > self.max_depth:
            raise DepthExceededError(f"{len(self.layers)} layers exceed max depth {self.max_depth}")

    @classmethod
    def from_ids(cls, num_qubits: int, ids: Sequence[int], max_depth: int = MAX_DEPTH) -> "EncodingCircuit":
        return cls(num_qubits, tuple(action(int(i)) for i in ids), max_depth)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(a.id for a in self.layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def gate_count(self) -> int:
        q = self.num_qubits
        return sum(q - 1 if a.two_qubit else q for a in self.layers)

    @property
    def key(self) -> str:
        return serialize(self)

    def append(self, act: Union[LayerAction, int]) -> "EncodingCircuit":
        return append_action(self, act)

    def has_data_encoding(self) -> bool:
        return any(a.is_data for a in self.layers)

    def expand(self, x, crx_as_printed: bool = True) -> list[GateOp]:
        return expand(self, x, crx_as_printed)

    def to_program(self, X: np.ndarray, crx_as_printed: bool = True) -> GateProgram:
        """Compile the circuit for every row of ``X`` at once."""
        X = _check_data(X, self.num_qubits)
        q = self.num_qubits
        kinds, targets, controls, columns = [], [], [], []
        n_rows = X.shape[0]
        for act in self.layers:
            gate = act.gate
            if act.two_qubit:
                angle = act.fixed_angle(crx_as_printed) if act.n is not None else 0.0
                for i in range(q - 1):
                    kinds.append(int(gate))
                    controls.append(i)
                    targets.append(i + 1)
                    columns.append(np.full(n_rows, angle))
                continue
            if act.kind in _LINEAR:
                angles = np.pi * X
            elif act.kind in _ATAN:
                angles = np.arctan(X)
            elif act.n is not None:
                angles = np.full((n_rows, q), act.fixed_angle(crx_as_printed))
            else:
                angles = np.zeros((n_rows, q))
            for k in range(q):
                kinds.append(int(gate))
                controls.append(-1)
                targets.append(k)
                columns.append(angles[:, k])
        angle_matrix = np.column_stack(columns) if columns else np.zeros((n_rows, 0))
        return GateProgram(
            q,
            np.asarray(kinds, dtype=np.int64),
            np.asarray(targets, dtype=np.int64),
            np.asarray(controls, dtype=np.int64),
            np.ascontiguousarray(angle_matrix, dtype=np.float64),
        )

    def __str__(self) -> str:
        return f"q={self.num_qubits} [" + ", ".join(str(a) for a in self.layers) + "]"


def _check_data(X, num_qubits: int) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != num_qubits:
        raise ValueError(f"data has {X.shape[1]} features but circuit has {num_qubits} qubits")
    return X


def append_action(circuit: EncodingCircuit, act: Union[LayerAction, int]) -> EncodingCircuit:
    if not isinstance(act, LayerAction):
        act = action(int(act))
    if circuit.depth >= circuit.max_depth:
        raise DepthExceededError(f"circuit already has the maximum of {circuit.max_depth} layers")
    return EncodingCircuit(circuit.num_qubits, circuit.layers + (act,), circuit.max_depth)


def expand(circuit: EncodingCircuit, x, crx_as_printed: bool = True) -> list[GateOp]:
    """Gate sequence of ``circuit`` for a single data point ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (circuit.num_qubits,):
        raise ValueError(f"expected {circuit.num_qubits} features, got shape {x.shape}")
    program = circuit.to_program(x[None, :], crx_as_printed)
    return [
        GateOp(GateKind(k), int(t), None if c < 0 else int(c), float(a))
        for k, t, c, a in zip(program.kinds, program.targets, program.controls, program.angles[0])
    ]


def has_data_encoding(circuit) -> bool:
    return circuit.has_data_encoding()


def serialize(circuit) -> str:
    """Canonical one-line text form, e.g. ``"4:3,7"`` for q=4 with actions H, RX_DATA."""
    if isinstance(circuit, FlexibleCircuit):
        return circuit.key
    return f"{circuit.num_qubits}:" + ",".join(str(a.id) for a in circuit.layers)


def deserialize(text: str, max_depth: int = MAX_DEPTH):
    """Parse the output of :func:`serialize` back into a circuit."""
    text = text.strip()
    if text.startswith("F"):
        return FlexibleCircuit.from_key(text)
    head, sep, body = text.partition(":")
    if not sep:
        raise CircuitParseError("missing ':' separator", len(text))
    if not head.isdigit() or int(head) < 1:
        raise CircuitParseError(f"bad qubit count {head!r}", 0)
    ids = []
    pos = len(head) + 1
    if body:
        for token in body.split(","):
            if not token.isdigit():
                raise CircuitParseError(f"bad action id {token!r}", pos)
            value = int(token)
            if value >= NUM_ACTIONS:
                raise CircuitParseError(f"unknown action id {value}", pos)
            ids.append(value)
            pos += len(token) + 1
    if len(ids) > max_depth:
        raise CircuitParseError(f"{len(ids)} layers exceed max depth {max_depth}", len(text))
    return EncodingCircuit.from_ids(int(head), ids, max_depth)


def encode_observation(circuit: EncodingCircuit, max_depth: int = MAX_DEPTH) -> np.ndarray:
    """One-hot layer history, ``max_depth * 43`` long; slot t holds layer t."""
    obs = np.zeros(max_depth * NUM_ACTIONS)
    for t, act in enumerate(circuit.layers):
        obs[t * NUM_ACTIONS + act.id] = 1.0
    return obs


def random_actions(rng: np.random.Generator, n: int) -> list[int]:
    return [int(i) for i in rng.integers(0, NUM_ACTIONS, size=n)]


def random_layered(
    rng: np.random.Generator,
    num_qubits: int,
    min_layers: int = 2,
    max_layers: int = MAX_DEPTH,
    max_depth: int = MAX_DEPTH,
) -> EncodingCircuit:
    """Uniform random layered circuit containing at least one data layer."""
    while True:
        depth = int(rng.integers(min_layers, max_layers + 1))
        circuit = EncodingCircuit.from_ids(num_qubits, random_actions(rng, depth), max_depth)
        if circuit.has_data_encoding():
            return circuit


# ---------------------------------------------------------------------------
# flexible circuits
# ---------------------------------------------------------------------------

_SOURCE_CODES = ("lin", "atan", "lit")


@dataclass(frozen=True)
class FlexGate:
    """One placed gate. ``source`` is ``"lin"`` (angle pi*x_f), ``"atan"``
    (angle atan(x_f)), ``"lit"`` (literal ``angle``) or None for fixed gates."""

    kind: GateKind
    target: int
    control: Optional[int] = None
    source: Optional[str] = None
    feature: Optional[int] = None
    angle: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", GateKind(self.kind))
        if self.kind.is_rotation != (self.source is not None):
            raise ValueError("rotations need an angle source and other gates must not have one")
        if self.source in ("lin", "atan") and self.feature is None:
            raise ValueError("data-encoded gate needs a feature index")
        if self.source == "lit" and self.angle is None:
            raise ValueError("literal rotation needs an angle")
        if self.source is not None and self.source not in _SOURCE_CODES:
            raise ValueError(f"unknown angle source {self.source!r}")

    @property
    def is_data(self) -> bool:
        return self.source in ("lin", "atan")

    def token(self) -> str:
        wires = str(self.target) if self.control is None else f"{self.control}>{self.target}"
        text = f"{self.kind.name}@{wires}"
        if self.source == "lin":
            text += f"=x{self.feature}"
        elif self.source == "atan":
            text += f"=t{self.feature}"
        elif self.source == "lit":
            text += f"={self.angle!r}"
        return text


_TOKEN = re.compile(r"^([A-Z]+)@(?:(\d+)>)?(\d+)(?:=(x\d+|t\d+|[-+0-9.eE]+))?$")


@dataclass(frozen=True)
class FlexibleCircuit:
    num_qubits: int
    gates: tuple[FlexGate, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            for w in (g.target, g.control):
                if w is not None and not 0 <= w < self.num_qubits:
                    raise ValueError(f"wire {w} out of range")
            if g.control is not None and g.control == g.target:
                raise ValueError("control and target must differ")
            if g.feature is not None and not 0 <= g.feature < self.num_qubits:
                raise ValueError(f"feature {g.feature} out of range")

    @property
    def gate_count(self) -> int:
        return len(self.gates)

    @property
    def key(self) -> str:
        return f"F{self.num_qubits}:" + ";".join(g.token() for g in self.gates)

    @classmethod
    def from_key(cls, text: str) -> "FlexibleCircuit":
        head, sep, body = text.partition(":")
        if not sep or not head[1:].isdigit():
            raise CircuitParseError("bad flexible-circuit header", 0)
        q = int(head[1:])
        gates = []
        pos = len(head) + 1
        for token in body.split(";") if body else []:
            match = _TOKEN.match(token)
            if match is None:
                raise CircuitParseError(f"bad gate token {token!r}", pos)
            name, ctrl, tgt, arg = match.groups()
            try:
                kind = GateKind[name]
                source = feature = angle = None
                if arg is not None:
                    if arg[0] in "xt":
                        source = "lin" if arg[0] == "x" else "atan"
                        feature = int(arg[1:])
                    else:
                        source, angle = "lit", float(arg)
                gates.append(FlexGate(kind, int(tgt), None if ctrl is None else int(ctrl), source, feature, angle))
            except (KeyError, ValueError) as exc:
                raise CircuitParseError(f"invalid gate {token!r}: {exc}", pos) from None
            pos += len(token) + 1
        try:
            return cls(q, tuple(gates))
        except ValueError as exc:
            raise CircuitParseError(str(exc), pos) from None

    def encoded_features(self) -> set[int]:
        return {g.feature for g in self.gates if g.is_data}

    def has_data_encoding(self) -> bool:
        """True when every feature is encoded at least once."""
        return len(self.encoded_features()) == self.num_qubits

    def to_program(self, X: np.ndarray, crx_as_printed: bool = True) -> GateProgram:
        X = _check_data(X, self.num_qubits)
        n_rows = X.shape[0]
        columns = []
        for g in self.gates:
            if g.source == "lin":
                columns.append(np.pi * X[:, g.feature])
            elif g.source == "atan":
                columns.append(np.arctan(X[:, g.feature]))
            elif g.source == "lit":
                columns.append(np.full(n_rows, g.angle))
            else:
                columns.append(np.zeros(n_rows))
        angle_matrix = np.column_stack(columns) if columns else np.zeros((n_rows, 0))
        return GateProgram(
            self.num_qubits,
            np.array([int(g.kind) for g in self.gates], dtype=np.int64),
            np.array([g.target for g in self.gates], dtype=np.int64),
            np.array([-1 if g.control is None else g.control for g in self.gates], dtype=np.int64),
            np.ascontiguousarray(angle_matrix, dtype=np.float64),
        )

    def expand(self, x, crx_as_printed: bool = True) -> list[GateOp]:
        program = self.to_program(np.asarray(x, dtype=float)[None, :])
        return [
            GateOp(GateKind(k), int(t), None if c < 0 else int(c), float(a))
            for k, t, c, a in zip(program.kinds, program.targets, program.controls, program.angles[0])
        ]


def _random_wires(rng: np.random.Generator, q: int, two_qubit: bool) -> tuple[int, Optional[int]]:
    if not two_qubit:
        return int(rng.integers(q)), None
    control, target = rng.choice(q, size=2, replace=False)
    return int(target), int(control)


def flex_gate_from_action(rng: np.random.Generator, act: LayerAction, q: int, feature: Optional[int] = None) -> FlexGate:
    """Place a single gate of the action's type at a random position.

    Fixed-angle actions get a literal angle drawn uniformly from [0, 2*pi].
    """
    target, control = _random_wires(rng, q, act.two_qubit)
    if act.is_data:
        f = int(rng.integers(q)) if feature is None else feature
        return FlexGate(act.gate, target, control, "lin" if act.kind in _LINEAR else "atan", f)
    if act.gate.is_rotation:
        return FlexGate(act.gate, target, control, "lit", angle=float(rng.uniform(0.0, 2 * np.pi)))
    return FlexGate(act.gate, target, control)


def random_flexible(rng: np.random.Generator, num_qubits: int, gate_budget: int) -> FlexibleCircuit:
    """Gate-by-gate random circuit that encodes every feature at least once.

    The gate count is uniform in ``[num_qubits, gate_budget]``; one data rotation
    per feature is guaranteed and the rest are drawn from the action menu.
    """
    q = num_qubits
    if gate_budget < q:
        raise ValueError(f"gate budget {gate_budget} is smaller than the feature count {q}")
    menu = [a for a in ACTIONS if q > 1 or not a.two_qubit]
    data_menu = [a for a in ACTIONS if a.is_data]
    n_gates = int(rng.integers(q, gate_budget + 1))
    gates = [flex_gate_from_action(rng, data_menu[int(rng.integers(len(data_menu)))], q, feature=k) for k in range(q)]
    for _ in range(n_gates - q):
        gates.append(flex_gate_from_action(rng, menu[int(rng.integers(len(menu)))], q))
    order = rng.permutation(len(gates))
    return FlexibleCircuit(q, tuple(gates[i] for i in order))
