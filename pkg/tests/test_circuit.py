import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pqcsearch.circuit import (
    ACTIONS,
    NUM_ACTIONS,
    ActionKind,
    CircuitParseError,
    DepthExceededError,
    EncodingCircuit,
    FlexibleCircuit,
    append_action,
    deserialize,
    encode_observation,
    expand,
    has_data_encoding,
    random_flexible,
    random_layered,
    serialize,
)
from pqcsearch.simulator import GateKind

H, CX, RX_DATA, RZ_DATA = 3, 4, 7, 9


def ids_of(kind):
    return [a.id for a in ACTIONS if a.kind == kind]


def test_action_table_is_the_full_cross_product():
    assert NUM_ACTIONS == 43
    assert [a.id for a in ACTIONS] == list(range(43))
    assert len({(a.kind, a.n) for a in ACTIONS}) == 43
    for kind in ("RX_FIXED", "RY_FIXED", "RZ_FIXED", "CRX_FIXED", "CRY_FIXED", "CRZ_FIXED"):
        assert sorted(a.n for a in ACTIONS if a.kind.name == kind) == [1, 2, 3, 4, 8]
    assert ACTIONS[H].kind == ActionKind.H


def test_fixed_angles():
    crx = [a for a in ACTIONS if a.kind == ActionKind.CRX_FIXED]
    cry = [a for a in ACTIONS if a.kind == ActionKind.CRY_FIXED]
    assert [a.fixed_angle() for a in crx] == pytest.approx([n * math.pi / 8 for n in (1, 2, 3, 4, 8)])
    assert [a.fixed_angle(crx_as_printed=False) for a in crx] == pytest.approx([math.pi / n for n in (1, 2, 3, 4, 8)])
    assert [a.fixed_angle() for a in cry] == pytest.approx([math.pi / n for n in (1, 2, 3, 4, 8)])


def test_append_action():
    empty = EncodingCircuit(4)
    one = append_action(empty, H)
    assert one.depth == 1 and empty.depth == 0
    assert not empty.has_data_encoding()
    assert append_action(empty, RX_DATA).has_data_encoding()
    full = EncodingCircuit.from_ids(4, [H] * 10)
    with pytest.raises(DepthExceededError):
        append_action(full, H)


def test_expand_examples():
    gates = expand(EncodingCircuit.from_ids(4, [H]), np.zeros(4))
    assert [(g.kind, g.target) for g in gates] == [(GateKind.H, k) for k in range(4)]
    gates = expand(EncodingCircuit.from_ids(3, [CX]), np.zeros(3))
    assert [(g.kind, g.control, g.target) for g in gates] == [(GateKind.CX, 0, 1), (GateKind.CX, 1, 2)]
    gates = expand(EncodingCircuit.from_ids(2, [RX_DATA]), [0.5, 1.0])
    assert [(g.kind, g.target) for g in gates] == [(GateKind.RX, 0), (GateKind.RX, 1)]
    assert [g.angle for g in gates] == pytest.approx([np.pi * 0.5, np.pi])
    with pytest.raises(ValueError):
        expand(EncodingCircuit.from_ids(2, [RX_DATA]), [0.5])


def test_expand_angles_per_family():
    x = np.array([0.3, -0.8])
    atan = ids_of(ActionKind.RY_ATAN)[0]
    gates = expand(EncodingCircuit.from_ids(2, [atan]), x)
    assert [g.angle for g in gates] == pytest.approx(np.arctan(x))
    rz4 = [a.id for a in ACTIONS if a.kind == ActionKind.RZ_FIXED and a.n == 4][0]
    gates = expand(EncodingCircuit.from_ids(2, [rz4]), x)
    assert [g.angle for g in gates] == pytest.approx([np.pi / 4] * 2)
    crx3 = [a.id for a in ACTIONS if a.kind == ActionKind.CRX_FIXED and a.n == 3][0]
    (gate,) = expand(EncodingCircuit.from_ids(2, [crx3]), x)
    assert gate.kind == GateKind.CRX and gate.angle == pytest.approx(3 * np.pi / 8)


@settings(max_examples=50, deadline=None)
@given(ids=st.lists(st.integers(0, 42), max_size=10), q=st.integers(1, 6))
def test_expand_length_formula(ids, q):
    circuit = EncodingCircuit.from_ids(q, ids)
    expected = sum(q - 1 if ACTIONS[i].two_qubit else q for i in ids)
    assert len(expand(circuit, np.zeros(q))) == expected == circuit.gate_count


def test_has_data_encoding():
    assert not has_data_encoding(EncodingCircuit.from_ids(2, [H, CX]))
    assert has_data_encoding(EncodingCircuit.from_ids(2, [H, RZ_DATA]))
    assert not has_data_encoding(EncodingCircuit(2))


def test_serialize_examples():
    assert serialize(EncodingCircuit.from_ids(4, [H])) == "4:3"
    with pytest.raises(CircuitParseError):
        deserialize("4:99")
    with pytest.raises(CircuitParseError):
        deserialize("4;3")
    with pytest.raises(CircuitParseError) as info:
        deserialize("4:3,x,5")
    assert info.value.position == 4
    assert deserialize("3:") == EncodingCircuit(3)


@settings(max_examples=100, deadline=None)
@given(ids=st.lists(st.integers(0, 42), max_size=10), q=st.integers(1, 10))
def test_serialize_round_trip(ids, q):
    c = EncodingCircuit.from_ids(q, ids)
    text = serialize(c)
    assert deserialize(text) == c
    assert serialize(deserialize(text)) == text


def test_observation_encoding():
    assert np.array_equal(encode_observation(EncodingCircuit(4)), np.zeros(430))
    obs = encode_observation(EncodingCircuit.from_ids(4, [3]))
    assert obs.sum() == 1 and obs[3] == 1.0
    full = encode_observation(EncodingCircuit.from_ids(4, list(range(10))))
    assert full.sum() == 10


@settings(max_examples=100, deadline=None)
@given(a=st.lists(st.integers(0, 42), max_size=10), b=st.lists(st.integers(0, 42), max_size=10))
def test_observation_injective(a, b):
    oa = encode_observation(EncodingCircuit.from_ids(3, a))
    ob = encode_observation(EncodingCircuit.from_ids(3, b))
    assert (a == b) == np.array_equal(oa, ob)


def test_random_layered():
    rng = np.random.default_rng(0)
    for _ in range(300):
        c = random_layered(rng, 4)
        assert 2 <= c.depth <= 10
        assert c.has_data_encoding()
    a = random_layered(np.random.default_rng(7), 4)
    b = random_layered(np.random.default_rng(7), 4)
    assert a == b


def test_random_flexible():
    rng = np.random.default_rng(1)
    for _ in range(200):
        c = random_flexible(rng, 4, 40)
        assert c.gate_count <= 40
        assert c.encoded_features() == {0, 1, 2, 3}
        assert c.has_data_encoding()
        for g in c.gates:
            if g.source == "lit":
                assert 0 <= g.angle <= 2 * np.pi
    with pytest.raises(ValueError):
        random_flexible(rng, 4, 3)
    assert random_flexible(np.random.default_rng(9), 4, 40) == random_flexible(np.random.default_rng(9), 4, 40)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_flexible_round_trip(seed):
    c = random_flexible(np.random.default_rng(seed), 5, 50)
    assert FlexibleCircuit.from_key(c.key) == c
    assert deserialize(serialize(c)) == c


def test_flexible_parse_error():
    with pytest.raises(CircuitParseError):
        deserialize("F2:RX@0=x0;FOO@1")
    with pytest.raises(CircuitParseError):
        deserialize("F2:RX@0=x5")
