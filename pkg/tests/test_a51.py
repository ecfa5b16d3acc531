from __future__ import annotations

import random

import numpy as np
import pytest

from oracles import a51_reference
from satpart.a51 import (
    GeneratorState,
    LfsrSpec,
    a51_spec,
    all_keys,
    bits_from_str,
    bits_to_str,
    build_circuit,
    global_to_local,
    key_from_hex,
    key_to_hex,
    keystream,
    keystream_batch,
    majority,
    step,
    toy_spec,
)
from satpart.circuit import simulate, tseitin_encode
from satpart.solver import Propagation, propagate_only

# keystream of F43FF04CD4F45660, cross-checked against the integer-register
# reference implementation in oracles.py
KEYSTREAM_F43F = (
    "111001010111001110110110001110001110101000000010111010111011"
    "000110001101000010100010110111110110010000101111010011"
)

COLLIDING_PAIRS = [
    ("F43FF04CD4F45660", "7A1FF04CD4F45660"),
    ("B95654F2242C6DF1", "5CAB34F2242C6DF1"),
    ("67685940B034EF78", "B3B43940B034EF78"),
]


def test_a51_key_length():
    assert a51_spec().key_length == 64


@pytest.mark.parametrize("cell, expected", [(1, (0, 1)), (19, (0, 19)), (30, (1, 11)), (64, (2, 23))])
def test_global_to_local(cell, expected):
    assert global_to_local((19, 22, 23), cell) == expected


def test_global_to_local_out_of_range():
    with pytest.raises(ValueError):
        global_to_local((19, 22, 23), 65)


def test_a51_taps():
    r1, r2, r3 = a51_spec().registers
    assert (r1.feedback_taps, r1.clock_tap, r1.output_tap) == ((19, 18, 17, 14), 9, 19)
    assert (r2.feedback_taps, r2.clock_tap, r2.output_tap) == ((22, 21), 11, 22)
    assert (r3.feedback_taps, r3.clock_tap, r3.output_tap) == ((23, 22, 21, 8), 11, 23)


def _state_with_clock_bits(spec, bits):
    cells = []
    for r, b in zip(spec.registers, bits):
        c = [0] * r.length
        c[r.clock_tap - 1] = b
        c[0] = 1  # make a shift visible
        cells.append(tuple(c))
    return GeneratorState(tuple(cells))


@pytest.mark.parametrize(
    "clock_bits, moved",
    [((0, 0, 0), (1, 1, 1)), ((1, 1, 0), (1, 1, 0)), ((1, 0, 1), (1, 0, 1)), ((0, 1, 1), (0, 1, 1))],
)
def test_majority_clocking(clock_bits, moved):
    spec = a51_spec()
    before = _state_with_clock_bits(spec, clock_bits)
    after, _ = step(before, spec)
    for b, a, m in zip(before.cells, after.cells, moved):
        assert (a != b) == bool(m)
        if m:
            assert a[1:] == b[:-1]


def test_at_least_two_registers_move_every_step():
    spec = toy_spec()
    keys = all_keys(18)
    regs = [keys[:, o : o + r.length] for o, r in zip(spec.offsets, spec.registers)]
    for _ in range(spec.keystream_len):
        bits = [reg[:, r.clock_tap - 1] for reg, r in zip(regs, spec.registers)]
        maj = (bits[0] & bits[1]) | (bits[0] & bits[2]) | (bits[1] & bits[2])
        moves = sum((b == maj).astype(int) for b in bits)
        assert moves.min() >= 2
        for i, (reg, r) in enumerate(zip(regs, spec.registers)):
            fb = np.bitwise_xor.reduce(reg[:, [t - 1 for t in r.feedback_taps]], axis=1)
            shifted = np.concatenate([fb[:, None], reg[:, :-1]], axis=1)
            regs[i] = np.where((bits[i] == maj)[:, None], shifted, reg)


def test_majority_truth_table():
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                assert majority(a, b, c) == int(a + b + c >= 2)


def test_known_keystream():
    spec = a51_spec()
    assert bits_to_str(keystream(spec, key_from_hex("F43FF04CD4F45660"))) == KEYSTREAM_F43F


@pytest.mark.parametrize("a, b", COLLIDING_PAIRS)
def test_collision_pairs(a, b):
    spec = a51_spec()
    assert key_from_hex(a) != key_from_hex(b)
    assert keystream(spec, key_from_hex(a)) == keystream(spec, key_from_hex(b))


def test_reference_implementation_agrees_on_random_keys():
    spec = a51_spec()
    rng = random.Random(4)
    for _ in range(50):
        k = "%016X" % rng.getrandbits(64)
        assert keystream(spec, key_from_hex(k)) == a51_reference(k)


def test_zero_key_gives_zero_keystream():
    assert keystream(a51_spec(), [0] * 64) == [0] * 114


def test_keystream_length():
    assert len(keystream(a51_spec(), key_from_hex("0123456789ABCDEF"))) == 114


def test_batch_matches_scalar():
    spec = a51_spec()
    rng = np.random.default_rng(0)
    keys = rng.integers(0, 2, size=(40, 64), dtype=np.uint8)
    batch = keystream_batch(spec, keys)
    for k, z in zip(keys, batch):
        assert keystream(spec, k.tolist()) == z.tolist()


def test_toy_defaults():
    spec = toy_spec()
    assert spec.key_length == 18
    assert spec.keystream_len == 36
    assert [r.length for r in spec.registers] == [5, 6, 7]


def test_toy_circuit_matches_oracle_on_every_key():
    spec = toy_spec(keystream_len=24)
    circuit = build_circuit(spec)
    keys = all_keys(18)
    expected = keystream_batch(spec, keys)
    # bit-parallel simulation: lane i carries key i
    lanes = len(keys)
    packed = [int.from_bytes(np.packbits(keys[:, j], bitorder="little").tobytes(), "little") for j in range(18)]
    vals = simulate(circuit, packed, width=lanes)
    for t, o in enumerate(circuit.outputs):
        got = np.unpackbits(
            np.frombuffer(vals[o].to_bytes((lanes + 7) // 8, "little"), dtype=np.uint8), bitorder="little"
        )[:lanes]
        assert np.array_equal(got, expected[:, t])


def test_a51_cnf_fixed_key_propagates_to_keystream():
    spec = a51_spec()
    enc = tseitin_encode(build_circuit(spec))
    from satpart.solver import Solver

    solver = Solver(enc.cnf)
    rng = random.Random(8)
    for _ in range(1000):
        key = [rng.getrandbits(1) for _ in range(64)]
        res = solver.propagate_only([v if b else -v for v, b in zip(enc.input_vars, key)])
        assert res.status is Propagation.SAT
        assert [res.values[y] for y in enc.output_vars] == keystream(spec, key)


def test_zero_length_keystream_rejected():
    with pytest.raises(ValueError):
        build_circuit(a51_spec().with_keystream_len(0))
    with pytest.raises(ValueError):
        a51_spec(keystream_len=0)


def test_toy_keystream_has_a_preimage():
    spec = toy_spec()
    keys = all_keys(18)
    z = keystream_batch(spec, keys)
    rng = np.random.default_rng(3)
    for i in rng.integers(0, len(keys), size=5):
        assert (z == z[i]).all(axis=1).sum() >= 1


@pytest.mark.parametrize(
    "length, taps, clock, out",
    [(5, (4, 3), 2, 5), (5, (5, 6), 2, 5), (5, (5,), 0, 5), (0, (0,), 1, 1)],
)
def test_lfsr_spec_rejects(length, taps, clock, out):
    with pytest.raises(ValueError):
        LfsrSpec(length, taps, clock, out)


def test_toy_rejects_short_registers():
    with pytest.raises(ValueError):
        toy_spec(lengths=(2, 6, 7))


def test_wrong_key_length_rejected():
    with pytest.raises(ValueError):
        keystream(toy_spec(), [0] * 17)


@pytest.mark.parametrize("text", ["F43FF04CD4F45660", "0000000000000001", "8000000000000000"])
def test_hex_round_trip(text):
    bits = key_from_hex(text)
    assert len(bits) == 64 and key_to_hex(bits) == text


def test_hex_is_msb_first():
    assert key_from_hex("8000000000000000")[0] == 1
    assert key_from_hex("1", n=4) == [0, 0, 0, 1]
    with pytest.raises(ValueError):
        key_from_hex("1F", n=4)


def test_bit_strings():
    assert bits_from_str("01 1\n0") == [0, 1, 1, 0]
    assert bits_to_str([1, 0]) == "10"
    with pytest.raises(ValueError):
        bits_from_str("012")
