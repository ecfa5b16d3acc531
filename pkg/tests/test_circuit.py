from __future__ import annotations

import itertools
import random

import pytest

from oracles import brute_force_sat, iter_models, models_table
from satpart.circuit import (
    Circuit,
    CircuitBuilder,
    Gate,
    GateKind,
    evaluate_circuit,
    extract_input,
    fix_outputs,
    lower,
    netlist,
    simulate,
    tseitin_encode,
)
from satpart.cnf import Cnf, evaluate
from satpart.solver import Propagation, Solver, Status, propagate_only


def reference_eval(circuit: Circuit, bits) -> list[int]:
    vals = []
    it = iter(bits)
    for g in circuit.gates:
        o = [vals[i] for i in g.operands]
        if g.kind is GateKind.INPUT:
            vals.append(next(it))
        elif g.kind is GateKind.NOT:
            vals.append(1 - o[0])
        elif g.kind is GateKind.AND:
            vals.append(o[0] & o[1])
        elif g.kind is GateKind.OR:
            vals.append(o[0] | o[1])
        elif g.kind is GateKind.XOR:
            vals.append(o[0] ^ o[1])
        else:
            vals.append(int(sum(o) >= 2))
    return [vals[i] for i in circuit.outputs]


def random_circuit(rng: random.Random, n_inputs: int, n_gates: int, n_outputs: int) -> Circuit:
    b = CircuitBuilder()
    sigs = [b.input() for _ in range(n_inputs)]
    for _ in range(n_gates):
        kind = rng.choice([GateKind.NOT, GateKind.AND, GateKind.OR, GateKind.XOR, GateKind.MAJ3])
        if kind is GateKind.NOT:
            sigs.append(b.not_(rng.choice(sigs)))
        elif kind is GateKind.MAJ3:
            if len(sigs) < 3:
                continue
            sigs.append(b.maj3(*rng.sample(sigs, 3)))
        else:
            if len(sigs) < 2:
                continue
            x, y = rng.sample(sigs, 2)
            sigs.append({GateKind.AND: b.and_, GateKind.OR: b.or_, GateKind.XOR: b.xor}[kind](x, y))
    for _ in range(n_outputs):
        b.output(rng.choice(sigs))
    return b.build()


def single_gate(kind: GateKind) -> tuple[Circuit, int]:
    b = CircuitBuilder()
    x1, x2 = b.input(), b.input()
    g = b.not_(x1) if kind is GateKind.NOT else b.and_(x1, x2)
    b.output(g)
    return b.build(), 3


def test_not_gate_clauses():
    enc = tseitin_encode(single_gate(GateKind.NOT)[0])
    assert set(enc.cnf.clauses) == {(3, 1), (-3, -1)}


def test_and_gate_clauses():
    enc = tseitin_encode(single_gate(GateKind.AND)[0])
    assert set(enc.cnf.clauses) == {(3, -1, -2), (-3, 1), (-3, 2)}


def test_header_comments_list_inputs_and_outputs():
    enc = tseitin_encode(single_gate(GateKind.AND)[0], comments=["demo"])
    assert enc.cnf.comments == ("demo", "inputs: 1 2", "outputs: 3")


def test_lowered_clause_shapes():
    rng = random.Random(3)
    enc = tseitin_encode(random_circuit(rng, 4, 30, 3))
    for c in enc.cnf.clauses:
        assert len(c) in (2, 3)


@pytest.mark.parametrize("seed", range(40))
def test_encoding_models_are_the_function_graph(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 4)
    circuit = random_circuit(rng, n, rng.randint(1, 8), rng.randint(1, 3))
    enc = tseitin_encode(circuit)
    table = models_table(enc.cnf) if enc.cnf.num_vars <= 20 else None
    graph = set()
    for bits in itertools.product((0, 1), repeat=n):
        y = reference_eval(circuit, bits)
        assert evaluate_circuit(circuit, bits) == y
        graph.add((bits, tuple(y)))
    if table is not None:
        projected = set()
        for a in iter_models(table, enc.cnf.num_vars):
            projected.add((tuple(a[v - 1] for v in enc.input_vars), tuple(a[v - 1] for v in enc.output_vars)))
        assert projected == graph
    else:
        for bits, y in graph:
            res = propagate_only(enc.cnf, [v if b else -v for v, b in zip(enc.input_vars, bits)])
            assert res.status is Propagation.SAT
            assert tuple(res.values[v] for v in enc.output_vars) == y


def test_simulate_bit_parallel_matches_scalar():
    rng = random.Random(1)
    circuit = random_circuit(rng, 4, 25, 4)
    lanes = list(itertools.product((0, 1), repeat=4))
    packed = [sum(bits[i] << lane for lane, bits in enumerate(lanes)) for i in range(4)]
    vals = simulate(circuit, packed, width=len(lanes))
    for lane, bits in enumerate(lanes):
        assert [(vals[o] >> lane) & 1 for o in circuit.outputs] == reference_eval(circuit, bits)


def test_lower_preserves_function_and_shares_not_gates():
    rng = random.Random(2)
    circuit = random_circuit(rng, 4, 30, 3)
    low, where = lower(circuit)
    assert {g.kind for g in low.gates} <= {GateKind.INPUT, GateKind.NOT, GateKind.AND}
    nots = [g.operands for g in low.gates if g.kind is GateKind.NOT]
    assert len(nots) == len(set(nots))
    for bits in itertools.product((0, 1), repeat=4):
        assert evaluate_circuit(low, bits) == reference_eval(circuit, bits)


def test_fix_single_output_to_zero_appends_negative_unit():
    enc = tseitin_encode(single_gate(GateKind.AND)[0])
    cnf = fix_outputs(enc, [0])
    assert cnf.clauses[-1] == (-3,)
    assert cnf.num_clauses == enc.cnf.num_clauses + 1


def test_fix_outputs_length_checked():
    enc = tseitin_encode(single_gate(GateKind.AND)[0])
    with pytest.raises(ValueError):
        fix_outputs(enc, [0, 1])


def identity_circuit(n: int) -> Circuit:
    b = CircuitBuilder()
    xs = [b.input() for _ in range(n)]
    for x in xs:
        b.output(b.not_(b.not_(x)))
    return b.build()


def test_identity_fixing_forces_input():
    enc = tseitin_encode(identity_circuit(3))
    for beta in itertools.product((0, 1), repeat=3):
        res = propagate_only(fix_outputs(enc, beta))
        assert res.status is Propagation.SAT
        assert [res.values[v] for v in enc.input_vars] == list(beta)


def test_identity_extract():
    enc = tseitin_encode(identity_circuit(2))
    cnf = fix_outputs(enc, [1, 0])
    model = brute_force_sat(cnf)
    assert extract_input(enc, model, cnf) == [1, 0]


def test_extract_rejects_non_model():
    enc = tseitin_encode(identity_circuit(2))
    cnf = fix_outputs(enc, [1, 0])
    with pytest.raises(ValueError):
        extract_input(enc, [0] * cnf.num_vars, cnf)


@pytest.mark.parametrize("seed", range(10))
def test_range_decides_satisfiability(seed):
    rng = random.Random(100 + seed)
    circuit = random_circuit(rng, 4, rng.randint(4, 12), 3)
    enc = tseitin_encode(circuit)
    image = {tuple(reference_eval(circuit, bits)) for bits in itertools.product((0, 1), repeat=4)}
    for beta in itertools.product((0, 1), repeat=3):
        res = Solver(fix_outputs(enc, beta)).solve()
        assert (res.status is Status.SAT) == (beta in image)
        if res.status is Status.SAT:
            x = extract_input(enc, res.model)
            assert tuple(reference_eval(circuit, x)) == beta


@pytest.mark.parametrize("seed", range(5))
def test_unfixed_models_extract_consistent_inputs(seed):
    rng = random.Random(200 + seed)
    while True:
        circuit = random_circuit(rng, 3, 5, 2)
        enc = tseitin_encode(circuit)
        if enc.cnf.num_vars <= 20:
            break
    table = models_table(enc.cnf)
    n = enc.cnf.num_vars
    assert table
    for model in iter_models(table, n):
        x = extract_input(enc, model)
        assert reference_eval(circuit, x) == [model[v - 1] for v in enc.output_vars]


@pytest.mark.parametrize(
    "gates, inputs, outputs",
    [
        ((Gate(GateKind.INPUT), Gate(GateKind.AND, (0,))), (0,), (1,)),
        ((Gate(GateKind.INPUT), Gate(GateKind.NOT, (1,))), (0,), (1,)),
        ((Gate(GateKind.INPUT), Gate(GateKind.AND, (0, 0))), (0,), (1,)),
        ((Gate(GateKind.INPUT),), (), (0,)),
        ((Gate(GateKind.INPUT),), (0,), ()),
        ((Gate(GateKind.INPUT),), (0,), (3,)),
    ],
)
def test_circuit_invariants(gates, inputs, outputs):
    with pytest.raises(ValueError):
        Circuit(gates, inputs, outputs)


def test_mux_with_equal_arms_is_the_arm():
    b = CircuitBuilder()
    s, x = b.input(), b.input()
    assert b.mux(s, x, x) == x


def test_netlist_lists_every_gate():
    circuit = single_gate(GateKind.AND)[0]
    lines = netlist(circuit).splitlines()
    assert lines[:3] == ["0 INPUT", "1 INPUT", "2 AND 0 1"]
    assert lines[-1] == "outputs 2"


def test_encoding_is_deterministic():
    rng1, rng2 = random.Random(7), random.Random(7)
    a = tseitin_encode(random_circuit(rng1, 4, 20, 2)).cnf
    b = tseitin_encode(random_circuit(rng2, 4, 20, 2)).cnf
    assert a == b and isinstance(a, Cnf)
