"""Boolean circuits over {AND, NOT} with macro gates, and their Tseitin encoding.

Macro gates (XOR, OR, MAJ3) are lowered to AND/NOT subgraphs before
encoding, so every emitted clause has one of the two shapes

    NOT  v = -u      (v | u) & (-v | -u)
    AND  v = u & w   (v | -u | -w) & (-v | u) & (-v | w)

Variable numbering: circuit inputs get 1..n in input order, every other
lowered gate gets the next free variable in topological order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

from .cnf import Cnf, evaluate


class GateKind(str, enum.Enum):
    INPUT = "INPUT"
    NOT = "NOT"
    AND = "AND"
    XOR = "XOR"
    OR = "OR"
    MAJ3 = "MAJ3"


ARITY = {
    GateKind.INPUT: 0,
    GateKind.NOT: 1,
    GateKind.AND: 2,
    GateKind.XOR: 2,
    GateKind.OR: 2,
    GateKind.MAJ3: 3,
}


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    operands: tuple[int, ...] = ()


@dataclass(frozen=True)
class Circuit:
    gates: tuple[Gate, ...]
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]

    def __post_init__(self):
        for i, g in enumerate(self.gates):
            if len(g.operands) != ARITY[g.kind]:
                raise ValueError(f"gate {i}: {g.kind.value} takes {ARITY[g.kind]} operands")
            if any(not 0 <= o < i for o in g.operands):
                raise ValueError(f"gate {i}: operands must precede the gate")
            if len(set(g.operands)) != len(g.operands):
                raise ValueError(f"gate {i}: repeated operand")
        input_gates = [i for i, g in enumerate(self.gates) if g.kind is GateKind.INPUT]
        if sorted(self.inputs) != input_gates or len(set(self.inputs)) != len(self.inputs):
            raise ValueError("inputs must be exactly the INPUT gates")
        if not self.inputs or not self.outputs:
            raise ValueError("circuit needs at least one input and one output")
        if any(not 0 <= o < len(self.gates) for o in self.outputs):
            raise ValueError("output refers to a missing gate")

    @property
    def num_inputs(self) -> int:
        return len(self.inputs)

    @property
    def num_outputs(self) -> int:
        return len(self.outputs)


class CircuitBuilder:
    """Incremental construction; gate handles are plain indices."""

    def __init__(self):
        self.gates: list[Gate] = []
        self.inputs: list[int] = []
        self.outputs: list[int] = []

    def _add(self, kind: GateKind, *operands: int) -> int:
        self.gates.append(Gate(kind, tuple(operands)))
        return len(self.gates) - 1

    def input(self) -> int:
        g = self._add(GateKind.INPUT)
        self.inputs.append(g)
        return g

    def not_(self, a: int) -> int:
        return self._add(GateKind.NOT, a)

    def and_(self, a: int, b: int) -> int:
        return self._add(GateKind.AND, a, b)

    def or_(self, a: int, b: int) -> int:
        return self._add(GateKind.OR, a, b)

    def xor(self, a: int, b: int) -> int:
        return self._add(GateKind.XOR, a, b)

    def maj3(self, a: int, b: int, c: int) -> int:
        return self._add(GateKind.MAJ3, a, b, c)

    def xor_all(self, signals: Sequence[int]) -> int:
        acc = signals[0]
        for s in signals[1:]:
            acc = self.xor(acc, s)
        return acc

    def mux(self, sel: int, if_true: int, if_false: int) -> int:
        """``sel ? if_true : if_false``; returns ``if_true`` when both arms coincide."""
        if if_true == if_false:
            return if_true
        return self.or_(self.and_(sel, if_true), self.and_(self.not_(sel), if_false))

    def output(self, g: int) -> None:
        self.outputs.append(g)

    def build(self) -> Circuit:
        return Circuit(tuple(self.gates), tuple(self.inputs), tuple(self.outputs))


def simulate(circuit: Circuit, inputs: Sequence[int], width: int = 1) -> list[int]:
    """Evaluate every gate.

    Values are bit-parallel: each input is an int holding ``width`` independent
    lanes, so one pass evaluates the circuit on ``width`` input vectors.
    """
    if len(inputs) != circuit.num_inputs:
        raise ValueError(f"expected {circuit.num_inputs} inputs, got {len(inputs)}")
    mask = (1 << width) - 1
    vals = [0] * len(circuit.gates)
    for g, x in zip(circuit.inputs, inputs):
        vals[g] = x & mask
    for i, gate in enumerate(circuit.gates):
        k = gate.kind
        ops = gate.operands
        if k is GateKind.INPUT:
            continue
        if k is GateKind.NOT:
            vals[i] = ~vals[ops[0]] & mask
        elif k is GateKind.AND:
            vals[i] = vals[ops[0]] & vals[ops[1]]
        elif k is GateKind.OR:
            vals[i] = vals[ops[0]] | vals[ops[1]]
        elif k is GateKind.XOR:
            vals[i] = vals[ops[0]] ^ vals[ops[1]]
        else:
            a, b, c = (vals[o] for o in ops)
            vals[i] = (a & b) | (a & c) | (b & c)
    return vals


def evaluate_circuit(circuit: Circuit, bits: Sequence[int]) -> list[int]:
    vals = simulate(circuit, bits)
    return [vals[o] for o in circuit.outputs]


def lower(circuit: Circuit) -> tuple[Circuit, list[int]]:
    """Rewrite macro gates into AND/NOT.

    Returns the lowered circuit and, for each original gate, the index of
    the lowered gate carrying its value.  NOT gates are shared per operand.
    """
    b = CircuitBuilder()
    neg: dict[int, int] = {}

    def NOT(x: int) -> int:
        if x not in neg:
            neg[x] = b.not_(x)
        return neg[x]

    # original gates with distinct operands can map to one shared NOT, so
    # operand pairs may coincide here and are folded
    def AND(x: int, y: int) -> int:
        return x if x == y else b.and_(x, y)

    def OR(x: int, y: int) -> int:
        return NOT(AND(NOT(x), NOT(y)))

    where: list[int] = []
    for gate in circuit.gates:
        ops = [where[o] for o in gate.operands]
        k = gate.kind
        if k is GateKind.INPUT:
            g = b.input()
        elif k is GateKind.NOT:
            g = NOT(ops[0])
        elif k is GateKind.AND:
            g = AND(*ops)
        elif k is GateKind.OR:
            g = OR(*ops)
        elif k is GateKind.XOR:
            x, y = ops
            if x == y:
                g = b.and_(x, NOT(x))  # constant false
            else:
                g = b.and_(NOT(b.and_(x, y)), NOT(b.and_(NOT(x), NOT(y))))
        else:
            x, y, z = ops
            g = OR(AND(x, y), AND(z, OR(x, y)))
        where.append(g)
    # inputs keep their relative order, so input i of the original is input i here
    b.outputs = [where[o] for o in circuit.outputs]
    return b.build(), where


@dataclass(frozen=True)
class Encoding:
    cnf: Cnf
    input_vars: tuple[int, ...]
    output_vars: tuple[int, ...]
    gate_var: tuple[int, ...]  # original gate index -> variable

    @property
    def num_inputs(self) -> int:
        return len(self.input_vars)


def tseitin_encode(circuit: Circuit, comments: Sequence[str] = ()) -> Encoding:
    low, where = lower(circuit)
    n = low.num_inputs
    var = [0] * len(low.gates)
    for i, g in enumerate(low.inputs):
        var[g] = i + 1
    nxt = n + 1
    clauses: list[tuple[int, ...]] = []
    for i, gate in enumerate(low.gates):
        if gate.kind is GateKind.INPUT:
            continue
        v = var[i] = nxt
        nxt += 1
        if gate.kind is GateKind.NOT:
            u = var[gate.operands[0]]
            clauses.append((v, u))
            clauses.append((-v, -u))
        else:
            u, w = var[gate.operands[0]], var[gate.operands[1]]
            clauses.append((v, -u, -w))
            clauses.append((-v, u))
            clauses.append((-v, w))
    input_vars = tuple(range(1, n + 1))
    output_vars = tuple(var[g] for g in low.outputs)
    header = [
        *comments,
        "inputs: " + " ".join(map(str, input_vars)),
        "outputs: " + " ".join(map(str, output_vars)),
    ]
    cnf = Cnf(nxt - 1, tuple(clauses), tuple(header))
    return Encoding(cnf, input_vars, output_vars, tuple(var[g] for g in where))


def fix_outputs(enc: Encoding, beta: Sequence[int]) -> Cnf:
    """Append the unit clauses ``y_i`` (beta_i = 1) or ``-y_i`` (beta_i = 0)."""
    if len(beta) != len(enc.output_vars):
        raise ValueError(f"beta has {len(beta)} bits, circuit has {len(enc.output_vars)} outputs")
    units = [(y,) if b else (-y,) for y, b in zip(enc.output_vars, beta)]
    return enc.cnf.with_clauses(units)


def extract_input(enc: Encoding, model: Sequence[int], cnf: Cnf | None = None) -> list[int]:
    """Read the input bits off a total model (index 0 is variable 1).

    When ``cnf`` is given the model is first re-checked against it.
    """
    if cnf is not None and not evaluate(cnf, model):
        raise ValueError("model does not satisfy the CNF")
    return [int(model[v - 1]) for v in enc.input_vars]


def netlist(circuit: Circuit) -> str:
    """Debug dump, one gate per line: ``index kind operand...``; then I/O lines."""
    lines = [" ".join([str(i), g.kind.value, *map(str, g.operands)]) for i, g in enumerate(circuit.gates)]
    lines.append("inputs " + " ".join(map(str, circuit.inputs)))
    lines.append("outputs " + " ".join(map(str, circuit.outputs)))
    return "\n".join(lines) + "\n"
