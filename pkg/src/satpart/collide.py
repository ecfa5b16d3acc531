"""Enumerate every key that yields a given keystream.

The inversion CNF is solved repeatedly; after each model the found key is
excluded by a clause over the input variables only, so two models that
differ just in auxiliary variables never produce the same key twice.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .a51 import GeneratorSpec, build_circuit, key_to_hex, keystream
from .circuit import Encoding, extract_input, fix_outputs, tseitin_encode
from .cnf import Cnf
from .partition import DecompositionSet
from .solver import UNLIMITED, Budget, Solver, Status


@dataclass(frozen=True)
class CollisionReport:
    keystream: tuple[int, ...]
    keys: tuple[tuple[int, ...], ...]
    exhausted: bool

    def to_text(self) -> str:
        lines = [key_to_hex(k) for k in self.keys]
        lines.append(f"exhausted {'yes' if self.exhausted else 'no'}")
        return "\n".join(lines) + "\n"


def inversion_cnf(
    spec: GeneratorSpec, beta: Sequence[int], fixed: Mapping[int, int] | None = None
) -> tuple[Encoding, Cnf]:
    """CNF whose models are the keys producing ``beta``.

    ``fixed`` maps 1-based key bit positions to known values (unit clauses).
    """
    if len(beta) != spec.keystream_len:
        raise ValueError(f"keystream has {len(beta)} bits, generator emits {spec.keystream_len}")
    enc = tseitin_encode(build_circuit(spec))
    cnf = fix_outputs(enc, beta)
    if fixed:
        for pos in fixed:
            if not 1 <= pos <= spec.key_length:
                raise ValueError(f"fixed key bit {pos} outside 1..{spec.key_length}")
        units = [(enc.input_vars[p - 1] if b else -enc.input_vars[p - 1],) for p, b in sorted(fixed.items())]
        cnf = cnf.with_clauses(units)
    return enc, cnf


def find_collisions(
    spec: GeneratorSpec,
    beta: Sequence[int],
    limit: int | None = None,
    budget: Budget = UNLIMITED,
    fixed: Mapping[int, int] | None = None,
    seed: int = 0,
    grid: Mapping | None = None,
) -> CollisionReport:
    """All keys (up to ``limit``) whose keystream equals ``beta``.

    ``budget`` bounds every individual solve.  After ``limit`` keys one more
    solve is attempted; ``exhausted`` is true only if that (or an earlier)
    solve proves there is no further key.  With ``grid`` (keyword arguments
    for ``run_grid`` including ``dset``) every pass runs on the grid.
    """
    beta = tuple(int(b) for b in beta)
    enc, cnf = inversion_cnf(spec, beta, fixed)
    solver = Solver(cnf, incremental=True)
    keys: list[tuple[int, ...]] = []
    exhausted = False
    while True:
        status, model = _one_pass(solver, cnf, budget, seed, grid)
        if status is Status.UNSAT:
            exhausted = True
            break
        if status is Status.UNKNOWN or (limit is not None and len(keys) >= limit):
            break
        key = tuple(extract_input(enc, model))
        if tuple(keystream(spec, key)) != beta:
            raise AssertionError("recovered key does not reproduce the keystream")
        if key in keys:
            raise AssertionError("blocked key returned again")
        keys.append(key)
        block = [-v if b else v for v, b in zip(enc.input_vars, key)]
        solver.add_clause(block)
        cnf = solver.cnf
    return CollisionReport(beta, tuple(keys), exhausted)


def _one_pass(solver: Solver, cnf: Cnf, budget: Budget, seed: int, grid: Mapping | None):
    if not grid:
        out = solver.solve(budget=budget, seed=seed)
        return out.status, out.model
    from .grid import Outcome, run_grid

    opts = dict(grid)
    dset: DecompositionSet = opts.pop("dset")
    res = run_grid(cnf, dset, budget=budget, **opts)
    status = {Outcome.SAT: Status.SAT, Outcome.UNSAT: Status.UNSAT}.get(res.outcome, Status.UNKNOWN)
    return status, res.model
