"""Propositional data model: clauses, CNF formulas, cubes and DIMACS I/O.

Literals are DIMACS-style signed integers: ``v`` is the positive literal of
variable ``v`` and ``-v`` its negation.  Variables are 1-based.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence


class DimacsError(ValueError):
    """Malformed DIMACS input; ``line`` is the 1-based offending line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def lit_var(lit: int) -> int:
    return lit if lit > 0 else -lit


def check_clause(lits: Iterable[int]) -> tuple[int, ...]:
    """Validate a clause and return it as a tuple.

    Rejects the 0 terminator as a literal, duplicate literals, and
    tautologies (a variable present in both polarities).
    """
    clause = tuple(lits)
    seen: set[int] = set()
    for lit in clause:
        if lit == 0:
            raise ValueError("0 is not a literal")
        if lit in seen:
            raise ValueError(f"duplicate literal {lit} in clause {clause}")
        if -lit in seen:
            raise ValueError(f"tautological clause {clause}")
        seen.add(lit)
    return clause


@dataclass(frozen=True)
class Cnf:
    num_vars: int
    clauses: tuple[tuple[int, ...], ...]
    comments: tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_vars < 0:
            raise ValueError("num_vars must be nonnegative")
        clauses = tuple(check_clause(c) for c in self.clauses)
        n = self.num_vars
        for c in clauses:
            for lit in c:
                if lit > n or -lit > n:
                    raise ValueError(f"literal {lit} exceeds num_vars={n}")
        object.__setattr__(self, "clauses", clauses)
        object.__setattr__(self, "comments", tuple(self.comments))

    @property
    def num_clauses(self) -> int:
        return len(self.clauses)

    def with_clauses(self, extra: Iterable[Sequence[int]]) -> Cnf:
        return Cnf(self.num_vars, self.clauses + tuple(tuple(c) for c in extra), self.comments)

    def digest(self) -> str:
        """SHA-256 of the canonical DIMACS rendering (comments excluded)."""
        body = write_dimacs(Cnf(self.num_vars, self.clauses))
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass(frozen=True)
class Cube:
    """An assignment ``values`` to the sorted decomposition variables."""

    variables: tuple[int, ...]
    values: tuple[int, ...]

    def __post_init__(self):
        variables = tuple(int(v) for v in self.variables)
        values = tuple(int(b) for b in self.values)
        if len(variables) != len(values):
            raise ValueError("cube variables and values differ in length")
        if any(v < 1 for v in variables):
            raise ValueError("cube variables must be >= 1")
        if any(b not in (0, 1) for b in values):
            raise ValueError("cube values must be bits")
        if any(a >= b for a, b in zip(variables, variables[1:])):
            raise ValueError("cube variables must be distinct and ascending")
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.variables)

    def literals(self) -> list[int]:
        return [v if b else -v for v, b in zip(self.variables, self.values)]

    @classmethod
    def from_index(cls, variables: Sequence[int], index: int) -> Cube:
        """The ``index``-th cube in lexicographic order (first variable is the MSB)."""
        k = len(variables)
        if not 0 <= index < (1 << k):
            raise ValueError(f"cube index {index} outside 0..2^{k}-1")
        return cls(tuple(variables), tuple((index >> (k - 1 - j)) & 1 for j in range(k)))

    def index(self) -> int:
        i = 0
        for b in self.values:
            i = (i << 1) | b
        return i


EMPTY_CUBE = Cube((), ())


def evaluate(cnf: Cnf, assignment: Sequence[int]) -> bool:
    """True iff ``assignment`` (bit per variable, index 0 is variable 1) satisfies ``cnf``."""
    if len(assignment) != cnf.num_vars:
        raise ValueError(f"assignment has {len(assignment)} values, CNF has {cnf.num_vars} variables")
    for clause in cnf.clauses:
        for lit in clause:
            if lit > 0:
                if assignment[lit - 1]:
                    break
            elif not assignment[-lit - 1]:
                break
        else:
            return False
    return True


def apply_cube(cnf: Cnf, cube: Cube) -> Cnf:
    """Simplify ``cnf`` under ``cube``: drop satisfied clauses and falsified literals.

    Variable numbering is kept; a falsified clause becomes the empty clause.
    """
    if cube.variables and cube.variables[-1] > cnf.num_vars:
        raise ValueError("cube variable outside CNF variable range")
    true_lits = set(cube.literals())
    out = []
    for clause in cnf.clauses:
        if any(lit in true_lits for lit in clause):
            continue
        out.append(tuple(lit for lit in clause if -lit not in true_lits))
    return Cnf(cnf.num_vars, tuple(out), cnf.comments)


def parse_dimacs(text: bytes | str) -> Cnf:
    """Parse DIMACS cnf text.  Errors carry the offending line number."""
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    num_vars = num_clauses = None
    header_line = 0
    comments: list[str] = []
    clauses: list[tuple[int, ...]] = []
    current: list[int] = []
    current_start = 0
    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line[0] == "c":
            comments.append(line[1:].strip() if len(line) > 1 else "")
            continue
        if line[0] == "%":  # SATLIB end marker
            break
        if line[0] == "p":
            if num_vars is not None:
                raise DimacsError(lineno, "duplicate header")
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(lineno, f"malformed header {line!r}")
            try:
                num_vars, num_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(lineno, f"malformed header {line!r}") from None
            if num_vars < 0 or num_clauses < 0:
                raise DimacsError(lineno, "negative counts in header")
            header_line = lineno
            continue
        if num_vars is None:
            raise DimacsError(lineno, "clause before header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsError(lineno, f"bad literal {tok!r}") from None
            if lit == 0:
                try:
                    clauses.append(check_clause(current))
                except ValueError as exc:
                    raise DimacsError(current_start or lineno, str(exc)) from None
                current = []
                current_start = 0
                continue
            if abs(lit) > num_vars:
                raise DimacsError(lineno, f"literal {lit} out of range 1..{num_vars}")
            if not current:
                current_start = lineno
            current.append(lit)
    if num_vars is None:
        raise DimacsError(max(lineno, 1), "missing header")
    if current:
        raise DimacsError(current_start, "unterminated clause")
    if len(clauses) != num_clauses:
        raise DimacsError(header_line, f"header declares {num_clauses} clauses, found {len(clauses)}")
    return Cnf(num_vars, tuple(clauses), tuple(comments))


def write_dimacs(cnf: Cnf) -> str:
    lines = [f"c {c}" if c else "c" for c in cnf.comments]
    lines.append(f"p cnf {cnf.num_vars} {len(cnf.clauses)}")
    lines.extend(" ".join(map(str, c)) + " 0" if c else "0" for c in cnf.clauses)
    return "\n".join(lines) + "\n"
