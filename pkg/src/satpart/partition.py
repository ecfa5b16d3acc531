"""Decomposition sets, cube sampling and the Monte-Carlo predictive function.

For a decomposition set ``S`` of ``k`` variables, the partitioning of a CNF
``C`` is the family ``C[S/a]`` over all ``2^k`` cubes ``a``.  Its sequential
cost is ``2^k * E[cost of one cube]``; ``estimate`` replaces the expectation
with the mean over ``N`` uniformly drawn cubes, ``enumerate_exact`` computes
it by visiting every cube.

Cubes are evaluated by followers, each owning one ``Solver`` compiled from
the CNF; the leader draws the sample, hands cubes out one at a time from a
shared queue and collects costs in sample order.
"""

from __future__ import annotations

import enum
import json
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cnf import Cnf, Cube
from .solver import UNLIMITED, Budget, SolveOutcome, Solver, Status

MAX_EXACT_SIZE = 24


@dataclass(frozen=True)
class DecompositionSet:
    variables: tuple[int, ...]

    def __post_init__(self):
        vs = tuple(int(v) for v in self.variables)
        if not vs:
            raise ValueError("decomposition set must be nonempty")
        if any(v < 1 for v in vs):
            raise ValueError("decomposition variables must be >= 1")
        if any(a >= b for a, b in zip(vs, vs[1:])):
            raise ValueError("decomposition variables must be distinct and ascending")
        object.__setattr__(self, "variables", vs)

    @classmethod
    def of(cls, variables: Iterable[int]) -> DecompositionSet:
        """Build from any iterable; sorts and rejects duplicates."""
        vs = list(variables)
        if len(set(vs)) != len(vs):
            raise ValueError("duplicate decomposition variable")
        return cls(tuple(sorted(vs)))

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def num_cubes(self) -> int:
        return 1 << len(self.variables)

    def cube(self, index: int) -> Cube:
        return Cube.from_index(self.variables, index)

    def check_range(self, num_vars: int) -> None:
        if self.variables[-1] > num_vars:
            raise ValueError(f"decomposition variable {self.variables[-1]} exceeds num_vars={num_vars}")


class Unit(str, enum.Enum):
    SECONDS = "seconds"
    CONFLICTS = "conflicts"
    PROPAGATIONS = "propagations"

    @property
    def deterministic(self) -> bool:
        return self is not Unit.SECONDS


def cube_cost(outcome: SolveOutcome, unit: Unit, budget: Budget = UNLIMITED) -> float:
    """Cost of one solved cube; a budget hit costs the budget bound when it is in ``unit``."""
    s = outcome.stats
    if outcome.status is Status.UNKNOWN:
        if unit is Unit.CONFLICTS and budget.max_conflicts is not None:
            return float(budget.max_conflicts)
        if unit is Unit.SECONDS and budget.max_seconds is not None:
            return float(budget.max_seconds)
    if unit is Unit.CONFLICTS:
        return float(s.conflicts)
    if unit is Unit.PROPAGATIONS:
        return float(s.propagations)
    return s.elapsed


@dataclass(frozen=True)
class Estimate:
    """Sampled (or exhaustive) cost of a partitioning.

    ``samples`` are per-cube costs in ``unit``.  ``value`` is ``2^k * mean``.
    ``censored`` counts cubes that hit the budget and entered with their
    budget value, so a censored value is a lower bound.  ``activity`` sums
    the solver's conflict activity of selected variables over all cubes.
    """

    set: DecompositionSet
    unit: Unit
    samples: tuple[float, ...]
    censored: int = 0
    exact: bool = False
    seed: int | None = None
    sat_cubes: tuple[int, ...] = ()
    activity: dict[int, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.samples:
            raise ValueError("estimate needs at least one sample")
        object.__setattr__(self, "samples", tuple(float(x) for x in self.samples))
        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def sample_size(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return math.fsum(self.samples) / len(self.samples)

    @property
    def total(self) -> float:
        return math.fsum(self.samples)

    @property
    def value(self) -> float:
        return math.ldexp(self.mean, len(self.set))

    @property
    def std_error(self) -> float:
        """Standard error of ``value``; zero for exhaustive enumeration."""
        n = len(self.samples)
        if self.exact or n < 2:
            return 0.0
        sd = float(np.std(np.asarray(self.samples), ddof=1))
        return math.ldexp(sd / math.sqrt(n), len(self.set))

    @property
    def is_censored(self) -> bool:
        return self.censored > 0

    def report(self) -> str:
        kind = "exact" if self.exact else "sampled"
        lines = [
            f"set {' '.join(map(str, self.set.variables))}",
            f"size {len(self.set)}",
            f"kind {kind}",
            f"N {self.sample_size}",
            f"unit {self.unit.value}",
            f"mean {self.mean!r}",
            f"F {self.value!r}",
            f"std_error {self.std_error!r}",
            f"censored {'yes' if self.is_censored else 'no'} ({self.censored})",
            f"sat_cubes {len(self.sat_cubes)}",
        ]
        if self.seed is not None:
            lines.insert(3, f"seed {self.seed}")
        return "\n".join(lines) + "\n"

    def record(self) -> str:
        """Single-line JSON form, inverse of ``from_record``."""
        return json.dumps(
            {
                "set": list(self.set.variables),
                "unit": self.unit.value,
                "exact": self.exact,
                "seed": self.seed,
                "N": self.sample_size,
                "F": self.value,
                "se": self.std_error,
                "censored": self.censored,
                "samples": list(self.samples),
                "sat_cubes": list(self.sat_cubes),
                "activity": {str(k): v for k, v in sorted(self.activity.items())},
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_record(cls, line: str | dict) -> Estimate:
        d = json.loads(line) if isinstance(line, str) else line
        return cls(
            DecompositionSet(tuple(d["set"])),
            Unit(d["unit"]),
            tuple(d["samples"]),
            censored=d.get("censored", 0),
            exact=d.get("exact", False),
            seed=d.get("seed"),
            sat_cubes=tuple(d.get("sat_cubes", ())),
            activity={int(k): v for k, v in d.get("activity", {}).items()},
        )


def sample_cubes(dset: DecompositionSet, n: int, seed: int) -> list[Cube]:
    """``n`` independent uniform cubes over ``dset``; same seed, same stream."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(n, len(dset)), dtype=np.uint8)
    return [Cube(dset.variables, tuple(row.tolist())) for row in bits]


# -- followers ----------------------------------------------------------------

_follower: dict = {}


def _follower_init(cnf: Cnf, budget: Budget, unit: Unit, solve_seed: int, activity_vars: tuple[int, ...]):
    _follower.update(
        solver=Solver(cnf), budget=budget, unit=unit, seed=solve_seed, activity_vars=activity_vars
    )


def _follower_eval(cube: Cube) -> tuple[float, bool, bool, list[float]]:
    f = _follower
    out = f["solver"].solve(cube, f["budget"], f["seed"])
    act = out.stats.activity
    return (
        cube_cost(out, f["unit"], f["budget"]),
        out.status is Status.UNKNOWN,
        out.status is Status.SAT,
        [act[v] for v in f["activity_vars"]],
    )


class Evaluator:
    """Leader side of cube evaluation; keeps followers alive across calls.

    With ``workers <= 1`` cubes are solved in-process, otherwise by a pool
    of follower processes pulling one cube at a time.
    """

    def __init__(
        self,
        cnf: Cnf,
        workers: int = 1,
        budget: Budget = UNLIMITED,
        unit: Unit | str = Unit.CONFLICTS,
        solve_seed: int = 0,
        activity_vars: Sequence[int] = (),
    ):
        self.cnf = cnf
        self.workers = max(1, int(workers))
        self.budget = budget
        self.unit = Unit(unit)
        self.activity_vars = tuple(activity_vars)
        args = (cnf, budget, self.unit, solve_seed, self.activity_vars)
        self._pool = None
        self._memo: dict[tuple[int, ...], dict[int, tuple]] = {}
        if self.workers > 1:
            ctx = multiprocessing.get_context("spawn")
            self._pool = ProcessPoolExecutor(self.workers, mp_context=ctx, initializer=_follower_init, initargs=args)
        else:
            self._local = dict(
                solver=Solver(cnf), budget=budget, unit=self.unit, seed=solve_seed, activity_vars=self.activity_vars
            )

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(cancel_futures=True)
            self._pool = None

    def __enter__(self) -> Evaluator:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _run(self, cubes: Sequence[Cube]) -> list[tuple[float, bool, bool, list[float]]]:
        if self._pool is not None:
            return list(self._pool.map(_follower_eval, cubes, chunksize=1))
        _follower.clear()
        _follower.update(self._local)
        return [_follower_eval(c) for c in cubes]

    def _collect(self, dset: DecompositionSet, indices: Sequence[int], exact: bool, seed: int | None) -> Estimate:
        dset.check_range(self.cnf.num_vars)
        if self.unit.deterministic:
            # the cost of a cube is a pure function of the cube here, so
            # repeated draws reuse the first result instead of re-solving
            memo = self._memo.setdefault(dset.variables, {})
            todo = sorted(set(indices) - memo.keys())
            for i, r in zip(todo, self._run([dset.cube(i) for i in todo])):
                memo[i] = r
            results = [memo[i] for i in indices]
        else:
            results = self._run([dset.cube(i) for i in indices])
        activity = dict.fromkeys(self.activity_vars, 0.0)
        for *_, act in results:
            for v, a in zip(self.activity_vars, act):
                activity[v] += a
        return Estimate(
            dset,
            self.unit,
            tuple(r[0] for r in results),
            censored=sum(r[1] for r in results),
            exact=exact,
            seed=seed,
            sat_cubes=tuple(sorted({i for i, r in zip(indices, results) if r[2]})),
            activity=activity,
        )

    def estimate(self, dset: DecompositionSet, n: int, seed: int) -> Estimate:
        cubes = sample_cubes(dset, n, seed)
        return self._collect(dset, [c.index() for c in cubes], False, seed)

    def enumerate_exact(self, dset: DecompositionSet) -> Estimate:
        if len(dset) > MAX_EXACT_SIZE:
            raise ValueError(f"exact enumeration limited to {MAX_EXACT_SIZE} variables, got {len(dset)}")
        return self._collect(dset, range(dset.num_cubes), True, None)


def estimate(
    cnf: Cnf,
    dset: DecompositionSet,
    n: int,
    seed: int,
    budget: Budget = UNLIMITED,
    workers: int = 1,
    unit: Unit | str = Unit.CONFLICTS,
    solve_seed: int = 0,
    activity_vars: Sequence[int] = (),
) -> Estimate:
    with Evaluator(cnf, workers, budget, unit, solve_seed, activity_vars) as ev:
        return ev.estimate(dset, n, seed)


def enumerate_exact(
    cnf: Cnf,
    dset: DecompositionSet,
    budget: Budget = UNLIMITED,
    workers: int = 1,
    unit: Unit | str = Unit.CONFLICTS,
    solve_seed: int = 0,
) -> Estimate:
    with Evaluator(cnf, workers, budget, unit, solve_seed) as ev:
        return ev.enumerate_exact(dset)
