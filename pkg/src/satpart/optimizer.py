"""Minimisation of the predictive function over decomposition-set masks.

A search point is a bit mask over ``M`` candidate variables (by default the
circuit inputs).  Two minimisers are provided:

* ``minimize_sa``: simulated annealing walking Hamming balls of growing
  radius around the current centre, cooling after every evaluated point;
* ``minimize_ts``: tabu search sweeping radius-``rho`` neighbourhoods and,
  when a sweep brings no improvement, restarting from the still-open point
  whose variables carry the most solver conflict activity.

The objective is any callable mapping a ``SearchPoint`` to an ``Estimate``;
``PredictiveFunction`` is the real one, built on ``partition.Evaluator``.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .partition import DecompositionSet, Estimate, Evaluator, Unit


@dataclass(frozen=True, order=True)
class SearchPoint:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("mask entries must be bits")
        if not any(bits):
            raise ValueError("mask must select at least one variable")
        object.__setattr__(self, "bits", bits)

    @property
    def size(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    @classmethod
    def full(cls, m: int) -> SearchPoint:
        return cls((1,) * m)

    @property
    def hex(self) -> str:
        """Mask as hex; the first candidate is the most significant bit."""
        value = 0
        for b in self.bits:
            value = (value << 1) | b
        return format(value, f"0{(len(self.bits) + 3) // 4}x")

    @classmethod
    def from_hex(cls, text: str, m: int) -> SearchPoint:
        value = int(text.strip().lower().removeprefix("0x"), 16)
        if value >> m:
            raise ValueError(f"mask wider than {m} bits")
        return cls(tuple((value >> (m - 1 - i)) & 1 for i in range(m)))

    def selected(self, candidates: Sequence[int]) -> DecompositionSet:
        if len(candidates) != len(self.bits):
            raise ValueError("candidate list and mask differ in length")
        return DecompositionSet(tuple(v for v, b in zip(candidates, self.bits) if b))

    def flip(self, positions: Sequence[int]) -> SearchPoint | None:
        bits = list(self.bits)
        for i in positions:
            bits[i] ^= 1
        return SearchPoint(tuple(bits)) if any(bits) else None


def neighborhood(p: SearchPoint, rho: int, seed: int | None = None) -> Iterator[SearchPoint]:
    """Points at Hamming distance 1..rho from ``p``, nearest shell first.

    Within a shell the order is by flipped positions, or a permutation of it
    drawn from ``seed``.  The empty mask is skipped.
    """
    if rho < 1:
        raise ValueError("radius must be >= 1")
    m = len(p)
    for d in range(1, min(rho, m) + 1):
        shell = list(itertools.combinations(range(m), d))
        if seed is not None:
            random.Random(seed * 1_000_003 + d).shuffle(shell)
        for pos in shell:
            q = p.flip(pos)
            if q is not None:
                yield q


def distance(a: SearchPoint, b: SearchPoint) -> int:
    return sum(x != y for x, y in zip(a.bits, b.bits))


@dataclass(frozen=True)
class SaSchedule:
    t0: float
    q: float = 0.98
    t_inf: float | None = None

    def __post_init__(self):
        t_inf = self.t0 * 1e-6 if self.t_inf is None else self.t_inf
        object.__setattr__(self, "t_inf", t_inf)
        if not 0 < self.q < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if not (self.t0 > 0 and t_inf > 0):
            raise ValueError("temperatures must be positive")

    @classmethod
    def default_for(cls, f_start: float) -> SaSchedule:
        return cls(f_start / 10)


Objective = Callable[[SearchPoint], Estimate]


class SearchLog:
    """Append-only JSON-lines log; one line per evaluation or decision.

    Each line carries the mask (hex), |set|, N, unit, F and the decision.
    Evaluation lines also embed the estimate record, so a restarted run can
    replay them instead of re-solving.
    """

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.entries: list[dict] = []
        self.known: dict[str, Estimate] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                try:
                    d = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail of an interrupted write
                if "estimate" in d:
                    self.known.setdefault(d["mask"], Estimate.from_record(d["estimate"]))

    def write(self, p: SearchPoint, est: Estimate, decision: str, fresh: bool) -> None:
        entry = {
            "mask": p.hex,
            "size": p.size,
            "N": est.sample_size,
            "unit": est.unit.value,
            "F": est.value,
            "decision": decision,
        }
        if fresh:
            entry["estimate"] = json.loads(est.record())
        self.entries.append(entry)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(entry, separators=(",", ":")) + "\n")


class CachedObjective:
    """Memoises an objective by mask; counts real evaluations."""

    def __init__(self, objective: Objective, log: SearchLog | None = None):
        self.objective = objective
        self.log = log or SearchLog(None)
        self.cache: dict[SearchPoint, Estimate] = {}
        self.evaluated: list[SearchPoint] = []
        self.activity: dict[int, float] = {}

    def __call__(self, p: SearchPoint) -> tuple[Estimate, bool]:
        if p in self.cache:
            return self.cache[p], False
        est = self.log.known.get(p.hex)
        if est is None:
            est = self.objective(p)
        self.cache[p] = est
        self.evaluated.append(p)
        for v, a in est.activity.items():
            self.activity[v] = self.activity.get(v, 0.0) + a
        return est, True


@dataclass
class SearchResult:
    point: SearchPoint
    estimate: Estimate
    evaluations: int
    reason: str
    history: list[SearchPoint] = field(default_factory=list)


class _Clock:
    def __init__(self, time_limit: float | None, max_evals: int | None, f: CachedObjective):
        self.deadline = None if time_limit is None else time.monotonic() + time_limit
        self.max_evals = max_evals
        self.f = f

    def exceeded(self) -> bool:
        if self.deadline is not None and time.monotonic() > self.deadline:
            return True
        return self.max_evals is not None and len(self.f.evaluated) >= self.max_evals

    def why(self) -> str:
        """Which budget stopped the search: ``time`` or ``evaluations``."""
        if self.deadline is not None and time.monotonic() > self.deadline:
            return "time"
        return "evaluations"


def minimize_sa(
    objective: Objective,
    start: SearchPoint,
    schedule: SaSchedule | None = None,
    time_limit: float | None = None,
    seed: int = 0,
    max_evals: int | None = None,
    log: SearchLog | None = None,
) -> SearchResult:
    """Simulated annealing over masks.

    The walk radius starts at 1 and resets to 1 whenever the centre moves;
    it grows by one when the current ball is exhausted without a move.  A
    candidate is accepted with probability 1 if it is strictly better than
    the centre, else ``exp(-(F(x) - F(centre)) / T)``.  The temperature is
    multiplied by ``q`` after every candidate.  The best point ever seen is
    returned (the centre itself may drift uphill).
    """
    f = CachedObjective(objective, log)
    rng = random.Random(seed)
    clock = _Clock(time_limit, max_evals, f)
    center = start
    f_center, fresh = f(center)
    f.log.write(center, f_center, "start", fresh)
    best, f_best = center, f_center
    if schedule is None:
        if f_center.value <= 0:
            return SearchResult(best, f_best, len(f.evaluated), "zero-start", list(f.evaluated))
        schedule = SaSchedule.default_for(f_center.value)
    temp = schedule.t0
    m = len(start)
    while True:
        if clock.exceeded():
            return SearchResult(best, f_best, len(f.evaluated), clock.why(), list(f.evaluated))
        if temp < schedule.t_inf:
            return SearchResult(best, f_best, len(f.evaluated), "temperature", list(f.evaluated))
        rho = 1
        checked: set[SearchPoint] = set()
        moved = False
        while not moved:
            for cand in neighborhood(center, rho, seed):
                if cand in checked:
                    continue
                est, fresh = f(cand)
                checked.add(cand)
                delta = est.value - f_center.value
                accepted = delta < 0 or rng.random() < math.exp(-delta / temp)
                f.log.write(cand, est, "accept" if accepted else "reject", fresh)
                temp *= schedule.q
                if accepted:
                    center, f_center = cand, est
                    moved = True
                    if est.value < f_best.value:
                        best, f_best = cand, est
                    break
                if clock.exceeded() or temp < schedule.t_inf:
                    break
            else:
                # the whole ball is checked without a move: widen it
                if rho >= m:
                    return SearchResult(best, f_best, len(f.evaluated), "exhausted", list(f.evaluated))
                rho += 1
                continue
            if not moved:
                break


class TabuLists:
    """L1 holds points whose neighbourhood is fully checked, L2 the rest.

    ``open_count[p]`` is the number of unchecked neighbours of an L2 point.
    """

    def __init__(self, rho: int):
        self.rho = rho
        self.l1: set[SearchPoint] = set()
        self.l2: dict[SearchPoint, int] = {}

    def __contains__(self, p: SearchPoint) -> bool:
        return p in self.l1 or p in self.l2

    def __len__(self) -> int:
        return len(self.l1) + len(self.l2)

    def mark(self, p: SearchPoint) -> None:
        """Add a newly checked point and update the open counts of its neighbours."""
        if p in self:
            raise ValueError(f"point {p.hex} already checked")
        opened = 0
        for q in neighborhood(p, self.rho):
            if q in self.l2:
                self.l2[q] -= 1
                if self.l2[q] == 0:
                    del self.l2[q]
                    self.l1.add(q)
            elif q not in self.l1:
                opened += 1
        if opened:
            self.l2[p] = opened
        else:
            self.l1.add(p)


def minimize_ts(
    objective: Objective,
    start: SearchPoint,
    candidates: Sequence[int] | None = None,
    time_limit: float | None = None,
    seed: int = 0,
    rho: int = 1,
    max_evals: int | None = None,
    log: SearchLog | None = None,
) -> SearchResult:
    """Tabu search over masks; no point is ever evaluated twice.

    After sweeping every unchecked point around the centre, the search
    recentres on the best point if the sweep improved on the incumbent by
    more than its standard error, otherwise on the L2 point whose selected
    variables have the largest total conflict activity (accumulated over
    all solves of the run; ties go to the lowest mask).
    """
    f = CachedObjective(objective, log)
    clock = _Clock(time_limit, max_evals, f)
    tabu = TabuLists(rho)
    m = len(start)
    candidates = list(range(1, m + 1)) if candidates is None else list(candidates)
    center = start
    f_best, fresh = f(center)
    best = center
    tabu.mark(center)
    f.log.write(center, f_best, "start", fresh)
    reason = "exhausted"
    while tabu.l2:
        if clock.exceeded():
            reason = clock.why()
            break
        improved = False
        for cand in neighborhood(center, rho, seed):
            if cand in tabu:
                continue
            est, fresh = f(cand)
            tabu.mark(cand)
            if est.value < f_best.value - f_best.std_error:
                best, f_best = cand, est
                improved = True
                f.log.write(cand, est, "improve", fresh)
            else:
                f.log.write(cand, est, "checked", fresh)
            if clock.exceeded():
                break
        if clock.exceeded():
            reason = clock.why()
            break
        if improved:
            center = best
        elif tabu.l2:
            act = f.activity

            def score(p: SearchPoint) -> float:
                return sum(act.get(v, 0.0) for v, b in zip(candidates, p.bits) if b)

            center = min(tabu.l2, key=lambda p: (-score(p), p.bits))
            f.log.write(center, f.cache[center], "recenter", False)
    return SearchResult(best, f_best, len(f.evaluated), reason, list(f.evaluated))


class PredictiveFunction:
    """F(mask) by Monte-Carlo sampling; every mask uses the same cube seed."""

    def __init__(self, evaluator: Evaluator, candidates: Sequence[int], n: int, seed: int):
        self.evaluator = evaluator
        self.candidates = tuple(candidates)
        self.n = n
        self.seed = seed

    def __call__(self, p: SearchPoint) -> Estimate:
        return self.evaluator.estimate(p.selected(self.candidates), self.n, self.seed)


def bitcount_objective(p: SearchPoint) -> Estimate:
    """Synthetic objective with F equal to the number of selected bits."""
    dset = DecompositionSet(tuple(i + 1 for i, b in enumerate(p.bits) if b))
    return Estimate(dset, Unit.CONFLICTS, (math.ldexp(p.size, -p.size),), exact=True)
