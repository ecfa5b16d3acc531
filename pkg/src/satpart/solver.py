"""Conflict-driven clause learning SAT solver.

Internals use the literal code ``2*v`` for ``v`` and ``2*v + 1`` for ``-v``,
so negation is ``lit ^ 1``.  Original binary clauses live in static
implication lists; every other clause (and every learned clause) is
watched on its first two literals.

A ``Solver`` compiles a CNF once and can then answer many ``solve`` calls
with different assumptions.  Each call starts from the same freshly
compiled state, so outcome and statistics depend only on
(cnf, assumptions, budget, seed) when the budget is in conflicts.

With ``incremental=True`` learned clauses, activities and phases carry over
from one call to the next instead.  A fixed sequence of calls is then still
deterministic, which is how grid workers sweep a range of cubes.
"""

from __future__ import annotations

import contextlib
import enum
import gc
import heapq
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .cnf import EMPTY_CUBE, Cnf, Cube, evaluate

RESTART_UNIT = 100
VAR_DECAY = 0.95
RESCALE_LIMIT = 1e100


class Status(str, enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"


class Propagation(str, enum.Enum):
    SAT = "SAT-by-propagation"
    CONFLICT = "CONFLICT"
    UNDETERMINED = "UNDETERMINED"


@dataclass(frozen=True)
class Budget:
    max_conflicts: int | None = None
    max_seconds: float | None = None

    def scaled(self, factor: float) -> Budget:
        return Budget(
            None if self.max_conflicts is None else int(self.max_conflicts * factor),
            None if self.max_seconds is None else self.max_seconds * factor,
        )


UNLIMITED = Budget()


@dataclass
class SolveStats:
    decisions: int = 0
    conflicts: int = 0
    propagations: int = 0
    elapsed: float = 0.0
    # activity[v] is the conflict activity of variable v; index 0 is unused
    activity: list[float] = field(default_factory=list, repr=False)

    def to_text(self) -> str:
        return (
            f"decisions={self.decisions}\nconflicts={self.conflicts}\n"
            f"propagations={self.propagations}\nelapsed={self.elapsed:.6f}\n"
        )


@dataclass
class SolveOutcome:
    status: Status
    model: list[int] | None
    stats: SolveStats


@dataclass
class PropagationResult:
    status: Propagation
    # values[v] is 1, 0, or None for variables left unassigned; index 0 unused
    values: list[int | None]


@contextlib.contextmanager
def _gc_paused():
    # search allocates many acyclic lists; generational passes over a large
    # CNF would otherwise dominate short solves
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def luby(i: int) -> int:
    """i-th element (0-based) of the Luby sequence 1,1,2,1,1,2,4,..."""
    size, seq = 1, 0
    while size < i + 1:
        seq += 1
        size = 2 * size + 1
    while size - 1 != i:
        size = (size - 1) >> 1
        seq -= 1
        i %= size
    return 1 << seq


class Solver:
    def __init__(self, cnf: Cnf, incremental: bool = False):
        self.cnf = cnf
        self.incremental = incremental
        self._live = False
        n = self.num_vars = cnf.num_vars
        self._bin: list[list[tuple[int, list[int]]]] = [[] for _ in range(2 * n + 2)]
        self._long: list[list[int]] = []
        self._units: list[int] = []
        self._has_empty = False
        for clause in cnf.clauses:
            self._add_static(clause)
        self._snap = None
        self.stop: Callable[[], bool] | None = None

    @staticmethod
    def _code(lit: int) -> int:
        return 2 * lit if lit > 0 else -2 * lit + 1

    def _add_static(self, clause: Sequence[int]) -> None:
        lits = [self._code(x) for x in clause]
        if not lits:
            self._has_empty = True
        elif len(lits) == 1:
            self._units.append(lits[0])
        elif len(lits) == 2:
            a, b = lits
            self._bin[a ^ 1].append((b, lits))
            self._bin[b ^ 1].append((a, lits))
        else:
            self._long.append(lits)

    def add_clause(self, clause: Iterable[int]) -> None:
        """Permanently add a clause (DIMACS literals); visible to later solves."""
        clause = tuple(clause)
        if any(abs(x) > self.num_vars or x == 0 for x in clause):
            raise ValueError("clause literal outside variable range")
        self.cnf = self.cnf.with_clauses([clause])
        self._add_static(clause)
        self._snap = None
        if self._live:
            # learned clauses stay valid under a stronger formula, so an
            # incremental solver keeps its state and watches the new clause
            self._add_live(clause)

    def _add_live(self, clause: tuple[int, ...]) -> None:
        self._cancel_until(0)
        lits = []
        for x in clause:
            c = self._code(x)
            if self.val[c] == 1:
                return
            if self.val[c] == 0:
                lits.append(c)
        if not lits:
            self._root_ok = False
        elif len(lits) == 1:
            self._enqueue(lits[0], None)
        else:
            self.watches[lits[0]].append(lits)
            self.watches[lits[1]].append(lits)

    def forget(self) -> None:
        """Drop state carried between incremental calls (learned clauses etc.)."""
        self._live = False

    # -- state -----------------------------------------------------------

    def _build_root(self) -> None:
        """Construct the level-0 state once and keep a snapshot of it."""
        n = self.num_vars
        self.val = [0] * (2 * n + 2)  # per literal code: 1 true, -1 false, 0 free
        self.level = [0] * (n + 1)
        self.reason: list[list[int] | None] = [None] * (n + 1)
        self.trail: list[int] = []
        self.trail_lim: list[int] = []
        self.qhead = 0
        self.watches: list[list[list[int]]] = [[] for _ in range(2 * n + 2)]
        for c in self._long:
            self.watches[c[0]].append(c)
            self.watches[c[1]].append(c)
        self.n_props = 0
        ok = not self._has_empty
        for u in self._units:
            if not ok:
                break
            if self.val[u] == -1:
                ok = False
            elif self.val[u] == 0:
                self._enqueue(u, None)
        ok = ok and self._propagate() is None
        self._snap = (
            ok,
            self.val[:],
            self.level[:],
            self.reason[:],
            self.trail[:],
            [ws[:] for ws in self.watches],
            [c[:] for c in self._long],
            [(0.0, v) for v in range(1, n + 1) if self.val[2 * v] == 0],
            self.n_props,
        )

    def _reset(self, seed: int) -> bool:
        """Restore the level-0 snapshot; False if the root level is inconsistent."""
        if self._snap is None:
            self._build_root()
        ok, val, level, reason, trail, watches, orders, heap, n_props = self._snap
        n = self.num_vars
        self.val = val[:]
        self.level = level[:]
        self.reason = reason[:]
        self.trail = trail[:]
        self.trail_lim = []
        self.qhead = len(trail)
        self.watches = [ws[:] for ws in watches]
        for c, o in zip(self._long, orders):
            c[:] = o
        self.heap = heap[:]  # sorted, hence already a heap
        # activity of each variable's live heap entry, -1.0 when it has none
        self.queued = [-1.0] * (n + 1)
        for _, v in heap:
            self.queued[v] = 0.0
        self.learnts: list[list[int]] = []
        self.activity = [0.0] * (n + 1)
        self.var_inc = 1.0
        # ties in activity go to the lowest variable index; the seed only
        # randomises initial phases (seed 0 keeps every phase negative)
        if seed:
            rng = random.Random(seed)
            self.phase = [rng.getrandbits(1) for _ in range(n + 1)]
        else:
            self.phase = [1] * (n + 1)  # 1 = negative literal first
        self.n_props = n_props
        return ok

    def _enqueue(self, lit: int, reason: list[int] | None) -> None:
        self.val[lit] = 1
        self.val[lit ^ 1] = -1
        v = lit >> 1
        self.level[v] = len(self.trail_lim)
        self.reason[v] = reason
        self.trail.append(lit)

    def _propagate(self) -> list[int] | None:
        """Unit propagation to fixpoint; returns a conflicting clause or None."""
        val = self.val
        trail = self.trail
        watches = self.watches
        bins = self._bin
        level = self.level
        reason = self.reason
        qhead = start = self.qhead
        dl = len(self.trail_lim)
        append = trail.append
        while qhead < len(trail):
            p = trail[qhead]
            qhead += 1
            for other, c in bins[p]:
                x = val[other]
                if x == 1:
                    continue
                if x == -1:
                    self.qhead = len(trail)
                    self.n_props += qhead - start
                    return c
                val[other] = 1
                val[other ^ 1] = -1
                v = other >> 1
                level[v] = dl
                reason[v] = c
                append(other)
            false_lit = p ^ 1
            ws = watches[false_lit]
            i = j = 0
            n = len(ws)
            while i < n:
                c = ws[i]
                i += 1
                first = c[0]
                if first == false_lit:
                    first = c[0] = c[1]
                    c[1] = false_lit
                if val[first] == 1:
                    ws[j] = c
                    j += 1
                    continue
                for k in range(2, len(c)):
                    lk = c[k]
                    if val[lk] != -1:
                        c[1] = lk
                        c[k] = false_lit
                        watches[lk].append(c)
                        break
                else:
                    ws[j] = c
                    j += 1
                    if val[first] == -1:
                        while i < n:
                            ws[j] = ws[i]
                            j += 1
                            i += 1
                        del ws[j:]
                        self.qhead = len(trail)
                        self.n_props += qhead - start
                        return c
                    val[first] = 1
                    val[first ^ 1] = -1
                    v = first >> 1
                    level[v] = dl
                    reason[v] = c
                    append(first)
            del ws[j:]
        self.n_props += qhead - start
        self.qhead = qhead
        return None

    def _cancel_until(self, lvl: int) -> None:
        if len(self.trail_lim) <= lvl:
            return
        val = self.val
        phase = self.phase
        act = self.activity
        queued = self.queued
        heap = self.heap
        push = heapq.heappush
        start = self.trail_lim[lvl]
        for lit in reversed(self.trail[start:]):
            v = lit >> 1
            val[lit] = val[lit ^ 1] = 0
            phase[v] = lit & 1
            a = act[v]
            if queued[v] != a:
                queued[v] = a
                push(heap, (-a, v))
        del self.trail[start:]
        del self.trail_lim[lvl:]
        self.qhead = start
        if len(heap) > 4 * self.num_vars + 1024:
            self._rebuild_heap()

    def _bump(self, v: int) -> None:
        a = self.activity[v] = self.activity[v] + self.var_inc
        if a > RESCALE_LIMIT:
            act = self.activity
            for i in range(len(act)):
                act[i] *= 1e-100
            self.var_inc *= 1e-100
            self._rebuild_heap()
        elif self.val[2 * v] == 0:
            self.queued[v] = a
            heapq.heappush(self.heap, (-a, v))

    def _rebuild_heap(self) -> None:
        act, val = self.activity, self.val
        self.heap = [(-act[v], v) for v in range(1, self.num_vars + 1) if val[2 * v] == 0]
        heapq.heapify(self.heap)
        queued = self.queued
        for v in range(1, self.num_vars + 1):
            queued[v] = act[v] if val[2 * v] == 0 else -1.0

    def _pick_branch_var(self) -> int:
        heap, val, act, queued = self.heap, self.val, self.activity, self.queued
        pop = heapq.heappop
        while heap:
            a, v = pop(heap)
            if -a != act[v]:
                continue  # stale
            queued[v] = -1.0
            if val[2 * v] == 0:
                return v
        # stale entries only; fall back to a scan
        for v in range(1, self.num_vars + 1):
            if val[2 * v] == 0:
                return v
        return 0

    def _analyze(self, confl: list[int]) -> tuple[list[int], int]:
        """First-UIP learning; returns (learned clause, backjump level)."""
        seen = self._seen
        level = self.level
        reason = self.reason
        trail = self.trail
        dl = len(self.trail_lim)
        learnt = [0]
        counter = 0
        p = -1
        idx = len(trail) - 1
        c = confl
        while True:
            pv = p >> 1 if p >= 0 else -1
            for q in c:
                v = q >> 1
                if v == pv or seen[v] or level[v] == 0:
                    continue
                seen[v] = 1
                self._bump(v)
                if level[v] >= dl:
                    counter += 1
                else:
                    learnt.append(q)
            while not seen[trail[idx] >> 1]:
                idx -= 1
            p = trail[idx]
            idx -= 1
            c = reason[p >> 1]
            seen[p >> 1] = 0
            counter -= 1
            if counter <= 0:
                break
        learnt[0] = p ^ 1
        # local minimisation: drop literals implied by other learned literals
        kept = [learnt[0]]
        for q in learnt[1:]:
            r = reason[q >> 1]
            if r is None:
                kept.append(q)
                continue
            qv = q >> 1
            for x in r:
                xv = x >> 1
                if xv != qv and not seen[xv] and level[xv] > 0:
                    kept.append(q)
                    break
        for q in learnt[1:]:
            seen[q >> 1] = 0
        learnt = kept
        if len(learnt) == 1:
            return learnt, 0
        best = 1
        for i in range(2, len(learnt)):
            if level[learnt[i] >> 1] > level[learnt[best] >> 1]:
                best = i
        learnt[1], learnt[best] = learnt[best], learnt[1]
        return learnt, level[learnt[1] >> 1]

    def _reduce_db(self) -> None:
        """Drop the longer half of the unlocked learned clauses."""
        val, reason = self.val, self.reason
        locked = []
        free = []
        for c in self.learnts:
            if val[c[0]] == 1 and reason[c[0] >> 1] is c:
                locked.append(c)
            else:
                free.append(c)
        free.sort(key=len)
        keep = free[: len(free) // 2]
        dead = {id(c) for c in free[len(free) // 2 :] if len(c) > 2}
        keep.extend(c for c in free[len(free) // 2 :] if len(c) <= 2)
        if dead:
            for ws in self.watches:
                if ws:
                    ws[:] = [c for c in ws if id(c) not in dead]
        self.learnts = locked + keep

    # -- public ------------------------------------------------------------

    def _assumption_codes(self, assumptions: Cube | Sequence[int]) -> list[int]:
        lits = assumptions.literals() if isinstance(assumptions, Cube) else list(assumptions)
        if any(x == 0 or abs(x) > self.num_vars for x in lits):
            raise ValueError("assumption outside variable range")
        return [self._code(x) for x in lits]

    def propagate_only(self, assumptions: Cube | Sequence[int] = EMPTY_CUBE) -> PropagationResult:
        """Assign the assumptions, propagate to fixpoint, make no decisions."""
        assume = self._assumption_codes(assumptions)
        n = self.num_vars
        with _gc_paused():
            ok = self._reset(0)
        self._live = False
        if ok:
            for a in assume:
                if self.val[a] == -1:
                    ok = False
                    break
                if self.val[a] == 0:
                    self.trail_lim.append(len(self.trail))
                    self._enqueue(a, None)
            ok = ok and self._propagate() is None
        values: list[int | None] = [None] * (n + 1)
        if not ok:
            return PropagationResult(Propagation.CONFLICT, values)
        val = self.val
        for v in range(1, n + 1):
            x = val[2 * v]
            if x:
                values[v] = 1 if x == 1 else 0
        if len(self.trail) == n:
            return PropagationResult(Propagation.SAT, values)
        for c in self._long:
            if not any(val[x] == 1 for x in c):
                return PropagationResult(Propagation.UNDETERMINED, values)
        for lits in self._iter_bins():
            if val[lits[0]] != 1 and val[lits[1]] != 1:
                return PropagationResult(Propagation.UNDETERMINED, values)
        return PropagationResult(Propagation.SAT, values)

    def _iter_bins(self):
        for p, lst in enumerate(self._bin):
            for other, c in lst:
                if c[0] ^ 1 == p:  # each binary clause once
                    yield c

    def solve(
        self,
        assumptions: Cube | Sequence[int] = EMPTY_CUBE,
        budget: Budget = UNLIMITED,
        seed: int = 0,
    ) -> SolveOutcome:
        assume = self._assumption_codes(assumptions)
        t0 = time.perf_counter()
        stats = SolveStats()
        props0 = self.n_props if self._live else 0
        with _gc_paused():
            status = self._search(assume, budget, seed, stats, t0)
        model = None
        if status is Status.SAT:
            model = [1 if self.val[2 * v] == 1 else 0 for v in range(1, self.num_vars + 1)]
            if not evaluate(self.cnf, model):
                raise AssertionError("solver produced a model that fails the CNF")
        stats.propagations = self.n_props - props0
        stats.elapsed = time.perf_counter() - t0
        inv = 1.0 / self.var_inc
        stats.activity = [a * inv for a in self.activity]
        return SolveOutcome(status, model, stats)

    def _search(self, assume: list[int], budget: Budget, seed: int, stats: SolveStats, t0: float) -> Status:
        if self._live:
            self._cancel_until(0)
            if not self._root_ok:
                return Status.UNSAT
        else:
            self._root_ok = self._reset(seed)
            self._live = self.incremental
            if not self._root_ok:
                return Status.UNSAT
            self._seen = [0] * (self.num_vars + 1)
            self._max_learnts = max(len(self._long) // 3, 2000)
        max_conf = budget.max_conflicts
        deadline = None if budget.max_seconds is None else t0 + budget.max_seconds
        stop = self.stop
        restart_idx = 0
        restart_at = RESTART_UNIT * luby(0)
        conflicts_since = 0
        val = self.val
        n_assume = len(assume)
        ticks = 0
        while True:
            ticks += 1
            if ticks & 63 == 0:
                if deadline is not None and time.perf_counter() > deadline:
                    return Status.UNKNOWN
                if stop is not None and stop():
                    return Status.UNKNOWN
            confl = self._propagate()
            if confl is not None:
                stats.conflicts += 1
                conflicts_since += 1
                if len(self.trail_lim) == 0:
                    self._root_ok = False
                    return Status.UNSAT
                learnt, back = self._analyze(confl)
                self._cancel_until(back)
                if len(learnt) == 1:
                    self._enqueue(learnt[0], None)
                else:
                    self.watches[learnt[0]].append(learnt)
                    self.watches[learnt[1]].append(learnt)
                    self.learnts.append(learnt)
                    self._enqueue(learnt[0], learnt)
                self.var_inc /= VAR_DECAY
                if max_conf is not None and stats.conflicts >= max_conf:
                    return Status.UNKNOWN
                continue
            if conflicts_since >= restart_at:
                restart_idx += 1
                restart_at = RESTART_UNIT * luby(restart_idx)
                conflicts_since = 0
                self._cancel_until(0)
            if len(self.learnts) - len(self.trail) >= self._max_learnts:
                self._reduce_db()
                self._max_learnts = int(self._max_learnts * 1.1)
            nxt = 0
            while len(self.trail_lim) < n_assume:
                a = assume[len(self.trail_lim)]
                if val[a] == 1:
                    self.trail_lim.append(len(self.trail))
                elif val[a] == -1:
                    return Status.UNSAT
                else:
                    nxt = a
                    break
            if nxt == 0:
                v = self._pick_branch_var()
                if v == 0:
                    return Status.SAT
                stats.decisions += 1
                nxt = 2 * v + self.phase[v]
            self.trail_lim.append(len(self.trail))
            self._enqueue(nxt, None)


def solve(
    cnf: Cnf,
    assumptions: Cube | Sequence[int] = EMPTY_CUBE,
    budget: Budget = UNLIMITED,
    seed: int = 0,
) -> SolveOutcome:
    return Solver(cnf).solve(assumptions, budget, seed)


def propagate_only(cnf: Cnf, assumptions: Cube | Sequence[int] = EMPTY_CUBE) -> PropagationResult:
    return Solver(cnf).propagate_only(assumptions)
