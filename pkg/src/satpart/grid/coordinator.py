"""Coordinator: work generation, redundant scheduling, validation, journal.

Every work unit is computed twice (two replica slots), on two different
workers whenever more than one worker is alive.  A SAT claim is accepted on
its own once the model checks out against the CNF and the claimed cube; an
UNSAT-all claim needs both replicas.  Broken claims are marked INVALID and
the slot is reissued, preferably to a worker that has not seen the unit.

The coordinator is one sequential event loop over the workers' pipes.  All
state transitions that matter for recovery go to an append-only journal
(JSON lines); a restarted run replays it and skips validated units.
"""

from __future__ import annotations

import enum
import json
import os
import selectors
import subprocess
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

from ..cnf import Cnf, evaluate, write_dimacs
from ..partition import DecompositionSet
from ..solver import UNLIMITED, Budget
from .protocol import (
    FrameDecoder,
    MsgType,
    ProtocolError,
    ResultStatus,
    WorkResult,
    WorkUnit,
    budget_to_dict,
    encode_frame,
)

MAX_SET_SIZE = 48
JOURNAL_VERSION = 1


def num_units(set_size: int, batch: int) -> int:
    return -(-(1 << set_size) // batch)


def generate_work(
    cnf: Cnf | str, dset: DecompositionSet, batch: int, budget: Budget = UNLIMITED
) -> Iterator[WorkUnit]:
    """Lazily cut the cube index space into ``ceil(2^k / batch)`` units."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if len(dset) > MAX_SET_SIZE:
        raise ValueError(f"decomposition sets above {MAX_SET_SIZE} variables are not supported")
    ref = cnf if isinstance(cnf, str) else cnf.digest()
    total = dset.num_cubes
    for uid in range(num_units(len(dset), batch)):
        start = uid * batch
        yield WorkUnit(uid, start, min(start + batch, total), ref, dset.variables, budget)


# -- validation -----------------------------------------------------------------


class Verdict(str, enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    INVALID = "INVALID"
    PENDING = "PENDING"


@dataclass(frozen=True)
class Validation:
    verdict: Verdict
    cube: int | None = None
    model: list[int] | None = None
    invalid: tuple[int, ...] = ()  # replica ids whose results are rejected


def sat_claim_holds(r: WorkResult, cnf: Cnf, unit: WorkUnit) -> bool:
    """True iff ``r`` names a cube of ``unit`` and carries a model of ``cnf`` inside it."""
    if r.status is not ResultStatus.SAT or r.cube is None or r.model is None:
        return False
    if not unit.start <= r.cube < unit.stop or len(r.model) != cnf.num_vars:
        return False
    if set(r.model) - {"0", "1"}:
        return False
    bits = r.model_bits()
    k = len(unit.variables)
    for j, v in enumerate(unit.variables):
        if bits[v - 1] != (r.cube >> (k - 1 - j)) & 1:
            return False
    return evaluate(cnf, bits)


def validate_result(r1: WorkResult | None, r2: WorkResult | None, cnf: Cnf, unit: WorkUnit) -> Validation:
    """Decide a unit from its replica results (``None`` = not yet reported).

    A checked SAT certificate wins on its own and invalidates any replica
    that contradicts it; UNSAT-all needs both replicas; a SAT claim whose
    model fails the check is INVALID.
    """
    results = [r for r in (r1, r2) if r is not None]
    for r in results:
        if r.status is ResultStatus.SAT and sat_claim_holds(r, cnf, unit):
            bad = tuple(o.replica for o in results if o is not r and o.status in (ResultStatus.SAT, ResultStatus.UNSAT_ALL)
                        and not (o.status is ResultStatus.SAT and sat_claim_holds(o, cnf, unit)))
            return Validation(Verdict.SAT, r.cube, r.model_bits(), bad)
    bad = tuple(r.replica for r in results if r.status is ResultStatus.SAT)
    if bad:
        return Validation(Verdict.INVALID, invalid=bad)
    if len(results) == 2 and all(r.status is ResultStatus.UNSAT_ALL for r in results):
        return Validation(Verdict.UNSAT)
    return Validation(Verdict.PENDING)


# -- ledger and journal -----------------------------------------------------------


class ReplicaState(str, enum.Enum):
    UNSENT = "UNSENT"
    SENT = "SENT"
    DONE = "DONE"
    INVALID = "INVALID"


@dataclass
class ReplicaSlot:
    state: ReplicaState = ReplicaState.UNSENT
    worker: int | None = None
    result: WorkResult | None = None
    sent_at: float | None = None
    done_at: float | None = None


@dataclass
class LedgerEntry:
    unit: WorkUnit
    replicas: list[ReplicaSlot] = field(default_factory=lambda: [ReplicaSlot(), ReplicaSlot()])
    outcome: Verdict | None = None
    interrupted: bool = False
    retries: int = 0
    tried: set[int] = field(default_factory=set)  # workers that were ever given the unit
    rejected: set[int] = field(default_factory=set)  # workers that produced an INVALID result

    @property
    def open(self) -> bool:
        return self.outcome is None and not self.interrupted


class Journal:
    """Append-only JSON-lines checkpoint; a torn last line is ignored on load."""

    def __init__(self, path: str | Path | None, header: dict):
        self.path = Path(path) if path is not None else None
        self.header = header
        self.validated: dict[int, dict] = {}
        self.records: list[dict] = []
        self._fh = None
        if self.path is None:
            return
        if self.path.exists() and self.path.stat().st_size:
            recs = load_journal(self.path)
            old = recs[0] if recs else {}
            for key in ("cnf", "set", "batch"):
                if old.get(key) != header[key]:
                    raise ValueError(f"checkpoint {self.path} belongs to another run ({key} differs)")
            for r in recs:
                if r.get("type") == "validated":
                    self.validated.setdefault(r["unit"], r)
            _drop_torn_tail(self.path)
            self._fh = self.path.open("a")
            self.write({"type": "resume", "validated": len(self.validated)})
        else:
            self._fh = self.path.open("w")
            self.write(header)

    def write(self, rec: dict) -> None:
        rec = dict(rec, t=round(time.time(), 3))
        self.records.append(rec)
        if rec.get("type") == "validated":
            self.validated.setdefault(rec["unit"], rec)
        if self._fh is not None:
            self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def _drop_torn_tail(path: Path) -> None:
    data = path.read_bytes()
    cut = data.rfind(b"\n") + 1
    if cut != len(data):
        with path.open("r+b") as fh:
            fh.truncate(cut)


def load_journal(path: str | Path) -> list[dict]:
    recs = []
    with open(path) as fh:
        for line in fh:
            try:
                recs.append(json.loads(line))
            except json.JSONDecodeError:
                break  # torn tail from a killed coordinator
    return recs


# -- coordinator ------------------------------------------------------------------


class Outcome(str, enum.Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    INTERRUPTED = "INTERRUPTED"


@dataclass
class GridResult:
    outcome: Outcome
    cube: int | None = None
    model: list[int] | None = None
    units_total: int = 0
    validated: int = 0  # units with a validated outcome, including resumed ones
    validated_now: int = 0  # validated by this run
    dispatched: int = 0
    crashes: int = 0
    invalid: list[tuple[int, int, int]] = field(default_factory=list)  # (unit, replica, worker)
    reason: str = ""
    elapsed: float = 0.0


@dataclass
class _Proc:
    id: int
    popen: subprocess.Popen
    decoder: FrameDecoder
    fault: str | None
    slot: int = 0  # position in the requested worker pool
    ready: bool = False
    job: tuple[int, int] | None = None  # (unit id, replica)
    last_seen: float = 0.0
    alive: bool = True


class Coordinator:
    def __init__(
        self,
        cnf: Cnf,
        dset: DecompositionSet,
        workers: int = 2,
        batch: int = 64,
        budget: Budget = UNLIMITED,
        checkpoint: str | Path | None = None,
        faults: dict[int, str] | None = None,
        fault_log: str | None = None,
        heartbeat: float = 1.0,
        heartbeat_timeout: float = 60.0,
        max_retries: int = 3,
        stop_after: int | None = None,
        time_limit: float | None = None,
    ):
        if workers < 1:
            raise ValueError("need at least one worker")
        dset.check_range(cnf.num_vars)
        self.cnf = cnf
        self.dset = dset
        self.n_workers = workers
        self.batch = batch
        self.digest = cnf.digest()
        self.units = generate_work(self.digest, dset, batch, budget)
        self.units_total = num_units(len(dset), batch)
        header = {
            "type": "header",
            "version": JOURNAL_VERSION,
            "cnf": self.digest,
            "set": list(dset.variables),
            "batch": batch,
            "units": self.units_total,
            "budget": budget_to_dict(budget),
        }
        self.journal = Journal(checkpoint, header)
        self.faults = faults or {}
        self.fault_log = fault_log
        self.heartbeat = heartbeat
        self.heartbeat_timeout = heartbeat_timeout
        self.max_retries = max_retries
        self.stop_after = stop_after
        self.time_limit = time_limit
        self.entries: dict[int, LedgerEntry] = {}
        self.procs: dict[int, _Proc] = {}
        self.next_id = 0
        self.spawn_budget = 4 * workers + 8
        self.sel = selectors.DefaultSelector()
        self.exhausted = False
        self.result = GridResult(Outcome.INTERRUPTED, units_total=self.units_total)
        self._setup_frame = encode_frame(
            MsgType.SETUP, {"cnf": write_dimacs(cnf), "digest": self.digest, "set": list(dset.variables)}
        )

    # -- workers

    def _spawn(self, slot: int) -> None:
        if self.spawn_budget <= 0:
            return
        self.spawn_budget -= 1
        wid = self.next_id
        self.next_id += 1
        fault = self.faults.get(slot)
        cmd = [sys.executable, "-m", "satpart.grid.worker", "--id", str(wid), "--heartbeat", str(self.heartbeat)]
        if fault:
            cmd += ["--fault", fault]
            if self.fault_log:
                cmd += ["--fault-log", self.fault_log]
        popen = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        proc = _Proc(wid, popen, FrameDecoder(), fault, slot, last_seen=time.monotonic())
        self.procs[wid] = proc
        os.set_blocking(popen.stdout.fileno(), False)
        self.sel.register(popen.stdout, selectors.EVENT_READ, proc)
        self._send(proc, self._setup_frame)

    def _send(self, proc: _Proc, frame: bytes) -> None:
        try:
            proc.popen.stdin.write(frame)
            proc.popen.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            self._crash(proc)

    def _crash(self, proc: _Proc) -> None:
        if not proc.alive:
            return
        proc.alive = False
        self.result.crashes += 1
        try:
            self.sel.unregister(proc.popen.stdout)
        except (KeyError, ValueError):
            pass
        proc.popen.kill()
        proc.popen.wait()
        if proc.job is not None:
            uid, r = proc.job
            slot = self.entries[uid].replicas[r]
            if slot.state is ReplicaState.SENT and slot.worker == proc.id:
                slot.state = ReplicaState.UNSENT
            self.journal.write({"type": "crash", "worker": proc.id, "unit": uid, "replica": r})
            proc.job = None
        else:
            self.journal.write({"type": "crash", "worker": proc.id})
        if not self._finished():
            self._spawn(proc.slot)

    def _live(self) -> list[_Proc]:
        return [p for p in self.procs.values() if p.alive]

    # -- scheduling

    def _next_entry(self) -> LedgerEntry | None:
        for unit in self.units:
            if unit.id in self.journal.validated:
                continue
            entry = LedgerEntry(unit)
            self.entries[unit.id] = entry
            return entry
        self.exhausted = True
        return None

    def _eligible(self, proc: _Proc, entry: LedgerEntry, r: int, strict: bool) -> bool:
        other = entry.replicas[1 - r]
        if len(self._live()) == 1:
            return other.state is not ReplicaState.SENT or other.worker != proc.id
        if other.worker == proc.id and other.state in (ReplicaState.SENT, ReplicaState.DONE):
            return False
        if proc.id in entry.rejected:
            return False
        return proc.id not in entry.tried if strict else True

    def _pick(self, proc: _Proc) -> tuple[LedgerEntry, int] | None:
        open_entries = [e for e in self.entries.values() if e.open]
        for e in open_entries:
            for r, slot in enumerate(e.replicas):
                if slot.state in (ReplicaState.UNSENT, ReplicaState.INVALID) and self._eligible(proc, e, r, True):
                    return e, r
        if not self.exhausted:
            e = self._next_entry()
            if e is not None:
                return e, 0
        # nothing fresh left: let a worker that already saw a unit finish it,
        # provided no untried live worker could take it instead
        live_ids = {p.id for p in self._live()}
        for e in open_entries:
            if live_ids - e.tried - e.rejected:
                continue
            for r, slot in enumerate(e.replicas):
                if slot.state in (ReplicaState.UNSENT, ReplicaState.INVALID) and self._eligible(proc, e, r, False):
                    return e, r
        return None

    def _dispatch(self) -> None:
        for proc in sorted(self._live(), key=lambda p: p.id):
            if not proc.ready or proc.job is not None or self._finished():
                continue
            picked = self._pick(proc)
            if picked is None:
                continue
            entry, r = picked
            slot = entry.replicas[r]
            slot.state, slot.worker, slot.result, slot.sent_at = ReplicaState.SENT, proc.id, None, time.time()
            entry.tried.add(proc.id)
            proc.job = (entry.unit.id, r)
            self.result.dispatched += 1
            self.journal.write({"type": "dispatch", "unit": entry.unit.id, "replica": r, "worker": proc.id})
            self._send(proc, encode_frame(MsgType.ASSIGN, {"unit": entry.unit.to_dict(), "replica": r}))

    # -- results

    def _on_result(self, proc: _Proc, res: WorkResult) -> None:
        if proc.job != (res.unit_id, res.replica):
            return  # stale answer for a job this worker no longer holds
        proc.job = None
        entry = self.entries[res.unit_id]
        slot = entry.replicas[res.replica]
        rec = {"type": "result", "unit": res.unit_id, "replica": res.replica, "worker": proc.id,
               "status": res.status.value, "cube": res.cube, "conflicts": res.conflicts}
        if res.status is ResultStatus.CANCELLED:
            slot.state = ReplicaState.UNSENT
            self.journal.write(dict(rec, verdict="ignored"))
            return
        if not entry.open:
            self._audit_late(proc, entry, res, rec)
            return
        if res.status is ResultStatus.UNKNOWN:
            # handled like a crash, but with a larger budget next time
            slot.state = ReplicaState.UNSENT
            entry.retries += 1
            self.journal.write(dict(rec, verdict="retry", retries=entry.retries))
            if entry.retries > self.max_retries:
                entry.interrupted = True
                self.journal.write({"type": "interrupted", "unit": res.unit_id})
            else:
                entry.unit = replace(entry.unit, budget=entry.unit.budget.scaled(2))
            return
        slot.state, slot.result, slot.done_at = ReplicaState.DONE, res, time.time()
        r0, r1 = (s.result if s.state is ReplicaState.DONE else None for s in entry.replicas)
        val = validate_result(r0, r1, self.cnf, entry.unit)
        for r in val.invalid:
            bad = entry.replicas[r]
            bad.state = ReplicaState.INVALID
            entry.rejected.add(bad.worker)
            self.result.invalid.append((res.unit_id, r, bad.worker))
        verdict = "INVALID" if res.replica in val.invalid else "accepted"
        self.journal.write(dict(rec, verdict=verdict))
        for r in val.invalid:
            if r != res.replica:
                self.journal.write({"type": "invalidate", "unit": res.unit_id, "replica": r,
                                    "worker": entry.replicas[r].worker})
        if val.verdict is Verdict.SAT:
            entry.outcome = Verdict.SAT
            self.journal.write({"type": "validated", "unit": res.unit_id, "outcome": "SAT", "cube": val.cube,
                                "model": "".join(map(str, val.model))})
            self.result.validated_now += 1
            self.result.outcome, self.result.cube, self.result.model = Outcome.SAT, val.cube, val.model
            self._cancel_all()
        elif val.verdict is Verdict.UNSAT:
            entry.outcome = Verdict.UNSAT
            self.result.validated_now += 1
            self.journal.write({"type": "validated", "unit": res.unit_id, "outcome": "UNSAT"})

    def _audit_late(self, proc: _Proc, entry: LedgerEntry, res: WorkResult, rec: dict) -> None:
        """Check an answer for an already decided unit; it cannot change the outcome."""
        bogus = res.status is ResultStatus.SAT and not sat_claim_holds(res, self.cnf, entry.unit)
        contradicts = entry.outcome is Verdict.SAT and res.status is ResultStatus.UNSAT_ALL
        if bogus or contradicts:
            entry.replicas[res.replica].state = ReplicaState.INVALID
            entry.rejected.add(proc.id)
            self.result.invalid.append((res.unit_id, res.replica, proc.id))
            self.journal.write(dict(rec, verdict="INVALID", late=True))
        else:
            self.journal.write(dict(rec, verdict="late"))

    def _drain(self, seconds: float) -> None:
        """Collect the answers of busy workers after a cancel, for auditing."""
        deadline = time.monotonic() + seconds
        while any(p.job is not None for p in self._live()) and time.monotonic() < deadline:
            self._pump(0.1)

    def _cancel_all(self) -> None:
        frame = encode_frame(MsgType.CANCEL, {})
        busy = [p for p in self._live() if p.job is not None]
        self.journal.write({"type": "cancel", "workers": [p.id for p in busy]})
        for p in busy:
            self._send(p, frame)

    def _finished(self) -> bool:
        if self.result.outcome is Outcome.SAT:
            return True
        if self.stop_after is not None and self.result.validated_now >= self.stop_after:
            return True
        return self.exhausted and not any(e.open for e in self.entries.values())

    # -- loop

    def _pump(self, timeout: float) -> None:
        for key, _ in self.sel.select(timeout):
            proc: _Proc = key.data
            try:
                data = os.read(proc.popen.stdout.fileno(), 1 << 20)
            except BlockingIOError:
                continue
            except OSError:
                data = b""
            if not data:
                self._crash(proc)
                continue
            proc.last_seen = time.monotonic()
            try:
                frames = proc.decoder.feed(data)
            except ProtocolError:
                self._crash(proc)
                continue
            for kind, payload in frames:
                if kind is MsgType.READY:
                    proc.ready = payload.get("digest") == self.digest
                    if not proc.ready:
                        self._crash(proc)
                elif kind is MsgType.RESULT:
                    self._on_result(proc, WorkResult.from_dict(payload))
        now = time.monotonic()
        for proc in self._live():
            if proc.popen.poll() is not None or now - proc.last_seen > self.heartbeat_timeout:
                self._crash(proc)

    def run(self) -> GridResult:
        t0 = time.monotonic()
        res = self.result
        try:
            sat = next((r for r in self.journal.validated.values() if r["outcome"] == "SAT"), None)
            if sat is not None:
                res.outcome, res.cube = Outcome.SAT, sat["cube"]
                res.model = [int(c) for c in sat["model"]]
                res.reason = "resumed"
                return res
            for i in range(self.n_workers):
                self._spawn(i)
            while not self._finished():
                if not self._live():
                    res.reason = "no workers left"
                    break
                if self.time_limit is not None and time.monotonic() - t0 > self.time_limit:
                    res.reason = "time limit"
                    break
                self._dispatch()
                self._pump(0.2)
            if res.outcome is Outcome.SAT:
                res.reason = "validated SAT"
                self._drain(5.0)
            elif self.stop_after is not None and res.validated_now >= self.stop_after:
                res.reason = "stopped"
            elif self.exhausted and not any(e.open for e in self.entries.values()):
                if any(e.interrupted for e in self.entries.values()):
                    res.reason = "unit retries exhausted"
                else:
                    res.outcome, res.reason = Outcome.UNSAT, "all units UNSAT"
            if res.reason != "stopped":
                self.journal.write({"type": "final", "outcome": res.outcome.value, "reason": res.reason})
            return res
        finally:
            res.validated = len(self.journal.validated)
            res.elapsed = time.monotonic() - t0
            self._shutdown()
            self.journal.close()

    def _shutdown(self) -> None:
        frame = encode_frame(MsgType.SHUTDOWN, {})
        for p in self._live():
            try:
                p.popen.stdin.write(frame)
                p.popen.stdin.close()
            except (BrokenPipeError, OSError, ValueError):
                pass
        deadline = time.monotonic() + 3.0
        for p in self.procs.values():
            try:
                p.popen.wait(max(0.0, deadline - time.monotonic()))
            except subprocess.TimeoutExpired:
                p.popen.kill()
                p.popen.wait()
            for fh in (p.popen.stdin, p.popen.stdout):
                try:
                    fh.close()
                except (OSError, ValueError):
                    pass
        self.sel.close()


def run_grid(
    cnf: Cnf,
    dset: DecompositionSet,
    workers: int = 2,
    batch: int = 64,
    budget: Budget = UNLIMITED,
    checkpoint: str | Path | None = None,
    **options,
) -> GridResult:
    return Coordinator(cnf, dset, workers, batch, budget, checkpoint, **options).run()
