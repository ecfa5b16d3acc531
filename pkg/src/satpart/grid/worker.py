"""Worker process: ``python -m satpart.grid.worker --id N``.

Speaks the frame protocol on stdin/stdout.  After SETUP it compiles one
solver and answers each ASSIGN with a RESULT, solving the unit's cubes in
index order; learned clauses are kept within a unit and dropped between
units, so a unit's result depends only on the unit.  A reader thread
watches for CANCEL and trips the solver's stop flag; a heartbeat thread
reports liveness every ``--heartbeat`` seconds.

``--fault`` turns the worker Byzantine for testing:

* ``corrupt-sat``: every answer is a SAT claim whose model is broken;
* ``flip-unsat``: a satisfiable cube is hidden and reported as UNSAT-all.

Each injected answer is appended to ``--fault-log`` (JSON lines).
"""

from __future__ import annotations

import argparse
import json
import os
import queue
import sys
import threading
import time

from ..cnf import Cube, parse_dimacs
from ..solver import Solver, Status
from .protocol import (
    MsgType,
    ProtocolError,
    ResultStatus,
    WorkResult,
    WorkUnit,
    encode_frame,
    read_frame,
)

FAULTS = ("corrupt-sat", "flip-unsat")


class Worker:
    def __init__(self, worker_id: int, out, fault: str | None = None, fault_log: str | None = None):
        self.id = worker_id
        self.out = out
        self.fault = fault
        self.fault_log = fault_log
        self.lock = threading.Lock()
        self.cancel = threading.Event()
        self.solver: Solver | None = None
        self.digest = None

    def send(self, kind: MsgType, payload: dict) -> None:
        frame = encode_frame(kind, payload)
        with self.lock:
            self.out.write(frame)
            self.out.flush()

    def setup(self, payload: dict) -> None:
        cnf = parse_dimacs(payload["cnf"])
        if cnf.digest() != payload["digest"]:
            raise ProtocolError("CNF digest mismatch after transfer")
        self.digest = payload["digest"]
        self.solver = Solver(cnf, incremental=True)
        self.solver.stop = self.cancel.is_set
        self.send(MsgType.READY, {"worker": self.id, "digest": self.digest})

    def run_unit(self, unit: WorkUnit, replica: int) -> WorkResult:
        if unit.cnf_ref != self.digest:
            raise ProtocolError("work unit refers to a different CNF")
        solver = self.solver
        solver.forget()
        t0 = time.perf_counter()
        conflicts = 0

        def result(status, **kw):
            return WorkResult(
                unit.id, replica, self.id, status, conflicts=conflicts, elapsed=time.perf_counter() - t0, **kw
            )

        for idx in range(unit.start, unit.stop):
            out = solver.solve(Cube.from_index(unit.variables, idx), unit.budget)
            conflicts += out.stats.conflicts
            if out.status is Status.SAT:
                model = "".join(map(str, out.model))
                return result(ResultStatus.SAT, cube=idx, model=model)
            if out.status is Status.UNKNOWN:
                if self.cancel.is_set():
                    return result(ResultStatus.CANCELLED, resume=idx)
                return result(ResultStatus.UNKNOWN, resume=idx)
        return result(ResultStatus.UNSAT_ALL)

    def inject(self, unit: WorkUnit, honest: WorkResult) -> WorkResult:
        if self.fault == "corrupt-sat" and honest.status in (ResultStatus.SAT, ResultStatus.UNSAT_ALL):
            n = self.solver.num_vars
            if honest.status is ResultStatus.SAT:
                bits = list(honest.model)
                cube, flip = honest.cube, n - 1  # last auxiliary variable
            else:
                bits = ["0"] * n
                cube, flip = unit.start, None
                for v, b in zip(unit.variables, Cube.from_index(unit.variables, unit.start).values):
                    bits[v - 1] = str(b)
            if flip is not None:
                bits[flip] = "1" if bits[flip] == "0" else "0"
            forged = WorkResult(
                unit.id, honest.replica, self.id, ResultStatus.SAT, cube=cube, model="".join(bits),
                conflicts=honest.conflicts, elapsed=honest.elapsed,
            )
        elif self.fault == "flip-unsat" and honest.status is ResultStatus.SAT:
            forged = WorkResult(
                unit.id, honest.replica, self.id, ResultStatus.UNSAT_ALL,
                conflicts=honest.conflicts, elapsed=honest.elapsed,
            )
        else:
            return honest
        if self.fault_log:
            with open(self.fault_log, "a") as fh:
                fh.write(json.dumps({"unit": unit.id, "replica": honest.replica, "worker": self.id,
                                     "fault": self.fault, "status": forged.status.value}) + "\n")
        return forged


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="satpart.grid.worker")
    ap.add_argument("--id", type=int, required=True)
    ap.add_argument("--heartbeat", type=float, default=1.0)
    ap.add_argument("--fault", choices=FAULTS)
    ap.add_argument("--fault-log")
    args = ap.parse_args(argv)

    inp, out = sys.stdin.buffer, sys.stdout.buffer
    worker = Worker(args.id, out, args.fault, args.fault_log)
    inbox: queue.Queue = queue.Queue()
    done = threading.Event()

    def reader():
        try:
            while True:
                frame = read_frame(inp)
                if frame is None:
                    break
                kind, payload = frame
                if kind is MsgType.CANCEL:
                    worker.cancel.set()
                else:
                    inbox.put(frame)
        except (ProtocolError, OSError):
            pass
        inbox.put(None)

    def heartbeat():
        while not done.wait(args.heartbeat):
            try:
                worker.send(MsgType.HEARTBEAT, {"worker": args.id, "t": time.time()})
            except OSError:
                return

    threading.Thread(target=reader, daemon=True).start()
    threading.Thread(target=heartbeat, daemon=True).start()
    try:
        while True:
            frame = inbox.get()
            if frame is None:
                return 0
            kind, payload = frame
            if kind is MsgType.SETUP:
                worker.setup(payload)
            elif kind is MsgType.ASSIGN:
                worker.cancel.clear()
                unit = WorkUnit.from_dict(payload["unit"])
                honest = worker.run_unit(unit, payload["replica"])
                res = worker.inject(unit, honest) if worker.fault else honest
                worker.send(MsgType.RESULT, res.to_dict())
            elif kind is MsgType.SHUTDOWN:
                return 0
    except BrokenPipeError:
        return 0
    finally:
        done.set()


if __name__ == "__main__":
    code = main()
    sys.stdout.flush()
    # the reader thread may still be blocked on stdin; a normal interpreter
    # shutdown would then abort while taking the stdin buffer lock
    os._exit(code)
