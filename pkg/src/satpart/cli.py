"""Command-line entry point: ``satpart <subcommand> ...``.

Exit codes: 10 satisfiable, 20 unsatisfiable, 0 informational (including
UNKNOWN / INTERRUPTED), 1 errors; ``keystream-compare`` returns 1 when the
keystreams differ.  Every output starts with ``c ``-prefixed provenance
lines: package version, a digest of the effective configuration, and the
configuration itself as ``key=value`` pairs.

``--config FILE`` reads flat ``key=value`` lines (``#`` comments allowed);
keys are option names with dashes or underscores; flags given on the
command line win.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .a51 import (
    PRESETS,
    GeneratorSpec,
    a51_spec,
    bits_from_str,
    bits_to_str,
    build_circuit,
    key_from_hex,
    key_to_hex,
    keystream,
    toy_spec,
)
from .circuit import fix_outputs, tseitin_encode
from .cnf import Cnf, Cube, DimacsError, parse_dimacs, write_dimacs
from .collide import find_collisions
from .optimizer import (
    PredictiveFunction,
    SaSchedule,
    SearchLog,
    SearchPoint,
    minimize_sa,
    minimize_ts,
)
from .partition import DecompositionSet, Evaluator, Unit
from .solver import Budget, Solver, Status

EXIT_SAT, EXIT_UNSAT, EXIT_INFO, EXIT_ERROR = 10, 20, 0, 1

CONVENTION = "key hex MSB = register 1 cell 1; registers R1|R2|R3; shift then output"


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _spec(args) -> GeneratorSpec:
    if args.preset == "a51":
        spec = a51_spec()
    else:
        kw = {}
        if args.lengths:
            kw["lengths"] = _int_list(args.lengths)
        if args.feedback:
            kw["feedback"] = [_int_list(g) for g in args.feedback.split(";")]
        if args.clock:
            kw["clock"] = _int_list(args.clock)
        if args.output_taps:
            kw["output"] = _int_list(args.output_taps)
        spec = toy_spec(**kw)
    if args.keystream_len:
        spec = spec.with_keystream_len(args.keystream_len)
    return spec


def _budget(args) -> Budget:
    return Budget(args.max_conflicts, args.max_seconds)


def _read_cnf(path: str) -> Cnf:
    data = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
    return parse_dimacs(data)


def _input_vars(cnf: Cnf, override: str | None) -> list[int]:
    if override:
        return _int_list(override)
    for c in cnf.comments:
        if c.startswith("inputs:"):
            return _int_list(c[len("inputs:") :])
    raise UsageError("CNF has no 'inputs:' comment; pass --candidates")


def _dset(args, cnf: Cnf) -> DecompositionSet:
    if args.set:
        return DecompositionSet.of(_int_list(args.set))
    if args.mask:
        cands = _input_vars(cnf, args.candidates)
        return SearchPoint.from_hex(args.mask, len(cands)).selected(cands)
    raise UsageError("give the decomposition set with --set or --mask")


def _read_bits(text: str) -> list[int]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("c")]
    return bits_from_str("".join(lines))


# -- configuration ------------------------------------------------------------------

_IGNORED = {"func", "config", "command"}


def _config_items(args) -> list[tuple[str, str]]:
    return sorted((k, str(v)) for k, v in vars(args).items() if k not in _IGNORED and v is not None)


def provenance(args) -> str:
    items = _config_items(args)
    text = "\n".join(f"{k}={v}" for k, v in items)
    digest = hashlib.sha256(f"{args.command}\n{text}".encode()).hexdigest()[:16]
    lines = [f"c satpart {__version__} {args.command}", f"c config-digest {digest}"]
    lines += [f"c config {k}={v}" for k, v in items]
    return "\n".join(lines) + "\n"


def _load_config(path: str) -> dict[str, str]:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        values[k.strip().replace("-", "_")] = v.strip()
    return values


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        act = actions.get(k)
        if act is None:
            raise UsageError(f"unknown config key {k!r}")
        if act.nargs == 0:  # store_true
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = act.type(v) if act.type else v
    sub.set_defaults(**defaults)


# -- subcommands ----------------------------------------------------------------------


def cmd_encode(args, out) -> int:
    spec = _spec(args)
    enc = tseitin_encode(build_circuit(spec), comments=[f"generator {args.preset} key_length {spec.key_length} "
                                                         f"keystream_len {spec.keystream_len}",
                                                         f"convention {CONVENTION}"])
    cnf = enc.cnf
    if args.key and not args.keystream:
        beta = keystream(spec, key_from_hex(args.key, spec.key_length))
    elif args.keystream:
        beta = bits_from_str(args.keystream)
    else:
        beta = None
    if beta is not None:
        cnf = fix_outputs(enc, beta)
    prov = provenance(args).splitlines()
    cnf = Cnf(cnf.num_vars, cnf.clauses, tuple(ln[2:] for ln in prov) + cnf.comments)
    text = write_dimacs(cnf)
    if args.output:
        Path(args.output).write_text(text)
        out.write(provenance(args))
        out.write(f"c wrote {args.output} vars={cnf.num_vars} clauses={cnf.num_clauses}\n")
    else:
        out.write(text)
    return EXIT_INFO


def cmd_keystream(args, out) -> int:
    spec = _spec(args)
    out.write(provenance(args))
    out.write(bits_to_str(keystream(spec, key_from_hex(args.key, spec.key_length))) + "\n")
    return EXIT_INFO


def cmd_keystream_compare(args, out) -> int:
    spec = _spec(args)
    mine = keystream(spec, key_from_hex(args.key, spec.key_length))
    text = Path(args.input).read_text() if args.input and args.input != "-" else sys.stdin.read()
    other = _read_bits(text)
    out.write(provenance(args))
    same = other == mine
    out.write("equal\n" if same else f"different (first mismatch at bit {_first_diff(mine, other)})\n")
    return EXIT_INFO if same else EXIT_ERROR


def _first_diff(a: Sequence[int], b: Sequence[int]) -> int:
    for i, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return i + 1
    return min(len(a), len(b)) + 1


def cmd_solve(args, out) -> int:
    cnf = _read_cnf(args.cnf)
    cube: Cube | list[int] = []
    if args.cube:
        cube = _int_list(args.cube)
    elif args.set or args.mask:
        if args.cube_index is None:
            raise UsageError("--cube-index is required with --set/--mask")
        cube = _dset(args, cnf).cube(args.cube_index)
    res = Solver(cnf).solve(cube, _budget(args), args.seed)
    out.write(provenance(args))
    for line in res.stats.to_text().splitlines():
        if args.deterministic and line.startswith("elapsed="):
            continue
        out.write(f"c {line}\n")
    if res.status is Status.SAT:
        out.write("s SATISFIABLE\n")
        lits = [v if b else -v for v, b in enumerate(res.model, start=1)]
        for i in range(0, len(lits), 20):
            out.write("v " + " ".join(map(str, lits[i : i + 20])) + "\n")
        out.write("v 0\n")
        return EXIT_SAT
    if res.status is Status.UNSAT:
        out.write("s UNSATISFIABLE\n")
        return EXIT_UNSAT
    out.write("s UNKNOWN\n")
    return EXIT_INFO


def cmd_estimate(args, out) -> int:
    cnf = _read_cnf(args.cnf)
    dset = _dset(args, cnf)
    with Evaluator(cnf, args.workers, _budget(args), Unit(args.unit), args.solve_seed) as ev:
        est = ev.enumerate_exact(dset) if args.exact else ev.estimate(dset, args.n, args.seed)
    out.write(provenance(args))
    if not est.unit.deterministic:
        out.write("c wall-time unit: values are not reproducible\n")
    out.write(est.report())
    if args.record:
        out.write("record " + est.record() + "\n")
    return EXIT_INFO


def cmd_optimize(args, out) -> int:
    cnf = _read_cnf(args.cnf)
    cands = _input_vars(cnf, args.candidates)
    start = SearchPoint.from_hex(args.start, len(cands)) if args.start else SearchPoint.full(len(cands))
    log = SearchLog(args.log)
    with Evaluator(cnf, args.workers, _budget(args), Unit(args.unit), args.solve_seed, cands) as ev:
        f = PredictiveFunction(ev, cands, args.n, args.seed)
        if args.method == "sa":
            sched = None
            if args.t0 is not None:
                sched = SaSchedule(args.t0, args.q, args.t_inf)
            res = minimize_sa(f, start, sched, args.time_limit, args.seed, args.max_evals, log)
        else:
            res = minimize_ts(f, start, cands, args.time_limit, args.seed, args.radius, args.max_evals, log)
    out.write(provenance(args))
    out.write(f"best_mask {res.point.hex}\n")
    out.write(f"best_set {' '.join(map(str, res.point.selected(cands).variables))}\n")
    out.write(f"best_F {res.estimate.value!r}\n")
    out.write(f"evaluations {res.evaluations}\n")
    out.write(f"stopped_by {res.reason}\n")
    return EXIT_INFO


def _faults(spec: str | None) -> dict[int, str]:
    faults = {}
    for item in (spec or "").split(","):
        if item.strip():
            k, v = item.split("=", 1)
            faults[int(k)] = v.strip()
    return faults


def cmd_grid_run(args, out) -> int:
    from .grid import Outcome, run_grid

    cnf = _read_cnf(args.cnf)
    dset = _dset(args, cnf)
    res = run_grid(
        cnf, dset, workers=args.workers, batch=args.batch, budget=_budget(args), checkpoint=args.checkpoint,
        faults=_faults(args.fault), fault_log=args.fault_log, time_limit=args.time_limit,
    )
    out.write(provenance(args))
    out.write(f"outcome {res.outcome.value}\n")
    out.write(f"reason {res.reason}\n")
    out.write(f"units {res.units_total} validated {res.validated} dispatched {res.dispatched}\n")
    out.write(f"invalid_results {len(res.invalid)}\n")
    if res.outcome is Outcome.SAT:
        out.write(f"cube {res.cube}\n")
        try:
            inputs = _input_vars(cnf, args.candidates)
        except UsageError:
            inputs = []
        if inputs:
            out.write(f"key {key_to_hex([res.model[v - 1] for v in inputs])}\n")
        return EXIT_SAT
    if res.outcome is Outcome.UNSAT:
        return EXIT_UNSAT
    return EXIT_INFO


def cmd_collide(args, out) -> int:
    spec = _spec(args)
    if args.keystream:
        beta = bits_from_str(args.keystream)
    elif args.key:
        beta = keystream(spec, key_from_hex(args.key, spec.key_length))
    else:
        raise UsageError("give --keystream or --key")
    fixed = {}
    if args.fix_suffix:
        if not args.key:
            raise UsageError("--fix-suffix needs --key")
        key = key_from_hex(args.key, spec.key_length)
        n = spec.key_length
        fixed = {p: key[p - 1] for p in range(n - args.fix_suffix + 1, n + 1)}
    rep = find_collisions(spec, beta, args.limit, _budget(args), fixed, args.seed)
    out.write(provenance(args))
    out.write(rep.to_text())
    return EXIT_INFO


# -- parser --------------------------------------------------------------------------


def _add_generator(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generator")
    g.add_argument("--preset", choices=sorted(PRESETS), default="a51")
    g.add_argument("--lengths", help="toy register lengths, e.g. 5,6,7")
    g.add_argument("--feedback", help="toy feedback taps per register, e.g. '5,3;6,5;7,6,5,2'")
    g.add_argument("--clock", help="toy clocking taps, e.g. 3,3,4")
    g.add_argument("--output-taps", help="toy output taps (default: last cells)")
    g.add_argument("--keystream-len", type=int, help="override the number of keystream bits")


def _add_budget(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-conflicts", type=int)
    p.add_argument("--max-seconds", type=float)


def _add_set(p: argparse.ArgumentParser) -> None:
    p.add_argument("--set", help="decomposition variables, e.g. 1,2,3")
    p.add_argument("--mask", help="hex mask over the candidate variables (first candidate = MSB)")
    p.add_argument("--candidates", help="candidate variables for --mask (default: the CNF's inputs)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    ap = argparse.ArgumentParser(prog="satpart", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"satpart {__version__}")
    sp = ap.add_subparsers(dest="command", required=True)
    subs = {}

    def sub(name, func, help):
        p = sp.add_parser(name, help=help)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = sub("encode", cmd_encode, "generator inversion problem as DIMACS")
    _add_generator(p)
    p.add_argument("--keystream", help="0/1 string to fix the outputs to")
    p.add_argument("--key", help="hex key; its keystream is fixed when --keystream is absent")
    p.add_argument("-o", "--output")

    p = sub("keystream", cmd_keystream, "keystream of a hex key")
    _add_generator(p)
    p.add_argument("--key", required=True)

    p = sub("keystream-compare", cmd_keystream_compare, "compare a keystream (stdin) with a key's keystream")
    _add_generator(p)
    p.add_argument("--key", required=True)
    p.add_argument("--input", help="file holding the keystream (default: stdin)")

    p = sub("solve", cmd_solve, "solve a DIMACS file, optionally under a cube")
    p.add_argument("cnf", help="DIMACS file or - for stdin")
    p.add_argument("--cube", help="assumption literals, e.g. '1 -2 3'")
    _add_set(p)
    p.add_argument("--cube-index", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="omit wall-clock statistics")
    _add_budget(p)

    p = sub("estimate", cmd_estimate, "predictive function of a decomposition set")
    p.add_argument("cnf")
    _add_set(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--unit", choices=[u.value for u in Unit], default="conflicts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solve-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--exact", action="store_true", help="enumerate every cube instead of sampling")
    p.add_argument("--record", action="store_true", help="append the single-line machine record")
    _add_budget(p)

    p = sub("optimize", cmd_optimize, "search a decomposition set with SA or tabu search")
    p.add_argument("cnf")
    p.add_argument("--method", choices=["sa", "ts"], default="ts")
    p.add_argument("--candidates")
    p.add_argument("--start", help="hex start mask (default: all candidates)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--unit", choices=[u.value for u in Unit], default="conflicts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solve-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--max-evals", type=int)
    p.add_argument("--radius", type=int, default=1, help="tabu search neighbourhood radius")
    p.add_argument("--t0", type=float, help="initial SA temperature (default F(start)/10)")
    p.add_argument("--q", type=float, default=0.98)
    p.add_argument("--t-inf", type=float)
    p.add_argument("--log", help="append-only optimisation log; reused on restart")
    _add_budget(p)

    p = sub("grid-run", cmd_grid_run, "process a partitioning on worker processes")
    p.add_argument("cnf")
    _add_set(p)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--checkpoint", help="journal file; an existing one is resumed")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--fault", help="testing: pool slot=mode pairs, e.g. 0=corrupt-sat,1=flip-unsat")
    p.add_argument("--fault-log")
    _add_budget(p)

    p = sub("collide", cmd_collide, "all keys producing a keystream")
    _add_generator(p)
    p.add_argument("--keystream")
    p.add_argument("--key", help="hex key whose keystream is attacked")
    p.add_argument("--fix-suffix", type=int, default=0, help="fix the last N key bits to those of --key")
    p.add_argument("--limit", type=int)
    p.add_argument("--seed", type=int, default=0)
    _add_budget(p)
    return ap, subs


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    ap, subs = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.config:
            _apply_config(subs[args.command], _load_config(args.config))
            args = ap.parse_args(argv)
        return args.func(args, out)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_INFO
    except (UsageError, DimacsError, ValueError, OSError) as exc:
        print(f"satpart: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
