"""Command-line front end: ``mcsim run | sweep | litmus | laws | version``.

Exit codes: 0 success, 1 input error, 2 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

from mcsim import __version__
from mcsim.config import config_to_dict, load_config
from mcsim.consistency import ENUMERATORS, format_outcomes, parse_litmus, verdicts
from mcsim.engine import run, run_experiment
from mcsim.errors import InputError, McsimError, SimulationError
from mcsim.kernels import BACKEND
from mcsim.metrics import amdahl, fmt, gustafson, law_table, parallel_metrics, report_json
from mcsim.trace import TraceEvent, load_trace

EXIT_OK, EXIT_INPUT, EXIT_SIM = 0, 1, 2


def _read_traces(paths, block_size):
    bundle = []
    for path in paths:
        try:
            bundle.append(load_trace(path, block_size))
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror}") from None
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from None
    return bundle


def _load_config(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def _write_outputs(out_dir, files: dict):
    """Write every file at once, after all computation succeeded."""
    os.makedirs(out_dir, exist_ok=True)
    for name, text in files.items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _lines(items) -> str:
    return "".join(line + "\n" for line in items)


# --- run ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    bundle = _read_traces(args.trace, cfg.block_size)
    results = [run_experiment(cfg, bundle, args.seed) for _ in range(args.repeat)]
    first = results[0]
    csv_text = first.report.to_csv()
    if any(r.report.to_csv() != csv_text or r.shared.to_json() != first.shared.to_json() for r in results[1:]):
        raise SimulationError("repeated runs disagree; the simulation is not deterministic")
    summary = {
        "version": __version__,
        "seed": args.seed,
        "repeat": args.repeat,
        "traces": list(args.trace),
        "config": config_to_dict(cfg),
        "shared_run": first.shared.to_dict(),
        "alone_runs": [a.to_dict() for a in first.alone],
    }
    files = {
        "metrics.csv": csv_text,
        "summary.json": report_json(first.report, **summary),
    }
    shared = first.shared
    if args.dump_messages:
        files["messages.log"] = _lines(shared.messages)
    if args.dump_commands:
        files["commands.log"] = _lines(shared.commands)
    if args.dump_events:
        files["events.log"] = _lines(shared.events)
    _write_outputs(args.out, files)
    return EXIT_OK


# --- sweep -------------------------------------------------------------------------

def split_work(events, n: int) -> list:
    """Deal a single-threaded event stream into ``n`` contiguous per-thread chunks."""
    k = len(events)
    out = []
    for t in range(n):
        lo, hi = t * k // n, (t + 1) * k // n
        out.extend(TraceEvent(t, e.kind, e.address, e.size_bytes, e.value, e.cycles) for e in events[lo:hi])
    return out


def _sweep_trace(path, n, block_size):
    if "{n}" in path:
        return _read_traces([path.replace("{n}", str(n))], block_size)[0]
    return split_work(_read_traces([path], block_size)[0], n)


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    if len(args.trace) != 1:
        raise InputError("sweep takes exactly one --trace")
    if not (0.0 <= args.f <= 1.0):
        raise InputError(f"--f must lie in [0, 1], got {args.f}")
    ns = sorted(set(args.n))
    if not ns or ns[0] < 1:
        raise InputError("--n values must be >= 1")
    path = args.trace[0]
    t_seq = run(cfg, _sweep_trace(path, 1, cfg.block_size), args.seed).cycles
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "time", "speedup", "efficiency", "amdahl", "gustafson"])
    for n in ns:
        t_par = t_seq if n == 1 else run(cfg, _sweep_trace(path, n, cfg.block_size), args.seed).cycles
        if t_seq and t_par:
            speedup, eff = parallel_metrics(t_seq, t_par, n)
        else:
            speedup = eff = 1.0
        w.writerow([n, t_par, fmt(speedup), fmt(eff), fmt(amdahl(args.f, n)), fmt(gustafson(args.f, n))])
    _write_outputs(args.out, {"sweep.csv": buf.getvalue()})
    return EXIT_OK


# --- litmus ------------------------------------------------------------------------

def litmus_report(text: str, model: str) -> str:
    prog = parse_litmus(text)
    models = list(ENUMERATORS) if model == "all" else [model]
    sets = {m: ENUMERATORS[m](prog) for m in models}
    lines = []
    for m in models:
        label = "weak" if m == "weak" else m.upper()
        lines.append(f"# {label}: {len(sets[m])} outcomes")
        lines.extend(format_outcomes(sets[m]))
    if model == "all":
        lines.append("# verdicts")
        lines.extend(verdicts(sets))
    return _lines(lines)


def cmd_litmus(args) -> int:
    if not args.litmus:
        raise InputError("litmus needs a program file")
    try:
        with open(args.litmus, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"{args.litmus}: {exc.strerror}") from None
    try:
        out = litmus_report(text, args.model)
    except InputError as exc:
        raise InputError(f"{args.litmus}: {exc}") from None
    _emit(args, "litmus.txt", out)
    return EXIT_OK


# --- laws --------------------------------------------------------------------------

def laws_csv(f: float, n_max: int, law: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "speedup"])
    for n, s in law_table(f, n_max, law):
        w.writerow([n, fmt(s)])
    return buf.getvalue()


def cmd_laws(args) -> int:
    if not (0.0 <= args.f <= 1.0):
        raise InputError(f"--f must lie in [0, 1], got {args.f}")
    if args.nmax < 1:
        raise InputError(f"--nmax must be >= 1, got {args.nmax}")
    _emit(args, "laws.csv", laws_csv(args.f, args.nmax, args.law))
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"mcsim {__version__} (kernels: {BACKEND})")
    return EXIT_OK


def _emit(args, name, text):
    if args.out:
        _write_outputs(args.out, {name: text})
    else:
        sys.stdout.write(text)


# --- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mcsim", description="Trace-driven multicore memory-hierarchy simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one or more applications alone and shared")
    r.add_argument("--config", required=True)
    r.add_argument("--trace", action="append", required=True, help="trace file; repeat for more apps")
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--repeat", type=int, default=1)
    r.add_argument("--dump-messages", action="store_true")
    r.add_argument("--dump-commands", action="store_true")
    r.add_argument("--dump-events", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="simulate one app over thread counts next to the analytic laws")
    s.add_argument("--config", required=True)
    s.add_argument("--trace", action="append", required=True,
                   help="single-threaded trace split across n threads, or a path containing {n}")
    s.add_argument("--n", type=int, nargs="+", required=True)
    s.add_argument("--f", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sweep)

    li = sub.add_parser("litmus", help="enumerate litmus outcomes")
    li.add_argument("litmus", nargs="?")
    li.add_argument("--model", choices=["sc", "tso", "weak", "all"], default="all")
    li.add_argument("--out")
    li.set_defaults(func=cmd_litmus)

    la = sub.add_parser("laws", help="tabulate Amdahl or Gustafson speedups")
    la.add_argument("--f", type=float, required=True)
    la.add_argument("--nmax", type=int, required=True)
    la.add_argument("--law", choices=["amdahl", "gustafson"], default="amdahl")
    la.add_argument("--out")
    la.set_defaults(func=cmd_laws)

    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    if getattr(args, "repeat", 1) < 1:
        print("mcsim: error: --repeat must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"mcsim: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SimulationError, McsimError) as exc:
        print(f"mcsim: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except Exception as exc:  # internal contract violation
        print(f"mcsim: simulation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
