"""``foray`` command line.

Exit codes: 0 success, 1 validation failed, 2 synthesis exhausted,
64 usage error or missing file, 65 bad input data, 69 solver unavailable,
70 internal error. Failures print one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_EXHAUSTED = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_UNAVAILABLE = 69
EXIT_INTERNAL = 70


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _diag("UsageError", message)
        raise SystemExit(EXIT_USAGE)


def _diag(kind: str, message: str, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}, ensure_ascii=False), file=sys.stderr)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {v}")
    return v


@dataclass
class RunConfig:
    command: str
    protocol: Path | None = None
    state: Path | None = None
    goal: Path | None = None
    auto_goals: bool = True
    program: Path | None = None
    fmt: str = "json"
    inline_depth: int = 3
    max_depth: int = 5
    max_sketches: int = 64
    models_per_sketch: int = 16
    probe_timeout_ms: int = 10_000
    solve_timeout_ms: int = 60_000
    solver_cmd: str | None = None
    solver_mode: str = "live"
    transcripts: Path | None = None
    timing: bool = True
    trace: bool = False
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        transcripts = ns.transcripts or os.environ.get("FORAY_TRANSCRIPTS") or None
        mode = ns.solver_mode or os.environ.get("FORAY_SOLVER_MODE") or ("auto" if transcripts else "live")
        cfg = cls(
            command=ns.command,
            protocol=Path(ns.protocol) if getattr(ns, "protocol", None) else None,
            state=Path(ns.state) if getattr(ns, "state", None) else None,
            goal=Path(ns.goal) if getattr(ns, "goal", None) else None,
            auto_goals=not getattr(ns, "goal", None),
            program=Path(ns.program) if getattr(ns, "program", None) else None,
            fmt=getattr(ns, "format", None) or ("dot" if ns.command == "graph" else "json"),
            inline_depth=ns.inline_depth,
            max_depth=getattr(ns, "max_depth", 5),
            max_sketches=getattr(ns, "max_sketches", 64),
            models_per_sketch=getattr(ns, "models_per_sketch", 16),
            probe_timeout_ms=getattr(ns, "probe_timeout_ms", 10_000),
            solve_timeout_ms=getattr(ns, "solve_timeout_ms", 60_000),
            solver_cmd=ns.solver_cmd,
            solver_mode=mode,
            transcripts=Path(transcripts) if transcripts else None,
            timing=not getattr(ns, "no_timing", False),
            trace=getattr(ns, "trace", False),
        )
        uses_solver = cfg.command in ("sketch", "synth")
        if uses_solver and cfg.solver_mode in ("record", "replay") and cfg.transcripts is None:
            raise UsageError(f"solver mode {cfg.solver_mode!r} needs --transcripts")
        for name in ("protocol", "state", "goal", "program"):
            path = getattr(cfg, name)
            if path is not None and not path.is_file():
                raise FileNotFoundError(str(path))
        return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="foray", description="Synthesize attacks on DeFi protocol models.")
    ap.add_argument("--version", action="version", version=f"foray {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, needs_state=True):
        p.add_argument("--protocol", required=True, help="protocol .ir file")
        if needs_state:
            p.add_argument("--state", required=True, help="chain state .state file")
        p.add_argument("--inline-depth", type=_nonneg, default=3, metavar="K",
                       help="nested call expansions allowed when inlining (default 3)")
        p.add_argument("--solver-cmd", default=None, help="solver command (default $FORAY_SOLVER_CMD or 'z3 -in -smt2')")
        p.add_argument("--solver-mode", choices=("live", "record", "replay", "auto"), default=None,
                       help="live: always run the solver; record: run and save transcripts; "
                            "replay: only use saved transcripts; auto: replay when available")
        p.add_argument("--transcripts", default=None, help="transcript directory (default $FORAY_TRANSCRIPTS)")

    def goals(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--goal", help="goal file")
        g.add_argument("--auto-goals", action="store_true", help="one profit goal per stablecoin (default)")

    def search(p):
        p.add_argument("--max-depth", type=_positive, default=5)
        p.add_argument("--max-sketches", type=_positive, default=64)
        p.add_argument("--probe-timeout-ms", type=_positive, default=10_000)

    g = sub.add_parser("graph", help="print the token flow graph")
    common(g, needs_state=False)
    g.add_argument("--format", choices=("dot", "json"), default="dot")

    s = sub.add_parser("sketch", help="list attack sketches with constraint counts")
    common(s)
    goals(s)
    search(s)
    s.add_argument("--format", choices=("json", "text"), default="json")
    s.add_argument("--trace", action="store_true", help="print the search trace on stderr")

    y = sub.add_parser("synth", help="synthesize an attack program")
    common(y)
    goals(y)
    search(y)
    y.add_argument("--models-per-sketch", type=_positive, default=16)
    y.add_argument("--solve-timeout-ms", type=_positive, default=60_000)
    y.add_argument("--format", choices=("json", "text"), default="json")
    y.add_argument("--no-timing", action="store_true", help="omit the timing block from the report")
    y.add_argument("--trace", action="store_true", help="print the search trace on stderr")

    v = sub.add_parser("validate", help="run a concrete attack program in the simulator")
    common(v)
    goals(v)
    v.add_argument("--program", required=True, help="AFL program file")
    v.add_argument("--format", choices=("json", "text"), default="json")
    return ap


def _read(path: Path) -> str:
    return path.read_text(encoding="utf-8")


def _load_goals(cfg: RunConfig, p):
    from .goal import generate_goals, parse_goal

    if cfg.goal is not None:
        text = " ".join(l.split("#", 1)[0] for l in _read(cfg.goal).splitlines()).strip()
        return [parse_goal(text, p)]
    return generate_goals(p)


def _session(cfg: RunConfig):
    from .solver import SolverSession

    return SolverSession(cfg.solver_cmd, mode=cfg.solver_mode, transcripts=cfg.transcripts)


def _emit(text: str):
    sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_graph(cfg: RunConfig) -> int:
    from .ir import inline_calls, parse_protocol
    from .tfg import build_tfg

    g = build_tfg(inline_calls(parse_protocol(_read(cfg.protocol)), cfg.inline_depth))
    _emit(g.to_dot() if cfg.fmt == "dot" else g.to_json())
    return EXIT_OK


def cmd_sketch(cfg: RunConfig) -> int:
    from .cnstgen import compile_sketch
    from .goal import render_goal
    from .ir import inline_calls, parse_protocol
    from .sim import load_state
    from .sketch import SketchBudget, SketchSearch
    from .tfg import build_tfg

    p = parse_protocol(_read(cfg.protocol))
    s0 = load_state(_read(cfg.state))
    g = build_tfg(inline_calls(p, cfg.inline_depth))
    budget = SketchBudget(cfg.max_depth, cfg.max_sketches, cfg.probe_timeout_ms)
    trace = (lambda line: print(line, file=sys.stderr)) if cfg.trace else None
    out = []
    with _session(cfg) as session:
        for goal in _load_goals(cfg, p):
            search = SketchSearch(g, s0, goal, session, budget, trace=trace)
            for i, sk in enumerate(search, start=1):
                n = len(compile_sketch(s0, sk, goal))
                entry = {"goal": render_goal(goal), "index": i, "path": list(sk.source_path),
                         "labels": [g.label(e) for e in sk.source_path],
                         "ops": sk.render().splitlines(), "constraints": n}
                out.append(entry)
                if cfg.fmt == "text":
                    _emit(f"# sketch {i}: {' '.join(entry['labels'])} ({n} constraints)\n" + sk.render())
    if cfg.fmt == "json":
        _emit(json.dumps({"sketches": out}, indent=2, ensure_ascii=False))
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    from .ir import parse_protocol
    from .sim import load_state
    from .synth import SynthConfig, synthesize

    p = parse_protocol(_read(cfg.protocol))
    s0 = load_state(_read(cfg.state))
    sc = SynthConfig(
        max_depth=cfg.max_depth,
        max_sketches=cfg.max_sketches,
        models_per_sketch=cfg.models_per_sketch,
        probe_timeout_ms=cfg.probe_timeout_ms,
        solve_timeout_ms=cfg.solve_timeout_ms,
        inline_depth=cfg.inline_depth,
    )
    trace = (lambda line: print(line, file=sys.stderr)) if cfg.trace else None
    with _session(cfg) as session:
        report = synthesize(p, s0, _load_goals(cfg, p), session=session, config=sc, trace=trace)
    if cfg.fmt == "json":
        _emit(report.to_json(timing=cfg.timing))
    else:
        if report.found:
            _emit(f"# attack for goal: {report.goal}\n" + report.program.render())
        else:
            _emit(f"# exhausted after {report.sketches_tried} sketches, {report.models_tried} models")
    return EXIT_OK if report.found else EXIT_EXHAUSTED


def cmd_validate(cfg: RunConfig) -> int:
    from .afl import parse_program
    from .goal import render_goal
    from .ir import parse_protocol
    from .sim import load_state, validate

    p = parse_protocol(_read(cfg.protocol))
    s0 = load_state(_read(cfg.state))
    prog = parse_program(_read(cfg.program))
    goals = _load_goals(cfg, p)
    if not goals:
        raise UsageError("no goal: pass --goal or declare a stablecoin")
    results = []
    passed = False
    for goal in goals:
        v = validate(prog, s0, goal)
        results.append({"goal": render_goal(goal), **v.to_dict()})
        passed = passed or v.passed
    if cfg.fmt == "json":
        _emit(json.dumps({"passed": passed, "results": results}, indent=2, ensure_ascii=False))
    else:
        for r in results:
            _emit(f"{r['verdict']}: {r['goal']}" + (f" ({r['reason']})" if r["reason"] else ""))
    return EXIT_OK if passed else EXIT_FAIL


COMMANDS = {"graph": cmd_graph, "sketch": cmd_sketch, "synth": cmd_synth, "validate": cmd_validate}


def run(cfg: RunConfig) -> int:
    return COMMANDS[cfg.command](cfg)


def _data_errors() -> tuple:
    from .afl import AflError
    from .cnstgen import MissingMarketModel
    from .goal import GoalSyntaxError
    from .ir import IRError
    from .sim import InvalidState
    from .tfg import AmbiguousLoanPattern

    return (IRError, InvalidState, GoalSyntaxError, AflError, AmbiguousLoanPattern, MissingMarketModel)


def main(argv=None) -> int:
    from .solver import SolverUnavailable, TranscriptMissing

    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = RunConfig.from_args(ns)
        return run(cfg)
    except FileNotFoundError as exc:
        path = str(exc.filename or (exc.args[0] if exc.args else ""))
        _diag("FileNotFound", f"no such file: {path}", path=path)
        return EXIT_USAGE
    except UsageError as exc:
        _diag("UsageError", str(exc))
        return EXIT_USAGE
    except (SolverUnavailable, TranscriptMissing) as exc:
        _diag(type(exc).__name__, str(exc))
        return EXIT_UNAVAILABLE
    except _data_errors() as exc:
        extra = {}
        for attr in ("line", "col", "stmt_id"):
            if getattr(exc, attr, None):
                extra[attr] = getattr(exc, attr)
        _diag(getattr(exc, "kind", type(exc).__name__), str(exc), **extra)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to an exit code
        _diag("InternalError", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
