"""SMT-LIB2 solver client over child-process pipes.

A :class:`SolverSession` keeps one solver process alive and issues
``(reset)`` between queries. Every query is a complete script, so the
script text fully determines the reply; replies are cached in memory by
content hash and, optionally, persisted as transcript pairs
(``<hash>.smt2`` + ``<hash>.reply``) so test runs can replay them without
a solver binary.

Modes:

``live``    always ask the solver
``record``  ask the solver and write transcripts
``replay``  read transcripts only; a missing transcript is an error
``auto``    replay when a transcript exists, otherwise ask the solver
"""
from __future__ import annotations

import hashlib
import logging
import os
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .logic import ConstraintSet, NamedAtom, Var, eq, gt, lt, not_, or_

log = logging.getLogger(__name__)

DEFAULT_CMD = "z3 -in -smt2"
DEFAULT_LOGIC = "QF_NRA"
MODES = ("live", "record", "replay", "auto")
_MARK = "@@foray-done"
DECIMAL_DIGITS = 40


class SolverError(Exception):
    pass


class SolverUnavailable(SolverError):
    pass


class ProtocolError(SolverError):
    def __init__(self, message: str, transcript: str = ""):
        super().__init__(message)
        self.transcript = transcript


class TranscriptMissing(SolverError):
    def __init__(self, key: str, query: str):
        super().__init__(f"no transcript for query {key}")
        self.key = key
        self.query = query


@dataclass(frozen=True)
class Model:
    values: Mapping[str, Fraction]

    def __getitem__(self, name: str) -> Fraction:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def restrict(self, names) -> "Model":
        keep = set(names)
        return Model({k: v for k, v in self.values.items() if k in keep})


@dataclass(frozen=True)
class Sat:
    model: Model


@dataclass(frozen=True)
class Unsat:
    core: frozenset


@dataclass(frozen=True)
class Unknown:
    reason: str = "unknown"


@dataclass
class SolverStats:
    queries: int = 0
    sat: int = 0
    unsat: int = 0
    unknown: int = 0
    cache_hits: int = 0
    replayed: int = 0
    wall_time: float = 0.0

    def as_dict(self) -> dict:
        """Counts that do not depend on where answers came from (live, cache or transcript)."""
        return {
            "queries": self.queries,
            "sat": self.sat,
            "unsat": self.unsat,
            "unknown": self.unknown,
            "cache_hits": self.cache_hits,
        }

    def since(self, earlier: "SolverStats") -> dict:
        """Query counts accumulated after ``earlier``, without cache hits (they depend on session history)."""
        return {k: getattr(self, k) - getattr(earlier, k) for k in ("queries", "sat", "unsat", "unknown")}


# -- s-expressions -------------------------------------------------------------

def parse_sexprs(text: str) -> list:
    tokens: list[str] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c in "()":
            tokens.append(c)
            i += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c == '"':
            j = i + 1
            while j < n:
                if text[j] == '"':
                    if j + 1 < n and text[j + 1] == '"':
                        j += 2
                        continue
                    break
                j += 1
            tokens.append(text[i : j + 1])
            i = j + 1
        elif c == "|":
            j = text.index("|", i + 1)
            tokens.append(text[i + 1 : j])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(text[i:j])
            i = j
    out, stack = [], []
    for tok in tokens:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise ProtocolError("unbalanced ')' in solver reply", text)
            done = stack.pop()
            (stack[-1] if stack else out).append(done)
        else:
            (stack[-1] if stack else out).append(tok)
    if stack:
        raise ProtocolError("unbalanced '(' in solver reply", text)
    return out


def sexpr_value(x) -> Fraction:
    """Decode a solver numeral: ``3.0``, ``(- 2)``, ``(/ 1.0 3.0)``."""
    if isinstance(x, str):
        try:
            # approximate decimals end in '?'
            return Fraction(x.rstrip("?"))
        except ValueError:
            raise ProtocolError(f"not a rational literal: {x!r}") from None
    if x and x[0] == "-" and len(x) == 2:
        return -sexpr_value(x[1])
    if x and x[0] == "/" and len(x) == 3:
        return sexpr_value(x[1]) / sexpr_value(x[2])
    raise ProtocolError(f"unsupported value term {x!r}")


def parse_reply(reply: str, variables: list[str], transcript: str = ""):
    lines = [l for l in reply.splitlines() if l.strip() and l.strip() not in ("success", "unsupported")]
    if not lines:
        raise ProtocolError("empty solver reply", transcript + reply)
    status = lines[0].strip()
    rest = "\n".join(lines[1:])
    if status.startswith("(error"):
        raise ProtocolError(f"solver error: {status}", transcript + reply)
    if status == "sat":
        values: dict[str, Fraction] = {}
        if variables:
            parsed = parse_sexprs(rest)
            if not parsed or not isinstance(parsed[0], list):
                raise ProtocolError("missing get-value reply", transcript + reply)
            approx = {}
            if len(parsed) > 1 and isinstance(parsed[1], list):
                approx = {p[0]: p[1] for p in parsed[1] if isinstance(p, list) and len(p) == 2}
            for pair in parsed[0]:
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ProtocolError(f"bad get-value entry {pair!r}", transcript + reply)
                term = pair[1]
                if isinstance(term, list) and term and term[0] == "root-obj":
                    if pair[0] not in approx:
                        raise ProtocolError(f"no decimal value for algebraic {pair[0]}", transcript + reply)
                    term = approx[pair[0]]
                values[pair[0]] = sexpr_value(term)
            missing = set(variables) - set(values)
            if missing:
                raise ProtocolError(f"model misses {sorted(missing)}", transcript + reply)
        return Sat(Model(dict(sorted(values.items()))))
    if status == "unsat":
        parsed = parse_sexprs(rest)
        if not parsed or not isinstance(parsed[0], list):
            raise ProtocolError("missing unsat core", transcript + reply)
        return Unsat(frozenset(parsed[0]))
    if status == "unknown":
        reason = "unknown"
        parsed = parse_sexprs(rest) if rest.strip() else []
        if parsed and isinstance(parsed[0], list) and len(parsed[0]) >= 2:
            reason = parsed[0][1].strip('"')
        return Unknown(reason)
    raise ProtocolError(f"unexpected solver status {status!r}", transcript + reply)


def query_key(script: str) -> str:
    return hashlib.sha256(script.encode("utf-8")).hexdigest()[:32]


# -- process ---------------------------------------------------------------------

class _Process:
    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.STDOUT,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SolverUnavailable(f"cannot start solver {argv!r}: {exc}") from exc
        self.lines: queue.Queue = queue.Queue()
        self.reader = threading.Thread(target=self._pump, daemon=True)
        self.reader.start()

    def _pump(self):
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def send(self, text: str):
        try:
            self.proc.stdin.write(text)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SolverUnavailable(f"solver pipe closed: {exc}") from exc

    def read_until_mark(self, deadline: float) -> str:
        out = []
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError
            try:
                line = self.lines.get(timeout=remaining)
            except queue.Empty:
                raise TimeoutError from None
            if line is None:
                raise SolverUnavailable("solver exited: " + "".join(out))
            if line.strip() == _MARK:
                return "".join(out)
            out.append(line)

    def kill(self):
        try:
            self.proc.kill()
            self.proc.wait(timeout=5)
        except Exception:  # noqa: BLE001 - best effort teardown
            pass


class SolverSession:
    def __init__(
        self,
        cmd: str | None = None,
        *,
        mode: str = "live",
        transcripts: str | os.PathLike | None = None,
        logic: str = DEFAULT_LOGIC,
        timeout_ms: int = 30_000,
        seed: int = 0,
        verify_cores: bool = False,
    ):
        if mode not in MODES:
            raise ValueError(f"solver mode must be one of {MODES}")
        if mode in ("record", "replay") and transcripts is None:
            raise ValueError(f"mode {mode!r} needs a transcript directory")
        self.cmd = cmd or os.environ.get("FORAY_SOLVER_CMD", DEFAULT_CMD)
        self.mode = mode
        self.transcripts = Path(transcripts) if transcripts is not None else None
        self.logic = logic
        self.timeout_ms = timeout_ms
        self.seed = seed
        self.verify_cores = verify_cores
        self.stats = SolverStats()
        self._cache: dict[str, str] = {}
        self._proc: _Process | None = None

    # context manager so tests and the CLI always reap the child
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc = None

    def _process(self) -> _Process:
        if self._proc is None or self._proc.proc.poll() is not None:
            self._proc = _Process(shlex.split(self.cmd))
        return self._proc

    def _ask(self, script: str, variables: list[str], timeout_ms: int) -> str:
        proc = self._process()
        deadline = time.monotonic() + timeout_ms / 1000 + 5.0
        sent = "(reset)\n" + script + f'(echo "{_MARK}")\n'
        try:
            proc.send(sent)
            first = proc.read_until_mark(deadline)
            status = next((l.strip() for l in first.splitlines() if l.strip() not in ("", "success", "unsupported")), "")
            if status == "sat":
                follow = f"(get-value ({' '.join(variables)}))\n" if variables else ""
            elif status == "unsat":
                follow = "(get-unsat-core)\n"
            elif status == "unknown":
                follow = "(get-info :reason-unknown)\n"
            else:
                self.close()
                raise ProtocolError(f"unexpected solver output {first!r}", sent + first)
            if follow:
                proc.send(follow + f'(echo "{_MARK}")\n')
                second = proc.read_until_mark(deadline)
            else:
                second = ""
            if status == "sat" and "root-obj" in second:
                # irrational model values: ask again for decimal approximations
                proc.send(
                    f"(set-option :pp.decimal true)\n(set-option :pp.decimal_precision {DECIMAL_DIGITS})\n"
                    f"(get-value ({' '.join(variables)}))\n(set-option :pp.decimal false)\n"
                    f'(echo "{_MARK}")\n'
                )
                second += proc.read_until_mark(deadline)
        except TimeoutError:
            self.close()
            return "unknown\n(:reason-unknown \"killed after timeout\")\n"
        return first + second

    def check(self, cs: ConstraintSet, timeout_ms: int | None = None, *, _verify: bool = True):
        timeout_ms = timeout_ms or self.timeout_ms
        script = cs.to_smtlib(self.logic, timeout_ms=timeout_ms, seed=self.seed)
        variables = cs.variables()
        key = query_key(script)
        start = time.perf_counter()
        self.stats.queries += 1
        reply = self._cache.get(key)
        if reply is not None:
            self.stats.cache_hits += 1
        else:
            reply = self._lookup(key, script)
            if reply is None:
                reply = self._ask(script, variables, timeout_ms)
                if self.mode == "record":
                    self._store(key, script, reply)
            self._cache[key] = reply
        result = parse_reply(reply, variables, script)
        self.stats.wall_time += time.perf_counter() - start
        if isinstance(result, Sat):
            self.stats.sat += 1
        elif isinstance(result, Unsat):
            self.stats.unsat += 1
            if _verify and self.verify_cores and result.core:
                self._verify_core(cs, result.core, timeout_ms)
        else:
            self.stats.unknown += 1
        return result

    def _lookup(self, key: str, script: str) -> str | None:
        if self.transcripts is None or self.mode in ("live", "record"):
            return None
        path = self.transcripts / f"{key}.reply"
        if path.exists():
            self.stats.replayed += 1
            return path.read_text(encoding="utf-8")
        if self.mode == "replay":
            raise TranscriptMissing(key, script)
        return None

    def _store(self, key: str, script: str, reply: str):
        self.transcripts.mkdir(parents=True, exist_ok=True)
        (self.transcripts / f"{key}.smt2").write_text(script, encoding="utf-8")
        (self.transcripts / f"{key}.reply").write_text(reply, encoding="utf-8")

    def _verify_core(self, cs: ConstraintSet, core: frozenset, timeout_ms: int):
        again = self.check(cs.only(core), timeout_ms, _verify=False)
        if not isinstance(again, Unsat):
            raise ProtocolError(f"unsat core {sorted(core)} is satisfiable on its own")


def check(cs: ConstraintSet, timeout_ms: int | None = None, session: SolverSession | None = None):
    """One-shot convenience wrapper around :meth:`SolverSession.check`."""
    if session is not None:
        return session.check(cs, timeout_ms)
    with SolverSession() as s:
        return s.check(cs, timeout_ms)


def differs(name: str, value: Fraction, radius: Fraction = Fraction(0)):
    """Formula saying variable ``name`` is more than ``radius`` away from ``value``."""
    if radius == 0:
        return not_(eq(Var(name), value))
    return or_(gt(Var(name), value + radius), lt(Var(name), value - radius))


def blocking_formula(model: Model, radius: Fraction = Fraction(0)):
    if not len(model):
        raise ValueError("cannot block an empty model")
    parts = [differs(n, v, radius) for n, v in sorted(model.values.items())]
    return parts[0] if len(parts) == 1 else or_(*parts)


def block_model(cs: ConstraintSet, model: Model, radius: Fraction = Fraction(0), name: str | None = None) -> ConstraintSet:
    """Return ``cs`` plus one atom excluding ``model`` (and its radius ball)."""
    if name is None:
        k = 0
        while f"block.{k}" in cs:
            k += 1
        name = f"block.{k}"
    return cs.extend([NamedAtom(name, blocking_formula(model, Fraction(radius)), "block")])


def solver_available(cmd: str | None = None) -> bool:
    import shutil

    argv = shlex.split(cmd or os.environ.get("FORAY_SOLVER_CMD", DEFAULT_CMD))
    return bool(argv) and shutil.which(argv[0]) is not None
