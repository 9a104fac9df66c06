"""Stage 3: symbolic dominance pruning through an external SMT solver.

Schedule costs are compared over every admissible assignment of loop bounds
and sparsities.  A bucket is removed when some other bucket is never worse in
time or auxiliary memory anywhere in the constrained region and is strictly
worse somewhere (checked as two existential queries: Q1 "somewhere strictly
worse" must be sat, Q2 "strictly better in either coordinate somewhere" must
be unsat).  Unknown or timed-out queries never remove anything.

The solver is any SMT-LIB2 process reading from stdin (``z3 -in`` works);
a bundled Node shim wraps the z3 WASM build when no native solver exists.
"""

from __future__ import annotations

import os
import queue
import shlex
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .cost import (
    Binding,
    SymPoly,
    Symbol,
    bound_sym,
    memory_complexity,
    nnz_sym,
    parse_poly,
    sparsity_sym,
    symbol_text,
    time_complexity,
)
from .expr import ContractionExpr
from .igraph import Schedule

_OPS = {"<=", ">=", "<", ">", "="}


@dataclass(frozen=True)
class Relation:
    lhs: SymPoly
    op: str
    rhs: SymPoly

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown relation operator {self.op!r}")

    @classmethod
    def parse(cls, text: str) -> "Relation":
        for op in ("<=", ">=", "=", "<", ">"):
            if op in text:
                l, r = text.split(op, 1)
                return cls(parse_poly(l), op, parse_poly(r))
        raise ValueError(f"no comparison operator in relation {text!r}")

    def text(self) -> str:
        return f"{self.lhs.text()} {self.op} {self.rhs.text()}"


@dataclass(frozen=True)
class ConstraintSet:
    """Range, inferred, and user-defined constraints over cost symbols."""

    ranges: tuple[tuple[str, float, float], ...] = ()
    inferred: tuple[Relation, ...] = ()
    user: tuple[Relation, ...] = ()

    @classmethod
    def inferred_only(cls, expr: ContractionExpr) -> "ConstraintSet":
        return cls(inferred=tuple(infer_constraints(expr)))

    @classmethod
    def for_expr(
        cls,
        expr: ContractionExpr,
        ranges: Sequence[tuple[str, float, float]] = (),
        user: Sequence[str | Relation] = (),
    ) -> "ConstraintSet":
        for sym, lo, hi in ranges:
            if lo > hi:
                raise ValueError(f"range for {sym} has lo > hi")
        rels = tuple(r if isinstance(r, Relation) else Relation.parse(r) for r in user)
        return cls(tuple(ranges), tuple(infer_constraints(expr)), rels)

    @classmethod
    def from_json(cls, doc: dict, expr: ContractionExpr) -> "ConstraintSet":
        ranges = [(str(sym), float(lo), float(hi)) for sym, lo, hi in doc.get("ranges", [])]
        return cls.for_expr(expr, ranges, doc.get("user", []))

    def all_relations(self) -> tuple[Relation, ...]:
        return self.inferred + self.user


def infer_constraints(expr: ContractionExpr) -> list[Relation]:
    """Structural facts every admissible assignment satisfies.

    Bounds are at least 1; stored-prefix counts are nonnegative, no larger
    than the dense prefix volume, nondecreasing with depth but growing at
    most by the next extent, and at full depth equal sparsity times volume;
    sparsity lies in (0, 1].
    """
    rels: list[Relation] = []
    one = SymPoly.const(1)
    zero = SymPoly.zero()
    for ix in expr.index_vars():
        rels.append(Relation(SymPoly.term([bound_sym(ix.bound)]), ">=", one))
    sparse = expr.sparse_input
    if sparse is not None:
        t = sparse.tensor
        k = sparse.order
        s = SymPoly.term([sparsity_sym(t)])
        rels.append(Relation(s, ">", zero))
        rels.append(Relation(s, "<=", one))
        vol = SymPoly.const(1)
        for d in range(1, k + 1):
            vol = vol * SymPoly.term([bound_sym(sparse.indices[d - 1].bound)])
            nnz_d = SymPoly.term([nnz_sym(t, d)])
            rels.append(Relation(nnz_d, ">=", zero))
            rels.append(Relation(nnz_d, "<=", vol))
            if d > 1:
                prev = SymPoly.term([nnz_sym(t, d - 1)])
                rels.append(Relation(prev, "<=", nnz_d))
                rels.append(
                    Relation(nnz_d, "<=", prev * SymPoly.term([bound_sym(sparse.indices[d - 1].bound)]))
                )
        rels.append(Relation(SymPoly.term([nnz_sym(t, k)]), "=", s * vol))
    return rels


# ---------------------------------------------------------------------------
# SMT-LIB text


def _smt_name(sym: Symbol) -> str:
    text = symbol_text(sym)
    return text if text.isalnum() else f"|{text}|"


def _poly_smt(poly: SymPoly) -> str:
    if not poly.terms:
        return "0"
    parts = []
    for coef, factors in poly.terms:
        atoms = [str(coef)] if coef != 1 or not factors else []
        atoms += [_smt_name(s) for s in factors]
        parts.append(atoms[0] if len(atoms) == 1 else f"(* {' '.join(atoms)})")
    return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"


_REL_SMT = {"<=": "<=", ">=": ">=", "<": "<", ">": ">", "=": "="}


def emit_smtlib(
    clause: str,
    cs: ConstraintSet,
    time_s: SymPoly,
    mem_s: SymPoly,
    time_c: SymPoly,
    mem_c: SymPoly,
    timeout_ms: int = 10_000,
) -> str:
    """SMT-LIB2 script asking one dominance question about (s, c).

    ``clause="q1"`` asserts that s is somewhere weakly worse with one strict
    inequality; ``clause="q2"`` asserts that s is somewhere strictly better
    in time or in memory (its unsatisfiability certifies pointwise dominance).
    """
    ts, ns, tc, nc = map(_poly_smt, (time_s, mem_s, time_c, mem_c))
    if clause == "q1":
        body = f"(or (and (> {ts} {tc}) (>= {ns} {nc})) (and (>= {ts} {tc}) (> {ns} {nc})))"
    elif clause == "q2":
        body = f"(or (< {ts} {tc}) (< {ns} {nc}))"
    else:
        raise ValueError(f"unknown clause kind {clause!r}")

    symbols: set[Symbol] = set()
    for poly in (time_s, mem_s, time_c, mem_c):
        symbols |= poly.symbols()
    for rel in cs.all_relations():
        symbols |= rel.lhs.symbols() | rel.rhs.symbols()
    declared = {symbol_text(s) for s in symbols}

    lines = [f"(set-option :timeout {timeout_ms})", "(set-logic QF_NRA)"]
    for sym in sorted(symbols):
        lines.append(f"(declare-const {_smt_name(sym)} Real)")
    for sym_text, lo, hi in cs.ranges:
        name = sym_text if sym_text.isalnum() else f"|{sym_text}|"
        if sym_text not in declared:
            lines.append(f"(declare-const {name} Real)")
            declared.add(sym_text)
        lines.append(f"(assert (and (>= {name} {_num(lo)}) (<= {name} {_num(hi)})))")
    for rel in cs.all_relations():
        lines.append(f"(assert ({_REL_SMT[rel.op]} {_poly_smt(rel.lhs)} {_poly_smt(rel.rhs)}))")
    lines.append(f"(assert {body})")
    lines.append("(check-sat)")
    return "\n".join(lines)


def _num(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# Solver process


class SolverError(RuntimeError):
    pass


class SolverProcess:
    """A persistent SMT-LIB2 solver child fed scripts over stdin.

    One script per query, followed by ``(reset)``; the response is the first
    sat/unsat/unknown token.  A query exceeding the wall-clock timeout kills
    and restarts the child and reports "timeout".
    """

    def __init__(self, command: Sequence[str], timeout: float = 10.0):
        self.command = list(command)
        self.timeout = timeout
        self.proc: subprocess.Popen | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self.queries = 0

    def _start(self):
        try:
            self.proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as e:
            raise SolverError(f"cannot start solver {self.command}: {e}") from e
        self._lines = queue.Queue()

        def pump(stream, q):
            for line in stream:
                q.put(line.strip())
            q.put(None)

        threading.Thread(target=pump, args=(self.proc.stdout, self._lines), daemon=True).start()

    def stop(self):
        if self.proc is not None:
            try:
                self.proc.kill()
            except OSError:
                pass
            self.proc = None

    def query(self, script: str, timeout: float | None = None) -> str:
        """Run one script; returns 'sat', 'unsat', 'unknown', 'timeout' or 'error'."""
        wall = (timeout if timeout is not None else self.timeout) + 30.0
        if self.proc is None or self.proc.poll() is not None:
            self._start()
        self.queries += 1
        try:
            assert self.proc is not None and self.proc.stdin is not None
            self.proc.stdin.write(script + "\n(reset)\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self.stop()
            return "error"  # crashed mid-run: callers treat this as Unknown
        deadline_hit = False
        while True:
            try:
                line = self._lines.get(timeout=wall)
            except queue.Empty:
                deadline_hit = True
                break
            if line is None:
                self.stop()
                return "error"
            if line in ("sat", "unsat", "unknown", "timeout"):
                return line
            if line.startswith("(error") or line.startswith("error"):
                return "error"
        if deadline_hit:
            self.stop()
            return "timeout"
        return "error"

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def find_solver() -> list[str] | None:
    """Locate an SMT solver command: $EINPLAN_SOLVER, a native z3, or the Node shim."""
    env = os.environ.get("EINPLAN_SOLVER")
    if env:
        return shlex.split(env)
    z3 = shutil.which("z3")
    if z3:
        return [z3, "-in"]
    node = shutil.which("node")
    if node:
        here = Path(__file__).resolve()
        for root in [here.parents[2], here.parents[3] if len(here.parents) > 3 else here.parents[2]]:
            shim = root / "tools" / "smt" / "z3_process.mjs"
            if shim.exists() and (shim.parent / "node_modules" / "z3-solver").exists():
                return [node, str(shim)]
    return None


# ---------------------------------------------------------------------------
# Dominance checks


@dataclass(frozen=True)
class DominanceVerdict:
    kind: str  # "dominated" | "not_dominated" | "unknown"
    detail: str = ""

    @property
    def is_dominated(self) -> bool:
        return self.kind == "dominated"


DOMINATED = DominanceVerdict("dominated")
NOT_DOMINATED = DominanceVerdict("not_dominated")


def check_dominates_polys(
    time_s: SymPoly,
    mem_s: SymPoly,
    time_c: SymPoly,
    mem_c: SymPoly,
    cs: ConstraintSet,
    solver: SolverProcess,
    timeout_ms: int = 10_000,
) -> DominanceVerdict:
    q1 = solver.query(emit_smtlib("q1", cs, time_s, mem_s, time_c, mem_c, timeout_ms))
    if q1 in ("timeout", "unknown", "error"):
        return DominanceVerdict("unknown", f"q1 {q1}")
    if q1 == "unsat":
        return NOT_DOMINATED
    q2 = solver.query(emit_smtlib("q2", cs, time_s, mem_s, time_c, mem_c, timeout_ms))
    if q2 in ("timeout", "unknown", "error"):
        return DominanceVerdict("unknown", f"q2 {q2}")
    return DOMINATED if q2 == "unsat" else NOT_DOMINATED


def stage3_mem_poly(mem: SymPoly) -> SymPoly:
    """Memory polynomial as compared by stage 3: scalar workspaces live in
    registers, so additive constants are dropped."""
    return mem.drop_constants()


def check_dominates(
    s: Schedule,
    c: Schedule,
    cs: ConstraintSet,
    solver: SolverProcess,
    timeout_ms: int = 10_000,
) -> DominanceVerdict:
    """Is ``s`` removable in favor of ``c`` everywhere in the region?"""
    return check_dominates_polys(
        time_complexity(s),
        stage3_mem_poly(memory_complexity(s)),
        time_complexity(c),
        stage3_mem_poly(memory_complexity(c)),
        cs,
        solver,
        timeout_ms,
    )


def stage3_prune(
    buckets,
    cs: ConstraintSet,
    solver: SolverProcess | Sequence[str],
    timeout_ms: int = 10_000,
):
    """Drop buckets dominated by another bucket; returns (buckets, unknown count).

    Buckets share cost polynomials, so one representative pair per bucket is
    compared; dominance is judged against the original set.
    """
    own = None
    if not isinstance(solver, SolverProcess):
        own = SolverProcess(list(solver), timeout=timeout_ms / 1000.0)
        solver = own
    try:
        reps = [
            (b.prof.time, stage3_mem_poly(b.prof.mem)) for b in buckets
        ]
        unknowns = 0
        cache: dict[tuple, DominanceVerdict] = {}
        removed = [False] * len(buckets)
        for i, (ts, ns) in enumerate(reps):
            for j, (tc, nc) in enumerate(reps):
                if i == j or (ts, ns) == (tc, nc):
                    continue
                key = (ts, ns, tc, nc)
                if key not in cache:
                    cache[key] = check_dominates_polys(ts, ns, tc, nc, cs, solver, timeout_ms)
                verdict = cache[key]
                if verdict.kind == "unknown":
                    unknowns += 1
                if verdict.is_dominated:
                    removed[i] = True
                    break
        return [b for b, r in zip(buckets, removed) if not r], unknowns
    finally:
        if own is not None:
            own.stop()
