"""Einsum contraction model: accesses, level formats, and access constraints.

A contraction is written ``Out(i,...) = In1(i,...) * In2(i,...) * ...`` with
implicit summation over indices that do not appear in the output.  Each tensor
carries one level format per mode; a Compressed level means the tensor is
stored as a fiber tree (CSR/CSF style), which forces its modes to be iterated
in mode order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence


class ExprError(ValueError):
    """Raised for malformed contractions; carries an optional text position."""

    def __init__(self, message: str, pos: int | None = None):
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)
        self.pos = pos


@dataclass(frozen=True)
class IndexVar:
    """A loop index; ``bound`` is the dense extent symbol it ranges over."""

    name: str
    bound: str = ""

    def __post_init__(self):
        if not self.bound:
            object.__setattr__(self, "bound", self.name.upper())

    def __repr__(self):
        return self.name


class FormatLevel(Enum):
    DENSE = "d"
    COMPRESSED = "c"

    @classmethod
    def parse(cls, ch: str) -> FormatLevel:
        try:
            return cls(ch)
        except ValueError:
            raise ExprError(f"unknown level format {ch!r}, expected 'd' or 'c'") from None


DENSE = FormatLevel.DENSE
COMPRESSED = FormatLevel.COMPRESSED


@dataclass(frozen=True)
class TensorAccess:
    """One tensor access ``name(i1,...,ik)`` with per-level storage formats."""

    tensor: str
    indices: tuple[IndexVar, ...]
    levels: tuple[FormatLevel, ...] = ()

    def __post_init__(self):
        if not self.levels:
            object.__setattr__(self, "levels", (DENSE,) * len(self.indices))
        if len(self.levels) != len(self.indices):
            raise ExprError(
                f"tensor {self.tensor}: {len(self.levels)} levels for "
                f"{len(self.indices)} modes"
            )
        seen = set()
        for ix in self.indices:
            if ix in seen:
                raise ExprError(f"index {ix.name} repeated within access of {self.tensor}")
            seen.add(ix)

    @property
    def order(self) -> int:
        return len(self.indices)

    @property
    def is_sparse(self) -> bool:
        return COMPRESSED in self.levels

    def key(self) -> tuple:
        return (self.tensor, tuple(ix.name for ix in self.indices))

    def __str__(self):
        if not self.indices:
            return self.tensor
        return f"{self.tensor}({','.join(ix.name for ix in self.indices)})"


@dataclass(frozen=True)
class ContractionExpr:
    """A full contraction: one dense output, an ordered product of inputs."""

    output: TensorAccess
    inputs: tuple[TensorAccess, ...]
    contracted: frozenset[IndexVar] = field(default=frozenset())

    def __post_init__(self):
        inferred = frozenset(indices_of(self.inputs)) - frozenset(self.output.indices)
        object.__setattr__(self, "contracted", inferred)
        if any(lv is not DENSE for lv in self.output.levels):
            raise ExprError(f"output {self.output.tensor} must be stored dense")
        input_ixs = set(indices_of(self.inputs))
        for ix in self.output.indices:
            if ix not in input_ixs:
                raise ExprError(f"output index {ix.name} absent from all inputs")
        sparse = [acc.tensor for acc in self.inputs if acc.is_sparse]
        if len(sparse) > 1:
            raise ExprError(
                f"at most one compressed input is supported, got {', '.join(sparse)}"
            )
        names = [acc.tensor for acc in self.inputs] + [self.output.tensor]
        if len(set(names)) != len(names):
            raise ExprError("tensor names must be distinct within a contraction")

    @property
    def sparse_input(self) -> TensorAccess | None:
        for acc in self.inputs:
            if acc.is_sparse:
                return acc
        return None

    def index_vars(self) -> tuple[IndexVar, ...]:
        return indices_of(list(self.inputs) + [self.output])

    def __str__(self):
        rhs = " * ".join(str(acc) for acc in self.inputs)
        return f"{self.output} = {rhs}"


_ACCESS_RE = re.compile(r"\s*([A-Za-z][A-Za-z0-9]*)\s*\(([^)]*)\)\s*")
_INDEX_RE = re.compile(r"[a-z][0-9]*$")


def _parse_access(text: str, pos: int) -> tuple[str, tuple[str, ...], int]:
    m = _ACCESS_RE.match(text, pos)
    if not m:
        raise ExprError("expected tensor access like 'A(i,j)'", pos)
    name = m.group(1)
    idx_names = tuple(s.strip() for s in m.group(2).split(",")) if m.group(2).strip() else ()
    for ix in idx_names:
        if not _INDEX_RE.match(ix):
            raise ExprError(f"bad index name {ix!r} in {name}", m.start(2))
    return name, idx_names, m.end()


def parse_einsum(
    text: str, formats: Mapping[str, Sequence[FormatLevel]] | None = None
) -> ContractionExpr:
    """Parse ``Out(l,m) = B(i,j) * C(j,l) * ...`` into a validated expression.

    ``formats`` maps tensor names to per-level formats; unlisted tensors
    default to all-Dense storage.
    """
    formats = dict(formats or {})
    out_name, out_idx, pos = _parse_access(text, 0)
    if pos >= len(text) or text[pos] != "=":
        raise ExprError("expected '=' after output access", pos)
    pos += 1
    factors = []
    while True:
        name, idx, pos = _parse_access(text, pos)
        factors.append((name, idx))
        if pos >= len(text):
            break
        if text[pos] != "*":
            raise ExprError("expected '*' between input accesses", pos)
        pos += 1

    known = {out_name} | {name for name, _ in factors}
    for name in formats:
        if name not in known:
            raise ExprError(f"formats name unknown tensor {name!r}")

    vars_by_name: dict[str, IndexVar] = {}

    def var(n: str) -> IndexVar:
        if n not in vars_by_name:
            vars_by_name[n] = IndexVar(n)
        return vars_by_name[n]

    def access(name: str, idx: tuple[str, ...]) -> TensorAccess:
        levels = tuple(formats.get(name, ())) or (DENSE,) * len(idx)
        if len(levels) != len(idx):
            raise ExprError(
                f"tensor {name}: format has {len(levels)} levels but access has "
                f"{len(idx)} modes"
            )
        return TensorAccess(name, tuple(var(n) for n in idx), levels)

    output = access(out_name, out_idx)
    inputs = tuple(access(name, idx) for name, idx in factors)
    return ContractionExpr(output, inputs)


def parse_format_pattern(pattern: str) -> tuple[FormatLevel, ...]:
    """Parse a level-format string over {d,c}, e.g. ``"ccc"`` for CSF."""
    return tuple(FormatLevel.parse(ch) for ch in pattern)


def indices_of(part: TensorAccess | Iterable[TensorAccess]) -> tuple[IndexVar, ...]:
    """Ordered union (first appearance) of mode indices across accesses."""
    if isinstance(part, TensorAccess):
        part = [part]
    out: list[IndexVar] = []
    seen = set()
    for acc in part:
        for ix in acc.indices:
            if ix not in seen:
                seen.add(ix)
                out.append(ix)
    return tuple(out)


def access_constraints(
    part: ContractionExpr | Iterable[TensorAccess],
) -> frozenset[tuple[IndexVar, IndexVar]]:
    """Precedence edges imposed by compressed storage.

    Any access with at least one Compressed level pins its whole mode order
    (every adjacent pair), because the fiber tree must be walked top-down.
    Dense-only accesses contribute nothing.  Raises on a cyclic union.
    """
    accesses = part.inputs if isinstance(part, ContractionExpr) else tuple(part)
    edges: set[tuple[IndexVar, IndexVar]] = set()
    for acc in accesses:
        if not acc.is_sparse:
            continue
        for a, b in zip(acc.indices, acc.indices[1:]):
            edges.add((a, b))
    _check_acyclic(edges, accesses)
    return frozenset(edges)


def _check_acyclic(edges: set[tuple[IndexVar, IndexVar]], accesses) -> None:
    succ: dict[IndexVar, list[IndexVar]] = {}
    indeg: dict[IndexVar, int] = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
        indeg[b] = indeg.get(b, 0) + 1
        indeg.setdefault(a, 0)
    ready = [v for v, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for w in succ.get(v, ()):
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if seen != len(indeg):
        sparse = ", ".join(str(a) for a in accesses if a.is_sparse)
        raise ExprError(f"conflicting access constraints form a cycle (accesses: {sparse})")


def sparse_chain(expr: ContractionExpr) -> tuple[IndexVar, ...]:
    """Mode order of the sparse input, or () if the contraction is dense."""
    acc = expr.sparse_input
    return acc.indices if acc is not None else ()
