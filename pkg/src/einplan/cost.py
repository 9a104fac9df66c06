"""Symbolic iteration-time and auxiliary-memory cost of schedules.

Costs are multivariate sum-of-products polynomials over three symbol kinds:
dense loop extents (``I``), stored-prefix counts of the sparse input
(``nnz(B,2)`` counts nonempty depth-2 fibers), and its overall fill fraction
(``sparsity(B)``).  The time polynomial counts innermost-body executions of
every leaf; the memory polynomial sums temporary sizes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .expr import ContractionExpr, IndexVar, TensorAccess
from .igraph import Big, BigNode, Lig, Schedule, TempTensor, iter_leaves, iter_temps

# Symbols are tagged tuples so they sort and hash cheaply:
#   ("bound", "I") | ("nnz", "B", 2) | ("sparsity", "B")
Symbol = tuple


class UnboundSymbolError(KeyError):
    def __init__(self, symbol: Symbol):
        super().__init__(f"no binding for symbol {symbol_text(symbol)}")
        self.symbol = symbol


def bound_sym(name: str) -> Symbol:
    return ("bound", name)


def nnz_sym(tensor: str, depth: int) -> Symbol:
    return ("nnz", tensor, depth)


def sparsity_sym(tensor: str) -> Symbol:
    return ("sparsity", tensor)


def symbol_text(sym: Symbol) -> str:
    if sym[0] == "bound":
        return sym[1]
    if sym[0] == "nnz":
        return f"nnz({sym[1]},{sym[2]})"
    return f"sparsity({sym[1]})"


@dataclass(frozen=True)
class SymPoly:
    """Canonical sum of products: merged like terms, sorted, no zero terms."""

    terms: tuple[tuple[int, tuple[Symbol, ...]], ...] = ()

    @classmethod
    def make(cls, terms: Iterable[tuple[int, Sequence[Symbol]]]) -> "SymPoly":
        merged: dict[tuple[Symbol, ...], int] = {}
        for coef, factors in terms:
            key = tuple(sorted(factors))
            merged[key] = merged.get(key, 0) + coef
        canon = tuple(
            (c, f) for f, c in sorted(merged.items(), key=lambda kv: (kv[0], kv[1])) if c != 0
        )
        return cls(canon)

    @classmethod
    def zero(cls) -> "SymPoly":
        return cls()

    @classmethod
    def const(cls, c: int) -> "SymPoly":
        return cls.make([(c, ())])

    @classmethod
    def term(cls, factors: Sequence[Symbol], coef: int = 1) -> "SymPoly":
        return cls.make([(coef, tuple(factors))])

    def __add__(self, other: "SymPoly") -> "SymPoly":
        return SymPoly.make(list(self.terms) + list(other.terms))

    def __mul__(self, other: "SymPoly") -> "SymPoly":
        out = []
        for c1, f1 in self.terms:
            for c2, f2 in other.terms:
                out.append((c1 * c2, f1 + f2))
        return SymPoly.make(out)

    def is_zero(self) -> bool:
        return not self.terms

    def drop_constants(self) -> "SymPoly":
        """The polynomial without its factor-free (scalar) terms."""
        return SymPoly(tuple(t for t in self.terms if t[1]))

    def constant_part(self) -> int:
        return sum(c for c, f in self.terms if not f)

    def symbols(self) -> set[Symbol]:
        return {s for _, fs in self.terms for s in fs}

    def text(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for coef, factors in self.terms:
            names = [symbol_text(s) for s in factors]
            if not names:
                parts.append(str(coef))
            elif coef == 1:
                parts.append("*".join(names))
            else:
                parts.append("*".join([str(coef)] + names))
        return " + ".join(parts)

    def __str__(self):
        return self.text()

    def evaluate(self, binding: "Binding"):
        total = 0
        for coef, factors in self.terms:
            val = coef
            for sym in factors:
                val = val * binding.value_of(sym)
            total = total + val
        return total


_SYM_RE = re.compile(
    r"\s*(?:(nnz)\(\s*([A-Za-z][A-Za-z0-9]*)\s*,\s*(\d+)\s*\)"
    r"|(sparsity)\(\s*([A-Za-z][A-Za-z0-9]*)\s*\)"
    r"|([A-Z][0-9]*)"
    r"|(\d+\.?\d*))\s*"
)


def parse_poly(text: str) -> SymPoly:
    """Parse the canonical text form, e.g. ``2*I*J*nnz(B,2) + K``."""
    poly = SymPoly.zero()
    for part in text.split("+"):
        coef = 1
        factors: list[Symbol] = []
        for piece in part.split("*"):
            m = _SYM_RE.fullmatch(piece)
            if not m:
                raise ValueError(f"cannot parse polynomial factor {piece.strip()!r}")
            if m.group(1):
                factors.append(nnz_sym(m.group(2), int(m.group(3))))
            elif m.group(4):
                factors.append(sparsity_sym(m.group(5)))
            elif m.group(6):
                factors.append(bound_sym(m.group(6)))
            else:
                num = m.group(7)
                if "." in num:
                    raise ValueError("polynomial coefficients must be integers")
                coef *= int(num)
        poly = poly + SymPoly.term(factors, coef)
    return poly


@dataclass
class Binding:
    """Concrete values for cost symbols.

    ``bounds`` maps dense extent symbols (``"I"``) to sizes, ``sparsity``
    maps tensor names to fill fractions in (0, 1].  ``nnz`` optionally pins
    prefix counts to measured values; otherwise they are estimated from the
    uniform-fill model, which needs ``tensor_modes`` (mode extent symbols per
    tensor, see :meth:`for_expr`).
    """

    bounds: dict[str, int] = field(default_factory=dict)
    sparsity: dict[str, float] = field(default_factory=dict)
    elem_bytes: int = 4
    nnz: dict[tuple[str, int], int] = field(default_factory=dict)
    tensor_modes: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def for_expr(
        cls,
        expr: ContractionExpr,
        bounds: Mapping[str, int],
        sparsity: Mapping[str, float] | None = None,
        elem_bytes: int = 4,
        nnz: Mapping[tuple[str, int], int] | None = None,
    ) -> "Binding":
        modes = {acc.tensor: tuple(ix.bound for ix in acc.indices) for acc in expr.inputs}
        return cls(dict(bounds), dict(sparsity or {}), elem_bytes, dict(nnz or {}), modes)

    def value_of(self, sym: Symbol):
        kind = sym[0]
        if kind == "bound":
            if sym[1] not in self.bounds:
                raise UnboundSymbolError(sym)
            return self.bounds[sym[1]]
        if kind == "sparsity":
            if sym[1] not in self.sparsity:
                raise UnboundSymbolError(sym)
            return self.sparsity[sym[1]]
        tensor, depth = sym[1], sym[2]
        if (tensor, depth) in self.nnz:
            return self.nnz[(tensor, depth)]
        return self.estimate_nnz(tensor, depth)

    def estimate_nnz(self, tensor: str, depth: int) -> float:
        """Expected nonempty depth-``depth`` prefix count under uniform fill.

        With fill fraction s and remaining subtree volume R, a prefix is
        nonempty with probability 1-(1-s)^R; at full depth this reduces to
        s * volume exactly.
        """
        if tensor not in self.tensor_modes:
            raise UnboundSymbolError(nnz_sym(tensor, depth))
        if tensor not in self.sparsity:
            raise UnboundSymbolError(sparsity_sym(tensor))
        modes = self.tensor_modes[tensor]
        dims = []
        for b in modes:
            if b not in self.bounds:
                raise UnboundSymbolError(bound_sym(b))
            dims.append(self.bounds[b])
        s = self.sparsity[tensor]
        prefix_vol = math.prod(dims[:depth])
        rest_vol = math.prod(dims[depth:])
        if rest_vol == 1:
            return s * prefix_vol
        return prefix_vol * (1.0 - (1.0 - s) ** rest_vol)


def evaluate(poly: SymPoly, binding: Binding):
    """Numeric value of a polynomial; exact int when every input is an int."""
    return poly.evaluate(binding)


# ---------------------------------------------------------------------------
# Cost extraction from graphs


@dataclass(frozen=True)
class CostProfile:
    time: SymPoly
    mem: SymPoly
    loop_depth: int
    mem_depth: int
    temps: tuple[TempTensor, ...]


def _contains_sparse(g: Big, tensor: str) -> bool:
    return any(a.tensor == tensor for _, leaf in iter_leaves(g) for a in leaf.factors)


def time_complexity(s: Schedule | Big, expr: ContractionExpr | None = None) -> SymPoly:
    """Total innermost-body iterations, one product term per leaf.

    A loop iterates stored coordinates (rather than the full extent) when the
    sparse input is accessed beneath it and the loop index is the next
    unconsumed level of that tensor's mode order; a maximal consumed chain of
    depth d contributes one nnz(t,d) factor and interleaved dense loops
    multiply in as usual.
    """
    graph, expr = _graph_expr(s, expr)
    sparse = expr.sparse_input
    chain = sparse.indices if sparse is not None else ()
    tname = sparse.tensor if sparse is not None else ""

    terms: list[tuple[int, tuple[Symbol, ...]]] = []

    def walk(g: Big, d0: int, dense: tuple[Symbol, ...]):
        if isinstance(g, Lig):
            has_b = any(a.tensor == tname for a in g.factors) if sparse else False
            for ix in g.order:
                if has_b and d0 < len(chain) and ix == chain[d0]:
                    d0 += 1
                else:
                    dense = dense + (bound_sym(ix.bound),)
            factors = dense if d0 == 0 else (nnz_sym(tname, d0),) + dense
            terms.append((1, factors))
            return
        below = _contains_sparse(g, tname) if sparse else False
        for ix in g.prefix:
            if below and d0 < len(chain) and ix == chain[d0]:
                d0 += 1
            else:
                dense = dense + (bound_sym(ix.bound),)
        walk(g.producer, d0, dense)
        walk(g.consumer, d0, dense)

    walk(graph, 0, ())
    return SymPoly.make(terms)


def memory_complexity(s: Schedule | Big, expr: ContractionExpr | None = None) -> SymPoly:
    """Sum of temporary sizes; a scalar temporary contributes the constant 1."""
    graph, _ = _graph_expr(s, expr)
    poly = SymPoly.zero()
    for temp in iter_temps(graph):
        poly = poly + SymPoly.term(tuple(bound_sym(ix.bound) for ix in temp.indices))
    return poly


def depths(s: Schedule | Big, expr: ContractionExpr | None = None) -> tuple[int, int]:
    """(loop depth, memory depth): longest loop path and widest temporary."""
    graph, _ = _graph_expr(s, expr)
    loop_depth = max(len(path) for path, _ in iter_leaves(graph))
    temps = list(iter_temps(graph))
    mem_depth = max((t.arity for t in temps), default=0)
    return loop_depth, mem_depth


def profile(s: Schedule) -> CostProfile:
    loop_depth, mem_depth = depths(s)
    return CostProfile(
        time=time_complexity(s),
        mem=memory_complexity(s),
        loop_depth=loop_depth,
        mem_depth=mem_depth,
        temps=tuple(iter_temps(s.graph)),
    )


def aux_bytes(s: Schedule, binding: Binding) -> int:
    """Concrete auxiliary-memory footprint: array temps by size, scalars one element."""
    mem = memory_complexity(s)
    scalars = mem.constant_part()
    array_elems = evaluate(mem.drop_constants(), binding)
    return int(round(array_elems * binding.elem_bytes)) + binding.elem_bytes * scalars


def _graph_expr(s: Schedule | Big, expr: ContractionExpr | None) -> tuple[Big, ContractionExpr]:
    if isinstance(s, Schedule):
        return s.graph, s.expr
    if expr is None:
        raise ValueError("an expression is required when passing a bare graph")
    return s, expr
