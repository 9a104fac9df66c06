"""Loop-nest source emission: the forall/where IR text and C-style kernels.

Emitted C is for inspection or external compilation only; correctness claims
rest on the interpreter.
"""

from __future__ import annotations

from .expr import TensorAccess
from .igraph import Big, BigNode, Lig, Schedule, iter_leaves, iter_temps, pretty


def emit_pseudo(schedule: Schedule) -> str:
    return pretty(schedule.graph, indent=2)


def emit_c(schedule: Schedule) -> str:
    expr = schedule.expr
    sparse = expr.sparse_input
    sname = sparse.tensor if sparse is not None else ""
    chain = tuple(ix.name for ix in sparse.indices) if sparse is not None else ()
    bounds = [ix.bound for ix in expr.index_vars()]
    temps = list(iter_temps(schedule.graph))

    lines: list[str] = []
    out = []

    def emit(text: str, depth: int):
        out.append("    " * depth + text)

    def flat(acc: TensorAccess, arr: str) -> str:
        if not acc.indices:
            return f"{arr}[0]"
        expr_s = acc.indices[0].name
        for ix in acc.indices[1:]:
            expr_s = f"({expr_s}) * {ix.bound} + {ix.name}"
        return f"{arr}[{expr_s}]"

    def value(acc: TensorAccess, qvar: str | None) -> str:
        if acc.tensor == sname:
            return f"{sname}_vals[{qvar}]"
        if any(t.name == acc.tensor for t in temps):
            return acc.tensor if not acc.indices else flat(acc, acc.tensor)
        return flat(acc, acc.tensor)

    def loop(ix, sparse_here: bool, d: int, qvar: str | None, depth: int):
        if sparse_here:
            lo = f"{sname}_pos{d}[0]" if d == 0 else f"{sname}_pos{d}[{qvar}]"
            hi = f"{sname}_pos{d}[1]" if d == 0 else f"{sname}_pos{d}[{qvar} + 1]"
            q = f"q{d}"
            emit(f"for (int32_t {q} = {lo}; {q} < {hi}; {q}++) {{", depth)
            emit(f"int32_t {ix.name} = {sname}_crd{d}[{q}];", depth + 1)
            return d + 1, q, depth + 1
        emit(f"for (int32_t {ix.name} = 0; {ix.name} < {ix.bound}; {ix.name}++) {{", depth)
        return d, qvar, depth + 1

    def close(from_depth: int, to_depth: int):
        for dd in range(from_depth, to_depth, -1):
            emit("}", dd - 1)

    def gen(g: Big, d: int, qvar: str | None, depth: int):
        start = depth
        if isinstance(g, Lig):
            has_b = any(a.tensor == sname for a in g.factors) if sname else False
            for ix in g.order:
                sparse_here = has_b and d < len(chain) and ix.name == chain[d]
                d, qvar, depth = loop(ix, sparse_here, d, qvar, depth)
            product = " * ".join(value(a, qvar) for a in g.factors)
            emit(f"{value(g.lhs, qvar)} += {product};", depth)
            close(depth, start)
            return
        below = any(a.tensor == sname for _, lf in iter_leaves(g) for a in lf.factors) if sname else False
        for ix in g.prefix:
            sparse_here = below and d < len(chain) and ix.name == chain[d]
            d, qvar, depth = loop(ix, sparse_here, d, qvar, depth)
        t = g.temp
        if t.indices:
            size = " * ".join(ix.bound for ix in t.indices)
            emit(f"memset({t.name}, 0, (size_t)({size}) * sizeof(double));", depth)
        else:
            emit(f"double {t.name} = 0.0;", depth)
        gen(g.producer, d, qvar, depth)
        gen(g.consumer, d, qvar, depth)
        close(depth, start)

    fmt = {acc.tensor: "".join(lv.value for lv in acc.levels) for acc in expr.inputs}
    lines.append(f"// {expr}")
    if sparse is not None:
        lines.append(f"// {sname} stored compressed ({fmt[sname]}), CSF arrays per level")
    lines.append("#include <stdint.h>")
    lines.append("#include <string.h>")
    lines.append("#include <stdlib.h>")
    lines.append("")
    params = []
    for acc in expr.inputs:
        if acc.tensor == sname:
            for lvl in range(len(chain)):
                params.append(f"const int32_t* restrict {sname}_pos{lvl}")
                params.append(f"const int32_t* restrict {sname}_crd{lvl}")
            params.append(f"const double* restrict {sname}_vals")
        else:
            params.append(f"const double* restrict {acc.tensor}")
    params.append(f"double* restrict {expr.output.tensor}")
    params += [f"int32_t {b}" for b in bounds]
    lines.append(f"void contract({', '.join(params)})")
    lines.append("{")
    out.clear()
    for t in temps:
        if t.indices:
            size = " * ".join(ix.bound for ix in t.indices)
            emit(f"double* {t.name} = malloc((size_t)({size}) * sizeof(double));", 1)
    gen(schedule.graph, 0, None, 1)
    for t in temps:
        if t.indices:
            emit(f"free({t.name});", 1)
    lines += out
    lines.append("}")
    return "\n".join(lines) + "\n"
