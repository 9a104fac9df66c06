"""Schedule-space generation: constraint-respecting orders, splits, fusion.

Every linear order that respects the sparse access constraints is emitted
unsplit; every producer/consumer partition of a section's factors is emitted
both unfused and under every maximal fusible prefix, and generation recurses
into both sides (so a consumer holding a temporary can split again, which is
also how two producers feeding one consumer arise).  Sections whose
temporary would exceed the memory-depth budget are not expanded.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Sequence

from .expr import ContractionExpr, IndexVar, TensorAccess, indices_of
from .igraph import Big, BigNode, Lig, Schedule, TempTensor, loop_indices


class GenerationCapExceeded(RuntimeError):
    def __init__(self, cap: int, partial: int):
        super().__init__(f"schedule cap {cap} exceeded ({partial} generated so far)")
        self.cap = cap
        self.partial = partial


@dataclass
class GenConfig:
    max_memory_depth: int = 2
    enable_split_mode_b: bool = True
    dedup: bool = True
    cap: int | None = None

    def __post_init__(self):
        if self.max_memory_depth < 0:
            raise ValueError("max_memory_depth must be >= 0")


def linear_extensions(
    indices: Sequence[IndexVar], edges: set[tuple[IndexVar, IndexVar]]
) -> list[tuple[IndexVar, ...]]:
    """All topological orders of ``indices`` under precedence ``edges``."""
    indices = tuple(sorted(indices, key=lambda ix: ix.name))
    preds: dict[IndexVar, set[IndexVar]] = {ix: set() for ix in indices}
    for a, b in edges:
        if a in preds and b in preds:
            preds[b].add(a)
    out: list[tuple[IndexVar, ...]] = []
    chosen: list[IndexVar] = []
    remaining = list(indices)

    def rec():
        if not remaining:
            out.append(tuple(chosen))
            return
        for ix in list(remaining):
            if preds[ix] & set(remaining):
                continue
            remaining.remove(ix)
            chosen.append(ix)
            rec()
            chosen.pop()
            remaining.append(ix)
            remaining.sort(key=lambda v: v.name)

    rec()
    return out


def gen_ligs(expr: ContractionExpr) -> list[Lig]:
    """All unsplit loop chains: the linear extensions of the constraint DAG."""
    from .expr import access_constraints

    edges = set(access_constraints(expr))
    orders = linear_extensions(expr.index_vars(), edges)
    return [Lig(order, expr.output, expr.inputs) for order in orders]


def _temp_placeholder_name(p_facts: Sequence[TensorAccess], temp_ixs: Sequence[IndexVar]) -> str:
    blob = repr((sorted(a.key() for a in p_facts), sorted(ix.name for ix in temp_ixs)))
    return "t@" + hashlib.sha1(blob.encode()).hexdigest()[:10]


def _first_loop(g: Big) -> IndexVar | None:
    if isinstance(g, Lig):
        return g.order[0] if g.order else None
    return g.prefix[0] if g.prefix else None


class _SpaceGen:
    def __init__(self, expr: ContractionExpr, cfg: GenConfig):
        self.expr = expr
        self.cfg = cfg
        sparse = expr.sparse_input
        self.chain = sparse.indices if sparse is not None else ()
        self.chain_pred = {b: a for a, b in zip(self.chain, self.chain[1:])}
        self.memo: dict[tuple, list[Big]] = {}
        self.temp_names: set[str] = set()

    def section_edges(self, factors: Sequence[TensorAccess], local: set[IndexVar]):
        edges: set[tuple[IndexVar, IndexVar]] = set()
        for acc in factors:
            if acc.is_sparse:
                keep = [ix for ix in acc.indices if ix in local]
                edges.update(zip(keep, keep[1:]))
        return edges

    def prefix_candidates(
        self, shared: Sequence[IndexVar], local: set[IndexVar]
    ) -> list[tuple[IndexVar, ...]]:
        """Orderings of subsets of ``shared`` usable as fused outer loops.

        An index whose chain predecessor is still local may only appear after
        that predecessor, so unreachable predecessors exclude it entirely.
        """
        results: list[tuple[IndexVar, ...]] = [()]

        def rec(seq: list[IndexVar], pool: list[IndexVar]):
            for k, ix in enumerate(pool):
                pred = self.chain_pred.get(ix)
                if pred is not None and pred in local and pred not in seq:
                    continue
                seq.append(ix)
                results.append(tuple(seq))
                rec(seq, pool[:k] + pool[k + 1:])
                seq.pop()

        rec([], sorted(shared, key=lambda ix: ix.name))
        return results

    def enum_section(
        self,
        factors: tuple[TensorAccess, ...],
        lhs: TensorAccess,
        bound: frozenset[IndexVar],
    ) -> list[Big]:
        local_t = tuple(ix for ix in indices_of(list(factors) + [lhs]) if ix not in bound)
        key = (
            tuple(a.key() for a in factors),
            lhs.key(),
            tuple(ix.name for ix in local_t),
        )
        if key in self.memo:
            return self.memo[key]
        local = set(local_t)
        edges = self.section_edges(factors, local)
        results: list[Big] = [
            Lig(order, lhs, factors) for order in linear_extensions(local_t, edges)
        ]

        if len(factors) >= 2:
            has_temp = any(a.tensor in self.temp_names for a in factors)
            n = len(factors)
            for mask in range(1, (1 << n) - 1):
                sel = [k for k in range(n) if mask >> k & 1]
                p_facts = tuple(factors[k] for k in sel)
                c_rest = tuple(factors[k] for k in range(n) if not mask >> k & 1)
                p_has_temp = any(a.tensor in self.temp_names for a in p_facts)
                if len(p_facts) == 1 and set(indices_of(p_facts)) & local <= set(
                    indices_of(list(c_rest) + [lhs])
                ):
                    continue  # single-factor producer that reduces nothing is a bare copy
                if has_temp and not p_has_temp and not self.cfg.enable_split_mode_b:
                    continue  # sibling-producer (mode b) shapes disabled
                p_ixs = set(indices_of(p_facts)) & local
                shared_t = tuple(
                    ix
                    for ix in indices_of(list(c_rest) + [lhs])
                    if ix in p_ixs and ix not in bound
                )
                for prefix in self.prefix_candidates(shared_t, local):
                    temp_ixs = tuple(ix for ix in shared_t if ix not in prefix)
                    if len(temp_ixs) > self.cfg.max_memory_depth:
                        continue
                    name = _temp_placeholder_name(p_facts, temp_ixs)
                    self.temp_names.add(name)
                    temp = TempTensor(name, temp_ixs)
                    below = bound | set(prefix)
                    p_list = self.enum_section(p_facts, temp.access(), below)
                    c_factors = c_rest[: sel[0]] + (temp.access(),) + c_rest[sel[0]:]
                    c_list = self.enum_section(c_factors, lhs, below)
                    for p in p_list:
                        p_first = _first_loop(p)
                        for c in c_list:
                            if prefix and p_first is not None and p_first == _first_loop(c):
                                continue  # a longer fused prefix exists; keep only maximal
                            results.append(BigNode(prefix, p, c, temp))

        self.memo[key] = results
        return results

    def finalize(self, graph: Big) -> Big:
        """Fix each temporary's mode order to its producer's loop order."""

        def walk(g: Big) -> tuple[Big, dict[str, tuple[IndexVar, ...]]]:
            if isinstance(g, Lig):
                return g, {}
            p, p_orders = walk(g.producer)
            c, c_orders = walk(g.consumer)
            orders = {**p_orders, **c_orders}
            p_loops = loop_indices(p)
            rank = {ix: k for k, ix in enumerate(p_loops)}
            ordered = tuple(sorted(g.temp.indices, key=lambda ix: rank[ix]))
            temp = TempTensor(g.temp.name, ordered)
            orders[temp.name] = ordered
            return BigNode(g.prefix, reorder_access(p, orders), reorder_access(c, orders), temp), orders

        def reorder_access(g: Big, orders: dict[str, tuple[IndexVar, ...]]) -> Big:
            def fix(a: TensorAccess) -> TensorAccess:
                if a.tensor in orders and tuple(a.indices) != orders[a.tensor]:
                    return TensorAccess(a.tensor, orders[a.tensor], a.levels)
                return a

            if isinstance(g, Lig):
                return Lig(g.order, fix(g.lhs), tuple(fix(a) for a in g.factors))
            return BigNode(g.prefix, reorder_access(g.producer, orders), reorder_access(g.consumer, orders), g.temp)

        out, _ = walk(graph)
        return out


def gen_schedules(expr: ContractionExpr, cfg: GenConfig | None = None) -> list[Schedule]:
    """The schedule space of a contraction under the generation config."""
    cfg = cfg or GenConfig()
    gen = _SpaceGen(expr, cfg)
    raw = gen.enum_section(expr.inputs, expr.output, frozenset())
    by_id: dict[str, Schedule] = {}
    count = 0
    for g in raw:
        s = Schedule.of(gen.finalize(g), expr)
        if cfg.dedup:
            if s.id in by_id:
                continue
            by_id[s.id] = s
        else:
            by_id[f"{s.id}#{count}"] = s
        count += 1
        if cfg.cap is not None and count > cfg.cap:
            raise GenerationCapExceeded(cfg.cap, count)
    return [by_id[k] for k in sorted(by_id)]


def dedup(schedules: Sequence[Schedule]) -> list[Schedule]:
    """Structural-hash dedup, first occurrence wins."""
    seen: set[str] = set()
    out: list[Schedule] = []
    for s in schedules:
        if s.id not in seen:
            seen.add(s.id)
            out.append(s)
    return out
