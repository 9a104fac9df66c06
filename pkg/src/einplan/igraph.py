"""Linear and branched iteration graphs and their transformations.

A Lig is a single loop chain realizing (part of) a contraction.  A BigNode
splits a computation into a producer writing a dense temporary and a consumer
reading it, optionally underneath a shared fused loop prefix.  ``loopfuse``
and ``reorder`` are the only mutators; both return new graphs and never touch
their input.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

from .expr import (
    ContractionExpr,
    DENSE,
    FormatLevel,
    IndexVar,
    TensorAccess,
    indices_of,
)


class IgraphError(ValueError):
    pass


@dataclass(frozen=True)
class TempTensor:
    """Dense intermediate carrying producer results into a consumer."""

    name: str
    indices: tuple[IndexVar, ...]

    @property
    def arity(self) -> int:
        return len(self.indices)

    def access(self) -> TensorAccess:
        return TensorAccess(self.name, self.indices, (DENSE,) * len(self.indices))

    def __str__(self):
        if not self.indices:
            return self.name
        return f"{self.name}({','.join(ix.name for ix in self.indices)})"


@dataclass(frozen=True)
class Lig:
    """Loop chain ``order`` around ``lhs += product(factors)``."""

    order: tuple[IndexVar, ...]
    lhs: TensorAccess
    factors: tuple[TensorAccess, ...]

    def body_str(self) -> str:
        rhs = " * ".join(str(f) for f in self.factors)
        return f"{self.lhs} += {rhs}"


@dataclass(frozen=True)
class BigNode:
    """Fused prefix over a producer subtree feeding a consumer subtree."""

    prefix: tuple[IndexVar, ...]
    producer: "Big"
    consumer: "Big"
    temp: TempTensor


Big = Union[Lig, BigNode]


def out_access(graph: Big) -> TensorAccess:
    """The access a subtree ultimately writes (consumer side of every node)."""
    while isinstance(graph, BigNode):
        graph = graph.consumer
    return graph.lhs


def iter_leaves(graph: Big, _prefix: tuple[IndexVar, ...] = ()) -> Iterator[tuple[tuple[IndexVar, ...], Lig]]:
    """Yield (root-to-leaf index path, leaf) pairs, producer before consumer."""
    if isinstance(graph, Lig):
        yield _prefix + graph.order, graph
        return
    below = _prefix + graph.prefix
    yield from iter_leaves(graph.producer, below)
    yield from iter_leaves(graph.consumer, below)


def iter_temps(graph: Big) -> Iterator[TempTensor]:
    """Temps in preorder (node before producer before consumer)."""
    if isinstance(graph, BigNode):
        yield graph.temp
        yield from iter_temps(graph.producer)
        yield from iter_temps(graph.consumer)


def loop_indices(graph: Big) -> tuple[IndexVar, ...]:
    """All loop indices of a subtree (prefixes and leaf orders), preorder."""
    out: list[IndexVar] = []
    seen = set()

    def walk(g: Big):
        if isinstance(g, Lig):
            items: Iterable[IndexVar] = g.order
        else:
            items = g.prefix
        for ix in items:
            if ix not in seen:
                seen.add(ix)
                out.append(ix)
        if isinstance(g, BigNode):
            walk(g.producer)
            walk(g.consumer)

    walk(graph)
    return tuple(out)


def temp_indices(
    producer_inputs: Sequence[TensorAccess],
    consumer_inputs: Sequence[TensorAccess],
    output: TensorAccess,
) -> tuple[IndexVar, ...]:
    """Indices a split's temporary must carry.

    Producer indices that reappear in the consumer or the output, ordered by
    first appearance in the output then the consumer (the order the right-hand
    side of the intersection is read).
    """
    if not producer_inputs:
        raise IgraphError("producer side of a split cannot be empty")
    pset = set(indices_of(producer_inputs))
    ordered = indices_of([output] + list(consumer_inputs))
    return tuple(ix for ix in ordered if ix in pset)


def _restrict(order: Sequence[IndexVar], keep: set[IndexVar]) -> tuple[IndexVar, ...]:
    return tuple(ix for ix in order if ix in keep)


def _navigate(graph: Big, path: Sequence[int]) -> Big:
    node = graph
    for step in path:
        if not isinstance(node, BigNode):
            raise IgraphError(f"path {list(path)} does not address a graph section")
        if step == 0:
            node = node.producer
        elif step == 1:
            node = node.consumer
        else:
            raise IgraphError(f"path steps must be 0 (producer) or 1 (consumer), got {step}")
    return node


def _replace(graph: Big, path: Sequence[int], new: Big) -> Big:
    if not path:
        return new
    if not isinstance(graph, BigNode):
        raise IgraphError(f"path {list(path)} does not address a graph section")
    if path[0] == 0:
        return BigNode(graph.prefix, _replace(graph.producer, path[1:], new), graph.consumer, graph.temp)
    return BigNode(graph.prefix, graph.producer, _replace(graph.consumer, path[1:], new), graph.temp)


def loopfuse(graph: Big, path: Sequence[int], loc: int, pol: bool) -> Big:
    """Split the addressed linear section at ``loc`` and fuse the shared outer loops.

    ``pol`` picks which end of the factor list becomes the producer: True
    takes the first ``loc`` factors, False the last ``loc``.  The fused prefix
    is the maximal common prefix of the derived producer/consumer loop orders;
    it may be empty, in which case the result is a plain split.
    """
    section = _navigate(graph, path)
    if not isinstance(section, Lig):
        raise IgraphError(f"path {list(path)} addresses a branch, not a linear section")
    n = len(section.factors)
    if not 1 <= loc < n:
        raise IgraphError(f"split position {loc} out of range for {n} factors")
    if pol:
        p_facts = section.factors[:loc]
        c_rest = section.factors[loc:]
    else:
        p_facts = section.factors[n - loc:]
        c_rest = section.factors[: n - loc]

    sigma = section.order
    local = set(sigma)
    p_idx = set(indices_of(p_facts)) & local
    shared = p_idx & (set(indices_of(list(c_rest) + [section.lhs])) & local)
    sigma_p = _restrict(sigma, p_idx)
    sigma_c = _restrict(sigma, (local - p_idx) | shared)

    prefix: list[IndexVar] = []
    for a, b in zip(sigma_p, sigma_c):
        if a == b:
            prefix.append(a)
        else:
            break
    prefix_t = tuple(prefix)
    temp_ixs = tuple(ix for ix in sigma_p if ix in shared and ix not in shared.intersection(prefix))
    temp = TempTensor("@new", temp_ixs)

    producer = Lig(tuple(ix for ix in sigma_p if ix not in prefix_t), temp.access(), p_facts)
    if pol:
        c_factors = (temp.access(),) + c_rest
    else:
        c_factors = c_rest + (temp.access(),)
    consumer = Lig(tuple(ix for ix in sigma_c if ix not in prefix_t), section.lhs, c_factors)

    node = BigNode(prefix_t, producer, consumer, temp)
    result = canonicalize(_replace(graph, path, node))
    violations = validate_big(result)
    if violations:
        raise IgraphError("loopfuse would produce an invalid graph: " + "; ".join(violations))
    return result


def reorder(graph: Big, path: Sequence[int], order: Sequence[IndexVar]) -> Big:
    """Replace the addressed linear section's loop order with a permutation."""
    section = _navigate(graph, path)
    if not isinstance(section, Lig):
        raise IgraphError(f"path {list(path)} addresses a branch, not a linear section")
    new_order = tuple(order)
    if sorted(ix.name for ix in new_order) != sorted(ix.name for ix in section.order):
        raise IgraphError(
            f"new order ({','.join(i.name for i in new_order)}) is not a permutation of "
            f"({','.join(i.name for i in section.order)})"
        )
    result = _replace(graph, path, Lig(new_order, section.lhs, section.factors))
    violations = validate_big(result)
    if violations:
        raise IgraphError("reorder would produce an invalid graph: " + "; ".join(violations))
    return result


# ---------------------------------------------------------------------------
# Validity


def _forced_pairs(graph: Big, within: set[IndexVar]) -> set[tuple[IndexVar, IndexVar]]:
    """Relative orders of ``within`` indices pinned by compressed accesses."""
    pairs: set[tuple[IndexVar, IndexVar]] = set()
    for _, leaf in iter_leaves(graph):
        for acc in leaf.factors:
            if not acc.is_sparse:
                continue
            chain = [ix for ix in acc.indices if ix in within]
            pairs.update((a, b) for i, a in enumerate(chain) for b in chain[i + 1:])
    return pairs


def validate_big(graph: Big) -> list[str]:
    """All validity violations of a graph (empty list means valid).

    Checks: every compressed access is iterated in mode order on its leaf
    path; no index repeats on a root-to-leaf path; every body index is bound;
    each temporary carries exactly the producer/consumer shared indices; and a
    common order of each temporary's indices is achievable on both sides
    (sparse storage never forces opposite orders across the split).
    """
    problems: list[str] = []

    for path, leaf in iter_leaves(graph):
        if len(set(path)) != len(path):
            problems.append(f"index repeats on path ({','.join(i.name for i in path)})")
        pos = {ix: k for k, ix in enumerate(path)}
        for acc in leaf.factors + (leaf.lhs,):
            missing = [ix for ix in acc.indices if ix not in pos]
            if missing:
                problems.append(
                    f"{acc} uses unbound index {missing[0].name} at leaf ({leaf.body_str()})"
                )
                continue
            if acc.is_sparse:
                positions = [pos[ix] for ix in acc.indices]
                if positions != sorted(positions):
                    problems.append(
                        f"compressed access {acc} iterated out of mode order on path "
                        f"({','.join(i.name for i in path)})"
                    )

    def check_nodes(g: Big, bound: set[IndexVar]):
        if isinstance(g, Lig):
            return
        below = bound | set(g.prefix)
        p_local = {ix for _, lf in iter_leaves(g.producer) for a in lf.factors for ix in a.indices}
        c_local = {
            ix
            for _, lf in iter_leaves(g.consumer)
            for a in lf.factors + (lf.lhs,)
            if a.tensor != g.temp.name
            for ix in a.indices
        }
        expect = (p_local - below) & (c_local - below)
        if set(g.temp.indices) != expect:
            problems.append(
                f"temp {g.temp} should carry {{{','.join(sorted(i.name for i in expect))}}}"
            )
        shared = set(g.temp.indices)
        forced = _forced_pairs(g.producer, shared) | _forced_pairs(g.consumer, shared)
        for a, b in forced:
            if (b, a) in forced:
                problems.append(
                    f"shared indices {a.name},{b.name} of temp {g.temp.name} are pinned "
                    f"to opposite orders by compressed accesses"
                )
                break
        check_nodes(g.producer, below)
        check_nodes(g.consumer, below)

    check_nodes(graph, set())
    return problems


# ---------------------------------------------------------------------------
# Linearization (branch elimination)


def _merge_order(
    inner: set[IndexVar],
    priority: dict[IndexVar, int],
    edges: set[tuple[IndexVar, IndexVar]],
) -> tuple[IndexVar, ...]:
    """Topological order of ``inner`` minimizing ``priority``, respecting edges."""
    preds: dict[IndexVar, set[IndexVar]] = {ix: set() for ix in inner}
    for a, b in edges:
        if a in inner and b in inner:
            preds[b].add(a)
    placed: list[IndexVar] = []
    remaining = set(inner)
    while remaining:
        ready = [ix for ix in remaining if not (preds[ix] & remaining)]
        nxt = min(ready, key=lambda ix: priority[ix])
        placed.append(nxt)
        remaining.discard(nxt)
    return tuple(placed)


def linearize(graph: Big) -> Lig:
    """Fold every branch back into a single loop chain over the same factors.

    Innermost branches are eliminated first: the producer's contraction is
    substituted for its temporary inside the consumer and the contracted
    indices rejoin the loop chain at constraint-respecting positions.
    """

    def fold(g: Big) -> Big:
        if isinstance(g, Lig):
            return g
        p = fold(g.producer)
        c = fold(g.consumer)
        assert isinstance(p, Lig) and isinstance(c, Lig)
        inner = set(p.order) | set(c.order)
        priority = {ix: k for k, ix in enumerate(list(c.order) + [x for x in p.order if x not in c.order])}
        edges: set[tuple[IndexVar, IndexVar]] = set()
        for acc in p.factors + c.factors:
            if acc.is_sparse:
                keep = [ix for ix in acc.indices if ix in inner]
                edges.update(zip(keep, keep[1:]))
        order = g.prefix + _merge_order(inner, priority, edges)
        spliced: list[TensorAccess] = []
        for acc in c.factors:
            if acc.tensor == g.temp.name:
                spliced.extend(p.factors)
            else:
                spliced.append(acc)
        return Lig(order, c.lhs, tuple(spliced))

    result = fold(graph)
    assert isinstance(result, Lig)
    violations = validate_big(result)
    if violations:  # pragma: no cover - guarded by construction
        raise IgraphError("linearize produced an invalid graph: " + "; ".join(violations))
    return result


# ---------------------------------------------------------------------------
# Canonical form, hashing, serialization


def canonicalize(graph: Big) -> Big:
    """Rename temporaries to t1, t2, ... in preorder."""
    temps = list(iter_temps(graph))
    names = [t.name for t in temps]
    if len(set(names)) != len(names):
        raise IgraphError("temporary names must be unique before canonicalization")
    mapping = {t.name: f"t{k + 1}" for k, t in enumerate(temps)}
    if all(old == new for old, new in mapping.items()):
        return graph

    def rename_access(acc: TensorAccess) -> TensorAccess:
        if acc.tensor in mapping:
            return TensorAccess(mapping[acc.tensor], acc.indices, acc.levels)
        return acc

    def walk(g: Big) -> Big:
        if isinstance(g, Lig):
            return Lig(g.order, rename_access(g.lhs), tuple(rename_access(a) for a in g.factors))
        return BigNode(
            g.prefix,
            walk(g.producer),
            walk(g.consumer),
            TempTensor(mapping[g.temp.name], g.temp.indices),
        )

    return walk(graph)


def to_json(graph: Big) -> dict:
    def acc(a: TensorAccess) -> dict:
        return {
            "tensor": a.tensor,
            "indices": [ix.name for ix in a.indices],
            "levels": "".join(lv.value for lv in a.levels),
        }

    if isinstance(graph, Lig):
        return {
            "kind": "lig",
            "order": [ix.name for ix in graph.order],
            "lhs": acc(graph.lhs),
            "factors": [acc(a) for a in graph.factors],
        }
    return {
        "kind": "big",
        "fused": [ix.name for ix in graph.prefix],
        "temp": {"name": graph.temp.name, "indices": [ix.name for ix in graph.temp.indices]},
        "producer": to_json(graph.producer),
        "consumer": to_json(graph.consumer),
    }


def from_json(doc: dict, vars_by_name: dict[str, IndexVar] | None = None) -> Big:
    vars_by_name = vars_by_name if vars_by_name is not None else {}

    def var(n: str) -> IndexVar:
        if n not in vars_by_name:
            vars_by_name[n] = IndexVar(n)
        return vars_by_name[n]

    def acc(d: dict) -> TensorAccess:
        levels = tuple(FormatLevel(ch) for ch in d["levels"])
        return TensorAccess(d["tensor"], tuple(var(n) for n in d["indices"]), levels)

    if doc["kind"] == "lig":
        return Lig(
            tuple(var(n) for n in doc["order"]),
            acc(doc["lhs"]),
            tuple(acc(a) for a in doc["factors"]),
        )
    return BigNode(
        tuple(var(n) for n in doc["fused"]),
        from_json(doc["producer"], vars_by_name),
        from_json(doc["consumer"], vars_by_name),
        TempTensor(doc["temp"]["name"], tuple(var(n) for n in doc["temp"]["indices"])),
    )


def structural_id(graph: Big) -> str:
    """Stable hash of the canonical graph; factor order inside a body is ignored."""

    def norm(g: Big):
        if isinstance(g, Lig):
            facts = sorted((a.tensor, tuple(i.name for i in a.indices)) for a in g.factors)
            return ("lig", tuple(i.name for i in g.order), g.lhs.key(), tuple(facts))
        return (
            "big",
            tuple(i.name for i in g.prefix),
            (g.temp.name, tuple(i.name for i in g.temp.indices)),
            norm(g.producer),
            norm(g.consumer),
        )

    blob = json.dumps(norm(canonicalize(graph)), separators=(",", ":"))
    return hashlib.sha1(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Schedule:
    """One realization of a contraction: a validated loop tree plus its id."""

    id: str
    graph: Big
    expr: ContractionExpr

    @classmethod
    def of(cls, graph: Big, expr: ContractionExpr) -> "Schedule":
        g = canonicalize(graph)
        return cls(structural_id(g), g, expr)


# ---------------------------------------------------------------------------
# Pretty printing (forall/where IR text)


def pretty(graph: Big, indent: int | None = None) -> str:
    """Render the nested forall/where IR text of a graph."""

    def render(g: Big, depth: int) -> str:
        pad = "" if indent is None else "\n" + " " * (indent * depth)
        if isinstance(g, Lig):
            text = g.body_str()
            for ix in reversed(g.order):
                text = f"forall({ix.name}, {text})"
            return text
        inner = (
            f"where({render(g.consumer, depth + 1)},{pad if indent else ' '}"
            f"{render(g.producer, depth + 1)})"
        )
        for ix in reversed(g.prefix):
            inner = f"forall({ix.name}, {inner})"
        return inner

    return render(graph, 1)
