"""The pruning pipeline: symbolic stages 1-2, concrete stages 4-5.

Stage 1 drops schedules with too-deep temporaries and groups the survivors
into buckets sharing identical (time, memory) cost polynomials.  Stage 2
keeps the Pareto frontier of (loop depth, memory depth).  Stage 3 (SMT
dominance over symbolic costs) lives in :mod:`einplan.smt`.  Stage 4
evaluates the polynomials with concrete values and keeps the fastest
schedules whose temporaries fit the cache budget; stage 5 breaks remaining
ties with a stride-based cache access model.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .cost import Binding, CostProfile, aux_bytes, evaluate, profile
from .igraph import BigNode, Lig, Schedule, iter_leaves, to_json
from .expr import ContractionExpr, TensorAccess


@dataclass
class PipelineConfig:
    mem_depth_threshold: int = 2
    llc_bytes: int = 32 * 2**20
    llc_fraction: float = 0.5
    skip_stage2: bool = False
    skip_stage3: bool = False
    tie_break_seed: int | None = None

    def __post_init__(self):
        if not 0 < self.llc_fraction <= 1:
            raise ValueError("llc_fraction must be in (0, 1]")


@dataclass
class Bucket:
    """Schedules sharing identical canonical time and memory polynomials."""

    key: tuple[str, str]
    members: list[Schedule]
    prof: CostProfile


def _bucketize(schedules: Sequence[Schedule], profiles: dict[str, CostProfile]) -> list[Bucket]:
    grouped: dict[tuple[str, str], list[Schedule]] = {}
    for s in schedules:
        p = profiles[s.id]
        grouped.setdefault((p.time.text(), p.mem.text()), []).append(s)
    out = []
    for key in sorted(grouped):
        members = sorted(grouped[key], key=lambda s: s.id)
        out.append(Bucket(key, members, profiles[members[0].id]))
    return out


def stage1_memory_depth(schedules: Sequence[Schedule], threshold: int) -> list[Bucket]:
    """Drop schedules whose widest temporary exceeds ``threshold`` dimensions."""
    profiles = {s.id: profile(s) for s in schedules}
    keep = [s for s in schedules if profiles[s.id].mem_depth <= threshold]
    return _bucketize(keep, profiles)


def stage2_depth_poset(buckets: Sequence[Bucket]) -> list[Bucket]:
    """Keep the (loop depth, memory depth) Pareto frontier.

    A schedule is removed when another one in the incoming set is at least as
    good in both depths and strictly better in one; dominance is judged
    against the original set, so removal order cannot matter.
    """
    pairs = {id(b): (b.prof.loop_depth, b.prof.mem_depth) for b in buckets}
    all_pairs = set(pairs.values())

    def dominated(p: tuple[int, int]) -> bool:
        ls, ms = p
        return any(
            (ls > lc and ms >= mc) or (ls >= lc and ms > mc) for lc, mc in all_pairs
        )

    return [b for b in buckets if not dominated(pairs[id(b)])]


def stage4_concrete(
    buckets: Sequence[Bucket], binding: Binding, cfg: PipelineConfig
) -> list[Schedule]:
    """Minimum evaluated time among schedules fitting the cache budget.

    If nothing fits the budget the filter is waived rather than failing:
    a scheduler has to return something.
    """
    budget = cfg.llc_fraction * cfg.llc_bytes
    candidates = [(b, s) for b in buckets for s in b.members]
    fitting = [(b, s) for b, s in candidates if aux_bytes(s, binding) <= budget]
    pool = fitting if fitting else list(candidates)
    times = {s.id: evaluate(b.prof.time, binding) for b, s in pool}
    best = min(times.values())
    return sorted((s for _, s in pool if times[s.id] == best), key=lambda s: s.id)


def _stride_cost(schedule: Schedule, bounds: dict[str, int] | None = None) -> float:
    """Total access stride of each leaf's innermost loop index.

    Per leaf and per tensor accessed there: zero when the index is the
    tensor's last mode or absent, otherwise the row-major stride (product of
    the extents of the modes after it).
    """
    total = 0.0
    for path, leaf in iter_leaves(schedule.graph):
        if not path:
            continue
        inner = path[-1]
        for acc in leaf.factors + (leaf.lhs,):
            if inner not in acc.indices or acc.indices[-1] == inner:
                continue
            k = acc.indices.index(inner)
            stride = 1.0
            for ix in acc.indices[k + 1:]:
                stride *= (bounds or {}).get(ix.bound, 100)
            total += stride
    return total


def _natural_order_score(schedule: Schedule) -> int:
    """How many accesses see their modes in loop order (higher is better)."""
    score = 0
    for path, leaf in iter_leaves(schedule.graph):
        rank = {ix: k for k, ix in enumerate(path)}
        for acc in leaf.factors + (leaf.lhs,):
            ranks = [rank[ix] for ix in acc.indices if ix in rank]
            if ranks == sorted(ranks):
                score += 1
    return score


def stage5_cache(
    schedules: Sequence[Schedule],
    binding: Binding | None = None,
    tie_break_seed: int | None = None,
) -> Schedule:
    """Pick one schedule by cache-friendliness.

    Lowest total stride cost wins; ties prefer loop orders agreeing with the
    tensors' own mode orders; remaining ties go to the lowest structural hash
    (or a seeded random pick when ``tie_break_seed`` is given).
    """
    if not schedules:
        raise ValueError("stage 5 needs at least one schedule")
    bounds = binding.bounds if binding is not None else None
    scored = [((_stride_cost(s, bounds), -_natural_order_score(s)), s) for s in schedules]
    best_key = min(key for key, _ in scored)
    finalists = sorted((s for key, s in scored if key == best_key), key=lambda s: s.id)
    if tie_break_seed is not None and len(finalists) > 1:
        return random.Random(tie_break_seed).choice(finalists)
    return finalists[0]


@dataclass
class Report:
    """Per-stage survivor counts and the selected schedule."""

    expr: str
    stage_counts: dict[str, int]
    chosen: Schedule | None
    chosen_time: float | None = None
    chosen_mem_bytes: int | None = None
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        doc = {
            "expr": self.expr,
            "stage_counts": self.stage_counts,
            "warnings": self.warnings,
        }
        if self.chosen is not None:
            doc["chosen"] = {
                "id": self.chosen.id,
                "graph": to_json(self.chosen.graph),
                "time_value": self.chosen_time,
                "aux_bytes": self.chosen_mem_bytes,
            }
        return doc


def run_pipeline(
    expr: ContractionExpr,
    gen_cfg=None,
    pipe_cfg: PipelineConfig | None = None,
    constraints=None,
    binding: Binding | None = None,
    solver=None,
) -> Report:
    """Enumerate then run stages 1-5; stages 4-5 need a concrete binding."""
    from .generate import GenConfig, gen_schedules
    from . import smt

    gen_cfg = gen_cfg or GenConfig()
    cfg = pipe_cfg or PipelineConfig()
    warnings: list[str] = []

    schedules = gen_schedules(expr, gen_cfg)
    counts = {"generated": len(schedules)}

    buckets = stage1_memory_depth(schedules, cfg.mem_depth_threshold)
    counts["stage1"] = sum(len(b.members) for b in buckets)

    if not cfg.skip_stage2:
        buckets = stage2_depth_poset(buckets)
    counts["stage2"] = sum(len(b.members) for b in buckets)

    if not cfg.skip_stage3:
        if solver is None:
            solver = smt.find_solver()
        if solver is None:
            warnings.append("no SMT solver available; stage 3 skipped")
        else:
            cs = constraints if constraints is not None else smt.ConstraintSet.inferred_only(expr)
            buckets, unknowns = smt.stage3_prune(buckets, cs, solver)
            if unknowns:
                warnings.append(f"{unknowns} dominance queries returned unknown; kept those schedules")
    counts["stage3"] = sum(len(b.members) for b in buckets)

    if binding is None:
        return Report(str(expr), counts, None, warnings=warnings)

    survivors = stage4_concrete(buckets, binding, cfg)
    counts["stage4"] = len(survivors)
    chosen = stage5_cache(survivors, binding, cfg.tie_break_seed)
    counts["stage5"] = 1
    time_val = evaluate(profile(chosen).time, binding)
    return Report(
        str(expr),
        counts,
        chosen,
        chosen_time=float(time_val),
        chosen_mem_bytes=aux_bytes(chosen, binding),
        warnings=warnings,
    )
