"""Command-line driver: enumerate / prune / select / verify / emit.

Exit codes: 0 success, 1 usage error, 2 validation or verification failure,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost, emit as emit_mod, interp, smt
from .expr import ContractionExpr, ExprError, parse_einsum, parse_format_pattern
from .generate import GenConfig, GenerationCapExceeded, gen_schedules
from .igraph import IgraphError, Schedule, from_json, linearize, to_json, validate_big
from .prune import PipelineConfig, run_pipeline, stage1_memory_depth, stage2_depth_poset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: str | None, doc) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load_config(args) -> dict:
    if getattr(args, "config", None):
        return json.loads(Path(args.config).read_text())
    return {}

def _expr_from_args(args, config: dict) -> ContractionExpr:
    text = args.expr or config.get("expr")
    if not text:
        raise UsageError("an expression is required (--expr or config)")
    formats = {}
    for name, pattern in (config.get("formats") or {}).items():
        formats[name] = parse_format_pattern(pattern)
    for spec_text in args.sparse or []:
        if ":" not in spec_text:
            raise UsageError(f"--sparse expects NAME:pattern, got {spec_text!r}")
        name, pattern = spec_text.split(":", 1)
        formats[name] = parse_format_pattern(pattern)
    return parse_einsum(text, formats)


def _gen_cfg(args, config: dict) -> GenConfig:
    gen = config.get("gen", {})
    return GenConfig(
        max_memory_depth=args.max_memory_depth
        if args.max_memory_depth is not None
        else gen.get("max_memory_depth", 2),
        enable_split_mode_b=not args.no_split_mode_b and gen.get("enable_split_mode_b", True),
        dedup=not args.no_dedup and gen.get("dedup", True),
        cap=args.cap if args.cap is not None else gen.get("cap"),
    )


def _binding_from_file(path: str, expr: ContractionExpr) -> cost.Binding:
    doc = json.loads(Path(path).read_text())
    return cost.Binding.for_expr(
        expr,
        {str(k): int(v) for k, v in doc.get("bounds", {}).items()},
        {str(k): float(v) for k, v in doc.get("sparsity", {}).items()},
        elem_bytes=int(doc.get("elem_bytes", 4)),
    )


def _schedule_record(s: Schedule) -> dict:
    loop_depth, mem_depth = cost.depths(s)
    return {
        "id": s.id,
        "depth": loop_depth,
        "memdepth": mem_depth,
        "graph": to_json(s.graph),
        "pretty": emit_mod.emit_pseudo(s),
    }


def cmd_enumerate(args) -> int:
    config = _load_config(args)
    expr = _expr_from_args(args, config)
    schedules = gen_schedules(expr, _gen_cfg(args, config))
    doc = {
        "expr": str(expr),
        "formats": {
            acc.tensor: "".join(lv.value for lv in acc.levels) for acc in expr.inputs
        },
        "count": len(schedules),
        "schedules": [_schedule_record(s) for s in schedules],
    }
    _write_json(args.output, doc)
    return 0


def _constraints(args, config: dict, expr: ContractionExpr) -> smt.ConstraintSet:
    path = args.constraints or config.get("constraints")
    if path:
        return smt.ConstraintSet.from_json(json.loads(Path(path).read_text()), expr)
    return smt.ConstraintSet.inferred_only(expr)


def _solver_cmd(args, config: dict):
    if args.solver or config.get("solver"):
        import shlex

        return shlex.split(args.solver or config["solver"])
    return smt.find_solver()


def cmd_prune(args) -> int:
    config = _load_config(args)
    expr = _expr_from_args(args, config)
    schedules = gen_schedules(expr, _gen_cfg(args, config))
    counts = {"generated": len(schedules)}
    buckets = stage1_memory_depth(schedules, args.mem_depth_threshold)
    counts["stage1"] = sum(len(b.members) for b in buckets)
    if not args.skip_stage2:
        buckets = stage2_depth_poset(buckets)
    counts["stage2"] = sum(len(b.members) for b in buckets)
    warnings = []
    if not args.skip_stage3:
        solver = _solver_cmd(args, config)
        if solver is None:
            warnings.append("no SMT solver available; stage 3 skipped")
        else:
            cs = _constraints(args, config, expr)
            buckets, unknowns = smt.stage3_prune(buckets, cs, solver, args.timeout_ms)
            if unknowns:
                warnings.append(f"{unknowns} dominance queries returned unknown")
    counts["stage3"] = sum(len(b.members) for b in buckets)
    doc = {
        "expr": str(expr),
        "stage_counts": counts,
        "warnings": warnings,
        "frontier": [
            {
                "time": b.key[0],
                "mem": b.key[1],
                "loop_depth": b.prof.loop_depth,
                "mem_depth": b.prof.mem_depth,
                "schedules": [s.id for s in b.members],
            }
            for b in buckets
        ],
    }
    _write_json(args.output, doc)
    return 0


def cmd_select(args) -> int:
    config = _load_config(args)
    expr = _expr_from_args(args, config)
    binding_path = args.bounds or config.get("binding")
    if not binding_path:
        raise UsageError("select needs a binding file (--bounds)")
    binding = _binding_from_file(binding_path, expr)
    tie_seed = None
    if args.tie_break and args.tie_break != "hash":
        kind, _, seed = args.tie_break.partition(":")
        if kind != "random" or not seed.isdigit():
            raise UsageError("--tie-break takes 'hash' or 'random:SEED'")
        tie_seed = int(seed)
    pipe = PipelineConfig(
        mem_depth_threshold=args.mem_depth_threshold,
        llc_bytes=args.llc_bytes,
        llc_fraction=args.llc_fraction,
        skip_stage2=args.skip_stage2,
        skip_stage3=args.skip_stage3,
        tie_break_seed=tie_seed,
    )
    constraints = _constraints(args, config, expr) if not args.skip_stage3 else None
    solver = _solver_cmd(args, config) if not args.skip_stage3 else None
    report = run_pipeline(expr, _gen_cfg(args, config), pipe, constraints, binding, solver)
    doc = report.to_json()
    if report.chosen is not None:
        doc["chosen"]["pretty"] = emit_mod.emit_pseudo(report.chosen)
    _write_json(args.output, doc)
    return 0


def cmd_verify(args) -> int:
    config = _load_config(args)
    expr = _expr_from_args(args, config)
    extents: dict[str, int] = {}
    for item in args.extent or []:
        name, _, val = item.partition("=")
        if not val.isdigit():
            raise UsageError(f"--extent expects name=int, got {item!r}")
        extents[name] = int(val)
    for ix in expr.index_vars():
        extents.setdefault(ix.name, args.default_extent)

    rng = np.random.default_rng(args.seed)
    tensors: dict[str, object] = {}
    sparse = expr.sparse_input
    for acc in expr.inputs:
        dims = tuple(extents[ix.name] for ix in acc.indices)
        if sparse is not None and acc.tensor == sparse.tensor:
            tensors[acc.tensor] = interp.SparseCsf.random(dims, args.sparsity, args.seed)
        else:
            tensors[acc.tensor] = rng.random(dims)

    schedules = gen_schedules(expr, _gen_cfg(args, config))
    reference = interp.reference_contract(expr, tensors)
    bounds = {ix.bound: extents[ix.name] for ix in expr.index_vars()}
    nnz = {}
    if sparse is not None:
        t = tensors[sparse.tensor]
        nnz = {(sparse.tensor, d): interp.measured_nnz_prefix(t, d) for d in range(1, t.order + 1)}
    binding = cost.Binding.for_expr(expr, bounds, {}, nnz=nnz)

    failures = []
    for s in schedules:
        out, stats = interp.interpret(s, tensors)
        err = interp.max_rel_error(out, reference)
        if err > 1e-10:
            failures.append({"id": s.id, "check": "oracle", "rel_error": err})
        predicted = cost.evaluate(cost.time_complexity(s), binding)
        if predicted != stats.total:
            failures.append(
                {"id": s.id, "check": "trips", "measured": stats.total, "predicted": predicted}
            )
    sample = schedules[:: max(1, len(schedules) // max(1, args.linearize_samples))]
    for s in sample:
        lin = Schedule.of(linearize(s.graph), expr)
        out, _ = interp.interpret(lin, tensors)
        err = interp.max_rel_error(out, reference)
        if err > 1e-10:
            failures.append({"id": s.id, "check": "linearize", "rel_error": err})

    doc = {
        "expr": str(expr),
        "seed": args.seed,
        "schedules_checked": len(schedules),
        "linearize_checked": len(sample),
        "failures": failures,
    }
    _write_json(args.output, doc)
    return 0 if not failures else 2


def cmd_emit(args) -> int:
    doc = json.loads(Path(args.schedules).read_text())
    formats = {name: parse_format_pattern(p) for name, p in doc.get("formats", {}).items()}
    expr = parse_einsum(doc["expr"].replace(" ", ""), formats)
    record = next((r for r in doc["schedules"] if r["id"] == args.id), None)
    if record is None:
        raise ExprError(f"unknown schedule id {args.id!r}")
    graph = from_json(record["graph"], {ix.name: ix for ix in expr.index_vars()})
    violations = validate_big(graph)
    if violations:
        raise IgraphError("; ".join(violations))
    schedule = Schedule.of(graph, expr)
    if args.format == "pseudo":
        text = emit_mod.emit_pseudo(schedule) + "\n"
    else:
        text = emit_mod.emit_c(schedule)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.output).write_text(text)
    return 0


def _add_common(p: argparse.ArgumentParser, gen: bool = True):
    p.add_argument("--expr", help="contraction, e.g. 'A(l,m,n)=B(i,j,k)*C(i,l)*D(j,m)*E(k,n)'")
    p.add_argument(
        "--sparse",
        action="append",
        metavar="NAME:PATTERN",
        help="level formats over {d,c} for one tensor, e.g. B:ccc (repeatable)",
    )
    p.add_argument("--config", help="JSON run configuration file")
    p.add_argument("-o", "--output", help="output path (default stdout)")
    if gen:
        p.add_argument("--max-memory-depth", type=int, default=None)
        p.add_argument("--no-split-mode-b", action="store_true")
        p.add_argument("--no-dedup", action="store_true")
        p.add_argument("--cap", type=int, default=None)


def _add_prune_flags(p: argparse.ArgumentParser):
    p.add_argument("--mem-depth-threshold", type=int, default=2)
    p.add_argument("--skip-stage2", action="store_true")
    p.add_argument("--skip-stage3", action="store_true")
    p.add_argument("--constraints", help="JSON constraint file (ranges + user relations)")
    p.add_argument("--solver", help="SMT solver command (default: $EINPLAN_SOLVER, z3, or bundled shim)")
    p.add_argument("--timeout-ms", type=int, default=10_000)


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="einplan", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="generate the schedule space as JSON")
    _add_common(p)
    p.set_defaults(fn=cmd_enumerate)

    p = sub.add_parser("prune", help="run the compile-time stages 1-3")
    _add_common(p)
    _add_prune_flags(p)
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("select", help="run the full pipeline and pick one schedule")
    _add_common(p)
    _add_prune_flags(p)
    p.add_argument("--bounds", help="JSON binding file: bounds/sparsity/elem_bytes")
    p.add_argument("--llc-bytes", type=int, default=32 * 2**20)
    p.add_argument("--llc-fraction", type=float, default=0.5)
    p.add_argument("--tie-break", default="hash", help="'hash' or 'random:SEED'")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("verify", help="check every schedule against the dense oracle")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sparsity", type=float, default=0.3)
    p.add_argument("--extent", action="append", metavar="INDEX=N")
    p.add_argument("--default-extent", type=int, default=4)
    p.add_argument("--linearize-samples", type=int, default=25)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("emit", help="print one schedule as pseudo IR or C")
    p.add_argument("--schedules", required=True, help="schedules.json from 'enumerate'")
    p.add_argument("--id", required=True)
    p.add_argument("--format", choices=["pseudo", "c"], default="pseudo")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_emit)
    return top


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (smt.SolverError,) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 3
    except (ExprError, IgraphError, interp.InterpError, GenerationCapExceeded, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
