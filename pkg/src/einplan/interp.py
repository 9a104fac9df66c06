"""Concrete execution: dense reference contraction and a schedule interpreter.

The interpreter executes a loop tree directly over a CSF-stored sparse input
(stored coordinates only, no densification) and counts every innermost-body
execution per leaf, so measured trip counts are comparable with the symbolic
time polynomial evaluated at measured prefix-nnz values.  Schedules are
compiled to specialized Python loop nests once and cached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .expr import ContractionExpr, IndexVar, TensorAccess
from .igraph import Big, BigNode, Lig, Schedule, iter_leaves, iter_temps


class InterpError(ValueError):
    pass


@dataclass
class DenseTensor:
    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(self.dims)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "DenseTensor":
        dims = tuple(dims)
        return cls(dims, np.zeros(dims))


@dataclass
class SparseCsf:
    """Compressed sparse fiber storage: one (pos, crd) pair per level.

    ``pos[d][p]..pos[d][p+1]`` are the children of the p-th stored node at
    level d-1 (a single virtual root precedes level 0); ``crd[d][q]`` is the
    coordinate of stored node q.  Raw sorted coordinates are kept alongside
    for oracle recounts.
    """

    dims: tuple[int, ...]
    pos: list[np.ndarray]
    crd: list[np.ndarray]
    vals: np.ndarray
    coords: np.ndarray

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return len(self.vals)

    @classmethod
    def from_coords(cls, dims: Sequence[int], coords, vals) -> "SparseCsf":
        dims = tuple(int(d) for d in dims)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(dims))
        vals = np.asarray(vals, dtype=np.float64).reshape(-1)
        if len(coords) != len(vals):
            raise InterpError("coordinate and value counts differ")
        n = len(coords)
        if n:
            if coords.min() < 0 or (coords >= np.array(dims)).any():
                raise InterpError("coordinate out of range")
            perm = np.lexsort(tuple(coords[:, d] for d in reversed(range(len(dims)))))
            coords, vals = coords[perm], vals[perm]
            if n > 1 and (np.diff(coords, axis=0) == 0).all(axis=1).any():
                raise InterpError("duplicate coordinates")
        pos_arrays: list[np.ndarray] = []
        crd_arrays: list[np.ndarray] = []
        # prev_new[r] marks rows opening a new stored node one level up; the
        # virtual root opens at row 0.
        prev_new = np.zeros(n, dtype=bool)
        if n:
            prev_new[0] = True
        for d in range(len(dims)):
            if n == 0:
                pos_arrays.append(np.zeros(2 if d == 0 else 1, dtype=np.int64))
                crd_arrays.append(np.zeros(0, dtype=np.int64))
                continue
            change = np.empty(n, dtype=bool)
            change[0] = True
            change[1:] = coords[1:, d] != coords[:-1, d]
            new_node = prev_new | change
            node_rows = np.flatnonzero(new_node)
            crd_arrays.append(coords[node_rows, d].copy())
            node_id_at_row = np.cumsum(new_node) - 1
            parent_rows = np.flatnonzero(prev_new)
            pos = np.empty(len(parent_rows) + 1, dtype=np.int64)
            pos[:-1] = node_id_at_row[parent_rows]
            pos[-1] = node_id_at_row[-1] + 1
            pos_arrays.append(pos)
            prev_new = new_node
        return cls(dims, pos_arrays, crd_arrays, vals, coords)

    @classmethod
    def from_dense(cls, arr) -> "SparseCsf":
        arr = np.asarray(arr, dtype=np.float64)
        coords = np.argwhere(arr != 0)
        return cls.from_coords(arr.shape, coords, arr[arr != 0])

    @classmethod
    def random(cls, dims: Sequence[int], sparsity: float, seed: int) -> "SparseCsf":
        """Uniform fill: each entry nonzero with probability ``sparsity``."""
        rng = np.random.default_rng(seed)
        values = rng.random(tuple(dims))
        mask = rng.random(tuple(dims)) < sparsity
        coords = np.argwhere(mask)
        return cls.from_coords(dims, coords, values[mask])

    def to_dense(self) -> DenseTensor:
        out = np.zeros(self.dims)
        if len(self.coords):
            out[tuple(self.coords.T)] = self.vals
        return DenseTensor(self.dims, out)


def measured_nnz_prefix(t: SparseCsf, d: int) -> int:
    """Count of distinct nonempty coordinate prefixes of length ``d``."""
    if not 1 <= d <= t.order:
        raise InterpError(f"prefix depth {d} out of range for order-{t.order} tensor")
    return len(t.crd[d - 1])


@dataclass
class ExecStats:
    leaf_trip_counts: dict[int, int]
    total: int


def _letters(names: Sequence[str]) -> dict[str, str]:
    alphabet = "abcdefghijklmnopqrstuvwxyz"
    if len(names) > len(alphabet):
        raise InterpError("too many distinct indices for einsum subscripts")
    return {n: alphabet[k] for k, n in enumerate(sorted(names))}


def _as_dense_array(t) -> np.ndarray:
    if isinstance(t, SparseCsf):
        return t.to_dense().data
    if isinstance(t, DenseTensor):
        return t.data
    return np.asarray(t, dtype=np.float64)


def index_extents(expr: ContractionExpr, tensors: Mapping[str, object]) -> dict[str, int]:
    """Extent of every index, cross-checked across all accesses using it."""
    extents: dict[str, int] = {}
    for acc in expr.inputs:
        if acc.tensor not in tensors:
            raise InterpError(f"missing tensor {acc.tensor}")
        t = tensors[acc.tensor]
        dims = t.dims if hasattr(t, "dims") else np.asarray(t).shape
        if len(dims) != acc.order:
            raise InterpError(f"tensor {acc.tensor} has {len(dims)} modes, access has {acc.order}")
        for ix, d in zip(acc.indices, dims):
            if extents.setdefault(ix.name, int(d)) != int(d):
                raise InterpError(f"dimension mismatch on index {ix.name}")
    return extents


def reference_contract(expr: ContractionExpr, tensors: Mapping[str, object]) -> DenseTensor:
    """Dense full-iteration contraction (the correctness oracle)."""
    extents = index_extents(expr, tensors)
    letters = _letters(list(extents))
    subs = ",".join("".join(letters[ix.name] for ix in acc.indices) for acc in expr.inputs)
    out_sub = "".join(letters[ix.name] for ix in expr.output.indices)
    arrays = [_as_dense_array(tensors[acc.tensor]) for acc in expr.inputs]
    result = np.einsum(f"{subs}->{out_sub}", *arrays)
    out_dims = tuple(extents[ix.name] for ix in expr.output.indices)
    return DenseTensor(out_dims, np.asarray(result).reshape(out_dims))


# ---------------------------------------------------------------------------
# Schedule interpreter (compiled loop nests)
#
# Generated-name conventions keep user index/tensor names from colliding:
# loop variables are v_<index>, CSF positions _q<level>, trip counters _c<k>,
# dense inputs d_<tensor>, sparse input arrays s_pos<l>/s_crd<l>/s_vals,
# workspaces w_<temp>, output out_d.


class _Codegen:
    def __init__(self, schedule: Schedule, extents: dict[str, int]):
        self.expr = schedule.expr
        self.graph = schedule.graph
        self.extents = extents
        sparse = self.expr.sparse_input
        self.sparse_name = sparse.tensor if sparse else ""
        self.chain = tuple(ix.name for ix in sparse.indices) if sparse else ()
        self.lines: list[str] = []
        self.leaf_id = 0
        self.temp_names = {t.name for t in iter_temps(self.graph)}
        self.temp_dims: dict[str, tuple[int, ...]] = {
            t.name: tuple(extents[ix.name] for ix in t.indices) for t in iter_temps(self.graph)
        }

    def emit(self, text: str, depth: int):
        self.lines.append("    " * depth + text)

    def flat_index(self, acc: TensorAccess, arr: str) -> str:
        dims = [self.extents[ix.name] for ix in acc.indices]
        parts = []
        for k, ix in enumerate(acc.indices):
            stride = math.prod(dims[k + 1:])
            parts.append(f"v_{ix.name}" if stride == 1 else f"v_{ix.name}*{stride}")
        return f"{arr}[{' + '.join(parts)}]" if parts else f"{arr}[0]"

    def value_of(self, acc: TensorAccess, qvar: str | None) -> str:
        if acc.tensor == self.sparse_name:
            return f"s_vals[{qvar}]"
        if acc.tensor in self.temp_names:
            if not acc.indices:
                return f"w_{acc.tensor}"
            return self.flat_index(acc, f"w_{acc.tensor}")
        if acc.tensor == self.expr.output.tensor:
            return self.flat_index(acc, "out_d")
        return self.flat_index(acc, f"d_{acc.tensor}")

    def contains_sparse(self, g: Big) -> bool:
        return any(
            a.tensor == self.sparse_name for _, leaf in iter_leaves(g) for a in leaf.factors
        )

    def loop(self, ix: IndexVar, sparse_here: bool, d: int, qvar: str | None, depth: int):
        """Emit one loop; returns (new chain depth, new position var, new indent)."""
        if sparse_here:
            if d == 0:
                rng = "range(s_pos0[0], s_pos0[1])"
            else:
                rng = f"range(s_pos{d}[{qvar}], s_pos{d}[{qvar} + 1])"
            q = f"_q{d}"
            self.emit(f"for {q} in {rng}:", depth)
            self.emit(f"v_{ix.name} = s_crd{d}[{q}]", depth + 1)
            return d + 1, q, depth + 1
        self.emit(f"for v_{ix.name} in range({self.extents[ix.name]}):", depth)
        return d, qvar, depth + 1

    def gen(self, g: Big, d: int, qvar: str | None, depth: int):
        if isinstance(g, Lig):
            has_b = bool(self.sparse_name) and any(
                a.tensor == self.sparse_name for a in g.factors
            )
            for ix in g.order:
                sparse_here = has_b and d < len(self.chain) and ix.name == self.chain[d]
                d, qvar, depth = self.loop(ix, sparse_here, d, qvar, depth)
            leaf = self.leaf_id
            self.leaf_id += 1
            product = " * ".join(self.value_of(a, qvar) for a in g.factors)
            self.emit(f"_c{leaf} += 1", depth)
            if g.lhs.tensor in self.temp_names and not g.lhs.indices:
                self.emit(f"w_{g.lhs.tensor} = w_{g.lhs.tensor} + {product}", depth)
            else:
                self.emit(f"{self.value_of(g.lhs, qvar)} += {product}", depth)
            return
        below = self.contains_sparse(g) if self.sparse_name else False
        for ix in g.prefix:
            sparse_here = below and d < len(self.chain) and ix.name == self.chain[d]
            d, qvar, depth = self.loop(ix, sparse_here, d, qvar, depth)
        name = g.temp.name
        if g.temp.indices:
            size = math.prod(self.temp_dims[name])
            self.emit(f"w_{name} = [0.0] * {size}", depth)
        else:
            self.emit(f"w_{name} = 0.0", depth)
        self.gen(g.producer, d, qvar, depth)
        self.gen(g.consumer, d, qvar, depth)

    def build(self) -> tuple[str, int]:
        args = []
        for acc in self.expr.inputs:
            if acc.tensor == self.sparse_name:
                for lvl in range(len(self.chain)):
                    args += [f"s_pos{lvl}", f"s_crd{lvl}"]
                args.append("s_vals")
            else:
                args.append(f"d_{acc.tensor}")
        args.append("out_d")
        self.emit(f"def _run({', '.join(args)}):", 0)
        n_leaves = sum(1 for _ in iter_leaves(self.graph))
        for k in range(n_leaves):
            self.emit(f"_c{k} = 0", 1)
        self.gen(self.graph, 0, None, 1)
        self.emit(f"return ({', '.join(f'_c{k}' for k in range(n_leaves))},)", 1)
        return "\n".join(self.lines), n_leaves


_CODE_CACHE: dict[tuple, object] = {}


def interpret(
    schedule: Schedule,
    tensors: Mapping[str, object],
    binding=None,
) -> tuple[DenseTensor, ExecStats]:
    """Execute a schedule over concrete tensors; returns output and trip counts.

    Temporaries are zero-initialized at every fused-prefix iteration and the
    producer subtree runs before the consumer.  The sparse input must be a
    :class:`SparseCsf`; its chain loops iterate stored coordinates only.
    """
    expr = schedule.expr
    extents = index_extents(expr, tensors)
    if binding is not None:
        for ix in expr.index_vars():
            if ix.name in extents and ix.bound in binding.bounds:
                if binding.bounds[ix.bound] != extents[ix.name]:
                    raise InterpError(f"binding disagrees with tensor extent on index {ix.name}")

    key = (schedule.id, tuple(sorted(extents.items())))
    if key not in _CODE_CACHE:
        cg = _Codegen(schedule, extents)
        src, _ = cg.build()
        ns: dict = {}
        exec(compile(src, f"<schedule {schedule.id}>", "exec"), ns)
        _CODE_CACHE[key] = ns["_run"]
    run = _CODE_CACHE[key]

    sparse = expr.sparse_input
    call = []
    for acc in expr.inputs:
        t = tensors[acc.tensor]
        if sparse is not None and acc.tensor == sparse.tensor:
            if not isinstance(t, SparseCsf):
                raise InterpError(f"sparse input {acc.tensor} must be a SparseCsf")
            for lvl in range(t.order):
                call += [t.pos[lvl].tolist(), t.crd[lvl].tolist()]
            call.append(t.vals.tolist())
        else:
            call.append(_as_dense_array(t).ravel().tolist())
    out_dims = tuple(extents[ix.name] for ix in expr.output.indices)
    out_flat = [0.0] * math.prod(out_dims)
    call.append(out_flat)

    counts = run(*call)
    stats = ExecStats({k: int(c) for k, c in enumerate(counts)}, int(sum(counts)))
    out = DenseTensor(out_dims, np.array(out_flat).reshape(out_dims))
    return out, stats


def max_rel_error(got: DenseTensor, want: DenseTensor) -> float:
    scale = max(1.0, float(np.abs(want.data).max(initial=0.0)))
    return float(np.abs(got.data - want.data).max(initial=0.0)) / scale


# ---------------------------------------------------------------------------
# Text tensor files


def write_tensor_text(path: str, t: SparseCsf | DenseTensor) -> None:
    if isinstance(t, DenseTensor):
        t = SparseCsf.from_dense(t.data)
    with open(path, "w") as fh:
        fh.write("dims " + " ".join(str(d) for d in t.dims) + "\n")
        for coord, val in zip(t.coords, t.vals):
            fh.write(" ".join(str(int(c)) for c in coord) + f" {val!r}\n")


def read_tensor_text(path: str) -> SparseCsf:
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "dims":
            raise InterpError(f"{path}: expected 'dims d1 d2 ...' header")
        dims = [int(d) for d in header[1:]]
        coords, vals = [], []
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != len(dims) + 1:
                raise InterpError(f"{path}: bad entry {line.strip()!r}")
            coords.append([int(p) for p in parts[:-1]])
            vals.append(float(parts[-1]))
    return SparseCsf.from_coords(dims, coords, vals)
