import numpy as np
import pytest

from einplan.expr import parse_einsum, parse_format_pattern
from einplan.generate import GenConfig, gen_schedules
from einplan.igraph import Lig, Schedule, loopfuse, reorder
from einplan import interp, smt


KERNEL = "A(l,m,n)=B(i,j,k)*C(i,l)*D(j,m)*E(k,n)"


@pytest.fixture(scope="session")
def kernel():
    return parse_einsum(KERNEL, {"B": parse_format_pattern("ccc")})


@pytest.fixture(scope="session")
def ixs(kernel):
    return {ix.name: ix for ix in kernel.index_vars()}


@pytest.fixture(scope="session")
def figures(kernel, ixs):
    """The five motivating schedules, built through loopfuse/reorder."""

    def order(*names):
        return tuple(ixs[n] for n in names)

    lig = Lig(order("l", "m", "n", "i", "j", "k"), kernel.output, kernel.inputs)
    g_b = loopfuse(lig, [], 3, True)
    g_e = loopfuse(lig, [], 2, True)
    g_d = loopfuse(g_e, [1], 2, True)
    g_c = loopfuse(reorder(g_e, [1], order("m", "k", "n", "j")), [1], 2, True)
    return {
        name: Schedule.of(g, kernel)
        for name, g in [("a", lig), ("b", g_b), ("c", g_c), ("d", g_d), ("e", g_e)]
    }


@pytest.fixture(scope="session")
def space(kernel):
    """Full enumeration at the default memory-depth budget."""
    return gen_schedules(kernel, GenConfig(max_memory_depth=2))


def make_tensors(expr, extents, sparsity, seed):
    rng = np.random.default_rng(seed + 1)
    tensors = {}
    sparse = expr.sparse_input
    for acc in expr.inputs:
        dims = tuple(extents[ix.name] for ix in acc.indices)
        if sparse is not None and acc.tensor == sparse.tensor:
            tensors[acc.tensor] = interp.SparseCsf.random(dims, sparsity, seed)
        else:
            tensors[acc.tensor] = rng.random(dims)
    return tensors


SMALL_EXTENTS = {"i": 5, "j": 5, "k": 5, "l": 4, "m": 4, "n": 4}


@pytest.fixture(scope="session")
def small_tensors(kernel):
    return make_tensors(kernel, SMALL_EXTENTS, 0.3, seed=42)


@pytest.fixture(scope="session")
def solver_cmd():
    cmd = smt.find_solver()
    if cmd is None:
        pytest.skip("no SMT solver available (install tools/smt or put z3 on PATH)")
    return cmd


@pytest.fixture(scope="session")
def solver(solver_cmd):
    with smt.SolverProcess(solver_cmd, timeout=10.0) as proc:
        yield proc


CASE1_BOUNDS = {"I": 1800, "J": 800, "K": 1000, "L": 64, "M": 16, "N": 32}
CASE2_BOUNDS = {"I": 1800, "J": 1600, "K": 2000, "L": 64, "M": 16, "N": 32}

RANGES_31 = [
    ("I", 1, 1800),
    ("J", 1, 1600),
    ("K", 400, 4000),
    ("L", 8, 256),
    ("M", 8, 256),
    ("N", 8, 256),
    ("sparsity(B)", 0.001, 0.01),
]
