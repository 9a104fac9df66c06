"""Schedule enumeration and cost-based pruning for sparse einsum contractions."""

from .expr import (
    COMPRESSED,
    DENSE,
    ContractionExpr,
    ExprError,
    FormatLevel,
    IndexVar,
    TensorAccess,
    access_constraints,
    indices_of,
    parse_einsum,
    parse_format_pattern,
)
from .igraph import (
    Big,
    BigNode,
    IgraphError,
    Lig,
    Schedule,
    TempTensor,
    linearize,
    loopfuse,
    pretty,
    reorder,
    temp_indices,
    validate_big,
)
from .cost import Binding, CostProfile, SymPoly, aux_bytes, depths, evaluate, memory_complexity, profile, time_complexity
from .generate import GenConfig, dedup, gen_ligs, gen_schedules
from .prune import Bucket, PipelineConfig, Report, run_pipeline, stage1_memory_depth, stage2_depth_poset, stage4_concrete, stage5_cache
from .smt import ConstraintSet, DominanceVerdict, SolverProcess, check_dominates, emit_smtlib, find_solver, infer_constraints, stage3_prune
from .interp import DenseTensor, ExecStats, SparseCsf, interpret, measured_nnz_prefix, reference_contract

__version__ = "0.1.0"
