from .kernels import AssemblyError, assemble_system, potential_block, rect_integral
from .solve import (
    DENSE_PANEL_GUARD,
    MaxwellMatrix,
    SolveOptions,
    SolverError,
    solve,
    solve_accelerated,
    solve_dense,
)

__all__ = [
    "AssemblyError", "DENSE_PANEL_GUARD", "MaxwellMatrix", "SolveOptions",
    "SolverError", "assemble_system", "potential_block", "rect_integral",
    "solve", "solve_accelerated", "solve_dense",
]
