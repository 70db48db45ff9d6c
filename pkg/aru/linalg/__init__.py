from aru.linalg.kernel import (
    NotPositiveDefiniteError,
    ShapeMismatchError,
    axpy_matrix,
    cholesky_batched,
    outer,
    spd_solve,
    spd_solve_batched,
)

__all__ = [
    "NotPositiveDefiniteError",
    "ShapeMismatchError",
    "axpy_matrix",
    "cholesky_batched",
    "outer",
    "spd_solve",
    "spd_solve_batched",
]
