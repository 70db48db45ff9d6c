"""Dense linear algebra for the small symmetric positive definite systems solved by
the ARU.

Everything is float64. Matrices are at most ``(H + 1) x (H + 1)`` with ``H`` the
decoder output width (51 for the ``large`` preset), so a direct Cholesky solve per
call is cheap and no incremental inverse is maintained.
"""

import logging

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import LinAlgError, cho_factor, cho_solve

logger = logging.getLogger(__name__)


class NotPositiveDefiniteError(ArithmeticError):
    """Raised when a Cholesky pivot is not strictly positive.

    For the ARU this means the ridge term is too small for the accumulated statistics,
    or the statistics have been corrupted.
    """

    pass


class ShapeMismatchError(ValueError):
    pass


def as_vector(v: ArrayLike) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"expected a vector, got shape {arr.shape}")
    return arr


def as_square_matrix(a: ArrayLike) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeMismatchError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def outer(v: ArrayLike) -> np.ndarray:
    """``result[i, j] = v[i] * v[j]``.

    Also accepts a stack of vectors (``shape (..., d)``), returning a stack of
    ``(d, d)`` matrices. The result is exactly symmetric since both triangles are the
    same products.

    :param v:
    :return:
    """
    arr = np.asarray(v, dtype=np.float64)
    return arr[..., :, None] * arr[..., None, :]


def axpy_matrix(alpha: float, a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """``alpha * a + b``, elementwise.

    :param alpha:
    :param a:
    :param b:
    :return:
    """
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    if a_arr.shape != b_arr.shape:
        raise ShapeMismatchError(f"cannot add matrices of shape {a_arr.shape} and {b_arr.shape}")
    return alpha * a_arr + b_arr


def spd_solve(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky.

    :param a: square SPD matrix
    :param b: right hand side vector
    :return: x
    :raises NotPositiveDefiniteError: if a Cholesky pivot is not positive
    """
    a_arr = as_square_matrix(a)
    b_arr = as_vector(b)
    if a_arr.shape[0] != b_arr.shape[0]:
        raise ShapeMismatchError(
            f"matrix of shape {a_arr.shape} incompatible with vector of length {b_arr.shape[0]}"
        )
    try:
        factor = cho_factor(a_arr, lower=True, check_finite=True)
    except LinAlgError as e:
        raise NotPositiveDefiniteError(f"Cholesky factorisation failed: {e}") from e
    result: np.ndarray = cho_solve(factor, b_arr, check_finite=False)
    return result


def cholesky_batched(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factors of a stack of SPD matrices.

    A right-looking column loop vectorised over the leading axes; the python loop runs
    ``d`` times whatever the stack size.

    :param a: shape ``(..., d, d)``; only the lower triangle is read
    :return: ``L`` with ``L @ L^T = a``, zero above the diagonal
    :raises NotPositiveDefiniteError: if a pivot of any matrix is not positive
    """
    work = np.array(a, dtype=np.float64)
    d = work.shape[-1]
    for k in range(d):
        pivot = work[..., k, k]
        bad = ~(pivot > 0.0)
        if np.any(bad):
            first = tuple(int(i) for i in np.argwhere(bad)[0]) if bad.ndim > 0 else ()
            raise NotPositiveDefiniteError(
                f"Cholesky pivot {k} is not positive for the matrix at {first}"
            )
        root = np.sqrt(pivot)
        work[..., k, k] = root
        column = work[..., k + 1 :, k] / np.expand_dims(root, -1)
        work[..., k + 1 :, k] = column
        work[..., k + 1 :, k + 1 :] -= column[..., :, None] * column[..., None, :]
    return np.tril(work)


def spd_solve_batched(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stacked version of :func:`spd_solve`.

    :param a: shape ``(..., d, d)``, every matrix SPD
    :param b: shape ``(..., d)``
    :return: x with shape ``(..., d)``
    :raises NotPositiveDefiniteError: if any matrix in the stack is not positive definite
    """
    if a.shape[:-1] != b.shape or a.shape[-1] != a.shape[-2]:
        raise ShapeMismatchError(f"incompatible stacked system {a.shape} and {b.shape}")
    lower = cholesky_batched(a)
    d = a.shape[-1]
    # forward substitution, L z = b
    z = np.array(b, dtype=np.float64)
    for i in range(d):
        z[..., i] = (z[..., i] - np.einsum("...j,...j->...", lower[..., i, :i], z[..., :i])) / (
            lower[..., i, i]
        )
    # back substitution, L^T x = z
    x = z
    for i in range(d - 1, -1, -1):
        x[..., i] = (
            x[..., i] - np.einsum("...j,...j->...", lower[..., i + 1 :, i], x[..., i + 1 :])
        ) / lower[..., i, i]
    return x
