"""Dense/sparse matrix primitives shared by the solvers.

Conventions
-----------
- sparse matrices are scipy CSR (row-major with per-row offsets); column
  access is served by a one-time transposed/CSC copy where needed
- dense matrices are float64 ndarrays; all accumulation is double precision
- Gram outputs are symmetrized post hoc so ``G == G.T`` holds bitwise
- linear solves always use a general pivoted LU factorization: the aligned
  systems contain a non-symmetric cross term, so symmetric-only methods
  are never safe here
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import CapacityError, SingularMatrixError

# Largest dense intermediate we will allocate by default (bytes).
DEFAULT_MEMORY_BUDGET = 16 * 2**30

# Reciprocal condition estimate below which a system is treated as singular.
RCOND_FLOOR = 1e-12


def check_dense_budget(rows, cols, memory_budget=None, what="matrix"):
    """Raise CapacityError if a rows x cols float64 array exceeds the budget."""
    budget = DEFAULT_MEMORY_BUDGET if memory_budget is None else memory_budget
    nbytes = int(rows) * int(cols) * 8
    if nbytes > budget:
        raise CapacityError(
            f"dense {what} of shape ({rows}, {cols}) needs {nbytes} bytes, "
            f"exceeding the {budget}-byte memory budget"
        )


def _symmetrize(c):
    # exact: 0.5*(a+b) == 0.5*(b+a) in IEEE arithmetic
    return 0.5 * (c + c.T)


def gram(a, memory_budget=None):
    """Compute ``A^T A`` as a dense symmetric float64 matrix.

    Parameters
    ----------
    a : scipy sparse matrix or ndarray, shape (m, n)

    Returns
    -------
    ndarray, shape (n, n), bitwise symmetric.
    """
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"gram requires a nonempty matrix, got shape {a.shape}")
    check_dense_budget(a.shape[1], a.shape[1], memory_budget, what="Gram matrix")
    if sp.issparse(a):
        c = (a.T @ a).toarray().astype(np.float64, copy=False)
    else:
        a = np.asarray(a, dtype=np.float64)
        c = a.T @ a
    return _symmetrize(c)


def masked_gram(a, row_mask, memory_budget=None):
    """Compute ``A_S^T A_S`` where ``A_S`` keeps only the masked rows.

    Decomposing ``X^T W X`` into ``w1*gram(X) + (w0-w1)*masked_gram(X, pos)``
    confines per-column work to the positive-row submatrix.
    """
    row_mask = np.asarray(row_mask, dtype=bool)
    if row_mask.shape != (a.shape[0],):
        raise ValueError(
            f"row mask has length {row_mask.shape}, expected ({a.shape[0]},)"
        )
    check_dense_budget(a.shape[1], a.shape[1], memory_budget, what="Gram matrix")
    if sp.issparse(a):
        sub = a.tocsr()[row_mask]
        c = (sub.T @ sub).toarray().astype(np.float64, copy=False)
    else:
        sub = np.asarray(a, dtype=np.float64)[row_mask]
        c = sub.T @ sub
    return _symmetrize(c)


def _lu_factor(m):
    """Pivoted LU of a square matrix; raises on singularity."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    anorm = np.abs(m).sum(axis=0).max() if m.size else 0.0
    lu, piv, info = lapack.dgetrf(m)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is exactly singular (zero pivot at index {info - 1})",
            pivot=info - 1,
        )
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of dgetrf")
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if rcond < RCOND_FLOOR:
        # smallest |U_ii| marks the offending pivot
        pivot = int(np.argmin(np.abs(np.diag(lu))))
        raise SingularMatrixError(
            f"matrix is singular to working precision "
            f"(rcond={rcond:.3e} < {RCOND_FLOOR:.0e}, pivot {pivot}); "
            f"raise the ridge terms if this came from a solver",
            pivot=pivot,
        )
    return lu, piv


def solve_general(m, rhs):
    """Solve ``M @ S = RHS`` with a general pivoted LU factorization.

    Never assumes symmetry. Raises SingularMatrixError (with the pivot
    index) if M is singular to working precision (rcond < 1e-12).

    ``rhs`` may be a vector or a matrix of stacked right-hand sides; the
    solution has the same shape.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    squeeze = rhs.ndim == 1
    b = rhs[:, None] if squeeze else rhs
    if b.shape[0] != m.shape[0]:
        raise ValueError(
            f"rhs has {b.shape[0]} rows, system matrix has {m.shape[0]}"
        )
    lu, piv = _lu_factor(m)
    x, info = lapack.dgetrs(lu, piv, b)
    if info != 0:
        raise SingularMatrixError(f"dgetrs failed with info={info}", pivot=None)
    x = np.ascontiguousarray(x)
    return x[:, 0] if squeeze else x


def invert(m):
    """Dense inverse via solve_general against the identity."""
    return solve_general(m, np.eye(m.shape[0]))
