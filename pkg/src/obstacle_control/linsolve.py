"""Symmetric positive definite solves for assembly and Newton systems.

The baseline is conjugate gradients with a Jacobi (diagonal) preconditioner,
which handles the badly scaled diagonals produced by large penalty
parameters. An optional sparse direct path exists for cross-checking; all
production paths use the iterative baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .fem import ScalarField, SparseOperator


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    residual_norm: float
    method: str


def _as_csr_and_mask(A) -> tuple[sp.csr_matrix, Optional[np.ndarray]]:
    if isinstance(A, SparseOperator):
        return A.matrix, A.dirichlet_mask
    if sp.issparse(A):
        return A.tocsr(), None
    return sp.csr_matrix(np.asarray(A, dtype=float)), None


def _pcg(mat: sp.csr_matrix, b: np.ndarray, tol: float,
         x0: Optional[np.ndarray], max_iters: int,
         callback: Optional[Callable]) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients to ||Ax-b|| <= tol*||b||."""
    diag = mat.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("matrix has a nonpositive diagonal entry")
    inv_diag = 1.0 / diag
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros_like(b), 0, 0.0
    target = tol * b_norm
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - mat @ x
    res = float(np.linalg.norm(r))
    if res <= target:
        return x, 0, res
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iters + 1):
        ap = mat @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise SolverError(
                "matrix is not positive definite on the search space",
                LinearSolveReport(k, res, "pcg"))
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        res = float(np.linalg.norm(r))
        if callback is not None:
            callback(x.copy())
        if res <= target:
            return x, k, res
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"pcg did not reach tolerance {tol:g} in {max_iters} iterations "
        f"(residual {res:.3e}, target {target:.3e})",
        LinearSolveReport(max_iters, res, "pcg"))


def solve_spd(A: Union[SparseOperator, sp.spmatrix, np.ndarray],
              b: Union[ScalarField, np.ndarray],
              tol: float = 1e-12,
              x0: Optional[np.ndarray] = None,
              max_iters: Optional[int] = None,
              method: str = "pcg",
              callback: Optional[Callable] = None):
    """Solve the SPD system A x = b.

    When A carries a Dirichlet mask, the right-hand side is zeroed on the
    eliminated rows so the solution carries the prescribed boundary values
    (zero). The returned solution mirrors the type of b.

    Parameters
    ----------
    A : SparseOperator, sparse matrix, or dense array
    b : ScalarField or ndarray
    tol : float
        Relative residual target ||Ax - b|| <= tol * ||b||.
    x0 : ndarray, optional
        Warm-start vector (pcg only).
    max_iters : int, optional
        Iteration cap; defaults to max(1000, 4 * n).
    method : str
        "pcg" (baseline) or "direct" (sparse LU cross-check path).
    callback : callable, optional
        Called with a copy of the iterate after each pcg step.

    Returns
    -------
    (solution, LinearSolveReport)
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    mat, mask = _as_csr_and_mask(A)
    rhs = b.values if isinstance(b, ScalarField) else np.asarray(b, float)
    if rhs.shape[0] != mat.shape[0]:
        raise ValueError("dimension mismatch between operator and rhs")
    if mask is not None:
        rhs = np.where(mask, 0.0, rhs)
    if method == "direct":
        x = spla.splu(mat.tocsc()).solve(rhs)
        res = float(np.linalg.norm(mat @ x - rhs))
        report = LinearSolveReport(0, res, "direct")
    elif method == "pcg":
        cap = max_iters if max_iters is not None else max(1000, 4 * mat.shape[0])
        x, its, res = _pcg(mat, rhs, tol, x0, cap, callback)
        report = LinearSolveReport(its, res, "pcg")
    else:
        raise ValueError(f"unknown method {method!r}")
    if isinstance(b, ScalarField):
        return ScalarField(b.mesh, x), report
    return x, report
