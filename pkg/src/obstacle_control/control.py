"""Symmetric 2x2 matrix control fields and the admissible-set machinery.

The control q is a continuous piecewise-bilinear field of symmetric 2x2
matrices, stored as nodal components (q11, q22, q12). Admissibility means
q_min*I <= q(x) <= q_max*I in the ordering of symmetric matrices, checked
per node through determinant and trace positivity of the shifted matrices.
A logarithmic barrier keeps optimization iterates inside the admissible
cone; a closed-form eigenvalue projection provides the safeguard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError
from .fem import ScalarField, StructuredMesh, _coefficient_at_quadrature
from .linsolve import solve_spd

# relative slack treating a projected eigenvalue as interior
_MASS_TOL = 1e-13


@dataclass(frozen=True)
class MatrixControlField:
    """Nodal symmetric 2x2 matrix field with components (q11, q22, q12)."""

    mesh: StructuredMesh
    comps: np.ndarray

    def __post_init__(self):
        arr = np.array(self.comps, dtype=float)
        if arr.shape != (self.mesh.n_nodes, 3):
            raise DimensionError(
                f"expected ({self.mesh.n_nodes}, 3) components, "
                f"got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "comps", arr)

    @classmethod
    def constant(cls, mesh: StructuredMesh, mat) -> "MatrixControlField":
        """Constant field from a symmetric 2x2 matrix or (q11, q22, q12)."""
        m = np.asarray(mat, dtype=float)
        if m.shape == (2, 2):
            if abs(m[0, 1] - m[1, 0]) > 1e-14 * (1.0 + abs(m[0, 1])):
                raise ValueError("constant control matrix must be symmetric")
            triple = np.array([m[0, 0], m[1, 1], m[0, 1]])
        elif m.shape == (3,):
            triple = m
        else:
            raise ValueError("expected a 2x2 matrix or a component triple")
        return cls(mesh, np.tile(triple, (mesh.n_nodes, 1)))

    @classmethod
    def from_function(cls, mesh: StructuredMesh,
                      fn: Callable) -> "MatrixControlField":
        """Nodal interpolant of fn(x, y) -> (q11, q22, q12)."""
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        comps = np.stack([np.broadcast_to(np.asarray(c, float), x.shape)
                          for c in fn(x, y)], axis=1)
        return cls(mesh, comps)

    def as_matrices(self) -> np.ndarray:
        """Dense per-node matrices, shape (n_nodes, 2, 2)."""
        q11, q22, q12 = self.comps.T
        out = np.empty((self.mesh.n_nodes, 2, 2))
        out[:, 0, 0] = q11
        out[:, 1, 1] = q22
        out[:, 0, 1] = q12
        out[:, 1, 0] = q12
        return out

    def eigenvalues(self) -> np.ndarray:
        """Per-node eigenvalue pairs (low, high), closed form."""
        q11, q22, q12 = self.comps.T
        mid = 0.5 * (q11 + q22)
        rad = np.sqrt(0.25 * (q11 - q22) ** 2 + q12 ** 2)
        return np.column_stack([mid - rad, mid + rad])

    def __add__(self, other: "MatrixControlField") -> "MatrixControlField":
        self._check_mesh(other)
        return MatrixControlField(self.mesh, self.comps + other.comps)

    def __sub__(self, other: "MatrixControlField") -> "MatrixControlField":
        self._check_mesh(other)
        return MatrixControlField(self.mesh, self.comps - other.comps)

    def __mul__(self, s: float) -> "MatrixControlField":
        return MatrixControlField(self.mesh, self.comps * s)

    __rmul__ = __mul__

    def _check_mesh(self, other: "MatrixControlField") -> None:
        if other.mesh is not self.mesh:
            raise DimensionError("control fields live on different meshes")


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    worst_node: int
    worst_value: float


@dataclass(frozen=True)
class BarrierEval:
    value: float
    gradient: Optional[MatrixControlField]
    feasible: bool


def _shifted_tests(comps: np.ndarray, q_min: float,
                   q_max: float) -> np.ndarray:
    """Determinant/trace tests of q - q_min*I and q_max*I - q, per node.

    Returns an (n, 4) array (det_lo, tr_lo, det_hi, tr_hi); all four must
    be strictly positive for admissibility.
    """
    a, b, c = comps[:, 0], comps[:, 1], comps[:, 2]
    det_lo = (a - q_min) * (b - q_min) - c * c
    tr_lo = (a - q_min) + (b - q_min)
    det_hi = (q_max - a) * (q_max - b) - c * c
    tr_hi = (q_max - a) + (q_max - b)
    return np.column_stack([det_lo, tr_lo, det_hi, tr_hi])


def check_admissible(q: MatrixControlField, q_min: float,
                     q_max: float) -> AdmissibilityReport:
    """Per-node determinant/trace test of the spectral bounds.

    Admissible means q - q_min*I and q_max*I - q are both positive definite
    at every node. The report carries the worst node and the minimum of the
    four test quantities there (nonpositive when inadmissible).
    """
    if q_min >= q_max:
        raise ValueError("q_min must be below q_max")
    tests = _shifted_tests(q.comps, q_min, q_max)
    per_node = tests.min(axis=1)
    worst = int(np.argmin(per_node))
    worst_val = float(per_node[worst])
    return AdmissibilityReport(worst_val > 0.0, worst, worst_val)


def barrier(q: MatrixControlField, q_min: float, q_max: float,
            with_gradient: bool = True) -> BarrierEval:
    """Logarithmic barrier of the spectral bounds and its L2 gradient.

    value = -integral[ log det(q - q_min I) + log det(q_max I - q) ],
    evaluated by interpolating q to the 2x2 Gauss points. The gradient is
    the Riesz representative (through the control mass matrix) of the exact
    directional derivative of that quadrature value, with per-node density
    (q_max I - q)^{-1} - (q - q_min I)^{-1}. Pass with_gradient=False to
    skip the mass solves when only the value is needed (line searches).

    Infeasible q (nodal determinant/trace test, which is authoritative even
    where the log arguments happen to be positive) yields value = +inf,
    gradient = None, feasible = False.
    """
    mesh = q.mesh
    if not check_admissible(q, q_min, q_max).admissible:
        return BarrierEval(np.inf, None, False)
    shape, _, scale = mesh._reference
    qg = _coefficient_at_quadrature(mesh, q.comps)
    a = qg[:, :, 0] - q_min
    b = qg[:, :, 1] - q_min
    c = qg[:, :, 2]
    det_lo = a * b - c * c
    ah = q_max - qg[:, :, 0]
    bh = q_max - qg[:, :, 1]
    det_hi = ah * bh - c * c
    # nodal feasibility implies quadrature feasibility by convexity; guard
    # against roundoff at extreme margins anyway
    if np.any(det_lo <= 0.0) or np.any(det_hi <= 0.0):
        return BarrierEval(np.inf, None, False)
    value = -scale * float(np.sum(np.log(det_lo) + np.log(det_hi)))
    if not with_gradient:
        return BarrierEval(value, None, True)
    # inverse of [[a, c], [c, b]] is [[b, -c], [-c, a]] / det, so the
    # diagonal entries swap; the off-diagonal of q_max I - q is -q12
    g11 = bh / det_hi - b / det_lo
    g22 = ah / det_hi - a / det_lo
    g12 = c / det_hi + c / det_lo
    grad_comps = np.empty((mesh.n_nodes, 3))
    for k, dens in enumerate((g11, g22, g12)):
        assembled = scale * np.einsum("cg,ga->ca", dens, shape)
        vec = np.bincount(mesh.cells.ravel(), weights=assembled.ravel(),
                          minlength=mesh.n_nodes)
        grad_comps[:, k], _ = solve_spd(mesh.mass_matrix, vec, tol=_MASS_TOL)
    return BarrierEval(value, MatrixControlField(mesh, grad_comps), True)


def project_spectral(q: MatrixControlField, q_min: float, q_max: float,
                     margin: float = 0.0) -> MatrixControlField:
    """Clamp per-node eigenvalues into [q_min + margin, q_max - margin].

    Uses the closed-form 2x2 eigendecomposition: the deviatoric part of q
    is rescaled so the eigenvalue pair lands on its clamped values, which
    avoids forming eigenvectors. Feasible fields with margin 0 are fixed
    points.
    """
    if margin < 0.0:
        raise ValueError("margin must be nonnegative")
    lo_bound, hi_bound = q_min + margin, q_max - margin
    if lo_bound > hi_bound:
        raise ValueError("margin exceeds half the spectral gap")
    q11, q22, q12 = q.comps.T
    mid = 0.5 * (q11 + q22)
    rad = np.sqrt(0.25 * (q11 - q22) ** 2 + q12 ** 2)
    lo = np.clip(mid - rad, lo_bound, hi_bound)
    hi = np.clip(mid + rad, lo_bound, hi_bound)
    new_mid = 0.5 * (lo + hi)
    safe_rad = np.where(rad > 0.0, rad, 1.0)
    ratio = np.where(rad > 0.0, 0.5 * (hi - lo) / safe_rad, 0.0)
    comps = np.column_stack([
        new_mid + ratio * (q11 - mid),
        new_mid + ratio * (q22 - mid),
        ratio * q12,
    ])
    return MatrixControlField(q.mesh, comps)


def control_inner(a: MatrixControlField, b: MatrixControlField) -> float:
    """L2 Frobenius inner product; the off-diagonal component counts twice."""
    if a.mesh is not b.mesh:
        raise DimensionError("control fields live on different meshes")
    m = a.mesh.mass_matrix
    ac, bc = a.comps, b.comps
    return float(ac[:, 0] @ (m @ bc[:, 0]) + ac[:, 1] @ (m @ bc[:, 1])
                 + 2.0 * (ac[:, 2] @ (m @ bc[:, 2])))


def control_norm(a: MatrixControlField) -> float:
    return float(np.sqrt(max(control_inner(a, a), 0.0)))
