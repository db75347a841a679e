"""Q1 finite elements on structured grids of the square (-1, 1)^2.

Uniform quadrilateral meshes at dyadic refinement levels, bilinear shape
functions with 2x2 Gauss quadrature, and assembly of the sparse operators
used throughout the package: stiffness with a symmetric 2x2 matrix
coefficient, consistent and lumped mass, and load vectors. Homogeneous
Dirichlet conditions are imposed by symmetric row/column elimination with
identity diagonal, so all operators stay usable by symmetric solvers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, CoefficientError, DimensionError

if TYPE_CHECKING:
    from .control import MatrixControlField

MAX_LEVEL = 12

# local node order on the reference square [-1,1]^2, counter-clockwise
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])


def _shape_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Bilinear shape functions N_a at reference points; shape (npts, 4)."""
    return 0.25 * (1.0 + np.outer(xi, _XI)) * (1.0 + np.outer(eta, _ETA))


def _shape_gradients(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Reference gradients dN_a/d(xi,eta) at reference points; (npts, 4, 2)."""
    npts = len(xi)
    grads = np.empty((npts, 4, 2))
    grads[:, :, 0] = 0.25 * _XI * (1.0 + np.outer(eta, _ETA))
    grads[:, :, 1] = 0.25 * _ETA * (1.0 + np.outer(xi, _XI))
    return grads


def gauss_points_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(order)


class StructuredMesh:
    """Uniform quadrilateral mesh of (-1,1)^2 with 2^level cells per side.

    Nodes are numbered row by row: node (i, j) sits at index j*(n+1)+i with
    coordinates (-1 + i*h, -1 + j*h). Cells store their four corner nodes
    counter-clockwise. All arrays are frozen after construction.

    Attributes
    ----------
    level : int
        Dyadic refinement level.
    cells_per_side : int
        2**level cells along each axis.
    h : float
        Cell width, 2 / cells_per_side.
    nodes : ndarray, shape (n_nodes, 2)
    cells : ndarray, shape (n_cells, 4)
    boundary_mask : ndarray of bool, shape (n_nodes,)
    """

    def __init__(self, level: int):
        if level < 0:
            raise ValueError(f"level must be nonnegative, got {level}")
        if level > MAX_LEVEL:
            raise CapacityError(
                f"level {level} exceeds the memory guard (max {MAX_LEVEL})")
        n = 2 ** level
        n1 = n + 1
        self.level = level
        self.cells_per_side = n
        self.h = 2.0 / n
        xs = -1.0 + self.h * np.arange(n1)
        xs[-1] = 1.0
        X, Y = np.meshgrid(xs, xs)
        self.nodes = np.column_stack([X.ravel(), Y.ravel()])
        ii, jj = np.meshgrid(np.arange(n), np.arange(n))
        v0 = (jj * n1 + ii).ravel()
        self.cells = np.column_stack([v0, v0 + 1, v0 + n1 + 1, v0 + n1])
        i_idx, j_idx = np.meshgrid(np.arange(n1), np.arange(n1))
        onb = (i_idx == 0) | (i_idx == n) | (j_idx == 0) | (j_idx == n)
        self.boundary_mask = onb.ravel()
        for arr in (self.nodes, self.cells, self.boundary_mask):
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @cached_property
    def _reference(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Shape values, physical gradients, and w*detJ at the 2x2 rule."""
        g = 1.0 / np.sqrt(3.0)
        xi = np.array([-g, g, g, -g])
        eta = np.array([-g, -g, g, g])
        shape = _shape_values(xi, eta)
        # affine cells: J = (h/2) I, so physical gradients scale by 2/h
        grads = _shape_gradients(xi, eta) * (2.0 / self.h)
        scale = self.h * self.h / 4.0
        return shape, grads, scale

    def quad_coords(self) -> np.ndarray:
        """Physical coordinates of the 2x2 Gauss points; (n_cells, 4, 2)."""
        shape, _, _ = self._reference
        return np.einsum("ga,cad->cgd", shape, self.nodes[self.cells])

    def _assemble_constant_local(self, local: np.ndarray) -> sp.csr_matrix:
        """Assemble one 4x4 local matrix replicated over all cells."""
        c = self.n_cells
        data = np.broadcast_to(local, (c, 4, 4)).ravel()
        rows = np.broadcast_to(self.cells[:, :, None], (c, 4, 4)).ravel()
        cols = np.broadcast_to(self.cells[:, None, :], (c, 4, 4)).ravel()
        mat = sp.coo_matrix((data, (rows, cols)),
                            shape=(self.n_nodes, self.n_nodes))
        return mat.tocsr()

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """Consistent mass matrix, no boundary elimination."""
        shape, _, scale = self._reference
        local = scale * (shape.T @ shape)
        return self._assemble_constant_local(local)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Row sums of the consistent mass matrix (all positive for Q1)."""
        return np.asarray(self.mass_matrix.sum(axis=1)).ravel()

    @cached_property
    def stiffness_identity(self) -> sp.csr_matrix:
        """Stiffness with unit coefficient, no boundary elimination."""
        _, grads, scale = self._reference
        local = scale * np.einsum("gad,gbd->ab", grads, grads)
        return self._assemble_constant_local(local)

    def __repr__(self) -> str:
        return f"StructuredMesh(level={self.level})"


def build_mesh(level: int) -> StructuredMesh:
    """Build the uniform mesh of (-1,1)^2 at the given refinement level."""
    return StructuredMesh(level)


@dataclass(frozen=True)
class ScalarField:
    """Nodal coefficients of a continuous piecewise-bilinear function."""

    mesh: StructuredMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise DimensionError(
                f"expected {self.mesh.n_nodes} nodal values, got {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self._check_mesh(other)
        return ScalarField(self.mesh, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self._check_mesh(other)
        return ScalarField(self.mesh, self.values - other.values)

    def __mul__(self, s: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * s)

    __rmul__ = __mul__

    def _check_mesh(self, other: "ScalarField") -> None:
        if other.mesh is not self.mesh:
            raise DimensionError("fields live on different meshes")


def zero_field(mesh: StructuredMesh) -> ScalarField:
    return ScalarField(mesh, np.zeros(mesh.n_nodes))


def interpolate(mesh: StructuredMesh, f: Callable) -> ScalarField:
    """Nodal interpolant of a pointwise function f(x, y)."""
    return ScalarField(mesh, f(mesh.nodes[:, 0], mesh.nodes[:, 1]))


@dataclass(frozen=True)
class SparseOperator:
    """CSR matrix with an optional record of eliminated Dirichlet rows.

    Eliminated rows/columns are identity; `dirichlet_mask` is None for raw
    (uneliminated) operators.
    """

    matrix: sp.csr_matrix
    dirichlet_mask: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def eliminate_dirichlet(matrix: sp.csr_matrix,
                        mask: np.ndarray) -> sp.csr_matrix:
    """Zero rows/columns flagged by mask and put ones on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    out = (keep @ matrix @ keep + sp.diags(mask.astype(float))).tocsr()
    out.eliminate_zeros()
    return out


def _coefficient_at_quadrature(mesh: StructuredMesh,
                               comps: np.ndarray) -> np.ndarray:
    """Interpolate nodal (q11, q22, q12) to the 2x2 Gauss points; (C,4,3)."""
    shape, _, _ = mesh._reference
    return np.einsum("ga,cak->cgk", shape, comps[mesh.cells])


def assemble_stiffness(mesh: StructuredMesh, q: "MatrixControlField",
                       eliminate: bool = True,
                       check_coefficient: bool = True) -> SparseOperator:
    """Assemble the stiffness operator of the form (q grad u, grad v).

    The nodal matrix coefficient q is interpolated bilinearly to the 2x2
    Gauss points of every cell. With `check_coefficient`, positive
    definiteness of q is verified at every quadrature point.

    Parameters
    ----------
    mesh : StructuredMesh
    q : MatrixControlField
        Nodal symmetric coefficient, components (q11, q22, q12).
    eliminate : bool
        Apply homogeneous Dirichlet elimination on the boundary.
    check_coefficient : bool
        Raise CoefficientError if q is not positive definite at some
        quadrature point (disable for sign-indefinite direction fields).

    Returns
    -------
    SparseOperator
    """
    if q.mesh is not mesh:
        raise DimensionError("coefficient lives on a different mesh")
    shape, grads, scale = mesh._reference
    qg = _coefficient_at_quadrature(mesh, q.comps)
    q11, q22, q12 = qg[:, :, 0], qg[:, :, 1], qg[:, :, 2]
    if check_coefficient:
        det = q11 * q22 - q12 * q12
        bad = (det <= 0.0) | (q11 + q22 <= 0.0)
        if np.any(bad):
            cell = int(np.nonzero(bad.any(axis=1))[0][0])
            raise CoefficientError(
                "coefficient not positive definite at a quadrature point "
                f"of cell {cell}")
    gx, gy = grads[:, :, 0], grads[:, :, 1]
    # flux components (q grad phi_b) at each quadrature point
    fx = q11[:, :, None] * gx[None, :, :] + q12[:, :, None] * gy[None, :, :]
    fy = q12[:, :, None] * gx[None, :, :] + q22[:, :, None] * gy[None, :, :]
    ke = scale * (np.einsum("ga,cgb->cab", gx, fx)
                  + np.einsum("ga,cgb->cab", gy, fy))
    c = mesh.n_cells
    rows = np.broadcast_to(mesh.cells[:, :, None], (c, 4, 4)).ravel()
    cols = np.broadcast_to(mesh.cells[:, None, :], (c, 4, 4)).ravel()
    mat = sp.coo_matrix((ke.ravel(), (rows, cols)),
                        shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    if eliminate:
        return SparseOperator(eliminate_dirichlet(mat, mesh.boundary_mask),
                              mesh.boundary_mask)
    return SparseOperator(mat, None)


def assemble_mass(mesh: StructuredMesh, lumped: bool = False) -> SparseOperator:
    """Consistent (or lumped diagonal) mass matrix, no elimination."""
    if lumped:
        return SparseOperator(sp.diags(mesh.lumped_mass).tocsr(), None)
    return SparseOperator(mesh.mass_matrix, None)


def assemble_load(mesh: StructuredMesh, f: Callable) -> ScalarField:
    """Load vector with components integral(f * phi_i), 2x2 Gauss per cell."""
    shape, _, scale = mesh._reference
    xg = mesh.quad_coords()
    fg = f(xg[:, :, 0], xg[:, :, 1])
    fg = np.broadcast_to(np.asarray(fg, dtype=float), xg.shape[:2])
    local = scale * np.einsum("cg,ga->ca", fg, shape)
    vec = np.bincount(mesh.cells.ravel(), weights=local.ravel(),
                      minlength=mesh.n_nodes)
    return ScalarField(mesh, vec)


def l2_inner(a: ScalarField, b: ScalarField) -> float:
    """L2 inner product through the consistent mass matrix."""
    if a.mesh is not b.mesh:
        raise DimensionError("fields live on different meshes")
    return float(a.values @ (a.mesh.mass_matrix @ b.values))


def l2_norm(v: ScalarField) -> float:
    """L2 norm sqrt(v' M v) with the consistent mass matrix."""
    return float(np.sqrt(max(l2_inner(v, v), 0.0)))


def h1_seminorm(v: ScalarField) -> float:
    """H1 seminorm sqrt(v' K_I v) with the unit-coefficient stiffness."""
    val = v.values @ (v.mesh.stiffness_identity @ v.values)
    return float(np.sqrt(max(val, 0.0)))


def l2_error_vs_function(field: ScalarField, exact: Callable,
                         order: int = 4) -> float:
    """L2 distance between a nodal field and a pointwise function.

    Evaluates the bilinear interpolant and the exact function on a tensor
    Gauss rule of the given order per cell, so the discretization error of
    the field itself dominates the result.
    """
    mesh = field.mesh
    pts, wts = gauss_points_1d(order)
    xi, eta = np.meshgrid(pts, pts)
    xi, eta = xi.ravel(), eta.ravel()
    w2 = np.outer(wts, wts).ravel() * mesh.h * mesh.h / 4.0
    shape = _shape_values(xi, eta)
    corner_vals = field.values[mesh.cells]
    uh = np.einsum("ga,ca->cg", shape, corner_vals)
    xg = np.einsum("ga,cad->cgd", shape, mesh.nodes[mesh.cells])
    ue = exact(xg[:, :, 0], xg[:, :, 1])
    err2 = np.einsum("g,cg->", w2, (uh - ue) ** 2)
    return float(np.sqrt(max(err2, 0.0)))
