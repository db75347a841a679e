"""Penalized state equation and its adjoint.

The obstacle constraint is replaced by the monotone cubic penalty
gamma * max(u - psi, 0)^3 added to the elliptic operator. The resulting
semilinear equation is solved by a damped Newton method; since the penalty
term is C^2, the residual and the Jacobian weighted-mass term are assembled
from the same quadrature-point evaluations and Newton is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .control import MatrixControlField
from .errors import NewtonError
from .fem import ScalarField, SparseOperator, assemble_stiffness
from .linsolve import solve_spd

# cold starts at gamma above this run an internal continuation first
_WARMUP_THRESHOLD = 1e6
_WARMUP_FACTOR = 1e2


@dataclass(frozen=True)
class PenaltyConfig:
    gamma: float
    psi: float = 0.5
    newton_tol: float = 1e-11
    newton_max: int = 60
    step_min: float = 2.0 ** -20
    lin_tol: float = 1e-12

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")


def _gap_at_quadrature(mesh, u_vals: np.ndarray, psi: float) -> np.ndarray:
    """max(u - psi, 0) at the 2x2 Gauss points of every cell; (C, 4)."""
    shape, _, _ = mesh._reference
    uq = np.einsum("ga,ca->cg", shape, u_vals[mesh.cells])
    return np.maximum(uq - psi, 0.0)


def _penalty_vector(mesh, gap: np.ndarray, gamma: float) -> np.ndarray:
    """Assembled gamma*max(u-psi,0)^3 against test functions, boundary rows zero."""
    shape, _, scale = mesh._reference
    local = scale * gamma * np.einsum("cg,ga->ca", gap ** 3, shape)
    vec = np.bincount(mesh.cells.ravel(), weights=local.ravel(),
                      minlength=mesh.n_nodes)
    vec[mesh.boundary_mask] = 0.0
    return vec


def _penalty_jacobian(mesh, gap: np.ndarray, gamma: float) -> sp.csr_matrix:
    """Weighted mass from 3*gamma*max(u-psi,0)^2, boundary rows/cols zero."""
    shape, _, scale = mesh._reference
    w = scale * 3.0 * gamma * gap ** 2
    local = np.einsum("cg,ga,gb->cab", w, shape, shape)
    c = mesh.n_cells
    rows = np.broadcast_to(mesh.cells[:, :, None], (c, 4, 4)).ravel()
    cols = np.broadcast_to(mesh.cells[:, None, :], (c, 4, 4)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    keep = sp.diags((~mesh.boundary_mask).astype(float))
    return (keep @ mat @ keep).tocsr()


def _newton(mesh, K: SparseOperator, rhs: np.ndarray, cfg: PenaltyConfig,
            u0: np.ndarray) -> np.ndarray:
    f_scale = max(float(np.linalg.norm(rhs)), 1e-300)
    u = np.where(mesh.boundary_mask, 0.0, u0)
    gap = _gap_at_quadrature(mesh, u, cfg.psi)
    res = K @ u + _penalty_vector(mesh, gap, cfg.gamma) - rhs
    res_norm = float(np.linalg.norm(res))
    history = [res_norm]
    for _ in range(cfg.newton_max):
        if res_norm <= cfg.newton_tol * f_scale:
            return u
        system = (K.matrix + _penalty_jacobian(mesh, gap, cfg.gamma)).tocsr()
        delta, _ = solve_spd(system, -res, tol=cfg.lin_tol)
        step = 1.0
        while True:
            trial = u + step * delta
            gap_t = _gap_at_quadrature(mesh, trial, cfg.psi)
            res_t = K @ trial + _penalty_vector(mesh, gap_t, cfg.gamma) - rhs
            norm_t = float(np.linalg.norm(res_t))
            if norm_t <= (1.0 - 1e-4 * step) * res_norm:
                break
            step *= 0.5
            if step < cfg.step_min:
                raise NewtonError(
                    "Newton line search hit the step floor", history)
        u, gap, res, res_norm = trial, gap_t, res_t, norm_t
        history.append(res_norm)
    if res_norm <= cfg.newton_tol * f_scale:
        return u
    raise NewtonError(
        f"Newton did not converge in {cfg.newton_max} iterations "
        f"(residual {res_norm:.3e})", history)


def solve_penalized(q: MatrixControlField, f_load: ScalarField,
                    cfg: PenaltyConfig,
                    u0: Optional[ScalarField] = None,
                    K: Optional[SparseOperator] = None) -> ScalarField:
    """Solve K_q u + gamma*max(u-psi,0)^3 = f by damped Newton.

    A cold start at large gamma first walks an internal geometric
    continuation (decades below gamma) so the final Newton leg starts close;
    passing u0 skips the warm-up entirely.

    Parameters
    ----------
    q : MatrixControlField
    f_load : ScalarField
    cfg : PenaltyConfig
    u0 : ScalarField, optional
        Warm start, typically the solution at the previous gamma.
    K : SparseOperator, optional
        Pre-assembled eliminated stiffness for q.
    """
    mesh = f_load.mesh
    if K is None:
        K = assemble_stiffness(mesh, q)
    rhs = np.where(mesh.boundary_mask, 0.0, f_load.values)
    if u0 is None:
        u, _ = solve_spd(K, rhs, tol=cfg.lin_tol)
        if cfg.gamma > _WARMUP_THRESHOLD:
            g = _WARMUP_THRESHOLD
            while g < cfg.gamma:
                u = _newton(mesh, K, rhs, replace(cfg, gamma=g), u)
                g *= _WARMUP_FACTOR
    else:
        u = u0.values.copy()
    if cfg.gamma == 0.0:
        if u0 is None:
            return ScalarField(mesh, u)
        sol, _ = solve_spd(K, rhs, tol=cfg.lin_tol, x0=u)
        return ScalarField(mesh, sol)
    return ScalarField(mesh, _newton(mesh, K, rhs, cfg, u))


def solve_adjoint(q: MatrixControlField, u: ScalarField, u_d: ScalarField,
                  cfg: PenaltyConfig,
                  K: Optional[SparseOperator] = None) -> ScalarField:
    """Solve (K_q + D_gamma(u)) p = M (u - u_d) for the adjoint state.

    D_gamma is the weighted mass from the penalty derivative
    3*gamma*max(u-psi,0)^2, evaluated at the same quadrature points as the
    state residual.
    """
    mesh = u.mesh
    if K is None:
        K = assemble_stiffness(mesh, q)
    gap = _gap_at_quadrature(mesh, u.values, cfg.psi)
    system = (K.matrix + _penalty_jacobian(mesh, gap, cfg.gamma)).tocsr()
    rhs = mesh.mass_matrix @ (u.values - u_d.values)
    rhs[mesh.boundary_mask] = 0.0
    p, _ = solve_spd(system, rhs, tol=cfg.lin_tol)
    return ScalarField(mesh, p)


def penalty_residual_as_multiplier(u: ScalarField,
                                   cfg: PenaltyConfig) -> ScalarField:
    """Lumped nodal representation of gamma*max(u-psi,0)^3."""
    mesh = u.mesh
    gap = _gap_at_quadrature(mesh, u.values, cfg.psi)
    vec = _penalty_vector(mesh, gap, cfg.gamma)
    return ScalarField(mesh, vec / mesh.lumped_mass)
