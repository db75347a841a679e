"""Directional differentiability of the control-to-state map.

The obstacle solution map q -> u(q) is not Gateaux differentiable across
the contact set, but it is directionally differentiable: the derivative in
a control direction d solves a variational inequality over the critical
cone of the solution, with load -(d grad u, grad phi). The cone pins the
derivative to zero where the multiplier is strictly positive and keeps it
nonpositive on the remaining (biactive) contact nodes; off the contact set
the derivative behaves like the solution of a linearized PDE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .control import MatrixControlField, barrier, control_inner
from .errors import CoefficientError
from .fem import ScalarField, assemble_stiffness, l2_inner
from .obstacle import PDASConfig, VISolution, _pdas_bound_solve
from .optimize import ObjectiveConfig


@dataclass(frozen=True)
class CriticalCone:
    """Node partition defining the admissible derivative directions.

    zero_nodes carry a strictly positive multiplier and pin the derivative
    to zero; nonpositive_nodes are contact nodes with vanishing multiplier
    (biactive) where only the sign is constrained; free_nodes are the
    remaining interior nodes. The three sets partition the interior.
    """

    zero_nodes: np.ndarray
    nonpositive_nodes: np.ndarray
    free_nodes: np.ndarray


def build_critical_cone(sol: VISolution, tol: float = 1e-8) -> CriticalCone:
    """Classify interior nodes from a converged VI solution.

    Nodes with multiplier above tol * ||f|| become zero_nodes; remaining
    active nodes are biactive and get the sign constraint. Ties at the
    threshold fall to the weaker (sign) constraint.
    """
    mesh = sol.u.mesh
    interior = mesh.interior_mask
    threshold = tol * max(sol.f_norm, 1e-300)
    zero = interior & sol.active_set & (sol.lam.values > threshold)
    nonpos = interior & sol.active_set & ~zero
    free = interior & ~zero & ~nonpos
    return CriticalCone(zero, nonpos, free)


def _direction_load(q: MatrixControlField, d: MatrixControlField,
                    u: ScalarField) -> np.ndarray:
    """Right side -(d grad u, grad phi) of the derivative VI."""
    k_d = assemble_stiffness(q.mesh, d, eliminate=False,
                             check_coefficient=False)
    return -(k_d @ u.values)


def directional_derivative(q: MatrixControlField, d: MatrixControlField,
                           sol: VISolution, cone: CriticalCone,
                           pdas: Optional[PDASConfig] = None) -> ScalarField:
    """Derivative of the solution map at q in the control direction d.

    Solves the cone-constrained VI: minimize 1/2 v' K_q v + (K_d u)' v over
    v = 0 on zero_nodes, v <= 0 on nonpositive_nodes, by the same active-set
    iteration as the forward obstacle solve. Positively homogeneous in d for
    a fixed cone. The theory reads d as a feasible perturbation (q + d stays
    admissible); that is the caller's precondition, the solve itself only
    needs q elliptic.
    """
    mesh = q.mesh
    if d.mesh is not mesh or sol.u.mesh is not mesh:
        raise CoefficientError("direction and solution must share the mesh")
    if pdas is None:
        pdas = PDASConfig()
    K = assemble_stiffness(mesh, q)
    rhs = _direction_load(q, d, sol.u)
    n = mesh.n_nodes
    upper = np.full(n, np.inf)
    upper[cone.nonpositive_nodes] = 0.0
    pinned = mesh.boundary_mask | cone.zero_nodes
    v, _, _, _ = _pdas_bound_solve(K, rhs, upper, pinned, np.zeros(n),
                                   mesh.lumped_mass, pdas)
    return ScalarField(mesh, v)


def _derivative_multiplier(q: MatrixControlField, d: MatrixControlField,
                           u: ScalarField,
                           u_tilde: ScalarField) -> ScalarField:
    """Lumped nodal multiplier of the derivative VI, from its residual."""
    mesh = q.mesh
    K = assemble_stiffness(mesh, q)
    rhs = _direction_load(q, d, u)
    resid = rhs - K.matrix @ u_tilde.values
    lam = resid / mesh.lumped_mass
    lam[mesh.boundary_mask] = 0.0
    return ScalarField(mesh, lam)


def derivative_complementarity_check(u_tilde: ScalarField,
                                     cone: CriticalCone,
                                     q: MatrixControlField,
                                     d: MatrixControlField,
                                     u: ScalarField) -> tuple:
    """Residual triple (feasibility, polarity, orthogonality).

    feasibility: worst cone violation of the derivative (|value| on
    zero_nodes, positive part on nonpositive_nodes). polarity: worst sign
    violation of the lumped multiplier (must be >= 0 on nonpositive_nodes,
    vanish on free nodes, free on zero_nodes). orthogonality: lumped
    pairing |<lam, u_tilde>|. All near zero at a converged solve.
    """
    mesh = u_tilde.mesh
    v = u_tilde.values
    lam = _derivative_multiplier(q, d, u, u_tilde).values
    feas = 0.0
    if cone.zero_nodes.any():
        feas = float(np.abs(v[cone.zero_nodes]).max())
    if cone.nonpositive_nodes.any():
        feas = max(feas, float(v[cone.nonpositive_nodes].max(initial=0.0)))
    polar = float(np.abs(lam[cone.free_nodes]).max(initial=0.0))
    if cone.nonpositive_nodes.any():
        polar = max(polar,
                    float((-lam[cone.nonpositive_nodes]).max(initial=0.0)))
    comp = float(abs(np.sum(mesh.lumped_mass * lam * v)))
    return feas, polar, comp


def primal_first_order_check(q_star: MatrixControlField,
                             candidates: Sequence[MatrixControlField],
                             cfg: ObjectiveConfig, sol: VISolution,
                             cone_tol: float = 1e-8,
                             pdas: Optional[PDASConfig] = None) -> float:
    """Minimum directional value of the primal stationarity condition.

    For each candidate q the direction d = q - q_star gets the value

        (u - u_d, S'(q_star; d)) + alpha <q_star - q_d, d> + beta <B', d>,

    with S' the cone derivative at the converged VI solution. At a local
    minimizer the value is nonnegative for every admissible candidate, up
    to solver tolerances; a clearly negative minimum certifies descent.
    """
    cone = build_critical_cone(sol, cone_tol)
    bar_grad = None
    if cfg.beta > 0.0:
        be = barrier(q_star, cfg.q_min, cfg.q_max)
        if not be.feasible:
            raise CoefficientError("q_star violates the spectral bounds")
        bar_grad = be.gradient
    best = np.inf
    for cand in candidates:
        d = cand - q_star
        u_t = directional_derivative(q_star, d, sol, cone, pdas)
        value = l2_inner(sol.u - cfg.u_d, u_t) \
            + cfg.alpha * control_inner(q_star - cfg.q_d, d)
        if bar_grad is not None:
            value += cfg.beta * control_inner(bar_grad, d)
        best = min(best, value)
    return float(best)
