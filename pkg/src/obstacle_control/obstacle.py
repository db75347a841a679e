"""Obstacle variational inequality via primal-dual active sets.

Solves, for a fixed admissible coefficient q, the discrete complementarity
system: K_q u + mu = f, u <= psi, mu >= 0, mu'(u - psi) = 0, where the
multiplier gets a nodal representation lambda_i = mu_i / m_i through the
lumped mass. The iteration is the semismooth Newton method on
lambda - max(0, lambda + c (u - psi)) = 0: guess an active set, impose
u = psi there, recover lambda from the lumped residual, reclassify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .control import MatrixControlField
from .errors import NonconvergenceError
from .fem import ScalarField, SparseOperator, assemble_stiffness
from .linsolve import solve_spd


@dataclass(frozen=True)
class PDASConfig:
    c: float = 1.0
    max_iters: int = 100
    tol_feas: float = 1e-10
    tol_comp: float = 1e-10
    active_tol: float = 1e-8
    lin_tol: float = 1e-12

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("reformulation constant c must be positive")


@dataclass(frozen=True)
class VISolution:
    """Converged state, nodal multiplier, and active-set partition."""

    u: ScalarField
    lam: ScalarField
    active_set: np.ndarray
    strongly_active: np.ndarray
    iterations: int
    f_norm: float


def _pdas_bound_solve(K: SparseOperator, rhs: np.ndarray, upper: np.ndarray,
                      pinned: np.ndarray, pinned_values: np.ndarray,
                      m_lump: np.ndarray, cfg: PDASConfig,
                      active0: Optional[np.ndarray] = None):
    """Primal-dual active set loop for min 1/2 u'Ku - rhs'u, u <= upper.

    Nodes flagged by `pinned` are held at `pinned_values` throughout
    (Dirichlet nodes and, for cone problems, strongly-active nodes). The
    upper bound applies wherever `upper` is finite; +inf entries are
    unconstrained. Returns (u, lam, active, iterations) with lam the
    lumped nodal multiplier, supported on the final active set.
    """
    n = rhs.shape[0]
    constrained = np.isfinite(upper) & ~pinned
    active = np.zeros(n, dtype=bool)
    if active0 is not None:
        active = active0 & constrained
    seen = {active.tobytes()}
    u = np.zeros(n)
    mat = K.matrix
    for it in range(1, cfg.max_iters + 1):
        fixed = pinned | active
        u_fix = np.where(pinned, pinned_values, 0.0)
        u_fix[active] = upper[active]
        keep = sp.diags((~fixed).astype(float))
        system = (keep @ mat @ keep + sp.diags(fixed.astype(float))).tocsr()
        rhs_mod = np.where(fixed, u_fix, rhs - mat @ u_fix)
        x0 = np.where(fixed, u_fix, u)
        u, _ = solve_spd(system, rhs_mod, tol=cfg.lin_tol, x0=x0)
        lam = np.zeros(n)
        resid = rhs - mat @ u
        lam[active] = resid[active] / m_lump[active]
        indicator = np.zeros(n)
        idx = constrained
        indicator[idx] = lam[idx] + cfg.c * (u[idx] - upper[idx])
        new_active = constrained & (indicator > 0.0)
        if np.array_equal(new_active, active):
            return u, lam, active, it
        key = new_active.tobytes()
        if key in seen:
            raise NonconvergenceError(
                f"active-set iteration cycled after {it} iterations",
                active_sets=(active.copy(), new_active.copy()))
        seen.add(key)
        active = new_active
    raise NonconvergenceError(
        f"active set did not stabilize within {cfg.max_iters} iterations",
        active_sets=(active.copy(), new_active.copy()))


def _load_density_norm(f_load: ScalarField, m_lump: np.ndarray) -> float:
    """Lumped L2 norm of the nodal density represented by a load vector."""
    dens = f_load.values / m_lump
    return float(np.sqrt(np.sum(m_lump * dens * dens)))


def solve_vi(q: MatrixControlField, f_load: ScalarField, psi: float,
             cfg: Optional[PDASConfig] = None,
             active0: Optional[np.ndarray] = None,
             K: Optional[SparseOperator] = None) -> VISolution:
    """Solve the obstacle problem (q grad u, grad(v-u)) >= (f, v-u).

    Parameters
    ----------
    q : MatrixControlField
        Admissible coefficient (positive definiteness is checked at
        quadrature points during assembly).
    f_load : ScalarField
        Assembled load vector.
    psi : float
        Constant obstacle, required positive.
    cfg : PDASConfig, optional
    active0 : ndarray of bool, optional
        Warm-start active set.
    K : SparseOperator, optional
        Pre-assembled eliminated stiffness for q, to avoid re-assembly.

    Returns
    -------
    VISolution
    """
    if psi <= 0.0:
        raise ValueError("obstacle psi must be positive")
    cfg = cfg or PDASConfig()
    mesh = f_load.mesh
    if K is None:
        K = assemble_stiffness(mesh, q)
    rhs = np.where(mesh.boundary_mask, 0.0, f_load.values)
    upper = np.full(mesh.n_nodes, psi)
    m_lump = mesh.lumped_mass
    u, lam, active, its = _pdas_bound_solve(
        K, rhs, upper, mesh.boundary_mask,
        np.zeros(mesh.n_nodes), m_lump, cfg, active0)
    f_norm = _load_density_norm(f_load, m_lump)
    strong = active & (lam > cfg.active_tol * max(f_norm, 1e-300))
    return VISolution(ScalarField(mesh, u), ScalarField(mesh, lam),
                      active, strong, its, f_norm)


def complementarity_residuals(sol: VISolution,
                              psi: float) -> tuple[float, float, float]:
    """Max violations of u <= psi, lambda >= 0, and lumped orthogonality."""
    u = sol.u.values
    lam = sol.lam.values
    m = sol.u.mesh.lumped_mass
    feas_u = float(np.maximum(u - psi, 0.0).max())
    feas_lambda = float(np.maximum(-lam, 0.0).max())
    comp = float(abs(np.sum(lam * m * (u - psi))))
    return feas_u, feas_lambda, comp


def oracle_active_set_enumeration(K: np.ndarray, f: np.ndarray, psi: float,
                                  tol: float = 1e-11):
    """Brute-force reference solution of the dense obstacle problem.

    Tries every active subset of the (interior) dense system K u + mu = f,
    u <= psi, mu >= 0 supported on the subset, and returns the unique
    feasible configuration as (u, mu) with mu the unscaled residual
    multiplier f - K u.

    Intended for tests only; the interior dimension must be at most 20.
    """
    n = K.shape[0]
    if n > 20:
        raise ValueError("enumeration oracle limited to dimension 20")
    scale = max(1.0, float(np.abs(f).max()), abs(psi))
    for bits in range(2 ** n):
        active = np.array([(bits >> k) & 1 for k in range(n)], dtype=bool)
        inactive = ~active
        u = np.full(n, psi, dtype=float)
        if inactive.any():
            kii = K[np.ix_(inactive, inactive)]
            rhs = f[inactive] - K[np.ix_(inactive, active)] @ u[active]
            u[inactive] = np.linalg.solve(kii, rhs)
        mu = np.zeros(n)
        mu[active] = (f - K @ u)[active]
        if np.all(u <= psi + tol * scale) and np.all(mu >= -tol * scale):
            return u, mu
    raise RuntimeError("no feasible active-set configuration found")
