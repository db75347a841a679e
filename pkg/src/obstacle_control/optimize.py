"""Projected-gradient minimization over matrix coefficient controls.

The reduced objective is

    J(q) = 1/2 ||u(q) - u_d||^2 + alpha/2 ||q - q_d||^2 + beta B(q),

where u(q) is produced either by the penalized state equation or by the
obstacle VI, and B is the logarithmic barrier of the spectral bounds. One
descent loop serves both state maps; they differ only in the state solve
and in the adjoint. The penalized adjoint solves (K + D(u)) p = M(u - u_d)
with D the penalty Jacobian. At an exact VI solution the state never
exceeds the obstacle, so D vanishes identically there and cannot carry the
contact information; the correct large-penalty limit pins p = 0 on the
strongly active set instead, which is what the VI path imposes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .control import (
    BarrierEval,
    MatrixControlField,
    barrier,
    check_admissible,
    control_norm,
    project_spectral,
)
from .errors import CoefficientError, StagnationError
from .fem import ScalarField, SparseOperator, assemble_stiffness, l2_norm
from .linsolve import solve_spd
from .obstacle import PDASConfig, VISolution, solve_vi
from .penalty import (
    PenaltyConfig,
    penalty_residual_as_multiplier,
    solve_adjoint,
    solve_penalized,
)

# tolerance for the Riesz mass solves inside the gradient
_MASS_TOL = 1e-13


@dataclass(frozen=True)
class ObjectiveConfig:
    """Data of the reduced tracking objective.

    alpha weights the control distance to q_d, beta the spectral barrier
    with bounds (q_min, q_max); u_d is the tracking target and f_load the
    assembled load driving the state equation.
    """

    alpha: float
    beta: float
    u_d: ScalarField
    q_d: MatrixControlField
    q_min: float
    q_max: float
    f_load: ScalarField

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if not 0.0 < self.q_min < self.q_max:
            raise ValueError("need 0 < q_min < q_max")


@dataclass(frozen=True)
class LoopConfig:
    grad_tol_rel: float = 1e-8
    grad_tol_abs: float = 0.0
    max_iters: int = 2000
    step_init: float = 1.0
    backtrack: float = 0.5
    max_backtracks: int = 40
    sigma: float = 1e-4
    margin: float = 1e-9
    pg_step: float = 1e-4
    on_stagnation: str = "raise"

    def __post_init__(self):
        if self.step_init <= 0.0:
            raise ValueError("step_init must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if not 0.0 < self.sigma < 1.0:
            raise ValueError("sigma must lie in (0, 1)")
        if self.on_stagnation not in ("raise", "return"):
            raise ValueError("on_stagnation must be 'raise' or 'return'")


@dataclass(frozen=True)
class OptIterate:
    """Per-iterate diagnostics of an accepted point.

    step and backtracks describe the move taken away from this point;
    the final point of a run carries step = 0. feasibility_margin is the
    minimum over nodes of the four determinant/trace admissibility tests,
    positive iff the iterate is strictly admissible.
    """

    iteration: int
    tracking: float
    tikhonov: float
    barrier_term: float
    objective: float
    grad_norm: float
    pg_residual: float
    step: float
    backtracks: int
    feasibility_margin: float


@dataclass(frozen=True)
class OptResult:
    q: MatrixControlField
    u: ScalarField
    p: ScalarField
    multiplier: ScalarField
    gradient: MatrixControlField
    value: float
    pg_residual: float
    history: tuple
    converged: bool
    stagnated: bool
    iterations: int


@dataclass(frozen=True)
class GammaLeg:
    """One leg of the penalty continuation, with distances to a reference."""

    gamma: float
    result: OptResult
    err_u: Optional[float]
    err_q: Optional[float]


def _tracking_gradient(mesh, u_vals: np.ndarray,
                       p_vals: np.ndarray) -> np.ndarray:
    """Riesz representative of the tracking term's control derivative.

    The directional derivative of the tracking part along a control
    perturbation d is -(d grad u, grad p), assembled here against the
    bilinear control basis and lifted through the component mass matrix.
    The off-diagonal component carries half the assembled moment because
    the control inner product counts it twice.
    """
    shape, grads, scale = mesh._reference
    gu = np.einsum("gad,ca->cgd", grads, u_vals[mesh.cells])
    gp = np.einsum("gad,ca->cgd", grads, p_vals[mesh.cells])
    d11 = gu[:, :, 0] * gp[:, :, 0]
    d22 = gu[:, :, 1] * gp[:, :, 1]
    d12 = gu[:, :, 0] * gp[:, :, 1] + gu[:, :, 1] * gp[:, :, 0]
    out = np.empty((mesh.n_nodes, 3))
    for k, dens in enumerate((d11, d22, d12)):
        assembled = -scale * np.einsum("cg,ga->ca", dens, shape)
        vec = np.bincount(mesh.cells.ravel(), weights=assembled.ravel(),
                          minlength=mesh.n_nodes)
        out[:, k], _ = solve_spd(mesh.mass_matrix, vec, tol=_MASS_TOL)
    out[:, 2] *= 0.5
    return out


def reduced_gradient(q: MatrixControlField, u: ScalarField, p: ScalarField,
                     cfg: ObjectiveConfig,
                     barrier_eval: Optional[BarrierEval] = None
                     ) -> MatrixControlField:
    """Mass-weighted L2 gradient of the reduced objective at (q, u, p).

    Sum of alpha (q - q_d), beta times the barrier gradient, and the
    tracking term -sym(grad u x grad p) lifted to nodal components. The
    result pairs with control_inner to give exact directional derivatives
    of the discrete objective. u and p must belong to q.

    Parameters
    ----------
    barrier_eval : BarrierEval, optional
        Reuse of a barrier evaluation (with gradient) at q.
    """
    comps = cfg.alpha * (q.comps - cfg.q_d.comps)
    if cfg.beta > 0.0:
        be = barrier_eval
        if be is None or be.gradient is None:
            be = barrier(q, cfg.q_min, cfg.q_max)
        if not be.feasible:
            raise CoefficientError("control violates the spectral bounds; "
                                   "barrier gradient undefined")
        comps = comps + cfg.beta * be.gradient.comps
    comps = comps + _tracking_gradient(q.mesh, u.values, p.values)
    return MatrixControlField(q.mesh, comps)


def objective_value(q: MatrixControlField, cfg: ObjectiveConfig,
                    pen: PenaltyConfig) -> float:
    """Reduced objective through the penalized state, for external checks."""
    u = solve_penalized(q, cfg.f_load, pen)
    value = 0.5 * l2_norm(u - cfg.u_d) ** 2 \
        + 0.5 * cfg.alpha * control_norm(q - cfg.q_d) ** 2
    if cfg.beta > 0.0:
        be = barrier(q, cfg.q_min, cfg.q_max, with_gradient=False)
        if not be.feasible:
            raise CoefficientError("control violates the spectral bounds")
        value += cfg.beta * be.value
    return float(value)


def stationarity_residual(q: MatrixControlField, grad: MatrixControlField,
                          q_min: float, q_max: float,
                          s: float = 1e-4) -> float:
    """Projected-gradient residual ||q - P(q - s grad)|| / s.

    Zero exactly at first-order stationary points of the bound-constrained
    problem; reduces to ||grad|| when the spectral bounds are inactive.
    """
    trial = project_spectral(q - s * grad, q_min, q_max)
    return control_norm(q - trial) / s


def stationarity_residual_vi(q: MatrixControlField, u: ScalarField,
                             p: ScalarField, cfg: ObjectiveConfig,
                             s: float = 1e-4) -> float:
    """Stationarity measure of the gradient variational inequality.

    Evaluates the reduced gradient at the triple (q, u, p) and measures the
    norm of the spectrally projected steepest-descent displacement; small
    values certify the first-order condition over the admissible set.
    """
    grad = reduced_gradient(q, u, p, cfg)
    return stationarity_residual(q, grad, cfg.q_min, cfg.q_max, s)


def solve_vi_adjoint(q: MatrixControlField, sol: VISolution, u_d: ScalarField,
                     lin_tol: float = 1e-12,
                     K: Optional[SparseOperator] = None) -> ScalarField:
    """Adjoint of the VI-constrained tracking problem.

    Large-penalty limit of the penalized adjoint: the penalty Jacobian
    blows up exactly on the contact region, so p is pinned to zero on the
    strongly active nodes and solves K p = M (u - u_d) elsewhere. Biactive
    nodes (active with vanishing multiplier) stay free.
    """
    mesh = q.mesh
    if K is None:
        K = assemble_stiffness(mesh, q)
    pinned = mesh.boundary_mask | sol.strongly_active
    keep = sp.diags((~pinned).astype(float))
    system = (keep @ K.matrix @ keep + sp.diags(pinned.astype(float))).tocsr()
    rhs = mesh.mass_matrix @ (sol.u.values - u_d.values)
    rhs[pinned] = 0.0
    vals, _ = solve_spd(system, rhs, tol=lin_tol)
    return ScalarField(mesh, vals)


class _PenalizedPath:
    """State/adjoint pair through the penalized equation."""

    def __init__(self, cfg: ObjectiveConfig, pen: PenaltyConfig):
        self.cfg = cfg
        self.pen = pen

    def state(self, q, carry):
        K = assemble_stiffness(q.mesh, q)
        u = solve_penalized(q, self.cfg.f_load, self.pen, u0=carry, K=K)
        return u, None, K

    def adjoint(self, q, u, aux, K):
        return solve_adjoint(q, u, self.cfg.u_d, self.pen, K=K)

    def multiplier(self, u, aux):
        return penalty_residual_as_multiplier(u, self.pen)

    def carry(self, u, aux):
        return u


class _VIPath:
    """State/adjoint pair through the obstacle VI."""

    def __init__(self, cfg: ObjectiveConfig, psi: float, pdas: PDASConfig):
        self.cfg = cfg
        self.psi = psi
        self.pdas = pdas

    def state(self, q, carry):
        K = assemble_stiffness(q.mesh, q)
        sol = solve_vi(q, self.cfg.f_load, self.psi, self.pdas,
                       active0=carry, K=K)
        return sol.u, sol, K

    def adjoint(self, q, u, sol, K):
        return solve_vi_adjoint(q, sol, self.cfg.u_d,
                                lin_tol=self.pdas.lin_tol, K=K)

    def multiplier(self, u, sol):
        return sol.lam

    def carry(self, u, sol):
        return sol.active_set


def _descent(q0: MatrixControlField, path, cfg: ObjectiveConfig,
             opt: LoopConfig) -> OptResult:
    """Projected-gradient loop with Armijo backtracking, shared by paths."""
    report = check_admissible(q0, cfg.q_min, cfg.q_max)
    if not report.admissible:
        raise CoefficientError(
            f"initial control violates the spectral bounds at node "
            f"{report.worst_node} (margin {report.worst_value:.3e})")
    q = q0
    u, aux, K = path.state(q, None)

    def diagnostics(q, u, aux, K):
        p = path.adjoint(q, u, aux, K)
        be = None
        bar_term = 0.0
        if cfg.beta > 0.0:
            be = barrier(q, cfg.q_min, cfg.q_max)
            bar_term = cfg.beta * be.value
        g = reduced_gradient(q, u, p, cfg, barrier_eval=be)
        track = 0.5 * l2_norm(u - cfg.u_d) ** 2
        tik = 0.5 * cfg.alpha * control_norm(q - cfg.q_d) ** 2
        resid = stationarity_residual(q, g, cfg.q_min, cfg.q_max, opt.pg_step)
        margin = check_admissible(q, cfg.q_min, cfg.q_max).worst_value
        return p, g, track, tik, bar_term, resid, margin

    p, g, track, tik, bar_term, resid, margin = diagnostics(q, u, aux, K)
    value = track + tik + bar_term
    tol = opt.grad_tol_abs + opt.grad_tol_rel * (1.0 + resid)
    history = []
    converged = False
    stagnated = False
    it = 0
    while True:
        entry = OptIterate(iteration=it, tracking=track, tikhonov=tik,
                           barrier_term=bar_term, objective=value,
                           grad_norm=control_norm(g), pg_residual=resid,
                           step=0.0, backtracks=0, feasibility_margin=margin)
        if resid <= tol or it >= opt.max_iters:
            converged = resid <= tol
            history.append(entry)
            break
        gnorm2 = control_norm(g) ** 2
        step = opt.step_init
        accepted = None
        bt = 0
        for bt in range(opt.max_backtracks + 1):
            trial_q = project_spectral(q - step * g, cfg.q_min, cfg.q_max,
                                       opt.margin)
            if check_admissible(trial_q, cfg.q_min, cfg.q_max).admissible:
                trial_bar = 0.0
                feasible = True
                if cfg.beta > 0.0:
                    tb = barrier(trial_q, cfg.q_min, cfg.q_max,
                                 with_gradient=False)
                    feasible = tb.feasible
                    trial_bar = cfg.beta * tb.value if feasible else np.inf
                if feasible:
                    trial_u, trial_aux, trial_K = path.state(
                        trial_q, path.carry(u, aux))
                    trial_track = 0.5 * l2_norm(trial_u - cfg.u_d) ** 2
                    trial_tik = 0.5 * cfg.alpha * control_norm(
                        trial_q - cfg.q_d) ** 2
                    trial_value = trial_track + trial_tik + trial_bar
                    if trial_value <= value - opt.sigma * step * gnorm2:
                        accepted = (trial_q, trial_u, trial_aux, trial_K)
                        break
            step *= opt.backtrack
        if accepted is None:
            history.append(entry)
            if opt.on_stagnation == "raise":
                raise StagnationError(
                    f"line search stalled at iteration {it} after "
                    f"{opt.max_backtracks} backtracks", tuple(history))
            stagnated = True
            break
        history.append(replace(entry, step=step, backtracks=bt))
        q, u, aux, K = accepted
        it += 1
        p, g, track, tik, bar_term, resid, margin = diagnostics(q, u, aux, K)
        value = track + tik + bar_term
    return OptResult(q=q, u=u, p=p, multiplier=path.multiplier(u, aux),
                     gradient=g, value=value, pg_residual=resid,
                     history=tuple(history), converged=converged,
                     stagnated=stagnated, iterations=it)


def minimize(q0: MatrixControlField, cfg: ObjectiveConfig, pen: PenaltyConfig,
             opt: Optional[LoopConfig] = None) -> OptResult:
    """Minimize the reduced objective subject to the penalized state.

    Projected gradient with Armijo backtracking: every accepted step
    satisfies J(q+) <= J(q) - sigma step ||g||^2, every accepted iterate
    passes the determinant/trace admissibility test, and the objective is
    strictly decreasing. Terminates when the projected-gradient residual
    falls below grad_tol_abs + grad_tol_rel (1 + initial residual), or when
    the iteration budget runs out (converged=False on the result).

    Raises StagnationError if the line search hits the backtracking floor
    while descent is still required and on_stagnation is 'raise'.
    """
    if opt is None:
        opt = LoopConfig()
    return _descent(q0, _PenalizedPath(cfg, pen), cfg, opt)


def solve_vi_constrained(q0: MatrixControlField, cfg: ObjectiveConfig,
                         psi: float, pdas: Optional[PDASConfig] = None,
                         opt: Optional[LoopConfig] = None) -> OptResult:
    """Minimize the reduced objective subject to the obstacle VI.

    Same descent loop as minimize, with the state produced by the
    active-set VI solver and the adjoint pinned on the strongly active
    nodes (large-penalty limit). Produces the reference pair that penalty
    continuation runs are measured against.
    """
    if opt is None:
        opt = LoopConfig()
    if pdas is None:
        pdas = PDASConfig()
    return _descent(q0, _VIPath(cfg, psi, pdas), cfg, opt)


def gamma_continuation(q0: MatrixControlField, cfg: ObjectiveConfig,
                       gammas: Sequence[float], pen: PenaltyConfig,
                       opt: Optional[LoopConfig] = None,
                       reference: Optional[OptResult] = None
                       ) -> tuple[GammaLeg, ...]:
    """Path-following in the penalty parameter.

    Runs minimize for each gamma in the strictly increasing list, warm
    starting each leg from the previous minimizer. pen supplies every
    penalty setting except gamma, which is overwritten per leg. When a
    reference result is given (VI-constrained solve on the same mesh), each
    leg records the state and control distances to it.
    """
    gam = [float(g) for g in gammas]
    if len(gam) == 0:
        raise ValueError("gamma list is empty")
    if any(b <= a for a, b in zip(gam, gam[1:])):
        raise ValueError("gamma list must be strictly increasing")
    legs = []
    q = q0
    for gamma in gam:
        result = minimize(q, cfg, replace(pen, gamma=gamma), opt)
        err_u = err_q = None
        if reference is not None:
            err_u = l2_norm(result.u - reference.u)
            err_q = control_norm(result.q - reference.q)
        legs.append(GammaLeg(gamma, result, err_u, err_q))
        q = result.q
    return tuple(legs)
