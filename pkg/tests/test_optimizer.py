"""Projected-gradient optimizer tests: gradient consistency, descent
properties, penalty continuation, and the VI-constrained reference solve."""

import numpy as np
import pytest

from obstacle_control import (
    MatrixControlField,
    ScalarField,
    StagnationError,
    assemble_load,
    assemble_stiffness,
    build_mesh,
    control_norm,
    interpolate,
    l2_norm,
    solve_spd,
    zero_field,
)
from obstacle_control.obstacle import complementarity_residuals, solve_vi
from obstacle_control.penalty import PenaltyConfig, solve_penalized
from obstacle_control.optimize import (
    LoopConfig,
    ObjectiveConfig,
    gamma_continuation,
    minimize,
    reduced_gradient,
    solve_vi_adjoint,
    solve_vi_constrained,
    stationarity_residual,
    stationarity_residual_vi,
)

from conftest import random_admissible, random_direction
from test_fem import desired_state, manufactured_load, q_d_components

SEED = 8472
Q_INIT = [[2.0, -1.0], [-1.0, 2.0]]


def example_config(mesh, beta=1e-4):
    return ObjectiveConfig(
        alpha=0.1, beta=beta,
        u_d=interpolate(mesh, desired_state),
        q_d=MatrixControlField.from_function(mesh, q_d_components),
        q_min=0.5, q_max=10.0,
        f_load=assemble_load(mesh, manufactured_load))


def total_objective(q, cfg, pen):
    from obstacle_control.control import barrier
    u = solve_penalized(q, cfg.f_load, pen)
    value = 0.5 * l2_norm(u - cfg.u_d) ** 2 \
        + 0.5 * cfg.alpha * control_norm(q - cfg.q_d) ** 2
    if cfg.beta > 0.0:
        value += cfg.beta * barrier(q, cfg.q_min, cfg.q_max,
                                    with_gradient=False).value
    return value


def test_objective_config_validation():
    mesh = build_mesh(2)
    u_d = zero_field(mesh)
    q_d = MatrixControlField.constant(mesh, np.eye(2))
    f = zero_field(mesh)
    with pytest.raises(ValueError, match="alpha"):
        ObjectiveConfig(0.0, 0.0, u_d, q_d, 0.5, 10.0, f)
    with pytest.raises(ValueError, match="beta"):
        ObjectiveConfig(0.1, -1.0, u_d, q_d, 0.5, 10.0, f)
    with pytest.raises(ValueError, match="q_min"):
        ObjectiveConfig(0.1, 0.0, u_d, q_d, 10.0, 0.5, f)


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(backtrack=1.0)
    with pytest.raises(ValueError):
        LoopConfig(sigma=0.0)
    with pytest.raises(ValueError):
        LoopConfig(on_stagnation="panic")


def test_gradient_is_tikhonov_for_zero_load():
    mesh = build_mesh(3)
    cfg = ObjectiveConfig(
        alpha=0.1, beta=0.0, u_d=zero_field(mesh),
        q_d=MatrixControlField.from_function(mesh, q_d_components),
        q_min=0.5, q_max=10.0, f_load=zero_field(mesh))
    rng = np.random.default_rng(SEED)
    q = random_admissible(mesh, rng)
    pen = PenaltyConfig(gamma=1e3, psi=0.5)
    u = solve_penalized(q, cfg.f_load, pen)
    assert np.array_equal(u.values, np.zeros(mesh.n_nodes))
    g = reduced_gradient(q, u, zero_field(mesh), cfg)
    assert np.allclose(g.comps, 0.1 * (q.comps - cfg.q_d.comps), atol=1e-15)


def test_gradient_matches_central_differences():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    pen = PenaltyConfig(gamma=1e3, psi=0.5)
    rng = np.random.default_rng(SEED + 1)
    q = random_admissible(mesh, rng, margin=0.1)
    from obstacle_control.penalty import solve_adjoint
    u = solve_penalized(q, cfg.f_load, pen)
    p = solve_adjoint(q, u, cfg.u_d, pen)
    g = reduced_gradient(q, u, p, cfg)
    h = 1e-5
    for _ in range(5):
        d = random_direction(mesh, rng)
        dd = (
            g.comps[:, 0] @ (mesh.mass_matrix @ d.comps[:, 0])
            + g.comps[:, 1] @ (mesh.mass_matrix @ d.comps[:, 1])
            + 2.0 * (g.comps[:, 2] @ (mesh.mass_matrix @ d.comps[:, 2])))
        fd = (total_objective(q + h * d, cfg, pen)
              - total_objective(q + (-h) * d, cfg, pen)) / (2.0 * h)
        assert dd == pytest.approx(fd, rel=1e-4), f"{dd:.8e} vs {fd:.8e}"


def test_manufactured_optimum_terminates_immediately():
    mesh = build_mesh(4)
    f = assemble_load(mesh, manufactured_load)
    q_d = MatrixControlField.from_function(mesh, q_d_components)
    K = assemble_stiffness(mesh, q_d)
    u_star, _ = solve_spd(K, f)
    cfg = ObjectiveConfig(alpha=0.1, beta=0.0, u_d=u_star, q_d=q_d,
                          q_min=0.5, q_max=10.0, f_load=f)
    res = minimize(q_d, cfg, PenaltyConfig(gamma=0.0, psi=1e6))
    assert res.converged
    assert res.iterations <= 2
    assert res.pg_residual <= 1e-10


def test_objective_monotone_armijo_and_violation():
    mesh = build_mesh(5)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    res = minimize(q0, cfg, PenaltyConfig(gamma=1e6, psi=0.5),
                   LoopConfig(max_iters=5000))
    assert res.converged
    vals = [e.objective for e in res.history]
    assert np.all(np.diff(vals) < 0.0)
    # Armijo certificate replay over the recorded history
    for cur, nxt in zip(res.history, res.history[1:]):
        assert nxt.objective <= cur.objective \
            - 1e-4 * cur.step * cur.grad_norm ** 2 + 1e-15
    # cubic penalty leaves a gap of order (lambda_max/gamma)^(1/3); the
    # multiplier peaks near 4 here, so the scale is (4e-6)^(1/3) = 1.6e-2
    assert (res.u.values - 0.5).max() <= 2e-2
    assert res.history[-1].step == 0.0
    assert res.history[-1].pg_residual == res.pg_residual


def test_iterates_strictly_admissible():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    res = minimize(q0, cfg, PenaltyConfig(gamma=1e3, psi=0.5),
                   LoopConfig(max_iters=25, on_stagnation="return",
                              grad_tol_rel=1e-30))
    assert not res.converged
    assert len(res.history) == 26
    assert all(e.feasibility_margin > 0.0 for e in res.history)


def test_beta_sweep_barrier_path():
    mesh = build_mesh(3)
    pen = PenaltyConfig(gamma=1e3, psi=0.5)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    barrier_parts, tracking_parts = [], []
    for beta in (1e-2, 1e-3, 1e-4):
        cfg = example_config(mesh, beta=beta)
        res = minimize(q0, cfg, pen, LoopConfig(max_iters=3000))
        assert res.converged
        barrier_parts.append(res.history[-1].barrier_term)
        tracking_parts.append(res.history[-1].tracking)
    # the barrier's contribution to the objective fades in magnitude
    assert np.all(np.diff(np.abs(barrier_parts)) < 0.0), barrier_parts
    # weaker barrier lets the tracking improve, up to small slack
    assert all(t1 <= t0 * 1.05 + 1e-12
               for t0, t1 in zip(tracking_parts, tracking_parts[1:])), \
        tracking_parts


def test_stationarity_zero_at_tikhonov_optimum():
    mesh = build_mesh(3)
    q_d = MatrixControlField.from_function(mesh, q_d_components)
    cfg = ObjectiveConfig(alpha=0.1, beta=0.0, u_d=zero_field(mesh),
                          q_d=q_d, q_min=0.5, q_max=10.0,
                          f_load=zero_field(mesh))
    r = stationarity_residual_vi(q_d, zero_field(mesh), zero_field(mesh),
                                 cfg)
    assert r == 0.0


def test_stationarity_large_at_start_small_at_optimum():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    sol = solve_vi(q0, cfg.f_load, 0.5)
    p = solve_vi_adjoint(q0, sol, cfg.u_d)
    assert np.array_equal(p.values[sol.strongly_active],
                          np.zeros(int(sol.strongly_active.sum())))
    r0 = stationarity_residual_vi(q0, sol.u, p, cfg)
    assert r0 > 1e-2
    res = minimize(q0, cfg, PenaltyConfig(gamma=1e3, psi=0.5),
                   LoopConfig(max_iters=3000))
    from obstacle_control.penalty import solve_adjoint
    pen = PenaltyConfig(gamma=1e3, psi=0.5)
    p_star = solve_adjoint(res.q, res.u, cfg.u_d, pen)
    r_star = stationarity_residual_vi(res.q, res.u, p_star, cfg)
    assert r_star <= 1e-6


def test_gamma_continuation_single_equals_minimize():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    pen = PenaltyConfig(gamma=1.0, psi=0.5)
    opt = LoopConfig(max_iters=3000)
    legs = gamma_continuation(q0, cfg, [1e3], pen, opt)
    direct = minimize(q0, cfg, PenaltyConfig(gamma=1e3, psi=0.5), opt)
    assert len(legs) == 1
    assert legs[0].err_u is None
    assert np.array_equal(legs[0].result.q.comps, direct.q.comps)


def test_gamma_continuation_monotone_distances():
    mesh = build_mesh(4)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    opt = LoopConfig(max_iters=5000)
    ref = solve_vi_constrained(q0, cfg, 0.5, opt=opt)
    assert ref.converged
    legs = gamma_continuation(q0, cfg, [1e0, 1e3, 1e6, 1e9],
                              PenaltyConfig(gamma=1.0, psi=0.5), opt,
                              reference=ref)
    err_u = [leg.err_u for leg in legs]
    viol = [(leg.result.u.values - 0.5).max() for leg in legs]
    assert np.all(np.diff(err_u) < 0.0), err_u
    assert np.all(np.diff(viol) <= 0.0), viol
    err_q = [leg.err_q for leg in legs]
    assert np.all(np.diff(err_q) < 0.0), err_q


def test_gamma_continuation_validates_list():
    mesh = build_mesh(2)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    pen = PenaltyConfig(gamma=1.0, psi=0.5)
    with pytest.raises(ValueError, match="empty"):
        gamma_continuation(q0, cfg, [], pen)
    with pytest.raises(ValueError, match="increasing"):
        gamma_continuation(q0, cfg, [1e3, 1e3], pen)


def test_vi_constrained_matches_smooth_when_obstacle_inactive():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    opt = LoopConfig(max_iters=3000)
    res_vi = solve_vi_constrained(q0, cfg, 1e6, opt=opt)
    res_pen = minimize(q0, cfg, PenaltyConfig(gamma=1e3, psi=1e6), opt)
    assert res_vi.converged and res_pen.converged
    assert control_norm(res_vi.q - res_pen.q) <= 1e-8


def test_vi_constrained_contact_region_and_multiplier():
    mesh = build_mesh(4)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    res = solve_vi_constrained(q0, cfg, 0.5, opt=LoopConfig(max_iters=5000))
    assert res.converged
    sol = solve_vi(res.q, cfg.f_load, 0.5)
    assert sol.active_set.sum() > 0
    # contact sits where the target state exceeds the obstacle (center)
    xy = mesh.nodes[sol.active_set]
    assert np.abs(xy).max() <= 0.8
    assert sol.lam.values.min() >= -1e-10
    feas, neg, comp = complementarity_residuals(sol, 0.5)
    assert max(feas, neg, comp) <= 1e-8


def test_stagnation_raise_and_return():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    pen = PenaltyConfig(gamma=1e3, psi=0.5)
    bad = LoopConfig(step_init=1e6, max_backtracks=0)
    with pytest.raises(StagnationError) as err:
        minimize(q0, cfg, pen, bad)
    assert len(err.value.history) >= 1
    res = minimize(q0, cfg, pen,
                   LoopConfig(step_init=1e6, max_backtracks=0,
                              on_stagnation="return"))
    assert res.stagnated and not res.converged


def test_budget_exhaustion_returns_unconverged():
    mesh = build_mesh(3)
    cfg = example_config(mesh)
    q0 = MatrixControlField.constant(mesh, Q_INIT)
    res = minimize(q0, cfg, PenaltyConfig(gamma=1e3, psi=0.5),
                   LoopConfig(max_iters=3, grad_tol_rel=1e-30,
                              on_stagnation="return"))
    assert not res.converged
    assert res.iterations == 3
    assert len(res.history) == 4
