"""Check the two derivative mechanisms against finite differences.

First the adjoint gradient of the penalized objective versus central
differences, then the cone-constrained directional derivative of the
obstacle solution map versus difference quotients.
"""
import numpy as np

from obstacle_control import (
    MatrixControlField,
    PenaltyConfig,
    ScalarField,
    build_critical_cone,
    build_mesh,
    control_inner,
    directional_derivative,
    example_objective,
    initial_control,
    l2_norm,
    objective_value,
    reduced_gradient,
    solve_adjoint,
    solve_penalized,
    solve_vi,
)


def random_direction(mesh, rng, scale=0.1):
    vals = rng.standard_normal((mesh.n_nodes, 3)) * scale
    vals[mesh.boundary_mask] = 0.0
    return MatrixControlField(mesh, vals)

rng = np.random.default_rng(7)
mesh = build_mesh(3)
obj = example_objective(mesh)
q = initial_control(mesh)
pen = PenaltyConfig(gamma=1e3, psi=0.5)
h = 1e-5

u = solve_penalized(q, obj.f_load, pen)
p = solve_adjoint(q, u, obj.u_d, pen)
g = reduced_gradient(q, u, p, obj)

print("adjoint vs central finite differences (gamma=1e3):")
for k in range(4):
    d = random_direction(mesh, rng)
    dd_adj = control_inner(g, d)
    dd_fd = (objective_value(q + h * d, obj, pen)
             - objective_value(q - h * d, obj, pen)) / (2 * h)
    rel = abs(dd_adj - dd_fd) / abs(dd_fd)
    print(f"  direction {k}: adjoint {dd_adj:+.8e}  fd {dd_fd:+.8e}  "
          f"rel {rel:.2e}")

print()
print("directional derivative of the obstacle solution map:")
sol = solve_vi(q, obj.f_load, 0.5)
cone = build_critical_cone(sol)
print(f"  contact nodes {int(sol.active_set.sum())}, "
      f"strongly active {int(cone.zero_nodes.sum())}")
d = random_direction(mesh, rng)
ut = directional_derivative(q, d, sol, cone)
print(f"  {'t':>8} {'quotient error':>16}")
for t in (1e-1, 1e-2, 1e-3, 1e-4):
    solt = solve_vi(q + t * d, obj.f_load, 0.5, active0=sol.active_set)
    err = l2_norm(ScalarField(
        mesh, (solt.u.values - sol.u.values) / t - ut.values))
    print(f"  {t:8.0e} {err:16.6e}")
