"""Follow the penalty path toward the obstacle-constrained optimum.

Solves the VI-constrained problem once as the reference, then a sequence
of smoothed problems with increasing penalty gamma, warm-starting each
from the previous optimum. Prints how fast the penalized solutions
approach the reference.
"""
from obstacle_control import (
    LoopConfig,
    PenaltyConfig,
    build_mesh,
    example_objective,
    gamma_continuation,
    initial_control,
    solve_vi_constrained,
)

level = 4
psi = 0.5
gammas = (1e0, 1e3, 1e6, 1e9, 1e12)

mesh = build_mesh(level)
obj = example_objective(mesh)
q0 = initial_control(mesh)
opt = LoopConfig()

reference = solve_vi_constrained(q0, obj, psi, opt=opt)
print(f"reference: {reference.iterations} iterations, "
      f"objective {reference.value:.6e}")

legs = gamma_continuation(q0, obj, gammas,
                          PenaltyConfig(gamma=gammas[0], psi=psi),
                          opt=opt, reference=reference)

print(f"{'gamma':>8} {'err_u_L2':>12} {'err_q_L2':>12} {'iters':>6}")
for leg in legs:
    print(f"{leg.gamma:8.0e} {leg.err_u:12.4e} {leg.err_q:12.4e} "
          f"{leg.result.iterations:6d}")

ratios = [a / b for a, b in zip([l.err_u for l in legs],
                                [l.err_u for l in legs][1:])]
print("err_u reduction per decade triple:",
      " ".join(f"{r:.1f}x" for r in ratios))
