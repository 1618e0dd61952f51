"""
Structural checks on the discrete solution: comparison, strict
supersolutions, discounting and grid refinement.
"""
import numpy as np

from impulsegame import (Grid, Scheme, canonical_grid, canonical_impulse_grid,
                         convergence_study, solve, tolerance, tp1)
from impulsegame.problem import CosineGain
from impulsegame.verify import (DiscountedConstants, bound_and_obstacle_check,
                                discount_transform_check, discrete_comparison,
                                strict_supersolution_residual)

spec = tp1()
grid = canonical_grid()
zg = canonical_impulse_grid(spec)
tol = tolerance(grid, zg.step)
print(f"tolerance on the default grid: {tol:.4f}")

# %% bounds and the obstacle
sol = solve(spec, grid, zg)
for v in bound_and_obstacle_check(sol):
    print(f"{v.check:>12}: margin {v.margin:+.2e} pass={v.passed}")

# %% lowering the terminal gain by 0.3 lowers the value by exactly 0.3
rep = discrete_comparison(spec, grid, zg, Scheme(), CosineGain(offset=-0.3), CosineGain())
gap = rep.u2 - rep.u1
print(f"u2 - u1 in [{gap.min():.6f}, {gap.max():.6f}]")

# %% strict supersolutions with discount 0.5: mixing the solution with a
# large constant buys a residual of at least lambda * min(1, K0)
rho = 0.5
ds = spec.discounted(rho)
dsol = solve(ds, grid, canonical_impulse_grid(ds), Scheme(rho=rho))
consts = DiscountedConstants.from_spec(spec, rho)
for lam in (0.1, 0.25, 0.5, 1.0):
    r = strict_supersolution_residual(dsol, lam, consts)
    print(f"lambda={lam:<5} min residual {r.min_residual:.4f}  target {r.target:.4f}")

# %% discounting is a change of variables u_rho = e^{rho t} u
verdict, err = discount_transform_check(spec, grid, zg, rho)
print(f"discount transform sup error {err:.4f}")

# %% self-convergence under factor-2 refinement of space and time
grids = [Grid(-4.0, 4.0, 21, 10)]
for _ in range(3):
    grids.append(grids[-1].refine())
table = convergence_study(spec, Scheme(), grids)
for row in table.rows():
    print(row)
print("orders:", np.round(table.orders, 2))
