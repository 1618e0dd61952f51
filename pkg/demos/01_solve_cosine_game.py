"""
Solve the cosine game on the default grid and look at where the impulse
player acts.

The sup-player collects cos(X_T) and may shift the state by paying
0.1 + 0.05|z| per shift; the inf-player steers the drift in [-1, 1].
"""
import math

import numpy as np

from impulsegame import canonical_grid, canonical_impulse_grid, solve, tp1

# %% solve
spec = tp1()
grid = canonical_grid()
zg = canonical_impulse_grid(spec)
sol = solve(spec, grid, zg)
print(f"grid {grid.nx} x {grid.nt}, {len(zg)} impulse candidates, solution id {sol.id}")
print("max Howard rounds per step:", max(s.policy_iters for s in sol.stats))

# %% value at a few starting points
for x0 in (0.0, 1.0, 2.0, math.pi):
    print(f"u(0, {x0:.3f}) = {sol.layer(0)(np.array([[x0]]))[0]:+.4f}   cos = {math.cos(x0):+.4f}")

# %% where does the impulse player act?
# Costs do not depend on time and there is no running gain, so waiting is
# never worse than acting early: the act region only shows up at the horizon.
for k in (0, grid.nt // 2, grid.nt):
    xs = grid.axis[sol.act[k]]
    span = f"{len(xs)} nodes in [{xs.min():+.2f}, {xs.max():+.2f}]" if len(xs) else "empty"
    print(f"t = {float(grid.times[k]):.3f}: act region {span}")

# %% near pi at T the best jump lands close to 0
i = grid.nearest_node(np.array([[math.pi]]))[0]
print("jump at T from x = pi:", sol.z_star(grid.nt)[i])

# %% the inf-player's drift: pushes away from the nearest peak of cos
b0 = sol.b_star(0)[:, 0]
for x in (-2.0, -0.5, 0.5, 2.0):
    j = grid.nearest_node(np.array([[x]]))[0]
    print(f"b*(0, {x:+.1f}) = {b0[j]:+.1f}")
