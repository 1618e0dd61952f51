"""
Cross-check the grid solution with simulated play.

The solver's decisions are turned into feedback policies and rolled out
against every constant drift plus the solver's own drift. The worst of
those gives a lower estimate of the value. Common random numbers make the
comparison across adversaries and budgets low-noise.
"""
import math

import numpy as np

from impulsegame import Grid, canonical_grid, canonical_impulse_grid, solve, tolerance, tp1
from impulsegame.game import (StoppingRule, dpp_residual, estimate_value_pair, extract_policies,
                              precommitment_sweep)

spec = tp1()
zg = canonical_impulse_grid(spec)
N, SEED = 10_000, 1

# %% a box of [-4, 4] is too tight when starting at pi: the adversary pushes
# paths out, and the solver's artificial boundary shows up in u(0, pi).
# Doubling the box at the same spacing removes the effect.
narrow = solve(spec, canonical_grid(), zg)
wide = solve(spec, Grid(-8.0, 8.0, 321, 80), zg)
x = np.array([[math.pi]])
print(f"u(0, pi): [-4,4] box {narrow.layer(0)(x)[0]:.4f}, [-8,8] box {wide.layer(0)(x)[0]:.4f}")

# %% lower and upper estimates with fewer than 4 impulses
pol = extract_policies(wide)
tol = tolerance(wide.grid, zg.step)
for x0 in (0.0, math.pi):
    est = estimate_value_pair(spec, [x0], pol, 4, n_paths=N, seed=SEED, workers=4)
    u0 = wide.layer(0)(np.array([[x0]]))[0]
    print(f"x0={x0:.3f}  u={u0:.4f}  v-={est.v_minus:.4f}+-{est.se_minus:.4f}  "
          f"v+={est.v_plus:.4f}  worst adversary: {est.worst}")
print(f"grid tolerance {tol:.4f}")

# %% budget sweep: one impulse (q = 2) is all the player needs here
table = precommitment_sweep(spec, [math.pi], range(1, 6), wide, n_paths=N, seed=SEED, workers=4)
for q, v, se in zip(table.q, table.v_lower, table.se):
    print(f"q={q}  v-={v:+.4f}  se={se:.4f}")

# %% dynamic programming check: play until the path leaves [-1, 1], then
# read the grid value at the exit state
res = dpp_residual(spec, narrow, [0.0], StoppingRule("exit", lo=-1.0, hi=1.0),
                   n_paths=N, seed=SEED, workers=4)
print(f"DPP residual {res.delta:+.5f} (se {res.se:.5f})")
