"""Independent reference computations used by the tests.

Nothing here imports the solver's discretisation code; only plain
coefficient callables are shared.
"""
from __future__ import annotations

import itertools

import numpy as np


class ToyGame:
    """A 1D game on a handful of nodes, written out by hand.

    Drift b, constant volatility ``sigma``, terminal gain ``g``, running gain
    ``f(x, b)``, impulses from the finite list ``zs`` with costs ``cost(z)``.
    """

    def __init__(self, xs, nt, T, controls, sigma, g, zs, cost, f=None, rho=0.0,
                 boundary="reflect"):
        self.xs = np.asarray(xs, dtype=float)
        self.n = len(self.xs)
        self.h = self.xs[1] - self.xs[0]
        self.nt, self.dt = nt, T / nt
        self.controls = list(controls)
        self.sigma, self.g, self.zs, self.cost = sigma, g, list(zs), cost
        self.f = f or (lambda x, b: 0.0)
        self.rho = rho
        self.boundary = boundary

    # -- generator rows, one node at a time -----------------------------------
    def generator_row(self, i, b):
        """Dense row L^b at node i (coefficients on u)."""
        n, h = self.n, self.h
        D = 0.5 * self.sigma**2 / h**2
        row = np.zeros(n)
        up = D + max(b, 0.0) / h
        down = D + max(-b, 0.0) / h
        if i == 0:
            up, down = 2 * D + max(b, 0.0) / h, 0.0
        elif i == n - 1:
            up, down = 0.0, 2 * D + max(-b, 0.0) / h
        if up:
            row[i + 1] += up
            row[i] -= up
        if down:
            row[i - 1] += down
            row[i] -= down
        return row

    def interp_row(self, x):
        """Row of linear-interpolation weights at x, clamped into the box."""
        x = min(max(x, self.xs[0]), self.xs[-1])
        s = (x - self.xs[0]) / self.h
        lo = min(int(np.floor(s)), self.n - 2)
        fr = s - lo
        row = np.zeros(self.n)
        row[lo] += 1 - fr
        row[lo + 1] += fr
        return row

    def is_boundary(self, i):
        return self.boundary == "extrapolate" and i in (0, self.n - 1)

    def copy_row(self, i):
        row = np.zeros(self.n)
        row[i] = 1.0
        row[1 if i == 0 else self.n - 2] -= 1.0
        return row

    # -- one linear system per (b-policy, impulse-policy) ---------------------
    def _system(self, bpol, apol, u_next, t):
        A = np.zeros((self.n, self.n))
        r = np.zeros(self.n)
        for i in range(self.n):
            a = apol[i]
            if a is not None:
                z = self.zs[a]
                A[i] = -self.interp_row(self.xs[i] + z)
                A[i, i] += 1.0
                r[i] = self.cost(z)
            elif self.is_boundary(i):
                A[i] = self.copy_row(i)
            else:
                b = self.controls[bpol[i]]
                A[i] = -self.dt * self.generator_row(i, b)
                A[i, i] += 1.0 + self.dt * self.rho
                r[i] = u_next[i] + self.dt * self.f(self.xs[i], b)
        return A, r

    def _solve_policy(self, A, r):
        if abs(np.linalg.det(A)) < 1e-12:
            return None
        return np.linalg.solve(A, r)

    def impulse_policies(self):
        return itertools.product([None] + list(range(len(self.zs))), repeat=self.n)

    def terminal(self):
        """max over impulse policies (hold rows: u = g)."""
        best = None
        for apol in self.impulse_policies():
            A = np.zeros((self.n, self.n))
            r = np.zeros(self.n)
            for i, a in enumerate(apol):
                if a is None:
                    A[i, i] = 1.0
                    r[i] = self.g(self.xs[i])
                else:
                    A[i] = -self.interp_row(self.xs[i] + self.zs[a])
                    A[i, i] += 1.0
                    r[i] = self.cost(self.zs[a])
            u = self._solve_policy(A, r)
            if u is None:
                continue
            best = u if best is None else np.maximum(best, u)
        return best

    def step(self, u_next, t):
        """min over diffusion policies of max over impulse policies."""
        value = None
        for bpol in itertools.product(range(len(self.controls)), repeat=self.n):
            best = None
            for apol in self.impulse_policies():
                u = self._solve_policy(*self._system(bpol, apol, u_next, t))
                if u is None:
                    continue
                best = u if best is None else np.maximum(best, u)
            value = best if value is None else np.minimum(value, best)
        return value

    def solve(self):
        layers = [self.terminal()]
        for k in range(self.nt - 1, -1, -1):
            layers.append(self.step(layers[-1], k * self.dt))
        return np.array(layers[::-1])


def impulse_tree(g, x, zs, cost, depth):
    """Best value of at most ``depth`` impulses from x before collecting g."""
    best = g(x)
    if depth == 0:
        return best
    for z in zs:
        best = max(best, cost(z) + impulse_tree(g, x + z, zs, cost, depth - 1))
    return best
