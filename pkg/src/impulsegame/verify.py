"""Executable structural checks on intervention operators and solutions.

Every check returns :class:`Verdict` records ``{check, pass, worst_node,
margin}``; ``margin`` is the smallest slack (negative when violated) and
``worst_node`` the ``(layer, node)`` or node index where it occurs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, ValueField, tolerance
from .intervention import ImpulseGrid
from .problem import ProblemSpec, global_bound
from .qvi import Discretization, Scheme, Solution, solve

__all__ = [
    "ROUNDOFF",
    "Verdict",
    "DiscountedConstants",
    "intervention_properties",
    "discrete_residual",
    "strict_supersolution_residual",
    "bound_and_obstacle_check",
    "obstacle_consistency",
    "discrete_comparison",
    "discount_transform_check",
]

ROUNDOFF = 1e-12


@dataclass(frozen=True)
class Verdict:
    check: str
    passed: bool
    worst_node: object
    margin: float
    violations: tuple = ()

    def to_dict(self) -> dict:
        node = self.worst_node
        if isinstance(node, tuple):
            node = [int(v) for v in node]
        elif node is not None:
            node = int(node)
        return {"check": self.check, "pass": bool(self.passed), "worst_node": node,
                "margin": float(self.margin)}


def _verdict(check: str, slack: np.ndarray, allowance: float = 0.0) -> Verdict:
    """Pass iff slack >= -allowance everywhere."""
    slack = np.asarray(slack, dtype=float)
    flat = int(np.argmin(slack))
    worst = np.unravel_index(flat, slack.shape)
    worst = tuple(int(v) for v in worst) if slack.ndim > 1 else int(worst[0])
    bad = np.argwhere(slack < -allowance)
    viol = tuple(tuple(int(v) for v in r) if slack.ndim > 1 else int(r[0]) for r in bad)
    margin = float(slack.reshape(-1)[flat])
    return Verdict(check, not viol, worst, margin, viol)


@dataclass(frozen=True)
class DiscountedConstants:
    """rho, c_rho = max{(|f_rho| + 1) / rho, |g_rho| + 1} and xi = min{1, K0}."""

    rho: float
    c_rho: float
    xi: float

    @classmethod
    def from_spec(cls, spec: ProblemSpec, rho: float) -> "DiscountedConstants":
        """``spec`` holds the undiscounted data; sup norms pick up e^{rho T}."""
        if not rho > 0:
            raise ValueError("discount must be positive")
        grow = math.exp(rho * spec.T_float)
        f_rho = spec.f_sup() * grow
        g_rho = spec.g_sup() * grow
        c = max((f_rho + 1.0) / rho, g_rho + 1.0)
        return cls(float(rho), c, min(1.0, spec.K0))


def intervention_properties(u: ValueField, w: ValueField, t: float, zg: ImpulseGrid,
                            lambdas=(0.0, 0.25, 0.5, 0.75, 1.0), shifts=(-1.0, 0.0, 2.0)
                            ) -> list[Verdict]:
    """Monotonicity on (min(u, w), max(u, w)), convexity for each lambda and
    covariance under constant shifts.

    Monotonicity is exact in floating point; convexity and shift covariance
    are allowed ``ROUNDOFF`` relative to the field scale.
    """
    if u.grid is not w.grid and u.grid.to_dict() != w.grid.to_dict():
        raise ValueError("fields live on different grids")
    op = zg.operator(u.grid)
    a, b = u.values, w.values
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    out = [_verdict("intervention_monotone", op(hi, t)[0] - op(lo, t)[0])]
    Ma, Mb = op(a, t)[0], op(b, t)[0]
    scale = 1.0 + max(np.max(np.abs(a)), np.max(np.abs(b)))
    for lam in lambdas:
        mix = op(lam * a + (1 - lam) * b, t)[0]
        out.append(_verdict(f"intervention_convex[{lam!r}]", lam * Ma + (1 - lam) * Mb - mix,
                            ROUNDOFF * scale))
    for kappa in shifts:
        gap = op(a + kappa, t)[0] - (Ma + kappa)
        out.append(_verdict(f"intervention_shift[{kappa!r}]", -np.abs(gap),
                            ROUNDOFF * (scale + abs(kappa))))
    return out


def discrete_residual(sol: Solution, w: np.ndarray | None = None, per_step: bool = False
                      ) -> np.ndarray:
    """Discrete F residual of the layers ``w`` (default: the solution itself).

    Layers k < N: min{ max_b X_b(w) / dt, w - M w } at spatial interior
    nodes (the solver's own stencils, discount and data).  Layer N:
    min{ w - g, w - M w } at every node.  Returns shape (N + 1, n) with NaN at
    the box boundary of layers k < N.  ``per_step`` skips the division by dt.
    """
    w = sol.values if w is None else np.asarray(w, dtype=float)
    grid, spec, scheme = sol.grid, sol.spec, sol.scheme
    disc = Discretization(spec, grid)
    op = sol.zgrid.operator(grid)
    dt = grid.dt
    div = 1.0 if per_step else dt
    out = np.full(w.shape, np.nan)
    inner = disc.interior
    for k in range(grid.nt):
        t = float(grid.times[k])
        if scheme.time_stepping == "implicit":
            X = disc.implicit_residual(w[k], w[k + 1], t, dt, scheme.rho)
            pde = X.max(axis=0) / div
        else:
            upd = disc.explicit_update(w[k + 1], t, dt, scheme.rho)
            pde = (w[k][None] - upd).max(axis=0) / div
        obst = w[k] - op(w[k], t)[0]
        out[k, inner] = np.minimum(pde, obst)[inner]
    T = float(grid.T)
    out[-1] = np.minimum(w[-1] - spec.g(grid.nodes), w[-1] - op(w[-1], T)[0])
    return out


def _slack_field(res: np.ndarray) -> np.ndarray:
    return np.where(np.isnan(res), np.inf, res)


@dataclass(frozen=True)
class SupersolutionReport:
    lam: float
    min_residual: float
    target: float
    tol: float
    worst_node: tuple
    passed: bool

    def verdict(self) -> Verdict:
        return Verdict(f"strict_supersolution[{self.lam!r}]", self.passed, self.worst_node,
                       self.min_residual - (self.target - self.tol))


def strict_supersolution_residual(sol: Solution, lam: float, consts: DiscountedConstants,
                                  tol: float | None = None) -> SupersolutionReport:
    """Minimum discrete residual of w = (1 - lam) u + lam c_rho.

    ``sol`` must be solved with discount rho on the rho-transformed data.
    Passes iff the minimum is at least lam * xi - tol.
    """
    if not 0 <= lam <= 1:
        raise ValueError("lambda must lie in [0, 1]")
    if sol.scheme.rho != consts.rho or sol.spec.data_rate != consts.rho:
        raise ValueError("solution was not solved with the matching discount")
    if tol is None:
        tol = tolerance(sol.grid, sol.zgrid.step)
    w = (1 - lam) * sol.values + lam * consts.c_rho
    res = _slack_field(discrete_residual(sol, w))
    flat = int(np.argmin(res))
    k, i = np.unravel_index(flat, res.shape)
    m = float(res[k, i])
    target = lam * consts.xi
    return SupersolutionReport(float(lam), m, target, float(tol), (int(k), int(i)),
                               m >= target - tol)


def bound_and_obstacle_check(sol: Solution, spec: ProblemSpec | None = None,
                             tol: float | None = None) -> list[Verdict]:
    """|u| <= (T |f| + |g|) + tol and u >= M u - tol at every node and layer.

    For rho-transformed data the sup norms already carry the e^{rho T} factor.
    """
    spec = spec or sol.spec
    if tol is None:
        tol = tolerance(sol.grid, sol.zgrid.step)
    c = global_bound(spec)
    return [
        _verdict("value_bound", c - np.abs(sol.values), tol),
        _verdict("obstacle", sol.values - sol.obstacle, tol),
    ]


def obstacle_consistency(sol: Solution) -> Verdict:
    """|min{max_b X_b(u), u - M u}| <= eps_pi at interior nodes for k < N,
    with X_b the per-step (unscaled) residual the solver drives to zero."""
    res = discrete_residual(sol, per_step=True)[:-1]
    slack = sol.scheme.eps_pi - np.abs(np.nan_to_num(res, nan=0.0))
    return _verdict("obstacle_consistency", slack)


@dataclass(frozen=True)
class ComparisonReport:
    ordered: Verdict
    contraction: Verdict | None
    u1: np.ndarray
    u2: np.ndarray

    def verdicts(self) -> list[Verdict]:
        return [v for v in (self.ordered, self.contraction) if v is not None]


def discrete_comparison(spec: ProblemSpec, grid: Grid, zg: ImpulseGrid, scheme: Scheme,
                        g1, g2) -> ComparisonReport:
    """Solve with terminal gains g1 <= g2 and compare nodewise.

    Ordering is asserted with zero tolerance.  With rho = 0 the gap
    u2 - u1 must also stay below max(g2 - g1) (up to ``ROUNDOFF``).
    """
    s1, s2 = spec.replace(terminal=g1), spec.replace(terminal=g2)
    x = grid.nodes
    gap = g2(x) - g1(x)
    if np.any(gap < 0):
        raise ValueError("terminal gains are not ordered on the grid")
    u1 = solve(s1, grid, zg.with_spec(s1), scheme).values
    u2 = solve(s2, grid, zg.with_spec(s2), scheme).values
    ordered = _verdict("comparison_ordered", u2 - u1)
    contraction = None
    if scheme.rho == 0:
        top = float(np.max(gap))
        contraction = _verdict("comparison_contraction", top - (u2 - u1),
                               ROUNDOFF * (1 + top))
    return ComparisonReport(ordered, contraction, u1, u2)


def discount_transform_check(spec: ProblemSpec, grid: Grid, zg: ImpulseGrid, rho: float,
                             scheme: Scheme | None = None, tol: float | None = None):
    """Solution with discount rho on the transformed data vs e^{rho t} times
    the undiscounted solution, sup norm over all layers."""
    scheme = scheme or Scheme()
    base = solve(spec, grid, zg.with_spec(spec), scheme)
    disc_spec = spec.discounted(rho)
    disc = solve(disc_spec, grid, zg.with_spec(disc_spec),
                 Scheme(scheme.time_stepping, scheme.eps_pi, scheme.n_obs, rho,
                        scheme.max_policy_iter))
    scale = np.exp(rho * grid.times_float)[:, None]
    if tol is None:
        tol = tolerance(grid, zg.step)
    err = np.abs(disc.values - scale * base.values)
    return _verdict("discount_transform", tol - err), float(err.max())
