"""Backward solver for the discrete HJBI quasi-variational inequality.

On every time step the solver finds u on the grid with

    min{ max_b X_b(u), u - M u } = 0,

where ``X_b`` is the monotone (upwind drift, central diffusion) implicit
Euler residual of the diffusion player's control ``b`` and ``M`` the
intervention operator.  The diffusion player minimises the generator, so the
residual is maximised over ``b``.  Three nested loops do the work:

* an outer fixed point over the obstacle ``psi = M u`` (each pass lets the
  impulse player chain one more impulse),
* Howard policy iteration over ``b``,
* a primal-dual active-set loop for the frozen obstacle ``u >= psi``.

Every matrix is a weakly chained diagonally dominant L-matrix, so all three
loops are monotone and terminate.  ``rho > 0`` solves the discounted
equation.  An explicit variant computes the PDE update directly and then
iterates ``u = max(u_pde, M u)``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, ValueField
from .intervention import ImpulseGrid
from .problem import ProblemSpec

__all__ = [
    "Scheme",
    "Solution",
    "ConvergenceTable",
    "SolverError",
    "Discretization",
    "terminal_condition",
    "step_backward",
    "solve",
    "convergence_study",
]


class SolverError(RuntimeError):
    """A loop failed to converge, a linear solve failed, or CFL was violated."""


@dataclass(frozen=True)
class Scheme:
    time_stepping: str = "implicit"
    eps_pi: float = 1e-10
    n_obs: int = 100
    rho: float = 0.0
    max_policy_iter: int = 100

    def __post_init__(self):
        if self.time_stepping not in ("implicit", "explicit"):
            raise ValueError("time_stepping must be 'implicit' or 'explicit'")
        if self.rho < 0:
            raise ValueError("discount must be nonnegative")

    def to_dict(self) -> dict:
        return {"time_stepping": self.time_stepping, "eps_pi": self.eps_pi,
                "n_obs": self.n_obs, "rho": self.rho,
                "max_policy_iter": self.max_policy_iter}


class Discretization:
    """Generator stencils for every sampled control on one grid.

    ``coef[b, k, i] >= 0`` multiplies ``u[nbr[k, i]] - u[i]`` in ``L^b u``.
    Under the extrapolation policy boundary rows are replaced by
    ``u_i - u_{copy(i)} = 0`` and carry no control.
    """

    def __init__(self, spec: ProblemSpec, grid: Grid):
        if grid.d != spec.d:
            raise ValueError("grid and problem dimensions differ")
        if grid.T != spec.T:
            raise ValueError("grid horizon differs from the problem horizon")
        self.spec, self.grid = spec, grid
        self.controls = spec.controls
        nb, n, d, h = len(self.controls), grid.size, grid.d, grid.h
        x = grid.nodes
        idx = np.indices(grid.shape).reshape(d, -1)
        self.coef = np.zeros((nb, 2 * d, n))
        self.nbr = np.tile(np.arange(n), (2 * d, 1))
        reflect = grid.boundary == "reflect"
        for a in range(d):
            lo_edge = idx[a] == 0
            hi_edge = idx[a] == grid.nx - 1
            step = grid.nx ** (d - 1 - a)
            up, dn = 2 * a, 2 * a + 1
            self.nbr[up, ~hi_edge] += step
            self.nbr[dn, ~lo_edge] -= step
            if reflect:  # mirror ghost node: Neumann fold-back
                self.nbr[up, hi_edge] -= step
                self.nbr[dn, lo_edge] += step
        for j, b in enumerate(self.controls):
            bb = np.broadcast_to(b, (n, len(b)))
            mu = spec.mu(x, bb)
            sig = spec.sigma(x, bb)
            cov = np.einsum("nij,nkj->nik", sig, sig)
            off = cov - np.einsum("nii->ni", cov)[:, :, None] * np.eye(d)
            if np.any(np.abs(off) > 1e-14 * (1 + np.abs(cov).max())):
                raise ValueError("monotone stencil needs a diagonal covariance sigma sigma^T")
            for a in range(d):
                D = 0.5 * cov[:, a, a] / h**2
                mp = np.maximum(mu[:, a], 0.0) / h
                mm = np.maximum(-mu[:, a], 0.0) / h
                cu, cd = D + mp, D + mm
                if reflect:
                    lo_edge = idx[a] == 0
                    hi_edge = idx[a] == grid.nx - 1
                    cu = np.where(lo_edge, 2 * D + mp, np.where(hi_edge, 0.0, cu))
                    cd = np.where(hi_edge, 2 * D + mm, np.where(lo_edge, 0.0, cd))
                self.coef[j, 2 * a] = cu
                self.coef[j, 2 * a + 1] = cd
        self.extrapolate = not reflect
        self.bmask = grid.boundary_mask if self.extrapolate else np.zeros(n, dtype=bool)
        self.copy = grid.nearest_interior
        self.rows = np.arange(n)
        self.diag_sum = self.coef.sum(axis=1)  # (nb, n)

    @property
    def interior(self) -> np.ndarray:
        return ~self.grid.boundary_mask

    def generator(self, u: np.ndarray) -> np.ndarray:
        """L^b u for every control, shape (nb, n)."""
        diff = u[self.nbr] - u[None, :]
        return np.einsum("bkn,kn->bn", self.coef, diff)

    def running(self, t: float) -> np.ndarray:
        n = self.grid.size
        return np.stack([self.spec.f(t, self.grid.nodes, np.broadcast_to(b, (n, len(b))))
                         for b in self.controls])

    def implicit_residual(self, u, u_next, t, dt, rho, frun=None) -> np.ndarray:
        """X_b(u) = (1 + dt rho) u - dt L^b u - u_next - dt f^b, shape (nb, n)."""
        if frun is None:
            frun = self.running(t)
        res = (1 + dt * rho) * u[None] - dt * self.generator(u) - u_next[None] - dt * frun
        if self.extrapolate:
            res[:, self.bmask] = (u - u[self.copy])[self.bmask][None]
        return res

    def explicit_update(self, u_next, t, dt, rho, frun=None) -> np.ndarray:
        """u_next + dt (L^b u_next - rho u_next + f^b), shape (nb, n)."""
        if frun is None:
            frun = self.running(t)
        return u_next[None] + dt * (self.generator(u_next) - rho * u_next[None] + frun)

    def matrix(self, pol, active, dt, rho):
        """System matrix for control policy ``pol`` with obstacle rows ``active``."""
        n = self.grid.size
        K = self.nbr.shape[0]
        c = self.coef[pol, :, self.rows].T  # (K, n)
        diag = 1 + dt * rho + dt * c.sum(axis=0)
        rows = [self.rows]
        cols = [self.rows]
        vals = [diag]
        for k in range(K):
            rows.append(self.rows)
            cols.append(self.nbr[k])
            vals.append(-dt * c[k])
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        special = np.zeros(n, dtype=bool) if active is None else active.copy()
        bnd = self.bmask & ~special
        drop = special | bnd
        keep = ~drop[rows]
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        extra_r = [np.flatnonzero(drop)]
        extra_c = [np.flatnonzero(drop)]
        extra_v = [np.ones(int(drop.sum()))]
        bi = np.flatnonzero(bnd)
        extra_r.append(bi)
        extra_c.append(self.copy[bi])
        extra_v.append(-np.ones(len(bi)))
        rows = np.concatenate([rows] + extra_r)
        cols = np.concatenate([cols] + extra_c)
        vals = np.concatenate([vals] + extra_v)
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def cfl_ok(self, dt, rho) -> bool:
        return bool(dt * (self.diag_sum.max() + rho) <= 1 + 1e-12)


def _argmax_ties_low(vals: np.ndarray, keep: np.ndarray | None = None, tol=1e-13):
    """Row argmax over axis 0; ties go to ``keep`` if given, else lowest index."""
    best = vals.max(axis=0)
    slack = tol * (1 + np.abs(best))
    hit = vals >= best[None] - slack[None]
    first = np.argmax(hit, axis=0)
    if keep is None:
        return first
    stay = hit[keep, np.arange(vals.shape[1])]
    return np.where(stay, keep, first)


def _solve(A, rhs):
    try:
        x = spla.spsolve(A, rhs)
    except Exception as exc:  # pragma: no cover - SuperLU failure
        raise SolverError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return x


@dataclass
class StepInfo:
    obstacle_iters: int = 0
    policy_iters: int = 0
    active_set_iters: int = 0


class _Stepper:
    def __init__(self, spec, grid, zg, scheme):
        self.spec, self.grid, self.zg, self.scheme = spec, grid, zg, scheme
        self.disc = Discretization(spec, grid)
        self.M = zg.operator(grid)
        self.dt = grid.dt
        if scheme.time_stepping == "explicit" and not self.disc.cfl_ok(self.dt, scheme.rho):
            limit = 1.0 / (self.disc.diag_sum.max() + scheme.rho)
            raise SolverError(f"CFL violated: dt = {self.dt:g} > {limit:g}")

    # implicit -----------------------------------------------------------------
    def _obstacle_fixed_b(self, pol, psi, u_next, frun, info):
        dt, rho = self.dt, self.scheme.rho
        rhs0 = u_next + dt * frun[pol, self.disc.rows]
        rhs0 = np.where(self.disc.bmask, 0.0, rhs0)
        u = _solve(self.disc.matrix(pol, None, dt, rho), rhs0)
        if psi is None:
            return u
        active = None
        for _ in range(self.disc.grid.size + 2):
            info.active_set_iters += 1
            pde = self.disc.implicit_residual(u, u_next, 0.0, dt, rho, frun)[pol, self.disc.rows]
            new = (u - psi) < pde
            if active is not None and np.array_equal(new, active):
                return u
            active = new
            rhs = np.where(active, psi, rhs0)
            u = _solve(self.disc.matrix(pol, active, dt, rho), rhs)
        raise SolverError("obstacle active-set loop did not converge")

    def _hjb_obstacle(self, psi, u_next, frun, pol, info):
        dt, rho = self.dt, self.scheme.rho
        for _ in range(self.scheme.max_policy_iter):
            info.policy_iters += 1
            u = self._obstacle_fixed_b(pol, psi, u_next, frun, info)
            X = self.disc.implicit_residual(u, u_next, 0.0, dt, rho, frun)
            new = _argmax_ties_low(X, keep=pol)
            if np.array_equal(new, pol):
                return u, pol
            pol = new
        raise SolverError(f"policy iteration not converged in {self.scheme.max_policy_iter} rounds")

    def step(self, u_next: np.ndarray, t: float):
        info = StepInfo()
        frun = self.disc.running(t)
        if self.scheme.time_stepping == "explicit":
            return self._explicit(u_next, t, frun, info)
        dt, rho = self.dt, self.scheme.rho
        X0 = self.disc.implicit_residual(u_next, u_next, t, dt, rho, frun)
        pol = _argmax_ties_low(X0)
        u, pol = self._hjb_obstacle(None, u_next, frun, pol, info)
        for _ in range(self.scheme.n_obs):
            info.obstacle_iters += 1
            psi, _ = self.M(u, t)
            u_new, pol = self._hjb_obstacle(psi, u_next, frun, pol, info)
            change = np.max(np.abs(u_new - u))
            u = u_new
            if change <= 1e-13 * max(1.0, np.max(np.abs(u))):
                break
        else:
            raise SolverError(f"obstacle fixed point not converged (change {change:.3e})")
        X = self.disc.implicit_residual(u, u_next, t, dt, rho, frun)
        b_idx = _argmax_ties_low(X)
        return u, b_idx, info

    # explicit -----------------------------------------------------------------
    def _explicit(self, u_next, t, frun, info):
        upd = self.disc.explicit_update(u_next, t, self.dt, self.scheme.rho, frun)
        b_idx = _argmax_ties_low(-upd)
        u_pde = upd[b_idx, self.disc.rows]
        if self.disc.extrapolate:
            u_pde = np.where(self.disc.bmask, u_pde[self.disc.copy], u_pde)
        u = u_pde
        for _ in range(self.scheme.n_obs):
            info.obstacle_iters += 1
            mu, _ = self.M(u, t)
            u_new = np.maximum(u_pde, mu)
            change = np.max(np.abs(u_new - u))
            u = u_new
            if change <= 1e-13 * max(1.0, np.max(np.abs(u))):
                return u, b_idx, info
        raise SolverError(f"obstacle fixed point not converged (change {change:.3e})")


def terminal_condition(spec: ProblemSpec, grid: Grid, zg: ImpulseGrid,
                       n_obs: int = 100) -> ValueField:
    """u(T) = lim of u <- max(g, M u) started from g."""
    g = spec.g(grid.nodes)
    T = float(grid.T)
    M = zg.operator(grid)
    u = g
    for _ in range(n_obs):
        mu, _ = M(u, T)
        u_new = np.maximum(g, mu)
        change = float(np.max(np.abs(u_new - u)))
        u = u_new
        if change <= 1e-12:
            return ValueField(grid, u, T)
    raise SolverError(f"terminal obstacle iteration not converged, residual {change:.3e}")


def step_backward(spec: ProblemSpec, grid: Grid, zg: ImpulseGrid, scheme: Scheme,
                  u_next: ValueField, k: int):
    """One backward step from layer k+1 to layer k.

    Returns ``(u_k, b_index, act, z_index)``.
    """
    stepper = _Stepper(spec, grid, zg, scheme)
    return _finish_layer(stepper, u_next.values, k, scheme)[:4]


def _finish_layer(stepper, u_next, k, scheme):
    grid = stepper.grid
    t = float(grid.times[k])
    if not np.all(np.isfinite(u_next)):
        raise ValueError("non-finite values in the next layer")
    u, b_idx, info = stepper.step(u_next, t)
    mu, z_idx = stepper.M(u, t)
    act = u <= mu + scheme.eps_pi
    return ValueField(grid, u, t), b_idx, act, z_idx, info


@dataclass(eq=False)
class Solution:
    """All value layers with the extracted feedback decisions."""

    spec: ProblemSpec
    grid: Grid
    zgrid: ImpulseGrid
    scheme: Scheme
    values: np.ndarray  # (nt + 1, n)
    b_index: np.ndarray  # (nt + 1, n)
    act: np.ndarray  # (nt + 1, n) bool
    z_index: np.ndarray  # (nt + 1, n)
    obstacle: np.ndarray  # (nt + 1, n): M u per layer
    stats: list = field(default_factory=list)

    @property
    def id(self) -> str:
        try:
            doc = {"spec": self.spec.to_dict(), "grid": self.grid.to_dict(),
                   "zgrid": self.zgrid.to_dict(), "scheme": self.scheme.to_dict()}
        except TypeError:
            return "custom-" + hashlib.sha256(self.values.tobytes()).hexdigest()[:12]
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def layer(self, k: int) -> ValueField:
        return ValueField(self.grid, self.values[k], float(self.grid.times[k]))

    def b_star(self, k: int) -> np.ndarray:
        return self.spec.controls[self.b_index[k]]

    def z_star(self, k: int) -> np.ndarray:
        return self.zgrid.points[self.z_index[k]]

    def to_csv(self, outdir) -> list[str]:
        """One CSV per layer (x, u, b*, act, z*) plus plot data for t = 0."""
        os.makedirs(outdir, exist_ok=True)
        d = self.grid.d
        db = self.spec.controls.shape[1]
        dz = self.zgrid.dim
        header = ([f"x{a + 1}" for a in range(d)] + ["u"] + [f"b{a + 1}" for a in range(db)]
                  + ["act"] + [f"z{a + 1}" for a in range(dz)])
        written = []
        for k in range(self.grid.nt + 1):
            path = os.path.join(outdir, f"layer{k}.csv")
            b, z = self.b_star(k), self.z_star(k)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for i, x in enumerate(self.grid.nodes):
                    w.writerow([repr(float(v)) for v in x] + [repr(float(self.values[k, i]))]
                               + [repr(float(v)) for v in b[i]] + [int(self.act[k, i])]
                               + [repr(float(v)) for v in z[i]])
            written.append(path)
        path = os.path.join(outdir, "plot_u0.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{a + 1}" for a in range(d)] + ["u0", "act0"])
            for i, x in enumerate(self.grid.nodes):
                w.writerow([repr(float(v)) for v in x] + [repr(float(self.values[0, i])),
                                                          int(self.act[0, i])])
        written.append(path)
        return written


def solve(spec: ProblemSpec, grid: Grid, zg: ImpulseGrid, scheme: Scheme | None = None
          ) -> Solution:
    """Terminal obstacle iteration followed by backward steps k = nt-1, ..., 0."""
    scheme = scheme or Scheme()
    if zg.spec is not spec:
        zg = zg.with_spec(spec)
    stepper = _Stepper(spec, grid, zg, scheme)
    nt, n = grid.nt, grid.size
    values = np.empty((nt + 1, n))
    b_idx = np.zeros((nt + 1, n), dtype=np.int64)
    act = np.zeros((nt + 1, n), dtype=bool)
    z_idx = np.zeros((nt + 1, n), dtype=np.int64)
    obstacle = np.empty((nt + 1, n))
    uT = terminal_condition(spec, grid, zg, scheme.n_obs)
    values[nt] = uT.values
    obstacle[nt], z_idx[nt] = stepper.M(uT.values, float(grid.T))
    act[nt] = uT.values <= obstacle[nt] + scheme.eps_pi
    stats = []
    for k in range(nt - 1, -1, -1):
        layer, b, a, z, info = _finish_layer(stepper, values[k + 1], k, scheme)
        values[k], b_idx[k], act[k], z_idx[k] = layer.values, b, a, z
        obstacle[k] = stepper.M(layer.values, layer.t)[0]
        stats.append(info)
    return Solution(spec, grid, zg, scheme, values, b_idx, act, z_idx, obstacle, stats[::-1])


@dataclass
class ConvergenceTable:
    levels: list  # (nx, nt, z step)
    differences: list
    orders: list

    def rows(self):
        out = []
        for i, lv in enumerate(self.levels):
            diff = self.differences[i - 1] if i > 0 else math.nan
            order = self.orders[i - 2] if i > 1 else math.nan
            out.append({"nx": lv[0], "nt": lv[1], "z_step": lv[2], "sup_diff": diff,
                        "order": order})
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["nx", "nt", "z_step", "sup_diff", "order"],
                               lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def convergence_study(spec: ProblemSpec, scheme: Scheme, grids: list[Grid],
                      zgrids: list[ImpulseGrid] | None = None) -> ConvergenceTable:
    """Self-convergence over factor-2 nested grids.

    Differences are sup norms over the coarse grid's space-time nodes; the
    empirical order is log2 of successive difference ratios.  By default the
    impulse lattice step follows the spatial step.
    """
    if len(grids) < 3:
        raise ValueError("need at least three levels")
    for coarse, fine in zip(grids, grids[1:]):
        if not fine.is_refinement_of(coarse):
            raise ValueError("grids are not nested by factor-2 refinement")
    if zgrids is None:
        zgrids = [ImpulseGrid.build(spec, grid=g) for g in grids]
    sols = [solve(spec, g, z, scheme) for g, z in zip(grids, zgrids)]
    diffs = []
    for coarse, fine in zip(sols, sols[1:]):
        vf = fine.values[::2].reshape((-1,) + fine.grid.shape)
        sl = (slice(None),) + (slice(None, None, 2),) * fine.grid.d
        vf = vf[sl].reshape(coarse.values.shape)
        diffs.append(float(np.max(np.abs(vf - coarse.values))))
    orders = [math.log2(a / b) if b > 0 and a > 0 else math.nan
              for a, b in zip(diffs, diffs[1:])]
    levels = [(g.nx, g.nt, z.step) for g, z in zip(grids, zgrids)]
    return ConvergenceTable(levels, diffs, orders)
