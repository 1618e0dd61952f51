"""The intervention operator M u(t, x) = max_z { u(t, x + Gamma(t, z)) + K(t, z) }.

The sup over the closed impulse set is replaced by a max over a finite,
origin-symmetric lattice inside the truncation ball.  Candidates are ordered
by (|z|, lexicographic z) so that ``argmax`` returning the first maximiser
implements the tie-break rule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Grid, ValueField
from .problem import CustomCoefficient, ProblemSpec, ShiftImpulse, truncation_radius

__all__ = [
    "ImpulseGrid",
    "InterventionResult",
    "InterventionOperator",
    "apply_intervention",
    "best_impulse",
    "canonical_impulse_grid",
]


def _order(points: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(points, axis=1)
    keys = [points[:, a] for a in reversed(range(points.shape[1]))] + [norms]
    return np.lexsort(keys)


@dataclass(frozen=True, eq=False)
class ImpulseGrid:
    """Finite candidate impulses: lattice k * step inside Z and the closed
    ball of radius ``radius``."""

    spec: ProblemSpec
    points: np.ndarray
    step: float
    radius: float
    _ops: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, spec: ProblemSpec, *, radius: float | None = None,
              step: float | None = None, count: int | None = None,
              grid: Grid | None = None) -> "ImpulseGrid":
        """Lattice over Z intersected with the truncation ball.

        ``count`` fixes the number of lattice points per axis across
        [-radius, radius]; otherwise ``step`` is used, defaulting to the
        spatial step of ``grid``.
        """
        r_max = truncation_radius(spec)
        r = r_max if radius is None else float(radius)
        if r > r_max * (1 + 1e-12) + 1e-12:
            raise ValueError(f"radius override {r} exceeds the truncation radius {r_max}")
        if count is not None:
            if count < 1:
                raise ValueError("count must be positive")
            step = 2 * r / (count - 1) if count > 1 and r > 0 else 1.0
        elif step is None:
            if grid is None:
                raise ValueError("give one of count, step or grid")
            step = grid.h
        if not step > 0:
            raise ValueError("lattice step must be positive")
        dz = spec.impulse_set.dim
        kmax = int(math.floor(r / step + 1e-9))
        ks = np.arange(-kmax, kmax + 1)
        mesh = np.meshgrid(*([ks] * dz), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1) * step
        pts = pts[np.linalg.norm(pts, axis=1) <= r * (1 + 1e-12) + 1e-15]
        pts = pts[spec.impulse_set.contains(pts)]
        if len(pts) == 0:
            raise ValueError("impulse lattice is empty")
        pts = pts[_order(pts)]
        return cls(spec, pts, float(step), r)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_spec(self, spec: ProblemSpec) -> "ImpulseGrid":
        """Same lattice, different coefficients (e.g. discounted data)."""
        return replace(self, spec=spec, _ops={})

    def operator(self, grid: Grid) -> "InterventionOperator":
        key = id(grid)
        hit = self._ops.get(key)
        if hit is None or hit[0] is not grid:
            hit = (grid, InterventionOperator(grid, self))
            self._ops[key] = hit
        return hit[1]

    def cost_bound(self, times) -> float:
        """K1 = max |K(t, z)| over the lattice and the given times."""
        return max(float(np.max(np.abs(self.spec.K(float(t), self.points)))) for t in times)

    def to_dict(self) -> dict:
        return {"step": self.step, "radius": self.radius}


def canonical_impulse_grid(spec: ProblemSpec) -> ImpulseGrid:
    """Step 0.2375 lattice: 321 points on [-38, 38] (the TP1 truncation radius).

    Instances with a smaller truncation radius get the same step on their
    own, smaller ball.
    """
    r = min(38.0, truncation_radius(spec))
    return ImpulseGrid.build(spec, radius=r, step=76.0 / 320)


@dataclass(frozen=True, eq=False)
class InterventionResult:
    Mu: ValueField
    z_index: np.ndarray
    z_star: np.ndarray
    gain: np.ndarray

    def to_csv(self, path) -> None:
        grid = self.Mu.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{a + 1}" for a in range(grid.d)] + ["Mu"]
                       + [f"z{a + 1}" for a in range(self.z_star.shape[1])])
            for x, m, z in zip(grid.nodes, self.Mu.values, self.z_star):
                w.writerow([repr(float(v)) for v in x] + [repr(float(m))]
                           + [repr(float(v)) for v in z])


class InterventionOperator:
    """Precomputed interpolation stencils of M on one grid.

    Candidates whose displacement exceeds the box width by more than one
    lattice step on some axis are dropped when that is provably harmless:
    they clamp onto the same face as the first out-of-box lattice point and
    cost at least as much.
    """

    def __init__(self, grid: Grid, zgrid: ImpulseGrid):
        spec = zgrid.spec
        if zgrid.dim != grid.d:
            raise ValueError("impulse and state dimensions differ")
        self.grid = grid
        self.zgrid = zgrid
        self.spec = spec
        self.static = isinstance(spec.impulse, ShiftImpulse)
        self.keep = self._prune() if self.static else np.arange(len(zgrid))
        self.z = zgrid.points[self.keep]
        self._t_cached = None
        if self.static:
            self._build(0.0)

    def _prune(self) -> np.ndarray:
        spec, zg, grid = self.spec, self.zgrid, self.grid
        everything = np.arange(len(zg))
        if isinstance(spec.cost, CustomCoefficient) or not spec.cost.radial_nonincreasing:
            return everything
        scale = abs(spec.impulse.scale)
        if scale == 0:
            return everything
        kz = np.rint(zg.points / zg.step).astype(np.int64)
        kcut = int(math.ceil(grid.width / (scale * zg.step) - 1e-9))
        inside = np.all(np.abs(kz) <= kcut, axis=1)
        if inside.all():
            return everything
        known = {tuple(k) for k in kz[inside]}
        for k in kz[~inside]:
            rep = tuple(int(np.sign(v)) * kcut if abs(v) > kcut else int(v) for v in k)
            if rep not in known:
                return everything
        return np.flatnonzero(inside)

    def _build(self, t: float) -> None:
        nodes = self.grid.nodes
        disp = self.spec.gamma(t, self.z)
        dest = nodes[:, None, :] + disp[None, :, :]
        idx, w = self.grid.interp_stencil(dest.reshape(-1, self.grid.d))
        shape = (nodes.shape[0], len(self.z), idx.shape[1])
        self.idx = idx.reshape(shape)
        self.w = w.reshape(shape)
        self._t_cached = t

    def candidate_values(self, u: np.ndarray, t: float) -> np.ndarray:
        """u(x + Gamma(t, z)) + K(t, z) for all nodes and kept candidates."""
        if not self.static and self._t_cached != t:
            self._build(t)
        vals = np.einsum("nmc,nmc->nm", u[self.idx], self.w)
        return vals + self.spec.K(t, self.z)[None, :]

    def __call__(self, u: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Return (Mu, argmax index into the full lattice)."""
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            raise ValueError("intervention applied to a non-finite field")
        vals = self.candidate_values(u, t)
        j = np.argmax(vals, axis=1)
        return vals[np.arange(len(j)), j], self.keep[j]


def apply_intervention(u: ValueField, t: float, zg: ImpulseGrid) -> InterventionResult:
    """Nodewise M u at time ``t`` with the maximising impulse."""
    op = zg.operator(u.grid)
    mu, j = op(u.values, float(t))
    return InterventionResult(u.with_values(mu), j, zg.points[j], mu - u.values)


def best_impulse(u: ValueField, t: float, x, zg: ImpulseGrid) -> tuple[np.ndarray, float]:
    """Single-point exhaustive scan; returns (z*, M u(x) - u(x))."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    grid = u.grid
    if np.any(x < grid.xlo) or np.any(x > grid.xhi):
        raise ValueError("query point outside the grid box")
    if not np.all(np.isfinite(u.values)):
        raise ValueError("intervention applied to a non-finite field")
    dest = x + zg.spec.gamma(float(t), zg.points)
    vals = u(dest) + zg.spec.K(float(t), zg.points)
    j = int(np.argmax(vals))
    return zg.points[j].copy(), float(vals[j] - u(x)[0])
