"""Space-time lattice and value layers."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .problem import as_fraction

BOUNDARY_POLICIES = ("extrapolate", "reflect")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice on the box [xlo, xhi]^d times {k T / nt}.

    Time nodes are exact rationals because ``T`` is.  ``boundary`` selects
    how the solver treats the artificial box edge: ``"extrapolate"`` copies
    the nearest interior value, ``"reflect"`` uses a homogeneous Neumann
    stencil and drops the outward drift.
    """

    xlo: float
    xhi: float
    nx: int
    nt: int
    T: Fraction = Fraction(1)
    d: int = 1
    boundary: str = "extrapolate"

    def __post_init__(self):
        object.__setattr__(self, "T", as_fraction(self.T))
        if self.nx < 3:
            raise ValueError("need at least 3 nodes per axis")
        if self.nt < 1:
            raise ValueError("need at least one time step")
        if not self.xhi > self.xlo:
            raise ValueError("empty spatial box")
        if self.d not in (1, 2):
            raise ValueError("only d = 1 or d = 2 is supported")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ValueError(f"boundary must be one of {BOUNDARY_POLICIES}")

    @property
    def h(self) -> float:
        return (self.xhi - self.xlo) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return float(self.T) / self.nt

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) * self.d

    @property
    def size(self) -> int:
        return self.nx**self.d

    @property
    def width(self) -> float:
        return self.xhi - self.xlo

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(self.xlo, self.xhi, self.nx)

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, d), C order over the axes."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def times(self) -> list[Fraction]:
        return [self.T * Fraction(k, self.nt) for k in range(self.nt + 1)]

    @cached_property
    def times_float(self) -> np.ndarray:
        return np.array([float(t) for t in self.times])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.d, -1)
        return np.any((idx == 0) | (idx == self.nx - 1), axis=0)

    @cached_property
    def nearest_interior(self) -> np.ndarray:
        """Flat index of the interior node each node copies under extrapolation."""
        idx = np.indices(self.shape).reshape(self.d, -1)
        idx = np.clip(idx, 1, self.nx - 2)
        return np.ravel_multi_index(tuple(idx), self.shape)

    def time_index(self, t) -> int:
        """Index of a grid time; raises if ``t`` is not a lattice time."""
        q = as_fraction(t) / self.T * self.nt
        if q.denominator != 1 or not 0 <= q <= self.nt:
            raise ValueError(f"time {t} is not a grid time")
        return int(q)

    def nearest_node(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the nearest node (points outside the box are clamped)."""
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        k = np.rint((x - self.xlo) / self.h).astype(np.int64)
        k = np.clip(k, 0, self.nx - 1)
        return np.ravel_multi_index(tuple(k.T), self.shape)

    def interp_stencil(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear interpolation indices and weights, each (n, 2^d).

        Points are clamped into the box first (constant extrapolation).
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.d)
        s = (np.clip(x, self.xlo, self.xhi) - self.xlo) / self.h
        lo = np.clip(np.floor(s).astype(np.int64), 0, self.nx - 2)
        frac = s - lo
        n = x.shape[0]
        corners = 1 << self.d
        idx = np.empty((n, corners), dtype=np.int64)
        wts = np.empty((n, corners))
        for c in range(corners):
            bits = [(c >> a) & 1 for a in range(self.d)]
            k = lo + np.array(bits)
            idx[:, c] = np.ravel_multi_index(tuple(k.T), self.shape)
            w = np.ones(n)
            for a, bit in enumerate(bits):
                w = w * (frac[:, a] if bit else 1.0 - frac[:, a])
            wts[:, c] = w
        return idx, wts

    def refine(self) -> "Grid":
        """Factor-2 refinement in space and time."""
        return Grid(self.xlo, self.xhi, 2 * self.nx - 1, 2 * self.nt, self.T, self.d,
                    self.boundary)

    def is_refinement_of(self, coarse: "Grid") -> bool:
        return (self.xlo == coarse.xlo and self.xhi == coarse.xhi and self.d == coarse.d
                and self.T == coarse.T and self.nx - 1 == 2 * (coarse.nx - 1)
                and self.nt == 2 * coarse.nt)

    def to_dict(self) -> dict:
        return {"xlo": self.xlo, "xhi": self.xhi, "nx": self.nx, "nt": self.nt,
                "d": self.d, "boundary": self.boundary}

    @classmethod
    def from_dict(cls, doc: dict, T) -> "Grid":
        return cls(float(doc["xlo"]), float(doc["xhi"]), int(doc["nx"]), int(doc["nt"]),
                   as_fraction(T), int(doc.get("d", 1)), doc.get("boundary", "extrapolate"))


@dataclass(frozen=True, eq=False)
class ValueField:
    """One time layer of nodal values with multilinear interpolation."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.shape != (self.grid.size,):
            raise ValueError("value array does not match the grid")
        object.__setattr__(self, "values", v)

    def __call__(self, x) -> np.ndarray:
        idx, w = self.grid.interp_stencil(x)
        return np.sum(self.values[idx] * w, axis=1)

    def with_values(self, values) -> "ValueField":
        return ValueField(self.grid, values, self.t)


def canonical_grid(T=1, boundary: str = "extrapolate") -> Grid:
    """161 nodes on [-4, 4], 80 time steps."""
    return Grid(-4.0, 4.0, 161, 80, as_fraction(T), 1, boundary)


# 2 x (sup error of the canonical TP1 solve against a 641 x 320 reference
# with z step = h, 0.0066) / (h + dt + z step = 0.3), rounded up.
TOL_CONSTANT = 0.05


def tolerance(grid: Grid, z_step: float, constant: float = TOL_CONSTANT) -> float:
    """Discretisation slack tol(h) = C (h + dt + z-lattice step).

    ``C`` was calibrated once on TP1 and is frozen.
    """
    return constant * (grid.h + grid.dt + z_step)
