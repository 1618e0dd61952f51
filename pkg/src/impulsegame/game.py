"""Rollouts of solver policies against diffusion adversaries.

The solver's recorded decisions become feedback policies (nearest-node
lookup at grid times).  They are played against a finite family of
diffusion policies to bracket the value, swept over the impulse budget,
and used to probe the dynamic programming identity up to a stopping time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import ValueField
from .problem import ProblemSpec, as_fraction, global_bound
from .qvi import Solution
from .sde import ConstantControl, rollout

__all__ = [
    "FeedbackPolicyPair",
    "ValuePairEstimate",
    "SweepTable",
    "StoppingRule",
    "DPPResult",
    "extract_policies",
    "default_adversaries",
    "estimate_value_pair",
    "precommitment_sweep",
    "dpp_residual",
]


@dataclass(frozen=True, eq=False)
class _DiffusionLookup:
    pair: "FeedbackPolicyPair"

    def __call__(self, t, x):
        k = self.pair.grid.time_index(t)
        return self.pair.controls[self.pair.b_index[k, self.pair.grid.nearest_node(x)]]


@dataclass(frozen=True, eq=False)
class _ImpulseLookup:
    pair: "FeedbackPolicyPair"

    def __call__(self, t, x):
        k = self.pair.grid.time_index(t)
        i = self.pair.grid.nearest_node(x)
        return self.pair.act[k, i], self.pair.z[k, i]


@dataclass(frozen=True, eq=False)
class _HoldAlways:
    dim: int

    def __call__(self, t, x):
        return np.zeros(len(x), dtype=bool), np.zeros((len(x), self.dim))


@dataclass(frozen=True, eq=False)
class FeedbackPolicyPair:
    """Nearest-node feedback policies read off a Solution.

    States outside the box use the nearest boundary node.
    """

    grid: object
    controls: np.ndarray
    b_index: np.ndarray
    act: np.ndarray
    z: np.ndarray
    solution_id: str

    @property
    def diffusion(self):
        return _DiffusionLookup(self)

    @property
    def impulse(self):
        return _ImpulseLookup(self)

    def hold_always(self):
        return _HoldAlways(self.z.shape[2])


def extract_policies(sol: Solution) -> FeedbackPolicyPair:
    """Diffusion argmins and impulse decisions at every layer."""
    nt1 = sol.grid.nt + 1
    for name in ("values", "b_index", "act", "z_index"):
        arr = getattr(sol, name)
        if arr is None or arr.shape[0] != nt1:
            raise ValueError(f"solution is missing layers in {name}")
    if not np.all(np.isfinite(sol.values)):
        raise ValueError("solution has non-finite layers")
    z = sol.zgrid.points[sol.z_index]
    return FeedbackPolicyPair(sol.grid, sol.spec.controls, sol.b_index, sol.act, z, sol.id)


@dataclass(frozen=True)
class ValuePairEstimate:
    v_plus: float
    se_plus: float
    v_minus: float
    se_minus: float
    q: int
    adversaries: tuple
    worst: str
    per_adversary: tuple = field(default=(), repr=False)

    def ordered(self) -> bool:
        return self.v_minus <= self.v_plus + 2 * (self.se_plus + self.se_minus)


def default_adversaries(spec: ProblemSpec, policies: FeedbackPolicyPair | None = None) -> list:
    """Every constant control of the B sample, plus the solver's b* if given."""
    fam = [(f"const b={tuple(float(v) for v in b)}", ConstantControl(tuple(b)))
           for b in spec.controls]
    if policies is not None:
        fam.append(("solver b*", policies.diffusion))
    return fam


def _mean_se(pay: np.ndarray) -> tuple[float, float]:
    n = len(pay)
    return float(np.mean(pay)), float(np.std(pay, ddof=1) / math.sqrt(n))


def estimate_value_pair(spec: ProblemSpec, x0, policies: FeedbackPolicyPair, q: int,
                        adversary=None, n_paths: int = 10_000, seed: int = 0, t0=0,
                        workers: int = 1) -> ValuePairEstimate:
    """Lower value: worst adversary against the solver's impulse policy with
    fewer than ``q`` impulses.  Upper value: solver policies for both players.

    All members share the same Brownian increments.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    fam = default_adversaries(spec, policies) if adversary is None else list(adversary)
    if not fam:
        raise ValueError("adversary family is empty")
    nt = policies.grid.nt
    results = []
    for name, bpol in fam:
        pay = rollout(spec, x0, t0, bpol, policies.impulse, q, nt, n_paths, seed,
                      workers=workers).payoff
        results.append((name, *_mean_se(pay)))
    j = min(range(len(results)), key=lambda i: (results[i][1], i))
    pay = rollout(spec, x0, t0, policies.diffusion, policies.impulse, q, nt, n_paths, seed,
                  workers=workers).payoff
    vp, sp = _mean_se(pay)
    return ValuePairEstimate(vp, sp, results[j][1], results[j][2], int(q),
                             tuple(r[0] for r in results), results[j][0], tuple(results))


@dataclass
class SweepTable:
    q: list
    v_lower: list
    se: list

    @property
    def increments(self) -> list:
        return [b - a for a, b in zip(self.v_lower, self.v_lower[1:])]

    def nondecreasing(self) -> bool:
        """v(q+1) >= v(q) - 2 SE (largest of the two SEs)."""
        return all(self.v_lower[i + 1] >= self.v_lower[i] - 2 * max(self.se[i], self.se[i + 1])
                   for i in range(len(self.q) - 1))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q", "v_lower", "se"])
            for row in zip(self.q, self.v_lower, self.se):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


def precommitment_sweep(spec: ProblemSpec, x0, q_values, sol: Solution, n_paths: int = 10_000,
                        seed: int = 0, adversary=None, workers: int = 1) -> SweepTable:
    """Lower value estimate for each budget, with common random numbers."""
    q_values = [int(q) for q in q_values]
    if any(b <= a for a, b in zip(q_values, q_values[1:])):
        raise ValueError("budgets must be strictly increasing")
    pol = extract_policies(sol)
    rows = [estimate_value_pair(spec, x0, pol, q, adversary, n_paths, seed, workers=workers)
            for q in q_values]
    return SweepTable(q_values, [r.v_minus for r in rows], [r.se_minus for r in rows])


@dataclass(frozen=True)
class StoppingRule:
    """``kind="fixed"``: stop at grid time ``time``.  ``kind="exit"``: stop at
    the first grid time whose pre-impulse state lies outside [lo, hi]^d (or at
    T).  The decision at t_k uses only t_k and the state at t_k."""

    kind: str
    time: object = None
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "exit"):
            raise ValueError("stopping rule kind must be 'fixed' or 'exit'")
        if self.kind == "fixed":
            if self.time is None:
                raise ValueError("fixed rule needs a time")
            object.__setattr__(self, "time", as_fraction(self.time))
        elif not self.hi > self.lo:
            raise ValueError("empty stopping box")

    def __call__(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "fixed":
            return np.full(len(x), as_fraction(t) >= self.time)
        return np.any((x < self.lo) | (x > self.hi), axis=1)

    def first_stop(self, times, states) -> int:
        """Index of the first stop along one path (len(times)-1 if never)."""
        for k, (t, x) in enumerate(zip(times, states)):
            if self.__call__(t, np.asarray(x, dtype=float).reshape(1, -1))[0]:
                return k
        return len(times) - 1

    def check(self, grid) -> None:
        if self.kind == "fixed":
            grid.time_index(self.time)

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed t={self.time}"
        return f"exit [{self.lo!r}, {self.hi!r}]"


@dataclass(frozen=True)
class DPPResult:
    rule: str
    delta: float
    se: float
    n: int
    degraded: bool

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rule", "Delta", "se"])
            w.writerow([self.rule, repr(self.delta), repr(self.se)])


def dpp_residual(spec: ProblemSpec, sol: Solution, x0, rule: StoppingRule, n_paths: int = 10_000,
                 seed: int = 0, degrade: bool = False, q=None, workers: int = 1) -> DPPResult:
    """Delta = mean[ J_0 up to theta + u(theta, X_theta) ] - u(0, x0).

    J_0 counts the running gain on [0, theta) and impulses at times <= theta;
    u is read at the post-impulse state.  ``degrade`` replaces the impulse
    policy by hold-always.
    """
    rule.check(sol.grid)
    pol = extract_policies(sol)
    ipol = pol.hold_always() if degrade else pol.impulse
    grid = sol.grid
    batch = rollout(spec, x0, 0, pol.diffusion, ipol, q, grid.nt, n_paths, seed, stop=rule,
                    workers=workers)
    cont = np.empty(n_paths)
    for k in np.unique(batch.stop_index):
        sel = batch.stop_index == k
        cont[sel] = sol.layer(int(k))(batch.stop_state[sel])
    y = batch.running + batch.costs + cont
    start = float(sol.layer(0)(np.asarray(x0, dtype=float).reshape(1, -1))[0])
    m, se = _mean_se(y)
    return DPPResult(rule.label(), m - start, se, n_paths, degrade)


def value_bounds(spec: ProblemSpec, q: int, K1: float) -> tuple[float, float]:
    """[-c - q K1, c] brackets every lower/upper value estimate."""
    c = global_bound(spec)
    return -c - q * K1, c
