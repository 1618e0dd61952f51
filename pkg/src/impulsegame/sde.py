"""Euler-Maruyama rollouts of the impulse-controlled SDE and Monte Carlo gains.

Paths are simulated in fixed-size blocks.  Block ``j`` draws its Brownian
increments from ``SeedSequence(seed).spawn(n_blocks)[j]``, so a given path
always sees the same noise whatever the number of workers, and two
estimates with the same seed share their noise (common random numbers).
Per-path results are concatenated in block order before any reduction.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .problem import ProblemSpec, as_fraction, global_bound

__all__ = [
    "SimulationError",
    "ConstantControl",
    "NoImpulse",
    "ImpulseAt",
    "SamplePath",
    "GainEstimate",
    "RolloutBatch",
    "simulate_path",
    "rollout",
    "estimate_gain",
    "lipschitz_probe",
    "gain_bound",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 1024
MAX_CHAIN = 16


class SimulationError(RuntimeError):
    """The simulated state left the finite numbers."""


@dataclass(frozen=True)
class ConstantControl:
    """Diffusion policy b(t, x) = b."""

    b: tuple

    def __call__(self, t, x):
        return np.broadcast_to(np.asarray(self.b, dtype=float), (len(x), len(self.b)))


@dataclass(frozen=True)
class NoImpulse:
    dim: int = 1

    def __call__(self, t, x):
        return np.zeros(len(x), dtype=bool), np.zeros((len(x), self.dim))


@dataclass(frozen=True)
class ImpulseAt:
    """Act with impulse ``z`` at the given grid times (once per time unless
    the budget or the chain cap allows repeats)."""

    z: tuple
    times: tuple = (Fraction(0),)

    def __call__(self, t, x):
        act = np.full(len(x), as_fraction(t) in {as_fraction(s) for s in self.times})
        return act, np.broadcast_to(np.asarray(self.z, dtype=float), (len(x), len(self.z)))


@dataclass
class RolloutBatch:
    """Per-path results of a batch rollout (arrays of length N)."""

    running: np.ndarray  # left-endpoint integral of f up to the stop
    costs: np.ndarray  # sum of K over applied impulses
    terminal: np.ndarray  # g(X_T) or 0 when stopped before T
    impulses: np.ndarray  # impulse counts
    stop_index: np.ndarray  # grid index of the stopping time
    stop_state: np.ndarray  # (N, d) post-impulse state at the stop

    @property
    def payoff(self) -> np.ndarray:
        return self.running + self.costs + self.terminal


@dataclass
class SamplePath:
    times: list
    x_pre: np.ndarray  # (nt+1, d)
    x_post: np.ndarray  # (nt+1, d)
    b: np.ndarray  # (nt, dB); control used on [t_k, t_{k+1})
    dW: np.ndarray  # (nt, dW)
    impulses: list  # [(k, z)]
    f_acc: np.ndarray  # (nt+1,) integral of f up to t_k
    K_acc: np.ndarray  # (nt+1,) costs paid up to and including t_k
    terminal: float

    @property
    def gain(self) -> float:
        return float(self.f_acc[-1] + self.K_acc[-1] + self.terminal)

    def to_csv(self, path) -> None:
        d = self.x_pre.shape[1]
        db = self.b.shape[1]
        by_k: dict = {}
        for k, z in self.impulses:
            by_k.setdefault(k, []).append(" ".join(repr(float(v)) for v in z))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t"] + [f"X_pre{a + 1}" for a in range(d)]
                       + [f"X_post{a + 1}" for a in range(d)]
                       + [f"b{a + 1}" for a in range(db)] + ["z", "f_acc", "K_acc"])
            for k, t in enumerate(self.times):
                b = self.b[k] if k < len(self.b) else np.full(db, np.nan)
                w.writerow([k, str(t)] + [repr(float(v)) for v in self.x_pre[k]]
                           + [repr(float(v)) for v in self.x_post[k]]
                           + [repr(float(v)) for v in b] + [";".join(by_k.get(k, []))]
                           + [repr(float(self.f_acc[k])), repr(float(self.K_acc[k]))])


@dataclass(frozen=True)
class GainEstimate:
    mean: float
    se: float
    n: int
    seed: int
    mean_running: float = 0.0
    mean_costs: float = 0.0
    mean_terminal: float = 0.0

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n, "seed": self.seed}


def _times(spec: ProblemSpec, nt: int, t0) -> tuple[list, int]:
    if nt < 1:
        raise ValueError("need at least one time step")
    times = [spec.T * Fraction(k, nt) for k in range(nt + 1)]
    t0 = as_fraction(t0)
    if t0 not in times:
        raise ValueError(f"start time {t0} is not a grid time")
    return times, times.index(t0)


def _budget(q) -> int:
    if q is None:
        return np.iinfo(np.int64).max
    if int(q) < 1:
        raise ValueError("budget q must be at least 1")
    return int(q) - 1  # strictly fewer than q impulses


def _brownian_dim(spec: ProblemSpec) -> int:
    b0 = spec.controls[:1]
    return spec.sigma(np.zeros((1, spec.d)), b0).shape[2]


def _impulse_node(spec, t, tf, x, ipolicy, count, cap, kacc, record=None):
    """Apply the chain of impulses at one grid time, in place."""
    for _ in range(MAX_CHAIN):
        room = count < cap
        if not room.any():
            break
        act, z = ipolicy(t, x)
        act = np.asarray(act, dtype=bool) & room
        if not act.any():
            break
        z = np.asarray(z, dtype=float)[act]
        x[act] = x[act] + spec.gamma(tf, z)
        kacc[act] += spec.K(tf, z)
        count[act] += 1
        if record is not None:
            record(np.flatnonzero(act), z)


def _run(spec, times, k0, x0, bpolicy, ipolicy, cap, noise, stop=None, dt=None,
         record_path=False):
    n = noise.shape[1]
    d = spec.d
    x = np.broadcast_to(np.asarray(x0, dtype=float).reshape(1, d), (n, d)).copy()
    facc = np.zeros(n)
    kacc = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    stop_index = np.full(n, len(times) - 1)
    stop_state = np.empty((n, d))
    sqdt = np.sqrt(dt)
    trace = None
    if record_path:
        nt = len(times) - 1
        trace = {"pre": np.full((nt + 1, d), np.nan), "post": np.full((nt + 1, d), np.nan),
                 "b": np.full((nt, spec.controls.shape[1]), np.nan), "imp": [],
                 "f": np.zeros(nt + 1), "K": np.zeros(nt + 1),
                 "dW": np.zeros((nt, noise.shape[2]))}
    for k in range(k0, len(times)):
        t = times[k]
        tf = float(t)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite state at step {k}")
        stopping = np.zeros(n, dtype=bool)
        if stop is not None:
            stopping = alive & stop(t, x)
        if trace is not None:
            trace["pre"][k] = x[0]
        rec = None
        if trace is not None:
            def rec(idx, z, k=k):
                trace["imp"].extend((k, zz.copy()) for zz in z[idx == 0])
        if alive.any():
            sub = np.flatnonzero(alive)
            xs, ks, cs = x[sub], kacc[sub], count[sub]
            _impulse_node(spec, t, tf, xs, ipolicy, cs, cap, ks,
                          None if rec is None else (lambda i, z: rec(sub[i], z)))
            x[sub], kacc[sub], count[sub] = xs, ks, cs
        if trace is not None:
            trace["post"][k] = x[0]
            trace["K"][k] = kacc[0]
            trace["f"][k] = facc[0]
        halt = stopping | (k == len(times) - 1)
        newly = alive & halt
        stop_index[newly] = k
        stop_state[newly] = x[newly]
        alive &= ~halt
        if k == len(times) - 1 or not alive.any():
            break
        sub = np.flatnonzero(alive)
        xs = x[sub]
        b = np.asarray(bpolicy(t, xs), dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported next step
            facc[sub] += spec.f(tf, xs, b) * dt
            sig = spec.sigma(xs, b)
            x[sub] = xs + spec.mu(xs, b) * dt + np.einsum("nij,nj->ni", sig, noise[k, sub]) * sqdt
        if trace is not None:
            trace["b"][k] = b[0]
            trace["dW"][k] = noise[k, 0] * sqdt
    terminal = np.where(stop_index == len(times) - 1, spec.g(stop_state), 0.0)
    batch = RolloutBatch(facc, kacc, terminal, count, stop_index, stop_state)
    return batch, trace


def _noise_blocks(seed: int, n_paths: int, steps: int, dim: int, block: int):
    seqs = np.random.SeedSequence(seed).spawn(-(-n_paths // block))
    for j, ss in enumerate(seqs):
        m = min(block, n_paths - j * block)
        # path-major draws: a path's noise does not depend on how many paths follow it
        z = np.random.default_rng(ss).standard_normal((m, steps, dim))
        yield np.ascontiguousarray(z.transpose(1, 0, 2))


def rollout(spec: ProblemSpec, x0, t0, bpolicy, ipolicy, q, nt: int, n_paths: int, seed: int,
            stop=None, workers: int = 1, block_size: int = BLOCK_SIZE) -> RolloutBatch:
    """Simulate ``n_paths`` paths; ``stop(t, x)`` marks paths to stop at grid time t
    (after the impulses at t)."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    times, k0 = _times(spec, nt, t0)
    cap = _budget(q)
    dt = float(spec.T) / nt
    dim = _brownian_dim(spec)

    def one(noise):
        return _run(spec, times, k0, x0, bpolicy, ipolicy, cap, noise, stop, dt)[0]

    blocks = _noise_blocks(seed, n_paths, nt, dim, block_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, blocks))
    else:
        parts = [one(b) for b in blocks]
    return RolloutBatch(*(np.concatenate([getattr(p, f) for p in parts])
                          for f in ("running", "costs", "terminal", "impulses", "stop_index",
                                    "stop_state")))


def simulate_path(spec: ProblemSpec, x0, t0, bpolicy, ipolicy, q, nt: int, seed: int
                  ) -> SamplePath:
    """One path; identical to path 0 of ``rollout`` with the same seed."""
    times, k0 = _times(spec, nt, t0)
    dt = float(spec.T) / nt
    noise = next(_noise_blocks(seed, 1, nt, _brownian_dim(spec), BLOCK_SIZE))
    batch, tr = _run(spec, times, k0, x0, bpolicy, ipolicy, _budget(q), noise, None, dt,
                     record_path=True)
    return SamplePath(times, tr["pre"], tr["post"], tr["b"], tr["dW"], tr["imp"], tr["f"], tr["K"],
                      float(batch.terminal[0]))


def estimate_gain(spec: ProblemSpec, x0, t0, bpolicy, ipolicy, q, nt: int, n_paths: int,
                  seed: int, workers: int = 1) -> GainEstimate:
    """Monte Carlo mean of running gain + impulse costs + terminal gain."""
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    batch = rollout(spec, x0, t0, bpolicy, ipolicy, q, nt, n_paths, seed, workers=workers)
    pay = batch.payoff
    se = float(np.std(pay, ddof=1) / np.sqrt(n_paths))
    return GainEstimate(float(np.mean(pay)), se, n_paths, seed, float(np.mean(batch.running)),
                        float(np.mean(batch.costs)), float(np.mean(batch.terminal)))


def gain_bound(spec: ProblemSpec, q: int, K1: float) -> float:
    """|J| <= c + q K1."""
    return global_bound(spec) + q * K1


def lipschitz_probe(spec: ProblemSpec, t, x, x_hat, bpolicy, ipolicy, q, nt: int,
                    n_paths: int, seed: int) -> float:
    """|J(t, x) - J(t, x_hat)| / |x - x_hat| with common random numbers."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    gap = float(np.linalg.norm(x - x_hat))
    if gap == 0:
        raise ValueError("the two starting points coincide")
    a = rollout(spec, x, t, bpolicy, ipolicy, q, nt, n_paths, seed).payoff
    b = rollout(spec, x_hat, t, bpolicy, ipolicy, q, nt, n_paths, seed).payoff
    return abs(float(np.mean(a)) - float(np.mean(b))) / gap
