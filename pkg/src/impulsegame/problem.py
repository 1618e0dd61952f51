"""Game instances: coefficient catalog, problem validation and a-priori constants.

A :class:`ProblemSpec` bundles the coefficients of the impulse-vs-diffusion
game (drift, diffusion, running and terminal gain, impulse displacement and
cost) together with the control set ``B``, the impulse set ``Z``, the horizon
``T`` and the cost floor ``K0``.  Coefficients come from a small closed
catalog of parametric families, each of which knows its sup norm and its
Lipschitz constant in ``x`` analytically, so bounds can be computed exactly
and the whole spec round-trips through a config document.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, ClassVar

import numpy as np

__all__ = [
    "NonConformingProblemError",
    "ProblemSpec",
    "ControlSet",
    "ImpulseSet",
    "CheckResult",
    "ValidationReport",
    "AffineDrift",
    "ConstantDiffusion",
    "AffineDiffusion",
    "ConstantGain",
    "CosineGain",
    "GaussianGain",
    "AffineGain",
    "ShiftImpulse",
    "PowerCost",
    "ConstantCost",
    "CustomCoefficient",
    "validate_problem",
    "global_bound",
    "truncation_radius",
    "as_fraction",
    "tp0",
    "tp1",
    "tp2",
]


class NonConformingProblemError(ValueError):
    """The instance violates a standing assumption by construction."""


def as_fraction(value) -> Fraction:
    """Parse a horizon as an exact rational (accepts "3/2", 1.5, Fraction)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    return Fraction(str(value))


def _vec(values, n=None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if n is not None and arr.shape != (n,):
        raise ValueError(f"expected a vector of length {n}, got shape {arr.shape}")
    return arr


def _mat(values) -> np.ndarray:
    return np.atleast_2d(np.asarray(values, dtype=float))


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


# --------------------------------------------------------------------------
# catalog

class _Family:
    family: ClassVar[str]

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"family": self.family}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.asarray(v).tolist() if isinstance(v, (np.ndarray, tuple, list)) else v
        return out


@dataclass(frozen=True, eq=False)
class AffineDrift(_Family):
    """mu(x, b) = A x + C b + m."""

    family: ClassVar[str] = "affine"
    A: Any = ((0.0,),)
    C: Any = ((1.0,),)
    m: Any = (0.0,)

    def __post_init__(self):
        for name in ("A", "C"):
            object.__setattr__(self, name, _mat(getattr(self, name)))
        object.__setattr__(self, "m", _vec(self.m))
        d = self.A.shape[0]
        if self.A.shape != (d, d) or self.C.shape[0] != d or self.m.shape != (d,):
            raise ValueError("inconsistent affine drift shapes")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, x, b):
        return _rows(x) @ self.A.T + _rows(b) @ self.C.T + self.m

    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    def bound_at_zero(self, bs: np.ndarray) -> float:
        return float(np.max(np.linalg.norm(bs @ self.C.T + self.m, axis=1)))


@dataclass(frozen=True, eq=False)
class ConstantDiffusion(_Family):
    """sigma(x, b) = S, a fixed d x dW matrix."""

    family: ClassVar[str] = "constant"
    S: Any = ((0.5,),)

    def __post_init__(self):
        object.__setattr__(self, "S", _mat(self.S))

    @property
    def dim(self) -> int:
        return self.S.shape[0]

    def __call__(self, x, b):
        n = _rows(x).shape[0]
        return np.broadcast_to(self.S, (n,) + self.S.shape).copy()

    def lipschitz(self) -> float:
        return 0.0


@dataclass(frozen=True, eq=False)
class AffineDiffusion(_Family):
    """Diagonal sigma(x, b) = diag(s0 + s1 * x), independent of the control."""

    family: ClassVar[str] = "affine"
    s0: Any = (0.5,)
    s1: Any = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "s0", _vec(self.s0))
        object.__setattr__(self, "s1", _vec(self.s1, len(self.s0)))

    @property
    def dim(self) -> int:
        return self.s0.shape[0]

    def __call__(self, x, b):
        diag = self.s0 + _rows(x) * self.s1
        out = np.zeros(diag.shape + (diag.shape[1],))
        idx = np.arange(diag.shape[1])
        out[:, idx, idx] = diag
        return out

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.s1)))


_DIFFUSION = {"constant": ConstantDiffusion, "affine": AffineDiffusion}


class _Gain(_Family):
    """Scalar gain families used for both the running and terminal gain.

    ``control_weight`` adds a bounded term <w, b> for running gains.
    """

    def base(self, x) -> np.ndarray:
        raise NotImplementedError

    def base_sup(self) -> float:
        raise NotImplementedError

    def __call__(self, x, b=None):
        out = self.base(_rows(x))
        if b is not None and np.any(self.control_weight):
            out = out + _rows(b) @ _vec(self.control_weight)
        return out

    def control_sup(self, bs: np.ndarray | None) -> float:
        w = _vec(self.control_weight)
        if bs is None or not np.any(w):
            return 0.0
        return float(np.max(np.abs(bs @ w)))


@dataclass(frozen=True, eq=False)
class ConstantGain(_Gain):
    family: ClassVar[str] = "constant"
    value: float = 0.0
    control_weight: Any = (0.0,)

    def base(self, x):
        return np.full(x.shape[0], float(self.value))

    def base_sup(self):
        return abs(float(self.value))

    def lipschitz(self):
        return 0.0


@dataclass(frozen=True, eq=False)
class CosineGain(_Gain):
    """amplitude * cos(<frequency, x> + phase) + offset."""

    family: ClassVar[str] = "cosine"
    amplitude: float = 1.0
    frequency: Any = (1.0,)
    phase: float = 0.0
    offset: float = 0.0
    control_weight: Any = (0.0,)

    def base(self, x):
        return self.amplitude * np.cos(x @ _vec(self.frequency) + self.phase) + self.offset

    def base_sup(self):
        return abs(float(self.amplitude)) + abs(float(self.offset))

    def lipschitz(self):
        return abs(float(self.amplitude)) * float(np.linalg.norm(_vec(self.frequency)))


@dataclass(frozen=True, eq=False)
class GaussianGain(_Gain):
    """amplitude * exp(-|x - center|^2 / (2 width^2))."""

    family: ClassVar[str] = "gaussian"
    amplitude: float = 1.0
    center: Any = (0.0,)
    width: float = 1.0
    control_weight: Any = (0.0,)

    def base(self, x):
        r2 = np.sum((x - _vec(self.center)) ** 2, axis=1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))

    def base_sup(self):
        return abs(float(self.amplitude))

    def lipschitz(self):
        return abs(float(self.amplitude)) / (abs(self.width) * math.sqrt(math.e))


@dataclass(frozen=True, eq=False)
class AffineGain(_Gain):
    """<slope, x> + intercept.  Unbounded unless the slope vanishes."""

    family: ClassVar[str] = "affine"
    slope: Any = (1.0,)
    intercept: float = 0.0
    control_weight: Any = (0.0,)

    def base(self, x):
        return x @ _vec(self.slope) + self.intercept

    def base_sup(self):
        if np.any(_vec(self.slope)):
            return math.inf
        return abs(float(self.intercept))

    def lipschitz(self):
        return float(np.linalg.norm(_vec(self.slope)))


_GAIN = {c.family: c for c in (ConstantGain, CosineGain, GaussianGain, AffineGain)}


@dataclass(frozen=True, eq=False)
class ShiftImpulse(_Family):
    """Gamma(t, z) = scale * z."""

    family: ClassVar[str] = "shift"
    scale: float = 1.0

    def __call__(self, t, z):
        return self.scale * _rows(z)

    time_dependent: ClassVar[bool] = False


@dataclass(frozen=True, eq=False)
class PowerCost(_Family):
    """K(t, z) = -k0 - k1 |z|^p."""

    family: ClassVar[str] = "power"
    k0: float = 0.1
    k1: float = 0.05
    p: float = 1.0

    def __call__(self, t, z):
        r = np.linalg.norm(_rows(z), axis=1)
        return -self.k0 - self.k1 * r**self.p

    @property
    def radial_nonincreasing(self) -> bool:
        return self.k1 >= 0 and self.p > 0

    def radius_for(self, level: float) -> float:
        """Smallest r with K <= -level for every |z| > r."""
        if self.k1 <= 0:
            raise NonConformingProblemError(
                "truncation radius undefined: impulse cost does not grow in |z|"
            )
        if level <= self.k0:
            return 0.0
        return ((level - self.k0) / self.k1) ** (1.0 / self.p)


@dataclass(frozen=True, eq=False)
class ConstantCost(_Family):
    family: ClassVar[str] = "constant"
    value: float = -0.1

    def __call__(self, t, z):
        return np.full(_rows(z).shape[0], float(self.value))

    radial_nonincreasing: ClassVar[bool] = True

    def radius_for(self, level: float) -> float:
        raise NonConformingProblemError(
            "truncation radius undefined: impulse cost does not grow in |z|"
        )


_IMPULSE = {"shift": ShiftImpulse}
_COST = {"power": PowerCost, "constant": ConstantCost}
_DRIFT = {"affine": AffineDrift}


@dataclass(frozen=True, eq=False)
class CustomCoefficient:
    """Programmatic coefficient for tests; not serialisable.

    ``fn`` must be vectorised with the same call signature as the catalog
    family it replaces.  ``sup`` and ``lip`` play the role of the analytic
    constants.
    """

    fn: Callable
    sup: float = math.inf
    lip: float = math.inf
    family: str = "custom"
    radial_nonincreasing: bool = False
    time_dependent: bool = True
    dim: int = 1

    def __call__(self, *args):
        return self.fn(*args)

    def base_sup(self):
        return self.sup

    def control_sup(self, bs):
        return 0.0

    def lipschitz(self):
        return self.lip

    def to_dict(self):
        raise TypeError("custom coefficients cannot be serialised")


def _load(role: dict, table: dict, what: str):
    doc = dict(role)
    name = doc.pop("family")
    if name not in table:
        raise ValueError(f"unknown {what} family {name!r}; known: {sorted(table)}")
    return table[name](**doc)


# --------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Box [lo, hi] in R^dB sampled with ``n`` points per axis."""

    lo: Any = (-1.0,)
    hi: Any = (1.0,)
    n: int = 21

    def __post_init__(self):
        object.__setattr__(self, "lo", _vec(self.lo))
        object.__setattr__(self, "hi", _vec(self.hi, len(self.lo)))
        if self.n < 1 or np.any(self.hi < self.lo):
            raise ValueError("control set must be a nonempty box")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def samples(self) -> np.ndarray:
        axes = [np.linspace(l, h, self.n) if self.n > 1 else np.array([l])
                for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "n": self.n}


@dataclass(frozen=True, eq=False)
class ImpulseSet:
    """Closed box in R^dZ; ``None`` bounds mean unbounded on that side."""

    lo: Any = None
    hi: Any = None
    dim: int = 1

    def contains(self, z) -> np.ndarray:
        z = _rows(z)
        ok = np.ones(z.shape[0], dtype=bool)
        if self.lo is not None:
            ok &= np.all(z >= _vec(self.lo) - 1e-12, axis=1)
        if self.hi is not None:
            ok &= np.all(z <= _vec(self.hi) + 1e-12, axis=1)
        return ok

    @property
    def bounded(self) -> bool:
        return self.lo is not None and self.hi is not None

    def to_dict(self):
        conv = lambda v: None if v is None else _vec(v).tolist()
        return {"lo": conv(self.lo), "hi": conv(self.hi), "dim": self.dim}


# --------------------------------------------------------------------------
# problem bundle


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficient bundle of one game instance.

    ``data_rate`` implements the discount change of variables: with rate
    ``r`` the running gain and impulse cost are multiplied by ``exp(r t)`` and
    the terminal gain by ``exp(r T)``.  See :meth:`discounted`.
    """

    T: Fraction
    drift: Any
    diffusion: Any
    running: Any
    terminal: Any
    impulse: Any
    cost: Any
    control_set: ControlSet
    impulse_set: ImpulseSet
    K0: float
    name: str = ""
    data_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "T", as_fraction(self.T))
        if self.T <= 0:
            raise ValueError("horizon must be positive")
        if not self.K0 > 0:
            raise ValueError("cost floor K0 must be positive")

    # dimensions -----------------------------------------------------------
    @property
    def d(self) -> int:
        return self.drift.dim

    @property
    def T_float(self) -> float:
        return float(self.T)

    @property
    def controls(self) -> np.ndarray:
        return self.control_set.samples()

    # evaluation -------------------------------------------------------------
    def mu(self, x, b):
        return self.drift(x, b)

    def sigma(self, x, b):
        return self.diffusion(x, b)

    def f(self, t, x, b):
        out = self.running(x, b) if not isinstance(self.running, CustomCoefficient) \
            else self.running(t, x, b)
        return out * math.exp(self.data_rate * t) if self.data_rate else out

    def g(self, x):
        out = self.terminal(x)
        return out * math.exp(self.data_rate * self.T_float) if self.data_rate else out

    def gamma(self, t, z):
        return self.impulse(t, z)

    def K(self, t, z):
        out = self.cost(t, z)
        return out * math.exp(self.data_rate * t) if self.data_rate else out

    # analytic constants ------------------------------------------------------
    def f_sup(self) -> float:
        s = self.running.base_sup() + self.running.control_sup(self.controls)
        return s * math.exp(self.data_rate * self.T_float)

    def g_sup(self) -> float:
        return self.terminal.base_sup() * math.exp(self.data_rate * self.T_float)

    def f_lip(self) -> float:
        return self.running.lipschitz() * math.exp(self.data_rate * self.T_float)

    def g_lip(self) -> float:
        return self.terminal.lipschitz() * math.exp(self.data_rate * self.T_float)

    def discounted(self, rate: float) -> "ProblemSpec":
        """Data (e^{rt} f, e^{rT} g, e^{rt} K) for the discounted equation."""
        return dataclasses.replace(self, data_rate=self.data_rate + rate)

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    # serialisation -------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "T": str(self.T),
            "drift": self.drift.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "running": self.running.to_dict(),
            "terminal": self.terminal.to_dict(),
            "impulse": self.impulse.to_dict(),
            "cost": self.cost.to_dict(),
            "control_set": self.control_set.to_dict(),
            "impulse_set": self.impulse_set.to_dict(),
            "K0": self.K0,
            "data_rate": self.data_rate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProblemSpec":
        return cls(
            T=as_fraction(doc["T"]),
            drift=_load(doc["drift"], _DRIFT, "drift"),
            diffusion=_load(doc["diffusion"], _DIFFUSION, "diffusion"),
            running=_load(doc["running"], _GAIN, "running gain"),
            terminal=_load(doc["terminal"], _GAIN, "terminal gain"),
            impulse=_load(doc["impulse"], _IMPULSE, "impulse"),
            cost=_load(doc["cost"], _COST, "cost"),
            control_set=ControlSet(**doc["control_set"]),
            impulse_set=ImpulseSet(**doc.get("impulse_set", {})),
            K0=float(doc["K0"]),
            name=doc.get("name", ""),
            data_rate=float(doc.get("data_rate", 0.0)),
        )


# --------------------------------------------------------------------------
# constants


def global_bound(spec: ProblemSpec) -> float:
    """c = T ||f|| + ||g||, the a-priori bound on both value functions."""
    return spec.T_float * spec.f_sup() + spec.g_sup()


def truncation_radius(spec: ProblemSpec) -> float:
    """Radius beyond which every impulse costs at least twice the global bound.

    Impulses outside the closed ball of this radius can be discarded without
    changing either value function.
    """
    c = global_bound(spec)
    if not math.isfinite(c):
        raise NonConformingProblemError("global bound is infinite")
    if not hasattr(spec.cost, "radius_for"):
        raise NonConformingProblemError("truncation radius needs a catalog cost family")
    # exp(rate t) >= 1 and K < 0, so t = 0 is the binding time.
    return spec.cost.radius_for(2.0 * c)


# --------------------------------------------------------------------------
# validation


@dataclass
class CheckResult:
    passed: bool
    measured: float = math.nan
    bound: float = math.nan
    witness: Any = None
    samples: int = 0
    required: bool = True

    def to_dict(self):
        w = self.witness
        if isinstance(w, dict):
            w = {k: np.asarray(v).tolist() for k, v in w.items()}
        elif w is not None:
            w = np.asarray(w).tolist()

        def num(v):
            v = float(v)
            return v if math.isfinite(v) else None  # keep the JSON strict

        return {"passed": bool(self.passed), "measured": num(self.measured),
                "bound": num(self.bound), "witness": w, "samples": int(self.samples),
                "required": bool(self.required)}


@dataclass
class ValidationReport:
    checks: dict[str, CheckResult] = field(default_factory=dict)
    seed: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values() if c.required)

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if c.required and not c.passed]

    def to_dict(self):
        return {"passed": bool(self.passed), "seed": int(self.seed),
                "checks": {k: v.to_dict() for k, v in self.checks.items()}}


def _quotient_check(name, fa, fb, xa, xb, bound, extra, samples):
    num = np.abs(fa - fb)
    if num.ndim > 1:
        num = np.linalg.norm(num.reshape(num.shape[0], -1), axis=1)
    den = np.linalg.norm(xa - xb, axis=1)
    q = num / den
    i = int(np.argmax(q))
    ok = bool(q[i] <= bound * (1 + 1e-9) + 1e-12)
    wit = None if ok else {"x": xa[i], "y": xb[i], **{k: v[i] for k, v in extra.items()}}
    return CheckResult(ok, float(q[i]), float(bound), wit, samples)


def validate_problem(spec: ProblemSpec, samples: int = 1000, seed: int = 0,
                     radius: float = 10.0) -> ValidationReport:
    """Falsification tests of the standing assumptions on random samples.

    Every check records the largest measured quantity and, on failure, the
    sample that witnesses it.  Raises :class:`NonConformingProblemError` when
    a catalog family reports an infinite sup norm for f or g.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if not math.isfinite(spec.f_sup()):
        raise NonConformingProblemError("running gain f is unbounded")
    if not math.isfinite(spec.g_sup()):
        raise NonConformingProblemError("terminal gain g is unbounded")

    rng = np.random.default_rng(seed)
    d, T = spec.d, spec.T_float
    bs = spec.controls
    dz = spec.impulse_set.dim
    n = samples
    t = rng.uniform(0.0, T, n)
    x = rng.uniform(-radius, radius, (n, d))
    y = x + rng.normal(scale=0.5, size=(n, d))
    b = bs[rng.integers(len(bs), size=n)]
    z = _sample_z(spec, rng, n, radius)
    rep = ValidationReport(seed=seed)
    ck = rep.checks

    ck["control_set_compact"] = CheckResult(bool(len(bs) > 0 and np.all(np.isfinite(bs))),
                                            samples=len(bs))

    lip_mu = spec.drift.lipschitz()
    lip_sig = spec.diffusion.lipschitz()
    ck["drift_lipschitz"] = _quotient_check("mu", spec.mu(x, b), spec.mu(y, b), x, y,
                                            lip_mu, {"b": b}, n)
    ck["diffusion_lipschitz"] = _quotient_check("sigma", spec.sigma(x, b), spec.sigma(y, b),
                                                x, y, lip_sig, {"b": b}, n)

    fx = np.array([spec.f(ti, xi[None], bi[None])[0] for ti, xi, bi in zip(t, x, b)])
    gx = spec.g(x)
    fsup, gsup = spec.f_sup(), spec.g_sup()
    i, j = int(np.argmax(np.abs(fx))), int(np.argmax(np.abs(gx)))
    ck["f_bounded"] = CheckResult(bool(abs(fx[i]) <= fsup + 1e-12), float(abs(fx[i])), fsup,
                                  None if abs(fx[i]) <= fsup + 1e-12 else {"t": t[i], "x": x[i]}, n)
    ck["g_bounded"] = CheckResult(bool(abs(gx[j]) <= gsup + 1e-12), float(abs(gx[j])), gsup,
                                  None if abs(gx[j]) <= gsup + 1e-12 else {"x": x[j]}, n)

    fy = np.array([spec.f(ti, yi[None], bi[None])[0] for ti, yi, bi in zip(t, y, b)])
    ck["f_lipschitz"] = _quotient_check("f", fx, fy, x, y, spec.f_lip(), {"t": t, "b": b}, n)
    ck["g_lipschitz"] = _quotient_check("g", gx, spec.g(y), x, y, spec.g_lip(), {}, n)

    ck["impulse_set_nonempty"] = CheckResult(bool(len(z) > 0), samples=len(z))
    kz = np.array([spec.K(ti, zi[None])[0] for ti, zi in zip(t[: len(z)], z)])
    k = int(np.argmax(kz))
    ok = bool(kz[k] <= -spec.K0)
    ck["cost_floor"] = CheckResult(ok, float(kz[k]), -spec.K0,
                                   None if ok else {"t": t[k], "z": z[k]}, len(z))

    ck["cost_growth"] = _growth_check(spec, dz)
    ck["impulse_merge"] = _merge_check(spec, rng, n, radius)
    ck["terminal_regular"] = _terminal_check(spec, x, z)
    return rep


def _sample_z(spec, rng, n, radius):
    zs = spec.impulse_set
    lo = np.full(zs.dim, -radius) if zs.lo is None else np.maximum(_vec(zs.lo), -radius)
    hi = np.full(zs.dim, radius) if zs.hi is None else np.minimum(_vec(zs.hi), radius)
    if zs.lo is not None and zs.hi is None:
        hi = lo + 2 * radius
    if zs.hi is not None and zs.lo is None:
        lo = hi - 2 * radius
    return rng.uniform(lo, hi, (n, zs.dim))


def _growth_check(spec, dz):
    if spec.impulse_set.bounded:
        return CheckResult(True, samples=0)  # compact Z: growth condition is vacuous
    radii = 10.0 ** np.arange(0, 7)
    direction = np.ones(dz) / math.sqrt(dz)
    worst = -math.inf
    for sign in (1.0, -1.0):
        zz = sign * radii[:, None] * direction
        keep = spec.impulse_set.contains(zz)
        if not keep.any():
            continue
        kv = spec.K(0.0, zz[keep])
        mono = bool(np.all(np.diff(kv) <= 1e-12))
        worst = max(worst, float(kv[-1]))
        if not mono or kv[-1] > -1e3 * (1 + global_bound(spec)):
            return CheckResult(False, float(kv[-1]), -1e3 * (1 + global_bound(spec)),
                               {"z": zz[keep][-1]}, len(radii))
    return CheckResult(True, worst, -1e3 * (1 + global_bound(spec)), None, 2 * len(radii))


def _merge_check(spec, rng, n, radius):
    t = rng.uniform(0, spec.T_float, n)
    z1 = _sample_z(spec, rng, n, radius / 2)
    z2 = _sample_z(spec, rng, n, radius / 2)
    zz = z1 + z2
    keep = spec.impulse_set.contains(zz)
    worst, wit = 0.0, None
    for ti, a, bb, c in zip(t[keep], z1[keep], z2[keep], zz[keep]):
        disp = np.abs(spec.gamma(ti, a[None]) + spec.gamma(ti, bb[None])
                      - spec.gamma(ti, c[None])).max()
        gap = spec.K(ti, a[None])[0] + spec.K(ti, bb[None])[0] - spec.K(ti, c[None])[0]
        bad = max(disp, gap)
        if bad > worst:
            worst, wit = bad, {"t": ti, "z1": a, "z2": bb}
    ok = worst <= 1e-10
    return CheckResult(ok, worst, 0.0, None if ok else wit, int(keep.sum()))


def _terminal_check(spec, x, z):
    """Sampled form of g >= Mg, a sufficient terminal-regularity condition."""
    gx = spec.g(x)
    T = spec.T_float
    best = np.full(len(x), -np.inf)
    for zi in z[:200]:
        dest = x + spec.gamma(T, zi[None])
        best = np.maximum(best, spec.g(dest) + spec.K(T, zi[None])[0])
    gap = best - gx
    i = int(np.argmax(gap))
    ok = bool(gap[i] <= 0)
    return CheckResult(ok, float(gap[i]), 0.0, None if ok else {"x": x[i]}, len(x),
                       required=False)


# --------------------------------------------------------------------------
# canonical instances


def tp1(**overrides) -> ProblemSpec:
    """Drift control b in [-1, 1], sigma = 0.5, f = 0, g = cos, shift impulses."""
    spec = ProblemSpec(
        T=Fraction(1),
        drift=AffineDrift(A=[[0.0]], C=[[1.0]], m=[0.0]),
        diffusion=ConstantDiffusion(S=[[0.5]]),
        running=ConstantGain(0.0),
        terminal=CosineGain(amplitude=1.0, frequency=[1.0], phase=0.0),
        impulse=ShiftImpulse(),
        cost=PowerCost(k0=0.1, k1=0.05, p=1.0),
        control_set=ControlSet(lo=[-1.0], hi=[1.0], n=21),
        impulse_set=ImpulseSet(dim=1),
        K0=0.1,
        name="TP1",
    )
    return spec.replace(**overrides) if overrides else spec


def tp0(**overrides) -> ProblemSpec:
    """f = g = 0: the value is identically zero."""
    return tp1(terminal=ConstantGain(0.0), name="TP0", **overrides)


def tp2(**overrides) -> ProblemSpec:
    """g = 1: the value is identically one."""
    return tp1(terminal=ConstantGain(1.0), name="TP2", **overrides)
