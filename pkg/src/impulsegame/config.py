"""JSON run configuration.

A config document looks like::

    {
      "problem": {"preset": "tp1"}            # or a full problem dict
      "grid": {"xlo": -4, "xhi": 4, "nx": 161, "nt": 80, "boundary": "extrapolate"},
      "impulse_grid": {"step": 0.2375, "radius": null},
      "scheme": {"time_stepping": "implicit", "rho": 0.0, "eps_pi": 1e-10, "n_obs": 100},
      "seed": 0,
      "simulation": {"x0": [0.0], "q": 4, "paths": 10000, "workers": 1},
      "game": {"q_values": [1, 2, 3, 4, 5, 6, 7, 8],
               "rule": {"kind": "exit", "lo": -1.0, "hi": 1.0}, "degrade": false},
      "verify": {"rho": 0.5, "lambdas": [0.1, 0.25, 0.5], "shift": 0.3, "trials": 20},
      "convergence": {"levels": 4}
    }

Presets are expanded on load, so emitting and re-parsing is the identity.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from .grid import Grid
from .intervention import ImpulseGrid, canonical_impulse_grid
from .problem import ProblemSpec, tp0, tp1, tp2
from .qvi import Scheme

PRESETS = {"tp0": tp0, "tp1": tp1, "tp2": tp2}

DEFAULTS = {
    "grid": {"xlo": -4.0, "xhi": 4.0, "nx": 161, "nt": 80, "d": 1, "boundary": "extrapolate"},
    "impulse_grid": {"step": None, "radius": None},
    "scheme": Scheme().to_dict(),
    "seed": 0,
    "simulation": {"x0": [0.0], "q": 4, "paths": 10000, "workers": 1},
    "game": {"q_values": [1, 2, 3, 4, 5, 6, 7, 8],
             "rule": {"kind": "exit", "lo": -1.0, "hi": 1.0}, "degrade": False},
    "verify": {"rho": 0.5, "lambdas": [0.1, 0.25, 0.5], "shift": 0.3, "trials": 20},
    "convergence": {"levels": 4, "nx": 21, "nt": 10},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class RunConfig:
    doc: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if "problem" not in doc:
            raise ConfigError("config has no 'problem' section")
        unknown = set(doc) - set(DEFAULTS) - {"problem"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        full = _merge(DEFAULTS, {k: v for k, v in doc.items() if k != "problem"})
        prob = doc["problem"]
        if "preset" in prob:
            name = prob["preset"]
            if name not in PRESETS:
                raise ConfigError(f"unknown preset {name!r}")
            prob = PRESETS[name]().to_dict()
        try:
            spec = ProblemSpec.from_dict(prob)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed problem section: {exc}") from exc
        full["problem"] = spec.to_dict()
        cfg = cls(full)
        cfg.grid()  # validate early
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def dumps(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @property
    def hash(self) -> str:
        """sha256 of the canonical (key-sorted) JSON, stable under reordering.

        The worker count is left out: it changes how paths are scheduled, not
        what they are.
        """
        doc = copy.deepcopy(self.doc)
        doc["simulation"].pop("workers", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def override(self, section: str, key: str, value) -> None:
        if value is not None:
            self.doc[section][key] = value

    # typed views -----------------------------------------------------------
    def spec(self) -> ProblemSpec:
        return ProblemSpec.from_dict(self.doc["problem"])

    def grid(self, spec: ProblemSpec | None = None) -> Grid:
        spec = spec or self.spec()
        try:
            return Grid.from_dict(self.doc["grid"], spec.T)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed grid section: {exc}") from exc

    def impulse_grid(self, spec: ProblemSpec, grid: Grid) -> ImpulseGrid:
        z = self.doc["impulse_grid"]
        if z.get("step") is None and z.get("radius") is None:
            return canonical_impulse_grid(spec)
        return ImpulseGrid.build(spec, radius=z.get("radius"), step=z.get("step"), grid=grid)

    def scheme(self) -> Scheme:
        s = self.doc["scheme"]
        return Scheme(s["time_stepping"], float(s["eps_pi"]), int(s["n_obs"]), float(s["rho"]),
                      int(s.get("max_policy_iter", 100)))

    @property
    def seed(self) -> int:
        return int(self.doc["seed"])
