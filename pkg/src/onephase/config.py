"""JSON run configuration for the command-line pipeline."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .corona import TreeConfig
from .errors import ConfigError
from .field import GridSpec


@dataclass(frozen=True)
class GridConfig:
    dim: int = 2
    half_width: float = 1.0
    cells: int = 128

    def spec(self) -> GridSpec:
        return GridSpec.cube(self.half_width, self.cells, self.dim)


@dataclass(frozen=True)
class ProblemConfig:
    boundary: str = "random_front"
    params: dict = field(default_factory=dict)
    q: float = 1.0
    max_sweeps: int = 20000
    energy_tol: float = 1e-12
    levels: int = 3


@dataclass(frozen=True)
class WeissConfig:
    r_min_cells: float = 4.0
    r_max: float = 0.25
    eps0: float = 0.05
    inner: float = 0.5
    max_points: int = 200


@dataclass(frozen=True)
class StrataConfig:
    k: int = 1
    eps: float = 0.05
    r: float = 0.25
    scale_factor: float = 0.5
    plane_samples: int = 64


@dataclass(frozen=True)
class CoverConfig:
    tree: dict = field(default_factory=dict)
    center: tuple = ()
    radius: float = 0.25
    policy: str = "snap"
    refine: bool = True

    def tree_config(self, k: int) -> TreeConfig:
        kw = dict(self.tree)
        kw.setdefault("k", k)
        return TreeConfig.defaults(**kw)


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = GridConfig()
    problem: ProblemConfig = ProblemConfig()
    weiss: WeissConfig = WeissConfig()
    strata: StrataConfig = StrataConfig()
    cover: CoverConfig = CoverConfig()
    output: str = "out"
    seed: int = 0

    def validate(self) -> "RunConfig":
        g, p, w, s, c = self.grid, self.problem, self.weiss, self.strata, self.cover
        positive = {"grid.half_width": g.half_width, "grid.cells": g.cells, "problem.q": p.q,
                    "problem.energy_tol": p.energy_tol, "weiss.r_min_cells": w.r_min_cells,
                    "weiss.r_max": w.r_max, "weiss.inner": w.inner, "strata.eps": s.eps,
                    "strata.r": s.r, "cover.radius": c.radius}
        for name, val in positive.items():
            if not val > 0:
                raise ConfigError(f"{name} must be positive (got {val})")
        if w.eps0 < 0:
            raise ConfigError("weiss.eps0 must be nonnegative")
        if not 0 <= s.k <= g.dim:
            raise ConfigError(f"strata.k must lie in [0, {g.dim}]")
        if not 0 < s.scale_factor < 1:
            raise ConfigError("strata.scale_factor must lie in (0, 1)")
        if c.center and len(c.center) != g.dim:
            raise ConfigError("cover.center must have grid dimension")
        if c.policy not in ("snap", "strict"):
            raise ConfigError("cover.policy must be 'snap' or 'strict'")
        self.cover.tree_config(max(s.k, 1))
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"grid": GridConfig, "problem": ProblemConfig, "weiss": WeissConfig,
                    "strata": StrataConfig, "cover": CoverConfig}
        unknown = set(d) - set(sections) - {"output", "seed"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, typ in sections.items():
            part = d.get(name, {})
            if not isinstance(part, dict):
                raise ConfigError(f"section {name!r} must be an object")
            bad = set(part) - set(typ.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            if name == "cover" and "center" in part:
                part = {**part, "center": tuple(part["center"])}
            kw[name] = typ(**part)
        if "output" in d:
            kw["output"] = str(d["output"])
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        return cls(**kw).validate()


def load_config(path) -> RunConfig:
    """Parse and validate; JSON errors propagate as ``json.JSONDecodeError``."""
    with Path(path).open() as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return RunConfig.from_dict(data)
