"""Experiment configuration files (YAML) and their validation.

Every experiment is one YAML mapping. Unknown keys are errors, and all
violations are collected before reporting. The full schema is documented in
``docs/config.md``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import SchemaError, UnresolvedReferenceError
from .jump_sde.catalog import CATALOG

KINDS = ("admissibility", "derivative-check", "tv-converge", "density-probe", "singular-cf", "sde-sim", "scan")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SpaceSpec(_Strict):
    kind: Literal["atomic", "band"] = "atomic"
    atoms: Optional[list[list[float]]] = None
    weights: Optional[list[float]] = None
    support: Optional[tuple[float, float]] = None
    density: Optional[Literal["uniform", "exponential"]] = None
    rate: float = 1.0
    total_mass: Optional[float] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.kind == "atomic":
            if not self.atoms or self.weights is None or len(self.atoms) != len(self.weights):
                raise ValueError("atomic space needs atoms and one weight per atom")
            if any(w <= 0 for w in self.weights):
                raise ValueError("atom weights must be > 0")
        else:
            if self.support is None or self.density is None or self.total_mass is None:
                raise ValueError("band space needs support, density and total_mass")
        return self


class SubsetSpec(_Strict):
    atoms: Optional[list[int]] = None
    interval: Optional[tuple[float, float]] = None
    p_interval: Optional[tuple[float, float]] = None
    label: str = "subset"


class DirectionSpec(_Strict):
    a: Optional[float] = Field(default=None, ge=0)
    b: Optional[float] = Field(default=None, gt=0)
    breakpoints: Optional[list[float]] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _shape(self):
        if (self.a is None) != (self.b is None):
            raise ValueError("give both a and b")
        if self.a is None and self.breakpoints is None:
            raise ValueError("give (a, b) or breakpoints/values")
        if (self.breakpoints is None) != (self.values is None):
            raise ValueError("breakpoints and values go together")
        return self


class CellSpec(_Strict):
    a: float = Field(ge=0)
    b: float = Field(gt=0)
    subset: SubsetSpec = SubsetSpec()
    h: Optional[DirectionSpec] = None


class ModelSpec(_Strict):
    name: str
    params: dict = Field(default_factory=dict)


class FunctionalSpec(_Strict):
    name: Literal["first_jump_le", "constant", "outside_count_le"] = "first_jump_le"
    t0: float = 1.0
    value: float = 1.0


class FamilySpec(_Strict):
    kind: Literal["sin_perturbed", "initial_state", "horizon", "identical"] = "sin_perturbed"
    scale: float = 1.0


class Tolerances(_Strict):
    se_threshold: float = Field(default=3.0, gt=0)
    fd_tol: float = Field(default=1e-4, gt=0)
    rank_tol: float = Field(default=1e-8, gt=0)
    agreement: float = Field(default=0.95, gt=0, le=1)
    jump_tol: float = Field(default=1e-6, gt=0)


class OutputSpec(_Strict):
    dir: str = "jumpcalc-out"
    format: Literal["json", "csv"] = "json"


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    paths: int = Field(default=10_000, gt=1)
    threads: Optional[int] = Field(default=None, gt=0)
    output: OutputSpec = OutputSpec()
    tolerances: Tolerances = Tolerances()

    # point measure and transformation
    space: Optional[SpaceSpec] = None
    window: Optional[float] = Field(default=None, gt=0)
    subset: Optional[SubsetSpec] = None
    direction: Optional[DirectionSpec] = None
    functional: Optional[FunctionalSpec] = None
    paired: bool = True

    # SDE experiments
    model: Optional[ModelSpec] = None
    x: Optional[list[float]] = None
    t: Optional[float] = Field(default=None, gt=0)
    grid: Optional[list[CellSpec]] = None
    cell: Optional[int] = Field(default=None, ge=0)

    # tv-converge / density-probe
    schedule: Optional[list[float]] = None
    family: FamilySpec = FamilySpec()
    bins: int = Field(default=32, gt=1)
    bootstrap: int = Field(default=200, gt=1)
    restrict: bool = True
    refine: int = Field(default=4, gt=1)

    # singular-cf
    truncation: int = Field(default=20, gt=1)
    factorials: tuple[int, int] = (3, 8)
    jitter: float = Field(default=0.05, gt=0)

    # scan
    l_range: tuple[float, float] = (-1.0, 1.0)
    resolution: int = Field(default=401, gt=2)
    scan_paths: int = Field(default=100, gt=0)
    expected_jump: Optional[float] = None
    path_filter: Optional[dict[int, int]] = None  # atom id -> exact number of points in [0, t]

    # sde-sim
    keep_trajectories: int = Field(default=10, ge=0)

    @field_validator("schedule")
    @classmethod
    def _positive_schedule(cls, v):
        if v is not None and (not v or any(n <= 0 for n in v)):
            raise ValueError("schedule entries must be positive")
        return v


REQUIRED = {
    "admissibility": ("space", "window", "subset", "direction", "functional"),
    "derivative-check": ("model", "x", "t", "grid"),
    "tv-converge": ("model", "x", "t", "schedule"),
    "density-probe": ("model", "x", "t", "grid"),
    "singular-cf": (),
    "sde-sim": ("model", "x", "t"),
    "scan": ("model", "x", "t", "grid"),
}


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def validate_config(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise SchemaError(["<root>: the config must be a mapping"])
    try:
        cfg = ExperimentConfig(**data)
    except ValidationError as err:
        raise SchemaError(_format_errors(err)) from None
    missing = [f"{k}: required for kind {cfg.kind!r}" for k in REQUIRED[cfg.kind] if getattr(cfg, k) is None]
    if missing:
        raise SchemaError(missing)
    if cfg.model is not None and cfg.model.name not in CATALOG:
        raise UnresolvedReferenceError([f"model.name: {cfg.model.name!r} is not registered (known: {sorted(CATALOG)})"])
    return cfg


def parse_config(path: Union[str, Path], **overrides) -> ExperimentConfig:
    """Read and validate a YAML experiment file; ``overrides`` replace top-level keys."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise SchemaError([f"<file>: not valid YAML ({err})"]) from None
    data = dict(data or {})
    data.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(data)
