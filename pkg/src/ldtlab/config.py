"""Experiment configuration: a strict JSON schema and builders for its parts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import systems as S
from .bounds import FAMILIES


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSpec(_Strict):
    kind: Literal["tent", "doubling", "identity", "piecewise_affine", "finite_chain", "iid"]
    matrix: Optional[List[List[float]]] = None
    stationary: Optional[List[float]] = None
    breakpoints: Optional[List[float]] = None
    slopes: Optional[List[float]] = None
    intercepts: Optional[List[float]] = None
    density_edges: Optional[List[float]] = None
    density_values: Optional[List[float]] = None

    @model_validator(mode="after")
    def _needs(self):
        if self.kind == "finite_chain" and self.matrix is None:
            raise ValueError("finite_chain needs 'matrix'")
        if self.kind == "piecewise_affine" and None in (self.breakpoints, self.slopes, self.intercepts):
            raise ValueError("piecewise_affine needs 'breakpoints', 'slopes' and 'intercepts'")
        return self

    def build(self) -> S.MarkovSystem:
        dens = None
        if self.density_edges is not None:
            dens = S.PiecewiseConstantDensity(tuple(self.density_edges), tuple(self.density_values or ()))
        if self.kind == "tent":
            return S.build_tent_system()
        if self.kind == "doubling":
            return S.build_doubling_system()
        if self.kind == "identity":
            return S.build_identity_system()
        if self.kind == "piecewise_affine":
            return S.build_map_system(self.breakpoints, self.slopes, self.intercepts, dens)
        if self.kind == "iid":
            return S.build_iid_system(dens)
        return S.build_finite_chain(self.matrix, self.stationary)


class ObservableSpec(_Strict):
    kind: Literal["tabular", "log_distance", "log", "affine", "indicator", "constant"]
    values: Optional[List[float]] = None
    z: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    c: Optional[float] = None
    scale: float = 1.0
    shift: float = 0.0
    center: bool = False

    @model_validator(mode="after")
    def _needs(self):
        need = {"tabular": ["values"], "log_distance": ["z"], "affine": ["a", "b"],
                "indicator": ["lo", "hi"], "constant": ["c"], "log": []}[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"{self.kind} observable needs {', '.join(missing)}")
        return self

    def build(self, system: Optional[S.MarkovSystem] = None) -> S.Observable:
        if self.kind == "tabular":
            obs = S.tabular(self.values)
        elif self.kind == "log_distance":
            obs = S.log_distance(self.z)
        elif self.kind == "log":
            obs = S.log_x()
        elif self.kind == "affine":
            obs = S.affine(self.a, self.b)
        elif self.kind == "indicator":
            obs = S.indicator(self.lo, self.hi)
        else:
            obs = S.constant(self.c)
        if self.scale != 1.0 or self.shift != 0.0:
            obs = S.Observable(obs.kind, obs.params, obs.scale * self.scale,
                               obs.shift * self.scale + self.shift)
        if self.center:
            if system is None:
                raise ValueError("centering needs the system")
            obs = S.center(obs, system)
        return obs


class GridSpec(_Strict):
    n: List[int] = Field(min_length=1)
    eps: List[float] = Field(min_length=1)

    @field_validator("n")
    @classmethod
    def _n_positive(cls, v):
        if any(x < 1 for x in v):
            raise ValueError("every n must be a positive integer")
        return v

    @field_validator("eps")
    @classmethod
    def _eps_positive(cls, v):
        if any(not x > 0 for x in v):
            raise ValueError("every eps must be positive")
        return v

    def points(self):
        return [(n, e) for n in self.n for e in self.eps]


class EventSpec(_Strict):
    """Deviation event |S_n/n - about| > eps + margin."""

    about: Union[Literal["mean"], float] = "mean"
    margin: float = 0.0


class BoundSpec(_Strict):
    family: Literal["azuma_hoeffding", "bounded_ldt", "unbounded_ldt", "tent_corollary", "expanding_ldt"]
    constants: Dict[str, float] = Field(default_factory=dict)
    c_scale: float = Field(default=1.0, gt=0)
    two_sided: bool = False

    def missing_constants(self, derivable=()) -> list:
        return [k for k in FAMILIES[self.family][1] if k not in self.constants and k not in derivable]


class UlamSpec(_Strict):
    n_cells: int = Field(default=256, ge=2)


class PoissonSpec(_Strict):
    tol: float = Field(default=1e-12, gt=0)
    method: Literal["series", "direct"] = "series"


class MixingSpec(_Strict):
    n_max: int = Field(default=50, ge=1)
    test_vectors: Optional[List[List[float]]] = None


class TailsSpec(_Strict):
    samples: int = Field(default=10**6, ge=1000)
    quantile_floor: float = Field(default=0.5, gt=0, lt=1)
    levels: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0, 8.0])
    control_level: float = Field(default=2.0, gt=0)
    control_n_max: int = Field(default=200, ge=1)


class ExperimentConfig(_Strict):
    system: SystemSpec
    observable: Optional[ObservableSpec] = None
    grid: Optional[GridSpec] = None
    trials: int = Field(default=1000, ge=100)
    master_seed: int = Field(default=0, ge=0, lt=2**64)
    ci_level: float = Field(default=0.99, gt=0, lt=1)
    event: EventSpec = Field(default_factory=EventSpec)
    bound: Optional[BoundSpec] = None
    ulam: UlamSpec = Field(default_factory=UlamSpec)
    poisson: PoissonSpec = Field(default_factory=PoissonSpec)
    mixing: MixingSpec = Field(default_factory=MixingSpec)
    tails: TailsSpec = Field(default_factory=TailsSpec)
    output: str = "ldtlab"

    @model_validator(mode="after")
    def _bound_constants(self):
        if self.bound is not None:
            derivable = ("sup_phi", "sup_psi") if (self.bound.family == "bounded_ldt"
                                                   and self.system.kind == "finite_chain") else ()
            missing = self.bound.missing_constants(derivable)
            if missing:
                raise ValueError(f"bound family {self.bound.family} needs constant(s): {', '.join(missing)}")
        return self


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return ExperimentConfig.model_validate_json(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return cfg.model_dump_json(indent=2)


def json_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def write_schema(path) -> None:
    Path(path).write_text(json.dumps(json_schema(), indent=2) + "\n")
