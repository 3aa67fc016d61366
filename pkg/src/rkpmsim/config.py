"""Scene configuration: a versioned YAML (or JSON) document validated by pydantic."""

from __future__ import annotations

from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = 1

Vec3 = Tuple[float, float, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BoxShape(_Model):
    kind: Literal["box"] = "box"
    lo: Vec3 = (0.0, 0.0, 0.0)
    hi: Vec3 = (1.0, 1.0, 1.0)

    @model_validator(mode="after")
    def _extent(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("box must have positive extent on every axis")
        return self


class SphereShape(_Model):
    kind: Literal["sphere"] = "sphere"
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(0.5, gt=0)


class MeshShape(_Model):
    """Closed triangle mesh read from a Wavefront OBJ file."""

    kind: Literal["mesh"] = "mesh"
    path: str


class CloudShape(_Model):
    """Point cloud used directly as integration points."""

    kind: Literal["cloud"] = "cloud"
    path: str


Shape = Annotated[Union[BoxShape, SphereShape, MeshShape, CloudShape], Field(discriminator="kind")]


class MaterialParams(_Model):
    young_modulus: float = Field(5e6, gt=0)
    poisson_ratio: float = Field(0.45, gt=0, lt=0.5)
    density: float = Field(1e3, gt=0)


class BoxRegionConfig(MaterialParams):
    kind: Literal["box"] = "box"
    lo: Vec3
    hi: Vec3


class ShellRegionConfig(MaterialParams):
    kind: Literal["shell"] = "shell"
    center: Vec3 = (0.0, 0.0, 0.0)
    r_inner: float = Field(ge=0)
    r_outer: float = Field(gt=0)


Region = Annotated[Union[BoxRegionConfig, ShellRegionConfig], Field(discriminator="kind")]


class MaterialConfig(MaterialParams):
    regions: List[Region] = Field(default_factory=list)


class SamplingConfig(_Model):
    integration_points: int = Field(2000, ge=8)
    kernels: int = Field(200, ge=4)


class Selector(_Model):
    """Either an axis-aligned box or explicit integration-point indices."""

    lo: Optional[Vec3] = None
    hi: Optional[Vec3] = None
    indices: Optional[List[int]] = None

    @model_validator(mode="after")
    def _one_kind(self):
        has_box = self.lo is not None and self.hi is not None
        if has_box == (self.indices is not None):
            raise ValueError("selector needs either lo/hi or indices")
        return self


class FixRegion(_Model):
    kind: Literal["fix_region"] = "fix_region"
    select: Selector


class TwistHandle(_Model):
    kind: Literal["twist_handle"] = "twist_handle"
    select: Selector
    axis_point: Vec3
    axis_dir: Vec3 = (1.0, 0.0, 0.0)
    total_angle_deg: float = 720.0
    ramp_time: Optional[float] = Field(None, gt=0, description="defaults to the scene duration")
    free_axis: bool = Field(False, description="let handle points slide along the twist axis")


class PullPoints(_Model):
    kind: Literal["pull_points"] = "pull_points"
    select: Selector
    velocity: Vec3


BoundaryCondition = Annotated[Union[FixRegion, TwistHandle, PullPoints], Field(discriminator="kind")]


class ContactPlane(_Model):
    normal: Vec3 = (0.0, 1.0, 0.0)
    offset: float = 0.0
    stiffness: Optional[float] = Field(None, gt=0)


class SolverConfig(_Model):
    tolerance: float = Field(1e-8, gt=0)
    max_iterations: int = Field(20, ge=1)
    penalty: Optional[float] = Field(None, gt=0)
    psd_projection: bool = True
    dense_basis: bool = False


class SceneConfig(_Model):
    version: Literal[1] = SCHEMA_VERSION
    name: str = "scene"
    shape: Shape = Field(default_factory=BoxShape)
    material: MaterialConfig = Field(default_factory=MaterialConfig)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    modes: int = Field(16, ge=1)
    timestep: float = Field(0.01, gt=0)
    duration: float = Field(1.0, gt=0)
    gravity: Vec3 = (0.0, -9.8, 0.0)
    boundary_conditions: List[BoundaryCondition] = Field(default_factory=list)
    contact: Optional[ContactPlane] = None
    solver: SolverConfig = Field(default_factory=SolverConfig)
    seed: int = 0

    @field_validator("duration")
    @classmethod
    def _finite(cls, v):
        if v != v or v == float("inf"):
            raise ValueError("duration must be finite")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if self.duration < self.timestep * (1 - 1e-9):
            raise ValueError("duration must be >= timestep")
        if self.modes + 1 > self.sampling.kernels:
            raise ValueError("modes + 1 must not exceed the kernel count")
        if self.sampling.kernels > self.sampling.integration_points and self.shape.kind != "cloud":
            raise ValueError("more kernels than integration points requested")
        return self

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.duration / self.timestep)))


def bundled_scene(name: str) -> Path:
    """Path of a scene shipped with the package, e.g. ``beam_bend``."""
    from importlib.resources import files

    path = Path(str(files("rkpmsim") / "scenes" / f"{name.removesuffix('.yaml')}.yaml"))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scene named {name!r}")
    return path


def load_scene(path) -> SceneConfig:
    """Parse a scene file; relative shape paths resolve against the file's folder."""
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh)
    cfg = SceneConfig.model_validate(data if data is not None else {})
    if cfg.shape.kind in ("mesh", "cloud") and not Path(cfg.shape.path).is_absolute():
        cfg.shape.path = str((path.parent / cfg.shape.path).resolve())
    return cfg


def dump_scene(cfg: SceneConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def save_scene(cfg: SceneConfig, path) -> None:
    Path(path).write_text(dump_scene(cfg))
