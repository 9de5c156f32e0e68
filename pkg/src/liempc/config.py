"""Experiment configuration: YAML file validated against a strict schema."""
from __future__ import annotations

import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

ControllerKind = Literal["proposed", "nmpc", "nmpc-simple"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WeightsBlock(_Strict):
    q_diag: List[float] = Field(min_length=12, max_length=12)
    r_diag: List[float] = Field(min_length=1)
    p_scale: float = Field(10.0, ge=0.0)

    @field_validator("q_diag", "r_diag")
    @classmethod
    def _nonneg(cls, v):
        if any(x < 0 for x in v):
            raise ValueError("weights must be non-negative")
        return v

    @field_validator("r_diag")
    @classmethod
    def _pos(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("input weights must be positive")
        return v

    def build(self):
        from .errmpc import MpcWeights
        return MpcWeights.from_diagonals(self.q_diag, self.r_diag, self.p_scale)


class HorizonBlock(_Strict):
    steps: int = Field(100, ge=1)
    dt_s: float = Field(0.05, gt=0.0)


class SolverBlock(_Strict):
    qp_tol: float = Field(1e-6, gt=0.0)
    qp_max_iter: int = Field(4000, ge=1)
    sqp_max_iter: int = Field(10, ge=1)
    sqp_step_tol_n: float = Field(1e-3, gt=0.0)
    line_search_backtrack: float = Field(0.5, gt=0.0, lt=1.0)
    line_search_min_step: float = Field(1e-3, gt=0.0, le=1.0)


class ControllerBlock(_Strict):
    kind: ControllerKind = "proposed"
    weights: Optional[WeightsBlock] = None
    nmpc_weights: Optional[WeightsBlock] = None
    horizon: HorizonBlock = HorizonBlock()
    constrained: bool = False
    solver: SolverBlock = SolverBlock()


class EpisodeBlock(_Strict):
    profile: Literal["turning", "zigzag"] = "turning"
    duration_s: float = Field(60.0, gt=0.0)
    control_rate_hz: float = Field(20.0, gt=0.0)
    plant_rate_hz: float = Field(80.0, gt=0.0)
    init_radius_m: float = Field(5.0, ge=0.0)
    heading_range_rad: Tuple[float, float] = (-math.pi, math.pi)
    current_speed_mps: float = Field(0.0, ge=0.0)
    current_direction_rad: float = 0.0
    seed: int = Field(0, ge=0)
    episodes: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _rates(self):
        ratio = self.plant_rate_hz / self.control_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("plant_rate_hz must be an integer multiple of control_rate_hz")
        lo, hi = self.heading_range_rad
        if lo > hi:
            raise ValueError("heading_range_rad must be (low, high)")
        return self


class SweepBlock(_Strict):
    current_speeds_mps: List[float] = Field(default=[0.0, 0.1, 0.2, 0.3, 0.4, 0.5], min_length=1)
    angles: int = Field(12, ge=1)
    episodes: int = Field(1, ge=1)
    controllers: List[ControllerKind] = Field(default=["proposed"], min_length=1)

    @field_validator("current_speeds_mps")
    @classmethod
    def _speeds(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("current speeds must be non-negative")
        return v


class ExperimentConfig(_Strict):
    vessel: str = "otter"
    controller: ControllerBlock = ControllerBlock()
    episode: EpisodeBlock = EpisodeBlock()
    sweep: SweepBlock = SweepBlock()
    output_dir: Optional[str] = None

    def episode_config(self, kind=None, seed=None):
        from .sim import EpisodeConfig
        e = self.episode
        return EpisodeConfig(profile=e.profile, duration=e.duration_s,
                             control_rate=e.control_rate_hz, plant_rate=e.plant_rate_hz,
                             init_radius=e.init_radius_m,
                             heading_range=tuple(e.heading_range_rad),
                             current_speed=e.current_speed_mps,
                             current_direction=e.current_direction_rad,
                             controller=kind or self.controller.kind,
                             seed=e.seed if seed is None else seed)

    def controller_spec(self, kind=None):
        from .errmpc import HorizonConfig
        from .nmpc import NlpConfig
        from .sim import ControllerSpec
        c = self.controller
        kind = kind or c.kind
        horizon = HorizonConfig(c.horizon.steps, c.horizon.dt_s)
        if abs(c.horizon.dt_s * self.episode.control_rate_hz - 1.0) > 1e-9:
            raise ConfigError("controller horizon dt_s must equal 1 / control_rate_hz")
        if kind == "proposed":
            opts = {"horizon": horizon, "constrained": c.constrained,
                    "tol": c.solver.qp_tol, "max_iter": c.solver.qp_max_iter}
            if c.weights is not None:
                opts["weights"] = c.weights.build()
        else:
            s = c.solver
            opts = {"horizon": horizon,
                    "config": NlpConfig(max_iter=s.sqp_max_iter, tol=s.sqp_step_tol_n,
                                        backtrack=s.line_search_backtrack,
                                        min_step=s.line_search_min_step,
                                        include_restoring=kind == "nmpc")}
            if c.nmpc_weights is not None:
                opts["weights"] = c.nmpc_weights.build()
        return ControllerSpec(kind, opts)


def parse_config(text, source="<string>"):
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{source}: {'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("\n".join(lines)) from exc


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def dump_config(cfg):
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
