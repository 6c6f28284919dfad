"""Flat run configuration: YAML file plus CLI overrides, validated before any computation."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field

from capacity import LineConfig
from experiments import PATH as PRESETS_PATH
from experiments import ExperimentConfig, grid_values, load_presets
from quadrature import QuadratureConfig


class ConfigError(ValueError):
    """Raised when a run config file is not a flat mapping or the flags conflict."""


class RunConfig(BaseModel):
    """Every key a run can set; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    # physics
    lam: Optional[float] = Field(default=None, gt=0.0)
    n0: Optional[float] = Field(default=None, gt=0.0)
    nu: Optional[float] = Field(default=None, gt=0.0, le=0.5)
    p_bar: Optional[float] = Field(default=None, ge=0.0)
    power: Optional[float] = Field(default=None, ge=0.0)
    delta_x: Optional[float] = Field(default=None, gt=0.0)
    theta: Optional[float] = Field(default=None, gt=0.0)
    z: Optional[float] = Field(default=None, gt=0.0)
    surface_a: float = Field(default=math.inf, gt=0.0)
    surface_b: float = Field(default=math.inf, gt=0.0)

    # deployments
    geometry: Optional[Literal["line", "plane", "cube"]] = None
    dims: Optional[Tuple[float, ...]] = None
    density: Optional[float] = Field(default=None, gt=0.0)
    power_mode: Literal["per_terminal", "per_volume"] = "per_volume"
    receiver: Literal["optimal", "mf"] = "optimal"
    trials: Optional[int] = Field(default=None, ge=1)
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    densities: Optional[List[float]] = None
    gram_mode: Literal["auto", "numeric", "sinc-approx"] = "auto"
    terminals: Optional[Path] = None

    # numerics
    rel_tol: float = Field(default=1e-8, gt=0.0, lt=1.0)
    max_panel_fraction_of_lambda: float = Field(default=0.125, gt=0.0, le=0.5)
    line_truncation_tol: float = Field(default=1e-9, gt=0.0, lt=1.0)
    max_depth: int = Field(default=30, ge=0)
    max_panels: int = Field(default=4_000_000, ge=1)
    infinite_extent_factor: float = Field(default=50.0, gt=0.0)
    threshold: float = Field(default=1e-3, gt=0.0, lt=1.0)
    grid_start: float = 0.0
    grid_stop: float = 2.0
    grid_points: int = Field(default=801, ge=1)
    slope_grid: List[float] = Field(default_factory=list)

    # output
    out: Path = Path("lis_out")
    threads: int = Field(default=1, ge=1)
    units: Literal["nats", "bits"] = "nats"

    def quadrature(self) -> QuadratureConfig:
        return QuadratureConfig(
            rel_tol=self.rel_tol,
            max_panel_fraction_of_lambda=self.max_panel_fraction_of_lambda,
            line_truncation_tol=self.line_truncation_tol,
            max_depth=self.max_depth,
            max_panels=self.max_panels,
            infinite_extent_factor=self.infinite_extent_factor,
        )

    def line(self) -> LineConfig:
        if self.delta_x is None and self.theta is None:
            raise ConfigError("Give delta_x or theta for a line configuration.")
        if self.delta_x is not None and self.theta is not None:
            raise ConfigError("Give only one of delta_x and theta.")
        delta_x = self.delta_x if self.delta_x is not None else _require(self, "lam") / (2.0 * self.theta)
        return LineConfig(
            delta_x=delta_x,
            lam=_require(self, "lam"),
            nu=_require(self, "nu"),
            n0=_require(self, "n0"),
            p_bar=self.p_bar,
            power=self.power,
        )

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            geometry=_require(self, "geometry"),
            dims=_require(self, "dims"),
            density=_require(self, "density"),
            surface_a=self.surface_a,
            surface_b=self.surface_b,
            lam=_require(self, "lam"),
            n0=_require(self, "n0"),
            power_mode=self.power_mode,
            power=self.power if self.power is not None else _require(self, "p_bar"),
            receiver=self.receiver,
            z0=self.z,
            gram_mode=self.gram_mode,
            threshold=self.threshold,
            quadrature=self.quadrature(),
            **self.monte_carlo(),
        )

    def monte_carlo(self) -> Dict[str, Any]:
        """trials and base_seed when set; unset keys keep the experiment defaults."""
        values = {"trials": self.trials, "base_seed": self.seed}
        return {k: v for k, v in values.items() if v is not None}

    def audit_grid(self) -> List[float]:
        if self.grid_points == 1:
            return [self.grid_start]
        step = (self.grid_stop - self.grid_start) / (self.grid_points - 1)
        return [self.grid_start + i * step for i in range(self.grid_points)]


def _require(cfg: RunConfig, name: str) -> Any:
    value = getattr(cfg, name)
    if value is None:
        raise ConfigError(f"Missing required setting {name!r} (config file key or --{name.replace('_', '-')}).")
    return value


def load_defaults(path: Path = PRESETS_PATH) -> Dict[str, Any]:
    defaults = dict(load_presets(path).get("defaults", {}))
    if "slope_grid" in defaults:
        defaults["slope_grid"] = grid_values(defaults["slope_grid"])
    return defaults


def read_config_file(path: Path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path} must hold a flat mapping of setting: value.")
    return data


def resolve_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """defaults (config.yaml) < config file < CLI flags; None flags are ignored."""
    values = load_defaults()
    if path is not None:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.model_validate(values)
