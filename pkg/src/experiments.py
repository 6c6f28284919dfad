"""Random-deployment Monte-Carlo experiments and the figure-reproduction presets."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog
import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from capacity import (
    CapacityReport,
    LineConfig,
    capacity_1d_mf,
    capacity_1d_optimal,
    capacity_2d,
    line_sweep,
    mf_per_user_capacity,
    sum_capacity_logdet,
)
from fields import NoiseModel, SurfaceSpec, Terminal, fraction_nu
from gram import DEFAULT_RANK_THRESHOLD, build_gram, effective_rank
from quadrature import QuadratureBudgetError, QuadratureConfig

logger = structlog.get_logger(__name__)

PATH = Path(__file__).parent / "config.yaml"

TRIAL_COLUMNS = ["trial", "K", "c_bar_opt", "c_bar_mf", "c_per_user_opt", "c_per_user_mf", "eff_rank"]
METRICS = ["K", "c_bar_opt", "c_bar_mf", "c_per_user_opt", "c_per_user_mf", "eff_rank"]
GEOMETRY_DIMS = {"line": 1, "plane": 2, "cube": 3}
VOLUME_UNITS = {"line": "m", "plane": "m^2", "cube": "m^3"}
RECEIVER_COLUMNS = {"optimal": "opt", "mf": "mf"}
FLOAT_FORMAT = "%.10g"


class UnknownPresetError(ValueError):
    """Raised when a figure preset name is not defined in config.yaml."""


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    geometry: Literal["line", "plane", "cube"]
    dims: Tuple[float, ...]
    density: float = Field(gt=0.0)
    surface_a: float = Field(default=math.inf, gt=0.0)
    surface_b: float = Field(default=math.inf, gt=0.0)
    lam: float = Field(gt=0.0)
    n0: float = Field(gt=0.0)
    power_mode: Literal["per_terminal", "per_volume"] = "per_volume"
    power: float = Field(ge=0.0)
    receiver: Literal["optimal", "mf"] = "optimal"
    trials: int = Field(default=100, ge=1)
    base_seed: int = Field(default=0, ge=0, lt=2**64)
    z0: Optional[float] = Field(default=None, gt=0.0)
    gram_mode: Literal["auto", "numeric", "sinc-approx"] = "auto"
    threshold: float = Field(default=DEFAULT_RANK_THRESHOLD, gt=0.0, lt=1.0)
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig)

    @model_validator(mode="after")
    def _check_dims(self) -> "ExperimentConfig":
        expected = GEOMETRY_DIMS[self.geometry]
        if len(self.dims) != expected:
            raise ValueError(f"{self.geometry} geometry needs {expected} dimension(s), got {len(self.dims)}.")
        if any(not (d > 0.0 and math.isfinite(d)) for d in self.dims):
            raise ValueError(f"Geometry dimensions must be positive and finite, got {self.dims}.")
        return self

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def expected_terminals(self) -> float:
        return self.density * self.volume

    @property
    def surface(self) -> SurfaceSpec:
        return SurfaceSpec(self.surface_a, self.surface_b)

    @property
    def terminal_power(self) -> float:
        return self.power if self.power_mode == "per_terminal" else self.power / self.density

    @property
    def power_density(self) -> float:
        """P-bar: transmit power per unit volume."""
        return self.power * self.density if self.power_mode == "per_terminal" else self.power

    @property
    def resolved_z0(self) -> float:
        # mid-geometry default for line and plane deployments
        return self.z0 if self.z0 is not None else 0.5 * self.dims[0]

    @property
    def resolved_gram_mode(self) -> str:
        if self.gram_mode != "auto":
            return self.gram_mode
        if self.geometry != "cube" and self.surface.is_infinite:
            return "sinc-approx"
        return "numeric"


@dataclass(frozen=True)
class Deployment:
    terminals: Tuple[Terminal, ...]
    geometry: str
    volume: float
    trial: int

    @property
    def size(self) -> int:
        return len(self.terminals)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: pd.DataFrame
    means: Dict[str, float] = field(default_factory=dict)
    stds: Dict[str, float] = field(default_factory=dict)

    def report(self, receiver: Optional[str] = None) -> CapacityReport:
        """Trial-mean capacities of one receiver; the configured one by default."""
        receiver = receiver or self.config.receiver
        if receiver not in RECEIVER_COLUMNS:
            raise ValueError(f"Unknown receiver {receiver!r}; expected one of {sorted(RECEIVER_COLUMNS)}.")
        suffix = RECEIVER_COLUMNS[receiver]
        space_normalized = self.means[f"c_bar_{suffix}"]
        return CapacityReport(
            receiver=receiver,
            per_user=self.means[f"c_per_user_{suffix}"],
            sum_capacity=space_normalized * self.config.volume,
            space_normalized=space_normalized,
            units=f"nats/s/Hz/{VOLUME_UNITS[self.config.geometry]}",
        )

    def summary(self) -> Dict[str, Any]:
        return {
            "config": self.config.model_dump(),
            "seed": self.config.base_seed,
            "expected_K": self.config.expected_terminals,
            "receiver": asdict(self.report()),
            "means": self.means,
            "stds": self.stds,
        }

    def write(self, out_dir: Path, name: str, extra: Optional[Dict[str, Any]] = None) -> List[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        trials_path = out_dir / f"{name}_trials.csv"
        summary_path = out_dir / f"{name}_summary.json"
        self.trials.to_csv(trials_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        write_json(summary_path, {**self.summary(), **(extra or {})})
        return [trials_path, summary_path]


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")


def trial_rng(base_seed: int, trial: int) -> np.random.Generator:
    """Independent stream per trial: SeedSequence entropy [base_seed, trial]."""
    return np.random.default_rng(np.random.SeedSequence([base_seed, trial]))


def sample_deployment(cfg: ExperimentConfig, trial: int) -> Deployment:
    rng = trial_rng(cfg.base_seed, trial)
    k = int(rng.poisson(cfg.expected_terminals))
    power = cfg.terminal_power
    if cfg.geometry == "line":
        (length,) = cfg.dims
        xs = rng.uniform(-0.5 * length, 0.5 * length, k)
        ys = np.zeros(k)
        zs = np.full(k, cfg.resolved_z0)
    elif cfg.geometry == "plane":
        width, height = cfg.dims
        xs = rng.uniform(-0.5 * width, 0.5 * width, k)
        ys = rng.uniform(-0.5 * height, 0.5 * height, k)
        zs = np.full(k, cfg.resolved_z0)
    else:
        width, height, depth = cfg.dims
        xs = rng.uniform(-0.5 * width, 0.5 * width, k)
        ys = rng.uniform(-0.5 * height, 0.5 * height, k)
        # the surface is the cube's z = 0 wall; depth - U[0, d) lies in (0, d]
        zs = depth - rng.uniform(0.0, depth, k)
    terminals = tuple(Terminal(float(x), float(y), float(z), power) for x, y, z in zip(xs, ys, zs))
    return Deployment(terminals=terminals, geometry=cfg.geometry, volume=cfg.volume, trial=trial)


def equispaced_line(count: int, delta_x: float, z: float, power: float) -> List[Terminal]:
    """`count` terminals spaced delta_x apart on y = 0, centred on the surface."""
    if count < 1:
        raise ValueError(f"Need at least one terminal, got {count}.")
    offset = 0.5 * (count - 1) * delta_x
    return [Terminal(i * delta_x - offset, 0.0, z, power) for i in range(count)]


def _run_trial(args: Tuple[ExperimentConfig, int]) -> Dict[str, float]:
    cfg, trial = args
    deployment = sample_deployment(cfg, trial)
    k = deployment.size
    row = {"trial": trial, "K": k, "c_bar_opt": 0.0, "c_bar_mf": 0.0, "c_per_user_opt": 0.0, "c_per_user_mf": 0.0, "eff_rank": 0}
    if k == 0 or cfg.terminal_power == 0.0:
        return row
    try:
        g = build_gram(deployment.terminals, cfg.surface, cfg.lam, cfg.quadrature, cfg.resolved_gram_mode)
    except QuadratureBudgetError as exc:
        raise QuadratureBudgetError(f"trial {trial}: {exc}", achieved_error=exc.achieved_error, trial=trial) from exc
    noise = NoiseModel(cfg.n0)
    opt = sum_capacity_logdet(g, noise, cfg.volume)
    mf = mf_per_user_capacity(g, noise, cfg.volume)
    row.update(
        c_bar_opt=opt.space_normalized,
        c_bar_mf=mf.space_normalized,
        c_per_user_opt=opt.per_user,
        c_per_user_mf=mf.per_user,
        eff_rank=effective_rank(g, cfg.threshold).effective_rank,
    )
    logger.debug("experiment.trial", trial=trial, K=k, c_bar_opt=row["c_bar_opt"])
    return row


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Runs every trial (in a process pool when threads > 1) and aggregates in trial order."""
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if threads > 1 and cfg.trials > 1:
        with Pool(processes=min(threads, cfg.trials)) as pool:
            rows = pool.map(_run_trial, jobs, chunksize=1)
    else:
        rows = [_run_trial(job) for job in jobs]
    table = pd.DataFrame(rows, columns=TRIAL_COLUMNS)
    ddof = 1 if len(table) > 1 else 0
    means = {m: float(table[m].mean()) for m in METRICS}
    stds = {m: float(table[m].std(ddof=ddof)) for m in METRICS}
    logger.info(
        "experiment.done",
        geometry=cfg.geometry,
        density=cfg.density,
        trials=cfg.trials,
        c_bar_opt=means["c_bar_opt"],
        c_bar_mf=means["c_bar_mf"],
    )
    return ExperimentResult(config=cfg, trials=table, means=means, stds=stds)


# ---------------------------------------------------------------------------
# Figure presets
# ---------------------------------------------------------------------------


def load_presets(path: Path = PATH) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def grid_values(grid: Union[Sequence[float], Dict[str, Any]]) -> List[float]:
    if isinstance(grid, dict):
        if grid.get("scale") == "log":
            values = np.geomspace(float(grid["start"]), float(grid["stop"]), int(grid["num"]))
        else:
            values = np.linspace(float(grid["start"]), float(grid["stop"]), int(grid["num"]))
        return [float(v) for v in values]
    return [float(v) for v in grid]


class LineSweepPreset(BaseModel):
    """Deterministic closed-form sweep over (lambda, delta_x) points."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    axis: Literal["theta", "lambda", "delta_x"]
    n0: float = Field(gt=0.0)
    nu: float = Field(gt=0.0, le=0.5)
    p_bar: float = Field(gt=0.0)
    lambdas: List[float]
    thetas: List[float] = Field(default_factory=list)
    delta_xs: List[float] = Field(default_factory=list)
    integer_points: int = Field(default=0, ge=0)

    def points(self) -> List[Tuple[float, float]]:
        pts: List[Tuple[float, float]] = []
        if self.axis == "theta":
            for lam in self.lambdas:
                pts.extend((lam, lam / (2.0 * t)) for t in self.thetas)
        elif self.axis == "lambda":
            lo, hi = min(self.lambdas), max(self.lambdas)
            for dx in self.delta_xs:
                # lambda = 2 dx / n puts 1/theta exactly on the integer n
                exact = [2.0 * dx / n for n in range(1, self.integer_points + 1)]
                grid = sorted(set(self.lambdas) | {v for v in exact if lo <= v <= hi})
                pts.extend((lam, dx) for lam in grid)
        else:
            lo, hi = min(self.delta_xs), max(self.delta_xs)
            for lam in self.lambdas:
                exact = [0.5 * n * lam for n in range(1, self.integer_points + 1)]
                grid = sorted(set(self.delta_xs) | {v for v in exact if lo <= v <= hi})
                pts.extend((lam, dx) for dx in grid)
        return pts


class MonteCarloPreset(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    experiment: ExperimentConfig
    densities: List[float]
    power_modes: List[Literal["per_terminal", "per_volume"]] = Field(default_factory=list)

    def configs(self) -> List[ExperimentConfig]:
        modes = self.power_modes or [self.experiment.power_mode]
        base = self.experiment.model_dump()
        return [ExperimentConfig(**{**base, "density": d, "power_mode": m}) for m in modes for d in self.densities]


Preset = Union[LineSweepPreset, MonteCarloPreset]


def figure_preset(
    name: str,
    *,
    seed: Optional[int] = None,
    trials: Optional[int] = None,
    dims: Optional[Sequence[float]] = None,
    densities: Optional[Sequence[float]] = None,
    path: Path = PATH,
) -> Preset:
    presets = load_presets(path).get("presets", {})
    if name not in presets:
        raise UnknownPresetError(f"Unknown preset {name!r}; known presets: {', '.join(sorted(presets))}.")
    raw = dict(presets[name])
    kind = raw.pop("kind")
    if kind == "line_sweep":
        for key in ("lambdas", "thetas", "delta_xs"):
            if key in raw:
                raw[key] = grid_values(raw[key])
        return LineSweepPreset(name=name, **raw)

    experiment = dict(raw.pop("experiment"))
    experiment.setdefault("density", 1.0)
    if seed is not None:
        experiment["base_seed"] = seed
    if trials is not None:
        experiment["trials"] = trials
    if dims is not None:
        experiment["dims"] = tuple(dims)
    raw["densities"] = grid_values(densities if densities is not None else raw["densities"])
    return MonteCarloPreset(name=name, experiment=ExperimentConfig(**experiment), **raw)


def ideal_curve(cfg: ExperimentConfig) -> Tuple[float, float]:
    """Closed-form optimal / MF space-normalized capacities for the same density, NaN when none applies."""
    if cfg.geometry == "line":
        nu = fraction_nu(cfg.surface, cfg.resolved_z0)
        line = LineConfig(delta_x=1.0 / cfg.density, lam=cfg.lam, nu=nu, n0=cfg.n0, p_bar=cfg.power_density)
        return line.per_meter(capacity_1d_optimal(line)), line.per_meter(capacity_1d_mf(line))
    if cfg.geometry == "plane" and cfg.power_density > 0.0:
        return capacity_2d(cfg.lam, cfg.power_density, cfg.n0), math.nan
    return math.nan, math.nan


@dataclass
class PresetOutput:
    name: str
    sweep: pd.DataFrame
    summary: Dict[str, Any]
    trials: Optional[pd.DataFrame] = None

    def write(self, out_dir: Path) -> List[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        if self.trials is not None:
            trials_path = out_dir / f"{self.name}_trials.csv"
            self.trials.to_csv(trials_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            paths.append(trials_path)
        sweep_path = out_dir / f"{self.name}_sweep.csv"
        self.sweep.to_csv(sweep_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        summary_path = out_dir / f"{self.name}_summary.json"
        write_json(summary_path, self.summary)
        return paths + [sweep_path, summary_path]


def run_preset(preset: Preset, threads: int = 1) -> PresetOutput:
    if isinstance(preset, LineSweepPreset):
        sweep = line_sweep(preset.points(), nu=preset.nu, n0=preset.n0, p_bar=preset.p_bar)
        return PresetOutput(name=preset.name, sweep=sweep, summary={"preset": preset.model_dump(), "points": len(sweep)})

    trial_frames = []
    rows = []
    for cfg in preset.configs():
        result = run_experiment(cfg, threads=threads)
        frame = result.trials.copy()
        frame.insert(0, "power_mode", cfg.power_mode)
        frame.insert(0, "density", cfg.density)
        trial_frames.append(frame)
        ideal_opt, ideal_mf = ideal_curve(cfg)
        row = {"density": cfg.density, "power_mode": cfg.power_mode, "expected_K": cfg.expected_terminals}
        for metric in METRICS:
            row[f"{metric}_mean"] = result.means[metric]
            row[f"{metric}_std"] = result.stds[metric]
        row["ideal_c_bar_opt"] = ideal_opt
        row["ideal_c_bar_mf"] = ideal_mf
        rows.append(row)
    sweep = pd.DataFrame(rows)
    summary = {
        "preset": preset.model_dump(),
        "seed": preset.experiment.base_seed,
        "gram_mode": preset.experiment.resolved_gram_mode,
        "points": len(sweep),
    }
    return PresetOutput(name=preset.name, sweep=sweep, summary=summary, trials=pd.concat(trial_frames, ignore_index=True))
