"""
Capacity and signal-dimension formulas.

1-D closed forms for terminals equi-spaced on a line in front of an infinite wall (folded
PSD, optimal and matched-filter capacities, interference power), the 2-D radial spectrum
and its capacity, and log-det / matched-filter capacities of finite Gram matrices.
All capacities are in nats; bits are a display conversion only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import quad

from fields import NoiseModel, Wavelength
from gram import GramMatrix

logger = structlog.get_logger(__name__)

LINE_SWEEP_COLUMNS = ["theta", "lambda", "delta_x", "c_opt", "c_mf", "c_bar_opt", "c_bar_mf"]
PLANE_SWEEP_COLUMNS = ["lambda", "p_bar_over_n0", "c_bar_2d", "slope"]
INTEGER_FOLD_TOL = 1e-12
SERIES_TERMS = 10**6
NATS_PER_BIT = math.log(2.0)


class SlopeFitError(ValueError):
    """Raised when the high-SNR grid cannot support a slope fit."""


class ZeroPowerUserError(ValueError):
    """Raised for matched-filter capacity of a user whose received power is zero."""


class LineConfig(BaseModel):
    """Equi-spaced terminals on a line; exactly one of p_bar (per meter) or power (per terminal)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    delta_x: float = Field(gt=0.0)
    lam: float = Field(gt=0.0)
    nu: float = Field(gt=0.0, le=0.5)
    n0: float = Field(gt=0.0)
    p_bar: Optional[float] = Field(default=None, ge=0.0)
    power: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def _one_power(self) -> "LineConfig":
        if (self.p_bar is None) == (self.power is None):
            raise ValueError("Give exactly one of p_bar (power per meter) or power (per terminal).")
        return self

    @classmethod
    def from_theta(cls, theta: float, lam: float, **kwargs) -> "LineConfig":
        return cls(delta_x=lam / (2.0 * theta), lam=lam, **kwargs)

    @property
    def theta(self) -> float:
        return self.lam / (2.0 * self.delta_x)

    @property
    def folds(self) -> Tuple[float, int]:
        """(alpha, beta) with 1/theta = beta + alpha."""
        return fold_counts(self.theta)

    @property
    def per_terminal_power(self) -> float:
        return self.power if self.power is not None else self.p_bar * self.delta_x

    @property
    def received_power(self) -> float:
        return self.per_terminal_power * self.nu

    def per_meter(self, value: float) -> float:
        return value / self.delta_x


@dataclass(frozen=True)
class FoldedPsd:
    """Two-level folded spectrum; levels are (amplitude, fraction of the band)."""

    theta: float
    received_power: float
    levels: Tuple[Tuple[float, float], ...]

    def evaluate(self, f):
        """G(f) on the normalised band f in [-1/2, 1/2], by counting covering rectangles."""
        f = np.asarray(f, dtype=float)
        half = 0.5 / self.theta
        k_min = np.floor(f - half) + 1.0
        k_max = np.ceil(f + half) - 1.0
        count = np.maximum(k_max - k_min + 1.0, 0.0)
        value = count * self.theta * self.received_power
        return float(value) if value.ndim == 0 else value

    def band_average(self) -> float:
        return sum(amp * frac for amp, frac in self.levels)


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail_bound: float
    terms: int


@dataclass(frozen=True)
class CapacityReport:
    receiver: str
    per_user: Optional[float] = None
    sum_capacity: Optional[float] = None
    space_normalized: Optional[float] = None
    per_user_values: Tuple[float, ...] = ()
    units: str = "nats/s/Hz"

    def in_bits(self) -> "CapacityReport":
        def conv(v):
            return None if v is None else v / NATS_PER_BIT

        return replace(
            self,
            per_user=conv(self.per_user),
            sum_capacity=conv(self.sum_capacity),
            space_normalized=conv(self.space_normalized),
            per_user_values=tuple(v / NATS_PER_BIT for v in self.per_user_values),
            units=self.units.replace("nats", "bits"),
        )


def fold_counts(theta: float) -> Tuple[float, int]:
    if not theta > 0.0:
        raise ValueError(f"theta must be > 0, got {theta!r}.")
    inv = 1.0 / theta
    nearest = round(inv)
    if nearest >= 1 and abs(inv - nearest) < INTEGER_FOLD_TOL:
        return 0.0, int(nearest)
    beta = math.floor(inv)
    return inv - beta, int(beta)


def folded_psd(cfg: LineConfig) -> FoldedPsd:
    alpha, beta = cfg.folds
    unit = cfg.theta * cfg.received_power
    if alpha == 0.0:
        levels = ((beta * unit, 1.0),)
    else:
        levels = (((beta + 1) * unit, alpha), (beta * unit, 1.0 - alpha))
    return FoldedPsd(theta=cfg.theta, received_power=cfg.received_power, levels=levels)


def capacity_1d_optimal(cfg: LineConfig) -> float:
    """Per-terminal capacity of the optimal receiver; divide by delta_x (cfg.per_meter) for C-bar."""
    alpha, beta = cfg.folds
    snr = cfg.theta * cfg.received_power / cfg.n0
    if alpha == 0.0:
        return math.log1p(beta * snr)
    return alpha * math.log1p((beta + 1) * snr) + (1.0 - alpha) * math.log1p(beta * snr)


def capacity_1d_optimal_numeric(cfg: LineConfig) -> float:
    """log(1 + G(f)/N0) integrated over the band, with G from fold counting."""
    psd = folded_psd(cfg)
    half = 0.5 / cfg.theta
    edges = set()
    for k in range(math.floor(-0.5 - half) - 1, math.ceil(0.5 + half) + 2):
        for edge in (k - half, k + half):
            if -0.5 < edge < 0.5:
                edges.add(edge)
    value, _ = quad(
        lambda f: math.log1p(psd.evaluate(f) / cfg.n0),
        -0.5,
        0.5,
        points=sorted(edges) or None,
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    return value


def interference_power(cfg: LineConfig) -> float:
    alpha, beta = cfg.folds
    if alpha == 0.0:
        return 0.0
    theta = cfg.theta
    return cfg.received_power * (theta**2 * (beta**2 + 2.0 * alpha * beta + alpha) - 1.0)


def interference_series(cfg: LineConfig, terms: int = SERIES_TERMS) -> SeriesResult:
    """(1/(P nu)) * sum over 0 < |l| <= terms of |P nu sinc(l/theta)|^2, with its tail bound."""
    lags = np.arange(1, terms + 1, dtype=float)
    pnu = cfg.received_power
    total = 2.0 * pnu * float(np.sum(np.sinc(lags / cfg.theta) ** 2))
    tail = 2.0 * pnu * cfg.theta**2 / (math.pi**2 * terms)
    return SeriesResult(value=total, tail_bound=tail, terms=terms)


def capacity_1d_mf(cfg: LineConfig) -> float:
    return math.log1p(cfg.received_power / (cfg.n0 + interference_power(cfg)))


def dims_1d(lam: float, theta: float) -> float:
    lam = Wavelength(lam)
    if not theta > 0.0:
        raise ValueError(f"theta must be > 0, got {theta!r}.")
    return 2.0 / lam if theta >= 1.0 else 2.0 * theta / lam


def psd_2d(s: float, lam: float) -> float:
    """Radial spectrum G(s); math.inf marks the singular boundary s = 1/lambda."""
    lam = Wavelength(lam)
    if s < 0.0:
        raise ValueError(f"Radial frequency must be >= 0, got {s!r}.")
    cutoff = 1.0 / lam
    if s > cutoff:
        return 0.0
    if s == cutoff:
        return math.inf
    return lam / (4.0 * math.pi) / math.sqrt(cutoff**2 - s**2)


def capacity_2d(lam: float, p_bar: float, n0: float) -> float:
    lam = Wavelength(lam)
    NoiseModel(n0)
    if not p_bar > 0.0:
        raise ValueError(f"p_bar must be > 0, got {p_bar!r}.")
    n = lam * p_bar / (4.0 * math.pi * n0)
    x = n * lam
    return math.pi * (math.log1p(x) / lam**2 + n * n * (math.log(x) - math.log1p(x)) + n / lam)


def capacity_2d_numeric(lam: float, p_bar: float, n0: float) -> float:
    """2 pi * int_0^{1/lambda} s log(1 + p_bar G(s)/N0) ds with s = sin(phi)/lambda."""
    lam = Wavelength(lam)
    NoiseModel(n0)
    gain = p_bar * lam**2 / (4.0 * math.pi * n0)

    def integrand(phi: float) -> float:
        c = math.cos(phi)
        if c <= 0.0:
            return 0.0
        return math.sin(phi) * c * math.log1p(gain / c)

    value, _ = quad(integrand, 0.0, 0.5 * math.pi, epsabs=0.0, epsrel=1e-12, limit=200)
    return 2.0 * math.pi * value / lam**2


def dims_2d(lam: float) -> float:
    lam = Wavelength(lam)
    return math.pi / lam**2


def highsnr_slope(capacity_fn: Callable[[float], float], snr_grid: Sequence[float]) -> float:
    """Least-squares slope of C-bar against log(P-bar/N0) over the top decade of the grid."""
    snr = np.asarray(list(snr_grid), dtype=float)
    if snr.size < 2:
        raise SlopeFitError("High-SNR slope needs at least two grid points.")
    if np.any(snr <= 0.0) or np.any(np.diff(snr) <= 0.0):
        raise SlopeFitError("High-SNR grid must be positive and strictly increasing.")
    if snr[-1] < 1e6:
        raise SlopeFitError(f"High-SNR grid must reach 1e6, largest point is {snr[-1]:g}.")
    top = snr[snr >= snr[-1] / 10.0]
    if top.size < 2:
        raise SlopeFitError("Fewer than two grid points in the top decade.")
    values = np.array([capacity_fn(float(v)) for v in top])
    design = np.column_stack([np.log(top), np.ones_like(top)])
    coef, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < 2:
        raise SlopeFitError("Ill-conditioned slope fit over the top decade.")
    return float(coef[0])


def sum_capacity_logdet(g: GramMatrix, noise: NoiseModel, volume: Optional[float] = None) -> CapacityReport:
    """log det(I + G/N0) through the eigenvalues of the Hermitized G; negatives clip to zero."""
    eig = np.clip(g.eigenvalues(), 0.0, None)
    total = float(np.sum(np.log1p(eig / noise.n0)))
    return CapacityReport(
        receiver="optimal",
        per_user=total / g.size,
        sum_capacity=total,
        space_normalized=None if volume is None else total / volume,
    )


def mf_per_user_capacity(g: GramMatrix, noise: NoiseModel, volume: Optional[float] = None) -> CapacityReport:
    """C_k = log(1 + G_kk^2 / (N0 G_kk + sum_{l != k} |G_kl|^2))."""
    h = g.hermitized()
    diag = h.diagonal().real
    zero = np.flatnonzero(diag <= 0.0)
    if zero.size:
        raise ZeroPowerUserError(f"User {int(zero[0])} has zero received power; MF capacity undefined.")
    cross = np.abs(h) ** 2
    np.fill_diagonal(cross, 0.0)
    values = np.log1p(diag**2 / (noise.n0 * diag + cross.sum(axis=1)))
    total = float(values.sum())
    return CapacityReport(
        receiver="mf",
        per_user=float(values.mean()),
        sum_capacity=total,
        space_normalized=None if volume is None else total / volume,
        per_user_values=tuple(float(v) for v in values),
    )


def line_sweep(points: Iterable[Tuple[float, float]], nu: float, n0: float, p_bar: float) -> pd.DataFrame:
    """Closed-form optimal / MF capacities at each (lambda, delta_x) point."""
    rows: List[dict] = []
    for lam, delta_x in points:
        cfg = LineConfig(delta_x=delta_x, lam=lam, nu=nu, n0=n0, p_bar=p_bar)
        c_opt = capacity_1d_optimal(cfg)
        c_mf = capacity_1d_mf(cfg)
        rows.append(
            {
                "theta": cfg.theta,
                "lambda": lam,
                "delta_x": delta_x,
                "c_opt": c_opt,
                "c_mf": c_mf,
                "c_bar_opt": cfg.per_meter(c_opt),
                "c_bar_mf": cfg.per_meter(c_mf),
            }
        )
    return pd.DataFrame(rows, columns=LINE_SWEEP_COLUMNS)


def plane_sweep(lams: Sequence[float], snrs: Sequence[float], slope_grid: Sequence[float]) -> pd.DataFrame:
    """2-D capacity at N0 = 1 over P-bar/N0, with the fitted high-SNR slope per wavelength."""
    rows: List[dict] = []
    for lam in lams:
        slope = highsnr_slope(lambda r, lam=lam: capacity_2d(lam, r, 1.0), slope_grid)
        for snr in snrs:
            rows.append({"lambda": lam, "p_bar_over_n0": snr, "c_bar_2d": capacity_2d(lam, snr, 1.0), "slope": slope})
    logger.debug("capacity.plane_sweep", wavelengths=len(lams), points=len(rows))
    return pd.DataFrame(rows, columns=PLANE_SWEEP_COLUMNS)
