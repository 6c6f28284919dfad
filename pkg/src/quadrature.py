"""
Adaptive Gauss-Legendre panel quadrature for the surface correlation integrals.

Covers the finite-surface correlation phi_lk, the shared panel rule used to assemble
numeric Gram matrices, the infinite-line correlation g(delta_x) and its sinc model, and
the radial J0 integral behind the 2-D spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import j0

from fields import (
    SurfaceSpec,
    Terminal,
    Wavelength,
    field_amplitude,
    fraction_nu,
    power_density,
)

logger = structlog.get_logger(__name__)

AUDIT_COLUMNS = ["delta_x", "numeric_value", "sinc_value", "abs_error"]

Integrand = Callable[[np.ndarray], np.ndarray]


class QuadratureBudgetError(RuntimeError):
    """Raised when adaptive refinement cannot reach rel_tol within the depth/panel budget."""

    def __init__(self, message: str, *, achieved_error: float = math.nan, trial: Optional[int] = None):
        super().__init__(message)
        self.achieved_error = achieved_error
        self.trial = trial


class QuadratureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rel_tol: float = Field(1e-8, gt=0.0, lt=1.0)
    max_panel_fraction_of_lambda: float = Field(0.125, gt=0.0, le=0.5)
    line_truncation_tol: float = Field(1e-9, gt=0.0, lt=1.0)
    order: int = Field(6, ge=2, le=40)
    max_depth: int = Field(30, ge=0)
    max_panels: int = Field(4_000_000, ge=1)
    infinite_extent_factor: float = Field(50.0, gt=0.0)
    # upper bound on integrand values held in memory per evaluation chunk
    chunk_values: int = Field(1 << 21, ge=1024)


@dataclass(frozen=True)
class CorrelationValue:
    value: complex
    est_error: float
    surface: SurfaceSpec


@dataclass(frozen=True)
class LineCorrelation:
    value: float
    imag: float
    est_error: float
    x_max: float
    tail_bound: float

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class SurfaceRule:
    """Panel rule shared by every terminal of a deployment."""

    points: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N,)
    diagonal: np.ndarray  # per-terminal integral of |s_k|^2 on the rule
    diagonal_error: np.ndarray  # quadrature estimate plus the power outside a truncated domain
    surface: SurfaceSpec


@dataclass
class _Leaves:
    centers: np.ndarray  # (P, d)
    half: np.ndarray  # (P, d)
    values: np.ndarray  # (P, m)
    errors: np.ndarray  # (P, m)


@dataclass
class AuditReport:
    table: pd.DataFrame
    peak: float
    max_abs_deviation: float
    rms_deviation: float
    null_locations: List[float]
    null_offsets: List[float]

    def write_csv(self, path: Path) -> None:
        self.table.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


@lru_cache(maxsize=None)
def _tensor_rule(order: int, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    t, w = np.polynomial.legendre.leggauss(order)
    if dim == 1:
        return t[:, None], w
    tx, ty = np.meshgrid(t, t, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    return np.stack([tx.ravel(), ty.ravel()], axis=1), (wx * wy).ravel()


@lru_cache(maxsize=None)
def _child_offsets(dim: int) -> np.ndarray:
    grids = np.meshgrid(*([np.array([-0.5, 0.5])] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _children(centers: np.ndarray, half: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    offsets = _child_offsets(centers.shape[1])
    kids = centers[:, None, :] + half[:, None, :] * offsets[None, :, :]
    kid_half = np.repeat(half[:, None, :] * 0.5, len(offsets), axis=1)
    dim = centers.shape[1]
    return kids.reshape(-1, dim), kid_half.reshape(-1, dim)


def panel_nodes(centers: np.ndarray, half: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flattened Gauss-Legendre nodes and weights of a batch of panels."""
    t, w = _tensor_rule(order, centers.shape[1])
    points = centers[:, None, :] + half[:, None, :] * t[None, :, :]
    weights = np.prod(half, axis=1)[:, None] * w[None, :]
    return points.reshape(-1, centers.shape[1]), weights.ravel()


def _apply(integrand: Integrand, centers: np.ndarray, half: np.ndarray, n_out: int, cfg: QuadratureConfig) -> np.ndarray:
    per_panel = cfg.order ** centers.shape[1]
    step = max(1, cfg.chunk_values // (per_panel * n_out))
    sums = []
    for start in range(0, len(centers), step):
        c = centers[start:start + step]
        h = half[start:start + step]
        points, weights = panel_nodes(c, h, cfg.order)
        values = integrand(points) * weights[:, None]
        sums.append(values.reshape(len(c), per_panel, n_out).sum(axis=1))
    return np.concatenate(sums, axis=0)


def _estimate(integrand: Integrand, centers: np.ndarray, half: np.ndarray, n_out: int, cfg: QuadratureConfig):
    coarse = _apply(integrand, centers, half, n_out, cfg)
    kids_c, kids_h = _children(centers, half)
    fine = _apply(integrand, kids_c, kids_h, n_out, cfg)
    fine = fine.reshape(len(centers), -1, n_out).sum(axis=1)
    return fine, np.abs(fine - coarse)


def _adaptive(
    integrand: Integrand,
    centers: np.ndarray,
    half: np.ndarray,
    n_out: int,
    abs_floor: np.ndarray,
    cfg: QuadratureConfig,
    what: str,
) -> _Leaves:
    """
    Global adaptive refinement: every leaf carries a fine estimate (sum over its children)
    and an embedded error |fine - coarse|. Leaves whose error exceeds tol / n_leaves for any
    integrand are split until the summed error meets tol = max(rel_tol*|I|, abs_floor).
    """
    dim = centers.shape[1]
    values, errors = _estimate(integrand, centers, half, n_out, cfg)
    for depth in range(cfg.max_depth + 1):
        total = values.sum(axis=0)
        tol = np.maximum(cfg.rel_tol * np.abs(total), abs_floor)
        total_err = errors.sum(axis=0)
        if np.all(total_err <= tol):
            break
        split = np.any(errors > tol / len(centers), axis=1)
        n_after = len(centers) + int(split.sum()) * (2**dim - 1)
        if depth == cfg.max_depth or n_after > cfg.max_panels:
            achieved = float(np.max(total_err / np.maximum(np.abs(total), abs_floor)))
            raise QuadratureBudgetError(
                f"{what}: relative error {achieved:.3g} after {depth} refinements "
                f"({len(centers)} panels) exceeds rel_tol={cfg.rel_tol:g}.",
                achieved_error=achieved,
            )
        kids_c, kids_h = _children(centers[split], half[split])
        kid_values, kid_errors = _estimate(integrand, kids_c, kids_h, n_out, cfg)
        keep = ~split
        centers = np.concatenate([centers[keep], kids_c])
        half = np.concatenate([half[keep], kids_h])
        values = np.concatenate([values[keep], kid_values])
        errors = np.concatenate([errors[keep], kid_errors])
        logger.debug("quadrature.refine", what=what, depth=depth + 1, panels=len(centers))

    # canonical accumulation order, independent of the refinement history
    order = np.lexsort(centers.T[::-1])
    return _Leaves(centers[order], half[order], values[order], errors[order])


def effective_surface(
    surface: SurfaceSpec,
    terminals: Sequence[Terminal],
    lam: float,
    cfg: QuadratureConfig,
) -> SurfaceSpec:
    """Finite surface actually integrated; infinite extents are truncated around the terminals."""
    if surface.is_finite:
        return surface
    margin = cfg.infinite_extent_factor * max(max(t.z for t in terminals), float(lam))
    a = surface.half_width_a
    b = surface.half_height_b
    if math.isinf(a):
        a = max(abs(t.x) for t in terminals) + margin
    if math.isinf(b):
        b = max(abs(t.y) for t in terminals) + margin
    return SurfaceSpec(a, b)


def truncation_remainder(surface: SurfaceSpec, domain: SurfaceSpec, term: Terminal) -> float:
    """Captured power fraction lying outside the integrated domain; zero for finite surfaces."""
    if domain == surface:
        return 0.0
    outside = fraction_nu(surface, term.z, term.x, term.y) - fraction_nu(domain, term.z, term.x, term.y)
    return max(outside, 0.0)


def _surface_panels(surface: SurfaceSpec, lam: float, cfg: QuadratureConfig) -> Tuple[np.ndarray, np.ndarray]:
    edge = cfg.max_panel_fraction_of_lambda * lam
    a, b = surface.half_width_a, surface.half_height_b
    nx = max(1, math.ceil(2.0 * a / edge))
    ny = max(1, math.ceil(2.0 * b / edge))
    hx, hy = a / nx, b / ny
    cx = -a + hx * (2.0 * np.arange(nx) + 1.0)
    cy = -b + hy * (2.0 * np.arange(ny) + 1.0)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    half = np.tile(np.array([hx, hy]), (len(centers), 1))
    return centers, half


def correlation_integral(
    a: Terminal,
    b: Terminal,
    surface: SurfaceSpec,
    lam: float,
    cfg: Optional[QuadratureConfig] = None,
) -> CorrelationValue:
    """phi_ab = integral of s_b * conj(s_a) over the (effective) surface."""
    cfg = cfg or QuadratureConfig()
    lam = Wavelength(lam)
    domain = effective_surface(surface, [a, b], lam, cfg)
    centers, half = _surface_panels(domain, lam, cfg)

    def integrand(points: np.ndarray) -> np.ndarray:
        x, y = points[:, 0], points[:, 1]
        return (field_amplitude(b, x, y, lam) * np.conj(field_amplitude(a, x, y, lam)))[:, None]

    # Cauchy-Schwarz scale of |phi_ab|; sets the absolute floor near nulls
    scale = math.sqrt(fraction_nu(domain, a.z, a.x, a.y) * fraction_nu(domain, b.z, b.x, b.y))
    leaves = _adaptive(integrand, centers, half, 1, np.array([cfg.rel_tol * scale]), cfg, "correlation")
    value = complex(leaves.values[:, 0].sum())
    if a == b:
        value = complex(value.real, 0.0)
    # the part of the surface beyond the domain bounds |phi_ab| there by Cauchy-Schwarz
    tail = math.sqrt(truncation_remainder(surface, domain, a) * truncation_remainder(surface, domain, b))
    return CorrelationValue(value=value, est_error=float(leaves.errors[:, 0].sum()) + tail, surface=domain)


def surface_rule(
    terminals: Sequence[Terminal],
    surface: SurfaceSpec,
    lam: float,
    cfg: Optional[QuadratureConfig] = None,
) -> SurfaceRule:
    """
    One panel rule good for every terminal's signature.

    Refinement is driven by all diagonal integrands |s_k|^2 at once; by Cauchy-Schwarz the
    off-diagonal products are bounded by them, and the lambda-fraction panel cap resolves
    their phase. The rule returned is the parent Gauss rule of the final leaves, whose
    error is bounded by the embedded estimate.
    """
    cfg = cfg or QuadratureConfig()
    lam = Wavelength(lam)
    domain = effective_surface(surface, terminals, lam, cfg)
    centers, half = _surface_panels(domain, lam, cfg)
    positions = np.array([[t.x, t.y, t.z] for t in terminals], dtype=float)

    def integrand(points: np.ndarray) -> np.ndarray:
        return power_density(positions, points[:, 0], points[:, 1])

    floor = cfg.rel_tol * np.array([fraction_nu(domain, t.z, t.x, t.y) for t in terminals])
    leaves = _adaptive(integrand, centers, half, len(terminals), floor, cfg, "surface_rule")
    points, weights = panel_nodes(leaves.centers, leaves.half, cfg.order)
    tails = np.array([truncation_remainder(surface, domain, t) for t in terminals])
    logger.debug("quadrature.surface_rule", terminals=len(terminals), panels=len(leaves.centers), nodes=len(points))
    return SurfaceRule(
        points=points,
        weights=weights,
        diagonal=leaves.values.sum(axis=0).real,
        diagonal_error=leaves.errors.sum(axis=0) + tails,
        surface=domain,
    )


def _line_x_max(delta_x: float, z: float, tol: float) -> float:
    # |integrand| <= (4/3)^{3/2} |u|^{-3} for |u| >= |delta_x|, so both tails together
    # are below (4/3)^{3/2} / X^2; demand that to be tol * (2 / z^2).
    x_max = z * math.sqrt((4.0 / 3.0) ** 1.5 / (2.0 * tol))
    return max(x_max, abs(delta_x))


def _line_breakpoints(delta_x: float, z: float, lam: float, x_max: float, frac: float) -> np.ndarray:
    k = 2.0 * math.pi / lam
    h = 0.5 * delta_x
    u = 0.0
    points = [0.0]
    while u < x_max:
        d1 = math.hypot(z, u - h)
        d2 = math.hypot(z, u + h)
        rate = k * abs((u - h) / d1 - (u + h) / d2)
        cap_osc = frac * lam * max(1.0, k / rate) if rate > 0.0 else math.inf
        cap_amp = 0.5 * min(d1, d2)
        u = min(u + min(cap_osc, cap_amp), x_max)
        points.append(u)
    right = np.array(points)
    return np.concatenate([-right[:0:-1], right])


def line_correlation(
    delta_x: float,
    z: float,
    lam: float,
    cfg: Optional[QuadratureConfig] = None,
) -> LineCorrelation:
    """
    g(delta_x): the infinite-line correlation integral, truncated at |x| <= X_max.

    Integrated in the symmetric variable u = x + delta_x/2. The value is real by symmetry;
    the numerical imaginary part is kept as a diagnostic.
    """
    cfg = cfg or QuadratureConfig()
    lam = Wavelength(lam)
    if not z > 0.0:
        raise ValueError(f"Line correlation needs z > 0, got {z!r}.")
    x_max = _line_x_max(delta_x, z, cfg.line_truncation_tol)
    edges = _line_breakpoints(delta_x, z, lam, x_max, cfg.max_panel_fraction_of_lambda)
    centers = (0.5 * (edges[1:] + edges[:-1]))[:, None]
    half = (0.5 * np.diff(edges))[:, None]
    k = 2.0 * math.pi / lam
    h = 0.5 * delta_x

    def integrand(points: np.ndarray) -> np.ndarray:
        u = points[:, 0]
        d1sq = z * z + (u - h) ** 2
        d2sq = z * z + (u + h) ** 2
        # d1 - d2 without cancellation
        diff = -4.0 * u * h / (np.sqrt(d1sq) + np.sqrt(d2sq))
        return ((d1sq * d2sq) ** -0.75 * np.exp(-1j * k * diff))[:, None]

    peak = 2.0 / (z * z)
    leaves = _adaptive(integrand, centers, half, 1, np.array([cfg.rel_tol * peak]), cfg, "line_correlation")
    total = complex(leaves.values[:, 0].sum())
    return LineCorrelation(
        value=total.real,
        imag=total.imag,
        est_error=float(leaves.errors[:, 0].sum()),
        x_max=x_max,
        tail_bound=(4.0 / 3.0) ** 1.5 / x_max**2,
    )


def sinc_model(delta_x, z: float, lam: float):
    """(2 / z^2) * sinc(2 delta_x / lambda), numpy's normalised sinc."""
    lam = Wavelength(lam)
    if not z > 0.0:
        raise ValueError(f"Sinc model needs z > 0, got {z!r}.")
    value = 2.0 / (z * z) * np.sinc(2.0 * np.asarray(delta_x, dtype=float) / lam)
    return float(value) if np.ndim(value) == 0 else value


def approximation_audit(
    z: float,
    lam: float,
    grid: Sequence[float],
    cfg: Optional[QuadratureConfig] = None,
    n_nulls: int = 3,
) -> AuditReport:
    """Numerical g(delta_x) against the sinc model, with zero-crossing locations."""
    cfg = cfg or QuadratureConfig()
    lam = Wavelength(lam)
    deltas = np.asarray(list(grid), dtype=float)
    if deltas.size == 0:
        raise ValueError("Audit grid must not be empty.")

    numeric = np.array([line_correlation(d, z, lam, cfg).value for d in deltas])
    model = sinc_model(deltas, z, lam)
    model = np.atleast_1d(model)
    abs_error = np.abs(numeric - model)
    peak = 2.0 / (z * z)
    table = pd.DataFrame(
        {
            "delta_x": deltas,
            "numeric_value": numeric,
            "sinc_value": model,
            "abs_error": abs_error,
        },
        columns=AUDIT_COLUMNS,
    )

    nulls: List[float] = []
    for i in range(len(deltas) - 1):
        if len(nulls) >= n_nulls:
            break
        lo, hi = deltas[i], deltas[i + 1]
        if lo < 0.0 or hi <= lo:
            continue
        if numeric[i] == 0.0:
            nulls.append(float(lo))
        elif numeric[i] * numeric[i + 1] < 0.0:
            root = brentq(lambda d: line_correlation(d, z, lam, cfg).value, lo, hi, xtol=1e-9 * lam)
            nulls.append(float(root))
    half_wave = 0.5 * lam
    offsets = [abs(r - max(1, round(r / half_wave)) * half_wave) for r in nulls]

    report = AuditReport(
        table=table,
        peak=peak,
        max_abs_deviation=float(abs_error.max() / peak),
        rms_deviation=float(np.sqrt(np.mean(abs_error**2)) / peak),
        null_locations=nulls,
        null_offsets=offsets,
    )
    logger.info(
        "quadrature.audit",
        points=len(deltas),
        max_dev=report.max_abs_deviation,
        rms_dev=report.rms_deviation,
        nulls=len(nulls),
    )
    return report


def hankel_sinc_spectrum(s: float, lam: float, levels: int = 5, rel_tol: float = 1e-11) -> float:
    """
    pi * int_0^inf sinc(2r/lambda) r J0(2 pi s r) dr, evaluated numerically.

    r*sinc(2r/lambda) = lambda sin(kr) / (2 pi), so the integral is (lambda/2) * int sin(kr) J0(qr) dr,
    which converges only conditionally. It is regularised with exp(-eps r) and the eps -> 0
    limit taken by Richardson (Neville) extrapolation over eps = h, h/2, ..., h/2^(levels-1).
    """
    lam = Wavelength(lam)
    if s < 0.0:
        raise ValueError(f"Radial frequency must be >= 0, got {s!r}.")
    k = 2.0 * math.pi / lam
    q = 2.0 * math.pi * s
    gap = abs(k - q)
    if gap == 0.0:
        return math.inf
    h = 0.1 * min(gap, k)
    period = 2.0 * math.pi / k

    def regularised(eps: float) -> float:
        r_max = 40.0 / eps
        piece = 16.0 * period
        total = 0.0
        start = 0.0
        while start < r_max:
            stop = min(start + piece, r_max)
            value, _ = quad(
                lambda r: math.exp(-eps * r) * j0(q * r),
                start,
                stop,
                weight="sin",
                wvar=k,
                epsabs=rel_tol * 1e-3 / k,
                epsrel=rel_tol,
                limit=200,
            )
            total += value
            start = stop
        return total

    eps = [h / 2.0**i for i in range(levels)]
    table = [regularised(e) for e in eps]
    # Neville's scheme evaluated at eps = 0
    for j in range(1, levels):
        for i in range(levels - 1, j - 1, -1):
            table[i] = table[i] + (table[i] - table[i - 1]) * eps[i] / (eps[i - j] - eps[i])
    return 0.5 * lam * table[-1]
