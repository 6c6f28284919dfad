"""Free-space LoS field model: surface geometry, terminal signatures, captured power."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import brentq

INF = math.inf
FIELD_NORMALIZATION = 1.0 / (2.0 * math.sqrt(math.pi))


class GeometryError(ValueError):
    """Raised when a wavelength, surface, terminal or noise model is outside the model domain."""


class Wavelength(float):
    """Carrier wavelength in meters; a float that refuses non-positive values."""

    def __new__(cls, meters: float) -> "Wavelength":
        value = float(meters)
        if not value > 0.0 or math.isinf(value):
            raise GeometryError(f"Wavelength must be a positive finite length, got {meters!r}.")
        return super().__new__(cls, value)


@dataclass(frozen=True)
class SurfaceSpec:
    """Rectangular surface [-A, A] x [-B, B] at z = 0; either half-extent may be INF."""

    half_width_a: float = INF
    half_height_b: float = INF

    def __post_init__(self) -> None:
        for name in ("half_width_a", "half_height_b"):
            value = getattr(self, name)
            if not value > 0.0:
                raise GeometryError(f"Surface {name} must be > 0, got {value!r}.")

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.half_width_a) and math.isfinite(self.half_height_b)

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.half_width_a) and math.isinf(self.half_height_b)

    @property
    def area(self) -> float:
        return 4.0 * self.half_width_a * self.half_height_b


@dataclass(frozen=True)
class Terminal:
    x: float
    y: float
    z: float
    power: float = 1.0

    def __post_init__(self) -> None:
        if not self.z > 0.0:
            raise GeometryError(f"Terminal must sit in front of the surface (z > 0), got z={self.z!r}.")
        if not self.power >= 0.0:
            raise GeometryError(f"Terminal power must be >= 0, got {self.power!r}.")

    @property
    def position(self) -> Tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class NoiseModel:
    """Spatial noise PSD N0 (linear)."""

    n0: float

    def __post_init__(self) -> None:
        if not self.n0 > 0.0:
            raise GeometryError(f"Noise PSD N0 must be > 0, got {self.n0!r}.")


def field_amplitude(term: Terminal, x, y, lam: float):
    """
    Complex amplitude s_{x0,y0,z0}(x, y) received on the surface from `term`.

    Vectorised over `x` and `y` (numpy broadcasting); scalars in, complex scalar out.
    """
    if not term.z > 0.0:
        raise GeometryError(f"Field model undefined for z={term.z!r} (needs z > 0).")
    lam = Wavelength(lam)
    z0 = term.z
    dist_sq = z0 * z0 + (np.asarray(x) - term.x) ** 2 + (np.asarray(y) - term.y) ** 2
    dist = np.sqrt(dist_sq)
    amplitude = FIELD_NORMALIZATION * math.sqrt(z0) * dist_sq ** -0.75
    return amplitude * np.exp(-2j * np.pi * dist / lam)


def signature_matrix(positions: np.ndarray, x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Signatures of K terminals (rows of `positions`: x, y, z) at N surface points, shape (N, K)."""
    lam = Wavelength(lam)
    z0 = positions[None, :, 2]
    dist_sq = z0 * z0 + (x[:, None] - positions[None, :, 0]) ** 2 + (y[:, None] - positions[None, :, 1]) ** 2
    amplitude = FIELD_NORMALIZATION * np.sqrt(z0) * dist_sq ** -0.75
    return amplitude * np.exp(-2j * np.pi * np.sqrt(dist_sq) / lam)


def power_density(positions: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|s_k(x, y)|^2 = z_k / (4 pi d^3) for K terminals at N points, shape (N, K)."""
    z0 = positions[None, :, 2]
    dist_sq = z0 * z0 + (x[:, None] - positions[None, :, 0]) ** 2 + (y[:, None] - positions[None, :, 1]) ** 2
    return z0 / (4.0 * math.pi) * dist_sq ** -1.5


def _corner_fraction(a: float, b: float, z0: float) -> float:
    # Power fraction over the rectangle [0, a] x [0, b] seen from (0, 0, z0); odd in a and b.
    if a == 0.0 or b == 0.0:
        return 0.0
    sign = math.copysign(1.0, a) * math.copysign(1.0, b)
    a, b = abs(a), abs(b)
    if math.isinf(a) and math.isinf(b):
        return sign / 8.0
    if math.isinf(a):
        return sign * math.atan(b / z0) / (4.0 * math.pi)
    if math.isinf(b):
        return sign * math.atan(a / z0) / (4.0 * math.pi)
    return sign * math.atan(a * b / (z0 * math.sqrt(a * a + b * b + z0 * z0))) / (4.0 * math.pi)


def fraction_nu(surface: SurfaceSpec, z0: float, x0: float = 0.0, y0: float = 0.0) -> float:
    """
    Fraction of an isotropic terminal's power captured by the surface.

    With the terminal centred (x0 = y0 = 0) this is
    (1/pi) * arctan(AB / (z0 * sqrt(A^2 + B^2 + z0^2))), with the analytic limits for
    infinite extents. Off-centre terminals are handled by splitting the surface into four
    rectangles that share a corner at the terminal's foot.
    """
    if not z0 > 0.0:
        raise GeometryError(f"Distance to the surface must be > 0, got {z0!r}.")
    a_big, b_big = surface.half_width_a, surface.half_height_b
    if x0 == 0.0 and y0 == 0.0:
        if surface.is_infinite:
            return 0.5
        if math.isinf(a_big):
            return math.atan(b_big / z0) / math.pi
        if math.isinf(b_big):
            return math.atan(a_big / z0) / math.pi
        return math.atan(a_big * b_big / (z0 * math.sqrt(a_big**2 + b_big**2 + z0**2))) / math.pi

    total = 0.0
    for a in (a_big - x0, a_big + x0):
        for b in (b_big - y0, b_big + y0):
            total += _corner_fraction(a, b, z0)
    return total


def z_for_nu(surface: SurfaceSpec, nu: float) -> float:
    """Distance z0 at which a centred terminal delivers the requested fraction nu."""
    if surface.is_infinite:
        raise GeometryError("An infinite surface captures nu = 1/2 at every distance.")
    if not 0.0 < nu < 0.5:
        raise GeometryError(f"nu must lie in (0, 1/2) for a surface with a finite extent, got {nu!r}.")
    a_big, b_big = surface.half_width_a, surface.half_height_b
    if math.isinf(a_big) or math.isinf(b_big):
        finite = b_big if math.isinf(a_big) else a_big
        return finite / math.tan(math.pi * nu)

    scale = max(a_big, b_big)
    lo, hi = scale * 1e-9, scale
    while fraction_nu(surface, hi) > nu:
        hi *= 2.0
    return brentq(lambda z: fraction_nu(surface, z) - nu, lo, hi, xtol=1e-14 * scale, rtol=1e-14)


def received_power(term: Terminal, surface: SurfaceSpec) -> float:
    """P * nu for the terminal's actual position."""
    return term.power * fraction_nu(surface, term.z, term.x, term.y)


def array_gain_comparison(surface: SurfaceSpec, z0: float, lam: float) -> float:
    """Ratio of surface-captured power P*nu to a single antenna's (lambda / (4 pi z0))^2 * P."""
    lam = Wavelength(lam)
    free_space = (lam / (4.0 * math.pi * z0)) ** 2
    return fraction_nu(surface, z0) / free_space
