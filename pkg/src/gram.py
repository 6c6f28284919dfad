"""Matched-filter Gram matrices for arbitrary deployments and their effective rank."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
import structlog

from fields import SurfaceSpec, Terminal, Wavelength, fraction_nu, signature_matrix
from quadrature import QuadratureConfig, surface_rule

logger = structlog.get_logger(__name__)

GramMode = Literal["numeric", "sinc-approx"]
GRAM_MODES = ("numeric", "sinc-approx")
DEFAULT_RANK_THRESHOLD = 1e-3


class GramModeError(ValueError):
    """Raised when a Gram matrix cannot be built in the requested mode."""


class GramFormatError(ValueError):
    """Raised when a Gram text file does not follow the 'K lambda mode' / 'i j re im' layout."""


@dataclass
class GramMatrix:
    """G with G_lk = sqrt(P_l P_k) * phi_lk; also the noise covariance up to N0."""

    entries: np.ndarray
    lam: float
    mode: str
    powers: Optional[np.ndarray] = None
    quadrature: Optional[QuadratureConfig] = None
    est_error: Optional[np.ndarray] = None
    _eigenvalues: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])

    def hermitized(self) -> np.ndarray:
        return 0.5 * (self.entries + self.entries.conj().T)

    def eigenvalues(self) -> np.ndarray:
        """Ascending eigenvalues of (G + G^H) / 2."""
        if self._eigenvalues is None:
            self._eigenvalues = np.linalg.eigvalsh(self.hermitized())
        return self._eigenvalues

    def to_text(self) -> str:
        k = self.size
        lines = [f"{k} {float(self.lam)!r} {self.mode}"]
        for i in range(k):
            for j in range(k):
                value = self.entries[i, j]
                lines.append(f"{i} {j} {float(value.real)!r} {float(value.imag)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GramMatrix":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        if not rows or len(rows[0]) != 3:
            raise GramFormatError("Missing 'K lambda mode' header.")
        try:
            k = int(rows[0][0])
            lam = float(rows[0][1])
        except ValueError as exc:
            raise GramFormatError(f"Malformed header: {' '.join(rows[0])!r}.") from exc
        mode = rows[0][2]
        if k < 1:
            raise GramFormatError(f"K must be >= 1, got {k}.")
        if len(rows) - 1 != k * k:
            raise GramFormatError(f"Expected {k * k} entry rows, found {len(rows) - 1}.")
        entries = np.zeros((k, k), dtype=complex)
        seen = set()
        for row in rows[1:]:
            if len(row) != 4:
                raise GramFormatError(f"Malformed entry row: {' '.join(row)!r}.")
            try:
                i, j = int(row[0]), int(row[1])
                value = complex(float(row[2]), float(row[3]))
            except ValueError as exc:
                raise GramFormatError(f"Malformed entry row: {' '.join(row)!r}.") from exc
            if not (0 <= i < k and 0 <= j < k):
                raise GramFormatError(f"Entry index ({i}, {j}) outside [0, {k}).")
            if (i, j) in seen:
                raise GramFormatError(f"Duplicate entry ({i}, {j}).")
            # K*K rows without duplicates cover every (i, j)
            seen.add((i, j))
            entries[i, j] = value
        return cls(entries=entries, lam=lam, mode=mode)


@dataclass(frozen=True)
class DimensionEstimate:
    effective_rank: int
    threshold: float
    volume: Optional[float] = None
    density: Optional[float] = None


def _positions(terminals: Sequence[Terminal]) -> np.ndarray:
    return np.array([[t.x, t.y, t.z] for t in terminals], dtype=float).reshape(-1, 3)


def _mirror_upper(matrix: np.ndarray) -> np.ndarray:
    upper = np.triu(matrix, 1)
    out = upper + upper.conj().T
    out[np.diag_indices_from(out)] = matrix.diagonal().real
    return out


def _sinc_gram(terminals: Sequence[Terminal], surface: SurfaceSpec, lam: float) -> np.ndarray:
    z_values = {t.z for t in terminals}
    if len(z_values) != 1:
        raise GramModeError(
            f"sinc-approx mode needs a common terminal distance z, got {len(z_values)} distinct values."
        )
    if surface.is_finite:
        logger.warning("gram.sinc_on_finite_surface", a=surface.half_width_a, b=surface.half_height_b)
    nu = fraction_nu(surface, terminals[0].z)
    pos = _positions(terminals)
    dist = np.hypot(pos[:, None, 0] - pos[None, :, 0], pos[:, None, 1] - pos[None, :, 1])
    return _mirror_upper((nu * np.sinc(2.0 * dist / lam)).astype(complex))


def _numeric_gram(
    terminals: Sequence[Terminal],
    surface: SurfaceSpec,
    lam: float,
    cfg: QuadratureConfig,
):
    rule = surface_rule(terminals, surface, lam, cfg)
    pos = _positions(terminals)
    k = len(terminals)
    acc = np.zeros((k, k), dtype=complex)
    step = max(1, cfg.chunk_values // k)
    # phi_lk = sum_i w_i conj(s_l(p_i)) s_k(p_i), accumulated in fixed chunk order
    for start in range(0, len(rule.weights), step):
        pts = rule.points[start:start + step]
        sig = signature_matrix(pos, pts[:, 0], pts[:, 1], lam)
        acc += (sig.conj() * rule.weights[start:start + step, None]).T @ sig
    return _mirror_upper(acc), rule.diagonal_error


def build_gram(
    terminals: Sequence[Terminal],
    surface: SurfaceSpec,
    lam: float,
    cfg: Optional[QuadratureConfig] = None,
    mode: GramMode = "numeric",
) -> GramMatrix:
    if mode not in GRAM_MODES:
        raise GramModeError(f"Unknown Gram mode {mode!r}; expected one of {GRAM_MODES}.")
    if len(terminals) == 0:
        raise GramModeError("A Gram matrix needs at least one terminal.")
    cfg = cfg or QuadratureConfig()
    lam = Wavelength(lam)
    powers = np.array([t.power for t in terminals], dtype=float)

    est_error = None
    if mode == "sinc-approx":
        phi = _sinc_gram(terminals, surface, lam)
    else:
        phi, est_error = _numeric_gram(terminals, surface, lam, cfg)

    root = np.sqrt(powers)
    entries = phi * np.outer(root, root)
    logger.info("gram.built", terminals=len(terminals), mode=mode, lam=float(lam))
    return GramMatrix(
        entries=entries,
        lam=float(lam),
        mode=mode,
        powers=powers,
        quadrature=cfg if mode == "numeric" else None,
        est_error=None if est_error is None else est_error * powers,
    )


def effective_rank(
    g: GramMatrix,
    threshold: float = DEFAULT_RANK_THRESHOLD,
    volume: Optional[float] = None,
) -> DimensionEstimate:
    """Number of eigenvalues above threshold * (largest eigenvalue); density = rank / volume."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"Effective-rank threshold must lie in (0, 1), got {threshold!r}.")
    eig = g.eigenvalues()
    top = float(eig[-1]) if eig.size else 0.0
    rank = int(np.count_nonzero(eig > threshold * top)) if top > 0.0 else 0
    density = None
    if volume is not None:
        if not volume > 0.0 or math.isinf(volume):
            raise ValueError(f"Volume must be a positive finite number, got {volume!r}.")
        density = rank / volume
    return DimensionEstimate(effective_rank=rank, threshold=threshold, volume=volume, density=density)
