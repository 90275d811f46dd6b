"""M-PSK constellations and distance-preserving constructive-interference geometry.

The CI region of a PSK symbol is the translated angular sector whose
boundaries run parallel to the ML decision boundaries of that symbol.  A
point y lies in the region of symbol m at scale d = sigma * sqrt(gamma)
exactly when ``A_m @ (y - d * s_m) >= 0`` componentwise, where the rows of
A_m are the unit inward normals of the two sector boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .realify import embed_vector


class UnsupportedConstellationError(ValueError):
    """Raised for constellations the CI construction cannot support (e.g. BPSK)."""


@dataclass
class PskConstellation:
    """Equiprobable unit-power M-PSK alphabet.

    Point m sits at angle ``phase_offset + 2*pi*m/order``.  The default
    offset pi/order gives the diagonal QPSK layout for order 4.  Orders
    below 4 are rejected: with two points the two sector normals are
    antiparallel and the CI normal matrix is singular.
    """

    order: int
    phase_offset: float | None = None
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if int(self.order) != self.order or self.order < 4:
            raise UnsupportedConstellationError(
                f"M-PSK with M={self.order} unsupported; need an integer order >= 4")
        self.order = int(self.order)
        if self.phase_offset is None:
            self.phase_offset = math.pi / self.order
        angles = self.phase_offset + 2.0 * np.pi * np.arange(self.order) / self.order
        self.points = np.exp(1j * angles)

    def angle(self, m: int) -> float:
        self._check_index(m)
        return self.phase_offset + 2.0 * math.pi * m / self.order

    def point(self, m: int) -> np.ndarray:
        """Symbol m as a real (Re, Im) pair."""
        self._check_index(m)
        return embed_vector(self.points[m:m + 1])

    @property
    def bits_per_symbol(self) -> int:
        k = int(round(math.log2(self.order)))
        if 2 ** k != self.order:
            raise UnsupportedConstellationError(
                f"Gray labeling needs a power-of-two order, got {self.order}")
        return k

    @property
    def gray_labels(self) -> np.ndarray:
        """Reflected Gray code over the phase index (requires power-of-two order)."""
        self.bits_per_symbol  # noqa: B018  raises for unsupported orders
        m = np.arange(self.order)
        return m ^ (m >> 1)

    def _check_index(self, m: int) -> None:
        if not 0 <= m < self.order:
            raise ValueError(f"symbol index {m} out of range for order {self.order}")


def ci_normals(symbol: int, constellation: PskConstellation) -> np.ndarray:
    """Unit inward normals of the two ML sector boundaries of a symbol.

    Row 0 is the normal of the clockwise boundary (angle theta - pi/M), row 1
    of the counter-clockwise one; both point into the sector.  The resulting
    2x2 matrix has determinant sin(2*pi/M) != 0 for M >= 4.
    """
    constellation._check_index(symbol)
    theta = constellation.angle(symbol)
    half = math.pi / constellation.order
    a1 = theta - half + math.pi / 2.0
    a2 = theta + half - math.pi / 2.0
    return np.array([[math.cos(a1), math.sin(a1)],
                     [math.cos(a2), math.sin(a2)]])


@dataclass
class CiGeometry:
    """Stacked CI geometry for one symbol slot across all users.

    a is the block-diagonal normal matrix, d the per-user SNR/noise scaling
    diag(sigma_i*sqrt(gamma_i)) (x) I2, w the binary outer-point mask (the
    identity for PSK, kept explicit so a_inv @ w @ t is formed literally),
    and s the stacked (Re, Im) symbol vector.  Treat instances as immutable;
    they are shared freely across workers.
    """

    a: np.ndarray
    d: np.ndarray
    w: np.ndarray
    s: np.ndarray
    gammas: np.ndarray
    sigmas: np.ndarray
    symbols: np.ndarray
    constellation: PskConstellation
    a_inv: np.ndarray = field(init=False, repr=False)
    sigma_min: float = field(init=False)
    sigma_max: float = field(init=False)

    def __post_init__(self) -> None:
        self.a_inv = np.linalg.inv(self.a)
        svals = np.linalg.svd(self.a, compute_uv=False)
        self.sigma_min = float(svals.min())
        self.sigma_max = float(svals.max())

    @property
    def n_r(self) -> int:
        return self.s.size // 2


def build_ci_geometry(symbols, gammas, sigmas,
                      constellation: PskConstellation) -> CiGeometry:
    """Assemble A, D, W and s for given symbol indices and per-user targets."""
    symbols = np.atleast_1d(np.asarray(symbols, dtype=int))
    n_r = symbols.size
    gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (n_r,)).copy()
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (n_r,)).copy()
    if np.any(gammas <= 0):
        raise ValueError("target SNRs must be positive")
    if np.any(sigmas <= 0):
        raise ValueError("noise deviations must be positive")
    a = np.zeros((2 * n_r, 2 * n_r))
    for i, m in enumerate(symbols):
        a[2 * i:2 * i + 2, 2 * i:2 * i + 2] = ci_normals(int(m), constellation)
    d = np.kron(np.diag(sigmas * np.sqrt(gammas)), np.eye(2))
    w = np.eye(2 * n_r)
    s = embed_vector(constellation.points[symbols])
    return CiGeometry(a=a, d=d, w=w, s=s, gammas=gammas, sigmas=sigmas,
                      symbols=symbols, constellation=constellation)


def ml_detect(y, constellation: PskConstellation) -> int:
    """Index of the nearest constellation point; ties go to the lowest index."""
    y = np.asarray(y, dtype=float)
    if y.shape != (2,) or not np.all(np.isfinite(y)):
        raise ValueError("expected a finite real 2-vector")
    z = y[0] + 1j * y[1]
    return int(np.argmin(np.abs(z - constellation.points)))


def ml_detect_many(y, constellation: PskConstellation) -> np.ndarray:
    """Vectorised ml_detect over rows of an (N, 2) array."""
    y = np.asarray(y, dtype=float)
    z = y[..., 0] + 1j * y[..., 1]
    d2 = np.abs(z[..., None] - constellation.points) ** 2
    return np.argmin(d2, axis=-1)


def ci_margin(y, symbol: int, gamma: float, sigma: float,
              constellation: PskConstellation) -> np.ndarray:
    """Orthogonal distances of y to the two CI boundaries of a symbol.

    Both components are >= 0 exactly when y lies in the CI region of the
    symbol at scale sigma*sqrt(gamma).
    """
    y = np.asarray(y, dtype=float)
    a_i = ci_normals(symbol, constellation)
    apex = sigma * math.sqrt(gamma) * constellation.point(symbol)
    return a_i @ (y - apex)
