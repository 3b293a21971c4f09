"""
Waveguide geometry and TE/TM mode census.

Natural units throughout: lengths in 1/k0 = c/omega0, rates and detunings in
units of the free-space linewidth gamma0, with k0 = gamma0 = c = 1.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from src.errors import ModeIndexError, PreconditionError, SingularModeError

K0 = 1.0
GAMMA0 = 1.0
C = 1.0

CUTOFF_GUARD = 1e-9


class ModeFamily(str, Enum):
    TE = "TE"
    TM = "TM"


@dataclass(frozen=True)
class WaveguideGeometry:
    """Rectangular PEC cross-section [0, a] x [0, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0) or not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise PreconditionError(f"Waveguide sizes must be positive, got a={self.a}, b={self.b}")

    def contains(self, points: np.ndarray) -> bool:
        pts = np.atleast_2d(points)
        return bool(np.all((pts[:, 0] > 0) & (pts[:, 0] < self.a) & (pts[:, 1] > 0) & (pts[:, 1] < self.b)))


@dataclass(frozen=True)
class ModeIndex:
    family: ModeFamily
    m: int
    n: int

    def __post_init__(self):
        if not isinstance(self.family, ModeFamily):
            try:
                object.__setattr__(self, "family", ModeFamily(self.family))
            except ValueError as e:
                raise ModeIndexError(f"Unknown mode family {self.family!r}") from e
        if self.m < 0 or self.n < 0:
            raise ModeIndexError(f"Mode indices must be non-negative, got ({self.m}, {self.n})")
        if self.family is ModeFamily.TE and self.m == 0 and self.n == 0:
            raise ModeIndexError("TE00 does not exist")
        if self.family is ModeFamily.TM and (self.m < 1 or self.n < 1):
            raise ModeIndexError(f"TM modes need m, n >= 1, got ({self.m}, {self.n})")

    @property
    def label(self) -> str:
        return f"{self.family.value}{self.m}{self.n}"

    def __str__(self) -> str:
        return self.label


def cutoff_wavenumber(mode: ModeIndex, geom: WaveguideGeometry) -> float:
    """k_c = sqrt((m pi / a)^2 + (n pi / b)^2)."""
    if not isinstance(mode, ModeIndex):
        raise ModeIndexError(f"Expected ModeIndex, got {mode!r}")
    return math.hypot(mode.m * math.pi / geom.a, mode.n * math.pi / geom.b)


def _sort_key(mode: ModeIndex, geom: WaveguideGeometry):
    return (cutoff_wavenumber(mode, geom), 0 if mode.family is ModeFamily.TE else 1, mode.m, mode.n)


def propagating_modes(geom: WaveguideGeometry, k: float) -> List[ModeIndex]:
    """All TE/TM modes with cutoff below k, ascending cutoff, TE before TM on ties."""
    if not k > 0:
        raise PreconditionError(f"Wavenumber must be positive, got {k}")
    m_max = int(k * geom.a / math.pi) + 1
    n_max = int(k * geom.b / math.pi) + 1
    modes = []
    for m in range(m_max + 1):
        for n in range(n_max + 1):
            if m == 0 and n == 0:
                continue
            if math.hypot(m * math.pi / geom.a, n * math.pi / geom.b) >= k:
                continue
            modes.append(ModeIndex(ModeFamily.TE, m, n))
            if m >= 1 and n >= 1:
                modes.append(ModeIndex(ModeFamily.TM, m, n))
    return sorted(modes, key=lambda mode: _sort_key(mode, geom))


def longitudinal_wavenumber(mode: ModeIndex, geom: WaveguideGeometry, k: float) -> complex:
    """Real positive k_z above cutoff, positive imaginary below."""
    if not k > 0:
        raise PreconditionError(f"Wavenumber must be positive, got {k}")
    kc = cutoff_wavenumber(mode, geom)
    if abs(k - kc) <= CUTOFF_GUARD * k:
        raise SingularModeError(f"k={k} coincides with the cutoff of {mode.label}", mode=mode)
    if k > kc:
        return complex(math.sqrt(k * k - kc * kc), 0.0)
    return complex(0.0, math.sqrt(kc * kc - k * k))


@dataclass(frozen=True)
class ModeTable:
    """Flat arrays over TE and TM modes for vectorized kernel sums."""

    is_tm: np.ndarray
    m: np.ndarray
    n: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    kc: np.ndarray
    kz: np.ndarray

    @property
    def size(self) -> int:
        return int(self.m.size)

    @property
    def propagating(self) -> np.ndarray:
        return self.kz.imag == 0

    def subset(self, mask: np.ndarray) -> "ModeTable":
        return ModeTable(self.is_tm[mask], self.m[mask], self.n[mask], self.kx[mask],
                         self.ky[mask], self.kc[mask], self.kz[mask])


def mode_table(geom: WaveguideGeometry, k: float, kappa_max: float = 0.0) -> ModeTable:
    """TE and TM modes that propagate or decay slower than kappa_max."""
    if not k > 0:
        raise PreconditionError(f"Wavenumber must be positive, got {k}")
    kc_max = math.sqrt(k * k + max(kappa_max, 0.0) ** 2)
    m_idx = np.arange(int(kc_max * geom.a / math.pi) + 1)
    n_idx = np.arange(int(kc_max * geom.b / math.pi) + 1)
    mm, nn = np.meshgrid(m_idx, n_idx, indexing="ij")
    mm, nn = mm.ravel(), nn.ravel()
    kx = mm * math.pi / geom.a
    ky = nn * math.pi / geom.b
    kc = np.hypot(kx, ky)
    keep = (kc <= kc_max) & ~((mm == 0) & (nn == 0))
    mm, nn, kx, ky, kc = mm[keep], nn[keep], kx[keep], ky[keep], kc[keep]
    singular = np.abs(k - kc) <= CUTOFF_GUARD * k
    if np.any(singular):
        i = int(np.argmax(singular))
        raise SingularModeError(f"k={k} coincides with the cutoff of mode ({mm[i]}, {nn[i]})")
    kz = np.where(kc < k, np.sqrt(np.abs(k * k - kc * kc)) + 0j, 1j * np.sqrt(np.abs(kc * kc - k * k)))
    tm = (mm >= 1) & (nn >= 1)
    is_tm = np.concatenate([np.zeros(mm.size, dtype=bool), np.ones(int(tm.sum()), dtype=bool)])
    return ModeTable(
        is_tm=is_tm,
        m=np.concatenate([mm, mm[tm]]),
        n=np.concatenate([nn, nn[tm]]),
        kx=np.concatenate([kx, kx[tm]]),
        ky=np.concatenate([ky, ky[tm]]),
        kc=np.concatenate([kc, kc[tm]]),
        kz=np.concatenate([kz, kz[tm]]),
    )


def cutoff_gap(geom: WaveguideGeometry, k: float) -> float:
    """Smallest |k - k_c| over all modes; sets how sharply the guide resolves transverse wavenumbers."""
    table = mode_table(geom, k, kappa_max=k + 2 * math.pi / min(geom.a, geom.b))
    return float(np.min(np.abs(k - table.kc)))
