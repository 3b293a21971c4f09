"""
Dyadic Green tensors for point dipoles in free space and in a PEC rectangular waveguide.

Normalization: g = (6 pi / k) G_e, where G_e solves curl curl G_e - k^2 G_e = I delta.
With this scaling the free-space self-limit of the diagonal is i, so that
Sigma = -(gamma0 / 2) g gives an amplitude decay of gamma0 / 2.

Two independent constructions of the waveguide kernel are provided. The image
sum inherits the free-space normalization exactly; the eigenmode expansion
converges exponentially in |z - z'|. They must agree, which is what pins the
normalization of the mode sum.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from src.errors import ImageSumConvergenceError, PreconditionError
from src.waveguide.geometry import K0, ModeTable, WaveguideGeometry, cutoff_gap, mode_table

logger = logging.getLogger(__name__)

# (row, col) pairs of the symmetric free-space tensor
_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_IMAGE_CHUNK = 400_000
_MODE_CHUNK = 256
# absolute floor for the image-sum stability check, below typical |g| of distant pairs
_SCALE_FLOOR = 1e-2


@dataclass(frozen=True)
class KernelOptions:
    image_truncation_radius: int = 2000
    damping_parameter: float = 150.0
    mode_evanescent_cutoff: float = 1e-12
    crossover_dz: float = 3.0
    resolution_factor: float = 40.0
    convergence_tolerance: float = 1e-5

    def __post_init__(self):
        for name in ("image_truncation_radius", "damping_parameter", "mode_evanescent_cutoff",
                     "crossover_dz", "resolution_factor", "convergence_tolerance"):
            if not getattr(self, name) > 0:
                raise PreconditionError(f"KernelOptions.{name} must be positive, got {getattr(self, name)}")
        if self.mode_evanescent_cutoff >= 1:
            raise PreconditionError("KernelOptions.mode_evanescent_cutoff must be below 1")


def _freespace_components(dx, dy, dz, k: float):
    """Six independent components of g for displacement arrays."""
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    kr = k * r
    pref = 1.5 * np.exp(1j * kr) / kr
    a = pref * (1 + 1j / kr - 1 / kr ** 2)
    b = pref * (1 + 3j / kr - 3 / kr ** 2) / (r * r)
    return (a - b * dx * dx, a - b * dy * dy, a - b * dz * dz, -b * dx * dy, -b * dx * dz, -b * dy * dz)


def _assemble(components) -> np.ndarray:
    out = np.empty(np.shape(components[0]) + (3, 3), dtype=complex)
    for (i, j), c in zip(_PAIRS, components):
        out[..., i, j] = c
        out[..., j, i] = c
    return out


def freespace_dyadic(r, k: float = K0) -> np.ndarray:
    """Vacuum tensor for displacement r; r = 0 is the caller's self-term branch."""
    d = np.asarray(r, dtype=float)
    if not np.linalg.norm(d) > 0:
        raise PreconditionError("freespace_dyadic needs |r| > 0; the self-term convention is g = i * identity")
    return _assemble(_freespace_components(d[0], d[1], d[2], k))


@lru_cache(maxsize=256)
def _resolution_gap(geom: WaveguideGeometry, k: float) -> float:
    return cutoff_gap(geom, k)


def damping_length(geom: WaveguideGeometry, k: float, dz: float, opts: KernelOptions) -> float:
    """Gaussian damping radius of the image lattice.

    The smoothed lattice sum blurs the transverse spectrum over ~1/R; R must
    resolve both the mode closest to cutoff and the longitudinal phase k_z |dz|.
    """
    gap = _resolution_gap(geom, k)
    resolution = max(1.0 / (2.0 * gap), abs(dz) / math.sqrt(2.0 * k * gap))
    return max(opts.damping_parameter, opts.resolution_factor * resolution)


def _shells_needed(radius: float, geom: WaveguideGeometry) -> int:
    return int(math.ceil(5.0 * radius / (2 * min(geom.a, geom.b)))) + 1


def _lattice_sums(r_obs: np.ndarray, r_src: np.ndarray, geom: WaveguideGeometry, k: float,
                  radii: Tuple[float, ...], opts: KernelOptions, include_direct: bool) -> List[np.ndarray]:
    a, b = geom.a, geom.b
    x, y, z = r_obs
    xs, ys, zs = r_src
    dz = z - zs
    rho_max = 5.0 * max(radii)
    p_max = int(math.ceil(rho_max / (2 * a))) + 1
    q_max = int(math.ceil(rho_max / (2 * b))) + 1
    if max(p_max, q_max) > opts.image_truncation_radius:
        raise ImageSumConvergenceError(
            f"Image lattice needs {max(p_max, q_max)} shells but image_truncation_radius is {opts.image_truncation_radius}")
    inv_r2 = [1.0 / (radius * radius) for radius in radii]
    sums = [np.zeros((3, 3), dtype=complex) for _ in radii]
    p = np.arange(-p_max, p_max + 1)
    q = np.arange(-q_max, q_max + 1)
    rows_per_chunk = max(1, _IMAGE_CHUNK // q.size)
    for sigma in (1, -1):
        for tau in (1, -1):
            # odd x-mirror flips (y, z) moments, odd y-mirror flips (x, z)
            s = np.array([1.0, 1.0, 1.0])
            if sigma < 0:
                s *= (1.0, -1.0, -1.0)
            if tau < 0:
                s *= (-1.0, 1.0, -1.0)
            dx_all = x - (2 * p * a + sigma * xs)
            dy_all = y - (2 * q * b + tau * ys)
            family = [np.zeros(6, dtype=complex) for _ in radii]
            for start in range(0, p.size, rows_per_chunk):
                dx = dx_all[start:start + rows_per_chunk, None]
                dx, dy = np.broadcast_arrays(dx, dy_all[None, :])
                rho2 = dx * dx + dy * dy
                mask = rho2 <= rho_max * rho_max
                if sigma > 0 and tau > 0 and not include_direct:
                    mask &= ~((np.abs(dx - (x - xs)) < 0.5 * a) & (np.abs(dy - (y - ys)) < 0.5 * b))
                if dz == 0:
                    mask &= rho2 > 0
                if not mask.any():
                    continue
                dxm, dym, rho2m = dx[mask], dy[mask], rho2[mask]
                comps = _freespace_components(dxm, dym, np.full_like(dxm, dz), k)
                for acc, inv in zip(family, inv_r2):
                    w = np.exp(-rho2m * inv)
                    acc += np.array([np.dot(w, c) for c in comps])
            for total, acc in zip(sums, family):
                total += _assemble(tuple(acc)) * s[None, :]
    return sums


def _image_sum(r_obs, r_src, geom: WaveguideGeometry, k: float, opts: KernelOptions,
               include_direct: bool) -> np.ndarray:
    r_obs = np.asarray(r_obs, dtype=float)
    r_src = np.asarray(r_src, dtype=float)
    radius = damping_length(geom, k, r_obs[2] - r_src[2], opts)
    while True:
        radii = (radius, radius / math.sqrt(2.0), radius / 2.0)
        g1, g2, g4 = _lattice_sums(r_obs, r_src, geom, k, radii, opts, include_direct)
        # smoothing error is a series in 1/R^2; radii R, R/sqrt2, R/2 cancel the first two orders
        extrapolated = (8.0 * g1 - 6.0 * g2 + g4) / 3.0
        # first-order estimate; the extrapolated error sits one order in 1/R^2 below it
        change = np.max(np.abs(2.0 * g1 - g2 - extrapolated))
        scale = max(np.max(np.abs(extrapolated)), _SCALE_FLOOR)
        if change <= opts.convergence_tolerance * scale:
            break
        if _shells_needed(2.0 * radius, geom) > opts.image_truncation_radius:
            raise ImageSumConvergenceError(
                f"Image sum unstable under damping change ({change:.3e} vs scale {scale:.3e}) at R={radius:.1f}",
                last_values=[2.0 * g1 - g2, extrapolated])
        logger.debug(f"Image sum R={radius:.1f}: change {change / scale:.2e}, doubling the damping radius")
        radius *= 2.0
    logger.debug(f"Image sum R={radius:.1f}: Richardson correction {np.max(np.abs(g1 - extrapolated)):.2e}")
    return extrapolated


def _check_inside(point, geom: WaveguideGeometry, closed: bool = False):
    x, y = point[0], point[1]
    if closed:
        ok = 0 <= x <= geom.a and 0 <= y <= geom.b
    else:
        ok = 0 < x < geom.a and 0 < y < geom.b
    if not ok:
        raise PreconditionError(f"Point ({x}, {y}) lies outside the cross-section {geom.a} x {geom.b}")


def waveguide_dyadic_imagesum(r, r_src, geom: WaveguideGeometry, k: float = K0,
                              opts: KernelOptions = KernelOptions(), include_direct: bool = True) -> np.ndarray:
    """Method-of-images tensor, Gaussian-damped and Richardson-extrapolated in the damping radius."""
    r = np.asarray(r, dtype=float)
    r_src = np.asarray(r_src, dtype=float)
    _check_inside(r, geom, closed=True)
    _check_inside(r_src, geom, closed=True)
    if include_direct and np.array_equal(r, r_src):
        raise PreconditionError("Coincident points: use waveguide_self_term")
    return _image_sum(r, r_src, geom, k, opts, include_direct)


def _profiles(points: np.ndarray, table: ModeTable, geom: WaveguideGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Transverse vector profile (P, M, 2) and longitudinal profile (P, M) of every mode."""
    x = points[:, 0:1]
    y = points[:, 1:2]
    cx, sx = np.cos(table.kx * x), np.sin(table.kx * x)
    cy, sy = np.cos(table.ky * y), np.sin(table.ky * y)
    eps_m = np.where(table.m == 0, 1.0, 2.0)
    eps_n = np.where(table.n == 0, 1.0, 2.0)
    n_te = np.sqrt(eps_m * eps_n / (geom.a * geom.b)) / table.kc
    n_tm = 2.0 / math.sqrt(geom.a * geom.b)
    tm = table.is_tm
    trans = np.empty(cx.shape + (2,))
    trans[..., 0] = np.where(tm, n_tm / table.kc * table.kx, n_te * table.ky) * cx * sy
    trans[..., 1] = np.where(tm, n_tm / table.kc * table.ky, -n_te * table.kx) * sx * cy
    longi = np.where(tm, n_tm, 0.0) * sx * sy
    return trans, longi


def _modesum_batch(r_obs: np.ndarray, r_src: np.ndarray, geom: WaveguideGeometry, k: float,
                   table: ModeTable) -> np.ndarray:
    dz = r_obs[:, 2] - r_src[:, 2]
    phase = np.exp(1j * table.kz[None, :] * np.abs(dz)[:, None])
    sgn = np.sign(dz)[:, None]
    tm = table.is_tm
    kz, kc = table.kz, table.kc
    c1 = np.where(tm, 1j * kz / (2 * k * k), 1j / (2 * kz)) * phase
    c2 = np.where(tm, kc / (2 * k * k), 0.0) * sgn * phase
    c3 = np.where(tm, 1j * kc * kc / (2 * k * k * kz), 0.0) * phase
    p_o, q_o = _profiles(r_obs, table, geom)
    p_s, q_s = _profiles(r_src, table, geom)
    g = np.empty((r_obs.shape[0], 3, 3), dtype=complex)
    g[:, :2, :2] = np.einsum("pm,pmi,pmj->pij", c1, p_o, p_s)
    g[:, 2, :2] = np.einsum("pm,pm,pmj->pj", c2, q_o, p_s)
    g[:, :2, 2] = -np.einsum("pm,pmi,pm->pi", c2, p_o, q_s)
    g[:, 2, 2] = np.einsum("pm,pm,pm->p", c3, q_o, q_s)
    return (6.0 * math.pi / k) * g


def _evanescent_reach(dz_min: float, opts: KernelOptions) -> float:
    return math.log(1.0 / opts.mode_evanescent_cutoff) / dz_min


def waveguide_dyadic_modesum(r, r_src, geom: WaveguideGeometry, k: float = K0,
                             opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Eigenmode expansion over TE_mn and TM_mn, evanescent modes down to mode_evanescent_cutoff."""
    r = np.asarray(r, dtype=float)
    r_src = np.asarray(r_src, dtype=float)
    _check_inside(r, geom, closed=True)
    _check_inside(r_src, geom, closed=True)
    dz = abs(r[2] - r_src[2])
    if not dz > 0:
        raise PreconditionError("Mode sum requires |z - z'| > 0")
    table = mode_table(geom, k, _evanescent_reach(dz, opts))
    return _modesum_batch(r[None, :], r_src[None, :], geom, k, table)[0]


def propagating_imag_part(r_obs: np.ndarray, r_src: np.ndarray, geom: WaveguideGeometry,
                          k: float = K0) -> np.ndarray:
    """Im g from the propagating modes alone; evanescent terms are real for real points."""
    r_obs = np.atleast_2d(np.asarray(r_obs, dtype=float))
    r_src = np.atleast_2d(np.asarray(r_src, dtype=float))
    table = mode_table(geom, k)
    if table.size == 0:
        return np.zeros((r_obs.shape[0], 3, 3))
    return _modesum_batch(r_obs, r_src, geom, k, table).imag


def waveguide_self_decay(r, geom: WaveguideGeometry, k: float = K0) -> np.ndarray:
    """Waveguide-modified decay tensor gamma'/gamma0 of one atom."""
    r = np.asarray(r, dtype=float)
    _check_inside(r, geom)
    return propagating_imag_part(r, r, geom, k)[0]


def waveguide_self_term(r, geom: WaveguideGeometry, k: float = K0, opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Diagonal block: decay from the propagating modes, shift relative to free space from the mirror images.

    The divergent free-space Lamb shift is absorbed into omega0.
    """
    r = np.asarray(r, dtype=float)
    _check_inside(r, geom)
    shift = _image_sum(r, r, geom, k, opts, include_direct=False).real
    return shift + 1j * waveguide_self_decay(r, geom, k)


def waveguide_dyadic(r, r_src, geom: WaveguideGeometry, k: float = K0, opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Dispatch between self term, near-field image sum and far-field mode sum."""
    return dyadic_blocks(np.asarray(r, dtype=float)[None, :], np.asarray(r_src, dtype=float)[None, :],
                         geom, k, opts)[0]


def dyadic_blocks(r_obs: np.ndarray, r_src: np.ndarray, geom: WaveguideGeometry, k: float = K0,
                  opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Batched dispatcher over point pairs, shape (P, 3) x (P, 3) -> (P, 3, 3).

    Inside the crossover the real part comes from the image sum and the
    imaginary part from the exact propagating-mode sum.
    """
    r_obs = np.atleast_2d(np.asarray(r_obs, dtype=float))
    r_src = np.atleast_2d(np.asarray(r_src, dtype=float))
    out = np.empty((r_obs.shape[0], 3, 3), dtype=complex)
    if r_obs.shape[0] == 0:
        return out
    adz = np.abs(r_obs[:, 2] - r_src[:, 2])
    same = np.all(r_obs == r_src, axis=1)
    near = (adz < opts.crossover_dz) & ~same
    far = ~near & ~same
    for i in np.flatnonzero(same):
        out[i] = waveguide_self_term(r_obs[i], geom, k, opts)
    near_idx = np.flatnonzero(near)
    if near_idx.size:
        im = propagating_imag_part(r_obs[near_idx], r_src[near_idx], geom, k)
        for j, i in enumerate(near_idx):
            out[i] = _image_sum(r_obs[i], r_src[i], geom, k, opts, include_direct=True).real + 1j * im[j]
    far_idx = np.flatnonzero(far)
    if far_idx.size:
        far_idx = far_idx[np.argsort(adz[far_idx], kind="stable")]
        for start in range(0, far_idx.size, _MODE_CHUNK):
            chunk = far_idx[start:start + _MODE_CHUNK]
            table = mode_table(geom, k, _evanescent_reach(float(adz[chunk[0]]), opts))
            out[chunk] = _modesum_batch(r_obs[chunk], r_src[chunk], geom, k, table)
    return out
