"""
Transmission through random atomic ensembles, measured with a non-reradiating atom-detector.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.dipoles.coupled import (Realization, SourceSpec, assemble_sigma, collective_spectrum,
                                 source_column, spectrum_summary, stationary_amplitudes)
from src.errors import MeasurementError, PreconditionError, RealizationError, SimulationError
from src.waveguide.geometry import K0, WaveguideGeometry
from src.waveguide.green import KernelOptions, dyadic_blocks

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 10_000
FAILURE_FRACTION = 0.10


@dataclass(frozen=True)
class DetectorGrid:
    """Mid-cell grid across the cross-section at z_d = L + offset, polarization summed."""

    offset: float = 100.0
    nx: int = 16
    ny: int = 16
    polarization_mode: str = "sum"

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise PreconditionError(f"Detector grid needs nx, ny >= 8, got {self.nx} x {self.ny}")
        if self.offset < 50:
            raise PreconditionError(f"Detector offset must be at least 50 beyond the sample, got {self.offset}")
        if self.polarization_mode != "sum":
            raise PreconditionError("Only the polarization-summed detector is supported")

    def points(self, geom: WaveguideGeometry, length: float) -> np.ndarray:
        x = (np.arange(self.nx) + 0.5) * geom.a / self.nx
        y = (np.arange(self.ny) + 0.5) * geom.b / self.ny
        xx, yy = np.meshgrid(x, y, indexing="ij")
        zz = np.full(xx.size, length + self.offset)
        return np.column_stack([xx.ravel(), yy.ravel(), zz])


@dataclass
class SimulationConfig:
    geom: WaveguideGeometry
    density: float
    detuning: float
    lengths: Tuple[float, ...]
    realizations_per_l: int = 256
    master_seed: int = 0
    source: Optional[SourceSpec] = None
    detector: DetectorGrid = field(default_factory=DetectorGrid)
    kernel: KernelOptions = field(default_factory=KernelOptions)
    min_separation: float = 0.05
    fit_min_length: Optional[float] = None
    fit_column: str = "T_mean"
    threads: int = 1
    k: float = K0

    def __post_init__(self):
        self.lengths = tuple(float(L) for L in self.lengths)
        if not self.density > 0:
            raise PreconditionError(f"Density must be positive, got {self.density}")
        if self.realizations_per_l < 1:
            raise PreconditionError(f"realizations_per_l must be >= 1, got {self.realizations_per_l}")
        if not self.lengths or any(L <= 0 for L in self.lengths):
            raise PreconditionError("Sample lengths must be positive")
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise PreconditionError("Sample lengths must be strictly ascending")
        if not 0 <= self.master_seed < 2 ** 64:
            raise PreconditionError("master_seed must be an unsigned 64-bit integer")
        if self.min_separation < 0:
            raise PreconditionError("min_separation must be non-negative")
        if self.min_separation >= min(self.geom.a, self.geom.b):
            raise PreconditionError(f"min_separation {self.min_separation} leaves no room between the walls")
        if self.threads < 1:
            raise PreconditionError("threads must be >= 1")
        if self.fit_column not in ("T_mean", "T_geomean"):
            raise PreconditionError(f"fit_column must be T_mean or T_geomean, got {self.fit_column!r}")
        if self.source is None:
            self.source = SourceSpec.on_axis(self.geom, detuning=self.detuning)
        if self.source.detuning != self.detuning:
            raise PreconditionError(f"Source detuning {self.source.detuning} differs from the medium detuning "
                                    f"{self.detuning}")
        src = self.source.position
        if not self.geom.contains(src):
            raise PreconditionError("Source must lie inside the cross-section")
        if src[2] >= 0:
            raise PreconditionError("Source must sit below the sample (z < 0)")

    @property
    def wall_clearance(self) -> float:
        return self.min_separation / 2

    def atom_count(self, length: float) -> int:
        return int(round(self.density * self.geom.a * self.geom.b * length))


@dataclass
class TransmissionCurve:
    """Per-length transmission statistics plus the run bookkeeping."""

    records: pd.DataFrame
    metadata: Dict = field(default_factory=dict)

    @property
    def lengths(self) -> np.ndarray:
        return self.records["L"].to_numpy()

    def valid(self) -> pd.DataFrame:
        return self.records[~self.records["failed"]]


def realization_stream(master_seed: int, l_index: int, r_index: int) -> np.random.Generator:
    """Independent generator keyed by (master_seed, length index, realization index)."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(l_index, r_index)))


def generate_realization(config: SimulationConfig, length: float, rng: np.random.Generator,
                         seed_tag: Tuple[int, ...] = ()) -> Realization:
    """Uniform positions in the cross-section inset by r_min / 2, each atom resampled until clear of the others.

    The inset keeps every atom at least r_min from its own mirror image.
    """
    n = config.atom_count(length)
    geom = config.geom
    clearance = config.wall_clearance
    lower = np.array([clearance, clearance, 0.0])
    span = np.array([geom.a - 2 * clearance, geom.b - 2 * clearance, length])
    positions = np.empty((n, 3))
    r_min2 = config.min_separation ** 2
    for i in range(n):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            candidate = lower + rng.random(3) * span
            if candidate[0] <= 0 or candidate[1] <= 0:
                continue
            if i == 0 or np.min(np.sum((positions[:i] - candidate) ** 2, axis=1)) >= r_min2:
                positions[i] = candidate
                break
        else:
            raise RealizationError(
                f"Could not place atom {i + 1}/{n} with separation {config.min_separation} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts")
    return Realization(positions, geom, length, seed_tag, wall_clearance=clearance)


def field_at_point(b: np.ndarray, real: Realization, source: SourceSpec, r_d, k: float = K0,
                   opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Direct source field plus the field re-radiated by every excited dipole."""
    return field_on_points(b, real, source, np.asarray(r_d, dtype=float)[None, :], k, opts)[0]


def field_on_points(b: np.ndarray, real: Realization, source: SourceSpec, points: np.ndarray, k: float = K0,
                    opts: KernelOptions = KernelOptions()) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p = points.shape[0]
    if np.any(np.all(points == source.position, axis=1)):
        raise PreconditionError("Field point coincides with the source")
    direct = dyadic_blocks(points, np.repeat(source.position[None, :], p, axis=0), real.geom, k, opts)
    fields = direct @ source.orientation
    n = real.n_atoms
    if n == 0:
        return fields
    obs = np.repeat(points, n, axis=0)
    src = np.tile(real.positions, (p, 1))
    if np.any(np.all(obs == src, axis=1)):
        raise PreconditionError("Field point coincides with an atom")
    g = dyadic_blocks(obs, src, real.geom, k, opts).reshape(p, n, 3, 3)
    return fields + np.einsum("pnij,nj->pi", g, np.asarray(b).reshape(n, 3))


def incident_intensity(geom: WaveguideGeometry, length: float, source: SourceSpec, detector: DetectorGrid,
                       k: float = K0, opts: KernelOptions = KernelOptions()) -> float:
    """Grid-averaged intensity of the bare source field; shared by every realization of one length."""
    points = detector.points(geom, length)
    empty = Realization(np.empty((0, 3)), geom, length)
    incident = field_on_points(np.zeros(0), empty, source, points, k, opts)
    return float(np.mean(np.sum(np.abs(incident) ** 2, axis=1)))


def transmission_one(real: Realization, source: SourceSpec, detector: DetectorGrid, k: float = K0,
                     opts: KernelOptions = KernelOptions(), b: Optional[np.ndarray] = None,
                     i0: Optional[float] = None) -> float:
    """T = I / I0, both averaged over the detector grid and summed over polarizations."""
    if real.n_atoms == 0:
        return 1.0
    if i0 is None:
        i0 = incident_intensity(real.geom, real.length, source, detector, k, opts)
    if not i0 > 0:
        raise MeasurementError("Incident intensity vanishes on the detector grid")
    points = detector.points(real.geom, real.length)
    if b is None:
        sigma = assemble_sigma(real, k, opts)
        b = stationary_amplitudes(sigma, source, real, source_column(real, source, k, opts))
    total = field_on_points(b, real, source, points, k, opts)
    i = float(np.mean(np.sum(np.abs(total) ** 2, axis=1)))
    return i / i0


def _simulate(config: SimulationConfig, l_index: int, r_index: int, i0: Optional[float] = None) -> float:
    length = config.lengths[l_index]
    rng = realization_stream(config.master_seed, l_index, r_index)
    real = generate_realization(config, length, rng, seed_tag=(config.master_seed, l_index, r_index))
    if real.n_atoms == 0:
        return 1.0
    sigma = assemble_sigma(real, config.k, config.kernel)
    if logger.isEnabledFor(logging.DEBUG):
        summary = spectrum_summary(collective_spectrum(sigma))
        logger.debug(f"L={length:g} #{r_index}: N={real.n_atoms}, "
                     f"subradiant {summary['subradiant_fraction']:.3f}, superradiant {summary['superradiant_fraction']:.3f}")
    b = stationary_amplitudes(sigma, config.source, real)
    return transmission_one(real, config.source, config.detector, config.k, config.kernel, b=b, i0=i0)


def _summarize(length: float, values: List[float], n_failed: int, total: int) -> Dict:
    t = np.asarray(values, dtype=float)
    failed = n_failed > FAILURE_FRACTION * total or t.size == 0
    row = {"L": length, "T_mean": math.nan, "T_stderr": math.nan, "T_geomean": math.nan, "lnT_stderr": math.nan,
           "n_realizations": int(t.size), "n_failed": int(n_failed), "failed": bool(failed)}
    if t.size:
        row["T_mean"] = float(np.mean(t))
        row["T_stderr"] = float(np.std(t, ddof=1) / math.sqrt(t.size)) if t.size > 1 else 0.0
        row["T_geomean"] = float(np.exp(np.mean(np.log(t)))) if np.all(t > 0) else math.nan
        if np.all(t > 0):
            row["lnT_stderr"] = float(np.std(np.log(t), ddof=1) / math.sqrt(t.size)) if t.size > 1 else 0.0
    return row


def scan_curve(config: SimulationConfig, progress: bool = True) -> TransmissionCurve:
    """Average transmission over independent realizations for every sample length."""
    n_l, n_r = len(config.lengths), config.realizations_per_l
    values = np.full((n_l, n_r), np.nan)
    failures = []
    incident = [incident_intensity(config.geom, length, config.source, config.detector, config.k, config.kernel)
                for length in config.lengths]
    tasks = [(li, ri) for li in range(n_l) for ri in range(n_r)]
    progress_bar = tqdm(total=len(tasks), desc="Realizations", unit="real", ncols=100, disable=not progress)
    try:
        with ThreadPoolExecutor(max_workers=config.threads) as executor:
            future_to_task = {executor.submit(_simulate, config, li, ri, i0=incident[li]): (li, ri)
                              for li, ri in tasks}
            try:
                for future in as_completed(future_to_task):
                    li, ri = future_to_task[future]
                    try:
                        values[li, ri] = future.result()
                    except RealizationError:
                        raise
                    except SimulationError as e:
                        logger.warning(f"Realization {ri} at L={config.lengths[li]:g} failed: {type(e).__name__}: {e}")
                        failures.append({"L": config.lengths[li], "realization": ri,
                                         "error": type(e).__name__, "message": str(e)})
                    progress_bar.update(1)
            except BaseException:
                for pending in future_to_task:
                    pending.cancel()
                raise
    finally:
        progress_bar.close()

    rows = []
    for li, length in enumerate(config.lengths):
        ok = values[li][~np.isnan(values[li])]
        row = _summarize(length, ok.tolist(), n_r - ok.size, n_r)
        if row["failed"]:
            logger.error(f"L={length:g}: {row['n_failed']}/{n_r} realizations failed, point excluded")
        else:
            logger.info(f"L={length:g}: <T>={row['T_mean']:.4g} +- {row['T_stderr']:.2g}, "
                        f"exp<lnT>={row['T_geomean']:.4g}, N={config.atom_count(length)}")
        rows.append(row)
    failures.sort(key=lambda f: (f["L"], f["realization"]))
    metadata = {
        "master_seed": config.master_seed,
        "seed_keys": {f"{length:g}": [config.master_seed, li] for li, length in enumerate(config.lengths)},
        "realizations_per_l": n_r,
        "failures": failures,
        "solver_failures": sum(1 for f in failures if f["error"] == "SolverError"),
    }
    return TransmissionCurve(pd.DataFrame(rows), metadata)
