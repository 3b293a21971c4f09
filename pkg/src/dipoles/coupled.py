"""
Coupled-dipole core: the 3N x 3N self-energy matrix, the stationary driven
solve, a brute-force time-domain check of it, and collective spectra.

Each atom carries a J=0 -> J=1 transition. Its three excited sublevels are
represented in the Cartesian basis e_x, e_y, e_z rather than the spherical
m_J basis. The two are related by the unitary map
    |m=0> = e_z,  |m=+-1> = -+(e_x +- i e_y) / sqrt(2),
so Sigma in the m_J basis is U^dagger Sigma U: eigenvalues, resolvent norms
and polarization-summed intensities are identical in either basis.

Index convention: e = 3 * atom + component, component 0, 1, 2 = x, y, z.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from src.errors import IntegrationError, PreconditionError, SolverError
from src.waveguide.geometry import GAMMA0, K0, WaveguideGeometry
from src.waveguide.green import KernelOptions, dyadic_blocks

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-10
SUBRADIANT_RATE = 0.1 * GAMMA0
SUPERRADIANT_RATE = GAMMA0


@dataclass(eq=False)
class Realization:
    """One random configuration of atoms inside the guide."""

    positions: np.ndarray
    geom: WaveguideGeometry
    length: float
    seed_tag: Tuple[int, ...] = ()
    wall_clearance: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if pos.shape[0] and not self.geom.contains(pos):
            raise PreconditionError("Atom positions must lie strictly inside the cross-section")
        self.positions = pos
        if self.wall_distance() < self.wall_clearance:
            raise PreconditionError(f"Atoms must keep {self.wall_clearance:g} from the walls, "
                                    f"closest is {self.wall_distance():.3g}")

    @property
    def n_atoms(self) -> int:
        return int(self.positions.shape[0])

    def min_separation(self) -> float:
        if self.n_atoms < 2:
            return math.inf
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return float(np.min(dist[np.triu_indices(self.n_atoms, 1)]))

    def wall_distance(self) -> float:
        """Closest approach to a PEC wall; an atom at d sits 2d from its own image."""
        if self.n_atoms == 0:
            return math.inf
        x, y = self.positions[:, 0], self.positions[:, 1]
        return float(np.min(np.minimum(np.minimum(x, self.geom.a - x), np.minimum(y, self.geom.b - y))))


@dataclass(eq=False)
class SourceSpec:
    """Far, narrow-line source dipole; its linewidth only enters the time-domain check."""

    position: np.ndarray
    orientation: np.ndarray
    detuning: float
    gamma_s: float = 1e-3

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        o = np.asarray(self.orientation, dtype=complex if np.iscomplexobj(self.orientation) else float).reshape(3)
        norm = np.linalg.norm(o)
        if not norm > 0:
            raise PreconditionError("Source orientation must be non-zero")
        self.orientation = o / norm
        if not math.isfinite(self.detuning):
            raise PreconditionError(f"Detuning must be finite, got {self.detuning}")

    @classmethod
    def on_axis(cls, geom: WaveguideGeometry, z: float = -500.0, detuning: float = 1.0,
                orientation=(0.0, 1.0, 0.0)) -> "SourceSpec":
        return cls(position=np.array([geom.a / 2, geom.b / 2, z]), orientation=np.asarray(orientation), detuning=detuning)


@dataclass(eq=False)
class SigmaMatrix:
    matrix: np.ndarray
    geom: Optional[WaveguideGeometry] = None
    k: float = K0
    opts: KernelOptions = field(default_factory=KernelOptions)

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def n_atoms(self) -> int:
        return self.dimension // 3

    def block(self, i: int, j: int) -> np.ndarray:
        return self.matrix[3 * i:3 * i + 3, 3 * j:3 * j + 3]

    def asymmetry(self) -> float:
        if self.dimension == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix - self.matrix.T)) / max(np.max(np.abs(self.matrix)), 1e-300))


def assemble_sigma(real: Realization, k: float = K0, opts: KernelOptions = KernelOptions()) -> SigmaMatrix:
    """Sigma = -(gamma0 / 2) g blockwise, with the waveguide self term on the diagonal.

    Only i < j blocks are evaluated; the lower triangle is their transpose.
    """
    n = real.n_atoms
    sigma = np.zeros((3 * n, 3 * n), dtype=complex)
    if n == 0:
        return SigmaMatrix(sigma, real.geom, k, opts)
    pos = real.positions
    if n > 1 and real.min_separation() == 0:
        raise PreconditionError("Realization contains duplicate atom positions")
    ii, jj = np.triu_indices(n, 1)
    diag = np.arange(n)
    obs = np.concatenate([pos[diag], pos[ii]])
    src = np.concatenate([pos[diag], pos[jj]])
    blocks = -(GAMMA0 / 2) * dyadic_blocks(obs, src, real.geom, k, opts)
    for i in range(n):
        sigma[3 * i:3 * i + 3, 3 * i:3 * i + 3] = blocks[i]
    for b, i, j in zip(blocks[n:], ii, jj):
        sigma[3 * i:3 * i + 3, 3 * j:3 * j + 3] = b
        sigma[3 * j:3 * j + 3, 3 * i:3 * i + 3] = b.T
    logger.debug(f"Assembled Sigma for N={n} ({ii.size} pairs)")
    return SigmaMatrix(sigma, real.geom, k, opts)


def source_column(real: Realization, source: SourceSpec, k: float = K0,
                  opts: KernelOptions = KernelOptions()) -> np.ndarray:
    """Coupling of every atomic component to the source dipole, v_e = Sigma_{e,s}."""
    n = real.n_atoms
    if n == 0:
        return np.zeros(0, dtype=complex)
    src = np.repeat(source.position[None, :], n, axis=0)
    g = dyadic_blocks(real.positions, src, real.geom, k, opts)
    return (-(GAMMA0 / 2) * (g @ source.orientation)).reshape(-1)


def stationary_amplitudes(sigma: SigmaMatrix, source: SourceSpec, real: Realization,
                          column: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve [(omega_s - omega0) I - Sigma] b = v; the source feels no back-action."""
    if sigma.dimension != 3 * real.n_atoms:
        raise PreconditionError("Sigma dimension does not match the realization")
    if sigma.dimension == 0:
        return np.zeros(0, dtype=complex)
    if column is None:
        column = source_column(real, source, sigma.k, sigma.opts)
    system = source.detuning * np.eye(sigma.dimension) - sigma.matrix
    try:
        lu = linalg.lu_factor(system)
        b = linalg.lu_solve(lu, column)
    except (linalg.LinAlgError, ValueError) as e:
        raise SolverError(f"Dense solve failed: {e}") from e
    scale = np.linalg.norm(column)
    if scale == 0:
        return b
    residual = float(np.linalg.norm(system @ b - column) / scale)
    if not np.isfinite(residual) or residual > RESIDUAL_TOLERANCE:
        raise SolverError(f"Stationary solve residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:g}", residual=residual)
    return b


def evolve(sigma: SigmaMatrix, detuning: float, times: np.ndarray, initial: Optional[np.ndarray] = None,
           column: Optional[np.ndarray] = None, gamma_s: float = 0.0) -> np.ndarray:
    """Amplitudes in the frame rotating at omega_s, rows indexed by times.

    dc/dt = -i[(omega0 - omega_s) I + Sigma] c - i v exp(-gamma_s t / 2)
    """
    dim = sigma.dimension
    times = np.asarray(times, dtype=float)
    c0 = np.zeros(dim, dtype=complex) if initial is None else np.asarray(initial, dtype=complex)
    v = np.zeros(dim, dtype=complex) if column is None else np.asarray(column, dtype=complex)
    generator = -1j * (sigma.matrix - detuning * np.eye(dim))

    def rhs(t, c):
        return generator @ c - 1j * v * math.exp(-0.5 * gamma_s * t)

    sol = solve_ivp(rhs, (0.0, float(times[-1])), c0, method="DOP853", t_eval=times,
                    rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise IntegrationError(f"Amplitude integration failed: {sol.message}")
    return sol.y.T


def propagate(sigma: SigmaMatrix, detuning: float, t: float, initial: Optional[np.ndarray] = None,
              column: Optional[np.ndarray] = None, gamma_s: float = 0.0) -> np.ndarray:
    """Same amplitude equations as evolve, advanced to a single time t with the exact propagator.

    The decaying source amplitude is carried as one extra state, so the driven
    system is homogeneous and exp(A t) solves it regardless of stiffness.
    """
    dim = sigma.dimension
    c0 = np.zeros(dim, dtype=complex) if initial is None else np.asarray(initial, dtype=complex)
    v = np.zeros(dim, dtype=complex) if column is None else np.asarray(column, dtype=complex)
    augmented = np.zeros((dim + 1, dim + 1), dtype=complex)
    augmented[:dim, :dim] = -1j * (sigma.matrix - detuning * np.eye(dim))
    augmented[:dim, dim] = -1j * v
    augmented[dim, dim] = -0.5 * gamma_s
    state = linalg.expm(augmented * t) @ np.append(c0, 1.0)
    if not np.all(np.isfinite(state)):
        raise IntegrationError(f"Propagator overflowed at t={t:g}")
    return state[:dim]


def slowest_driven_rate(sigma: SigmaMatrix, column: np.ndarray, threshold: float = 1e-10) -> float:
    """Smallest decay rate among collective modes the drive actually excites."""
    eig, vecs = linalg.eig(sigma.matrix)
    # complex-symmetric Sigma: left eigenvectors are the transposed right ones
    overlap = np.abs(vecs.T @ column) / np.maximum(np.abs(np.sum(vecs * vecs, axis=0)), 1e-300)
    weight = overlap * np.linalg.norm(vecs, axis=0)
    driven = weight > threshold * max(np.linalg.norm(column), 1e-300)
    if not np.any(driven):
        return math.inf
    return float(np.min(-2 * eig.imag[driven]))


def time_domain_oracle(sigma: SigmaMatrix, source: SourceSpec, real: Realization, t_max: Optional[float] = None,
                       gamma_s_small: Optional[float] = None, column: Optional[np.ndarray] = None) -> np.ndarray:
    """Slowly varying envelope of the driven amplitudes after transients, for N up to about 10.

    The envelope still carries a shift of order gamma_s; two source linewidths
    are propagated and extrapolated linearly to gamma_s -> 0. Subradiant modes
    push t_max to 1e4 and beyond; the exact propagator takes that in one step.
    """
    if sigma.n_atoms > 10:
        raise PreconditionError("time_domain_oracle is meant for N <= 10")
    if sigma.dimension == 0:
        return np.zeros(0, dtype=complex)
    if column is None:
        column = source_column(real, source, sigma.k, sigma.opts)
    if not np.any(column):
        return np.zeros(sigma.dimension, dtype=complex)
    slowest = max(slowest_driven_rate(sigma, column), 1e-6)
    if t_max is None:
        t_max = 40.0 / slowest
    gamma = source.gamma_s if gamma_s_small is None else gamma_s_small
    gamma = min(gamma, 0.005 / t_max)
    envelopes = []
    for g in (gamma, gamma / 2):
        c = propagate(sigma, source.detuning, t_max, column=column, gamma_s=g)
        envelopes.append(c * math.exp(0.5 * g * t_max))
    logger.debug(f"Time-domain oracle: t_max={t_max:.1f}, gamma_s={gamma:.2e}")
    return 2 * envelopes[1] - envelopes[0]


def collective_spectrum(sigma: SigmaMatrix) -> List[Tuple[float, float]]:
    """(shift, rate) per eigenvalue of Sigma, rate = -2 Im(lambda), slowest first."""
    if sigma.dimension == 0:
        return []
    try:
        eig = linalg.eigvals(sigma.matrix)
    except linalg.LinAlgError as e:
        raise SolverError(f"Eigenvalue solver failed: {e}") from e
    pairs = [(float(lam.real), float(-2 * lam.imag)) for lam in eig]
    return sorted(pairs, key=lambda p: p[1])


def spectrum_summary(spectrum: List[Tuple[float, float]]) -> Dict[str, float]:
    """Rate statistics of a collective spectrum."""
    if not spectrum:
        return {"n_modes": 0, "min_rate": math.nan, "max_rate": math.nan, "median_rate": math.nan,
                "subradiant_fraction": math.nan, "superradiant_fraction": math.nan, "total_rate": 0.0}
    rates = np.array([rate for _, rate in spectrum])
    return {
        "n_modes": int(rates.size),
        "min_rate": float(rates.min()),
        "max_rate": float(rates.max()),
        "median_rate": float(np.median(rates)),
        "subradiant_fraction": float(np.mean(rates < SUBRADIANT_RATE)),
        "superradiant_fraction": float(np.mean(rates > SUPERRADIANT_RATE)),
        "total_rate": float(rates.sum()),
    }
