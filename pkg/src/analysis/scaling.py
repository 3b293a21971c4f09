"""
Scaling analysis of T(L): mean free path, exponential and hyperbolic fits, regime verdict.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import curve_fit

from src.errors import FitError, PreconditionError
from src.transport.transmission import TransmissionCurve
from src.waveguide.geometry import GAMMA0, K0, WaveguideGeometry
from src.waveguide.green import KernelOptions, waveguide_self_term

logger = logging.getLogger(__name__)

SELECTION_RATIO = 2.0
MIN_FIT_POINTS = 4


class FitModel(str, Enum):
    EXPONENTIAL = "exponential"
    HYPERBOLIC = "hyperbolic"


class Regime(str, Enum):
    LOCALIZATION = "localization"
    DIFFUSIVE = "diffusive"
    AMBIGUOUS = "ambiguous"


@dataclass
class ScalingFit:
    """Fitted scaling law over a window of sample lengths."""

    model: FitModel
    parameters: Dict[str, float]
    parameter_errors: Dict[str, float]
    residual_sum: float
    n_points: int
    l_range: Tuple[float, float]
    column: str = "T_mean"
    weighted: bool = True

    @property
    def dof(self) -> int:
        return max(self.n_points - 2, 1)

    def predict(self, lengths) -> np.ndarray:
        L = np.asarray(lengths, dtype=float)
        if self.model is FitModel.EXPONENTIAL:
            return self.parameters["T0"] * np.exp(-L / self.parameters["l_loc"])
        return self.parameters["c"] / (L + self.parameters["L0"])

    def to_dict(self) -> Dict:
        return {
            "model": self.model.value,
            "parameters": dict(self.parameters),
            "parameter_errors": dict(self.parameter_errors),
            "residual_sum": self.residual_sum,
            "n_points": self.n_points,
            "l_range": list(self.l_range),
            "column": self.column,
            "weighted": self.weighted,
        }


def mean_free_path(n: float, delta: float) -> float:
    """Free-space photon mean free path 1/(n sigma0) * (Delta^2 + (gamma0/2)^2) / (gamma0/2)^2."""
    if not n > 0:
        raise PreconditionError(f"Density must be positive, got {n}")
    sigma0 = 6 * math.pi / K0 ** 2
    half = GAMMA0 / 2
    return (delta * delta + half * half) / (half * half) / (n * sigma0)


def default_fit_range(n: float, delta: float) -> Tuple[float, float]:
    """Lengths at least twice the mean free path, past the ballistic regime."""
    return (2 * mean_free_path(n, delta), math.inf)


def _fit_data(curve: TransmissionCurve, l_range: Optional[Tuple[float, float]], column: str):
    if column not in ("T_mean", "T_geomean"):
        raise PreconditionError(f"Can only fit T_mean or T_geomean, got {column!r}")
    df = curve.valid()
    lo, hi = l_range if l_range is not None else (-math.inf, math.inf)
    df = df[(df["L"] >= lo) & (df["L"] <= hi)]
    if len(df) < MIN_FIT_POINTS:
        raise FitError(f"Need at least {MIN_FIT_POINTS} points in L range {lo:g}..{hi:g}, got {len(df)}")
    L = df["L"].to_numpy(dtype=float)
    T = df[column].to_numpy(dtype=float)
    if not np.all(np.isfinite(T)) or np.any(T <= 0):
        raise FitError(f"Non-positive or missing {column} inside the fit window")
    if column == "T_geomean":
        # spread of exp<ln T> follows from the standard error of <ln T>
        se_log = df["lnT_stderr"].to_numpy(dtype=float) if "lnT_stderr" in df else np.full_like(T, np.nan)
        sigma = T * se_log
    else:
        sigma = df["T_stderr"].to_numpy(dtype=float)
    weighted = bool(np.all(np.isfinite(sigma)) and np.all(sigma > 0))
    return L, T, (sigma if weighted else None), (float(lo), float(hi))


def _residual_sum(T: np.ndarray, model: np.ndarray, sigma: Optional[np.ndarray]) -> float:
    r = T - model
    if sigma is not None:
        r = r / sigma
    return float(np.sum(r * r))


def fit_exponential(curve: TransmissionCurve, l_range: Optional[Tuple[float, float]] = None,
                    column: str = "T_mean") -> ScalingFit:
    """T = T0 exp(-L / l_loc) by weighted linear least squares on ln T."""
    L, T, sigma, window = _fit_data(curve, l_range, column)
    y = np.log(T)
    if sigma is not None:
        (slope, intercept), cov = np.polyfit(L, y, 1, w=T / sigma, cov="unscaled")
    else:
        (slope, intercept), cov = np.polyfit(L, y, 1, cov=True)
    if not slope < 0:
        raise FitError(f"Transmission does not decay over the window (slope {slope:.3e})")
    t0 = math.exp(intercept)
    l_loc = -1.0 / slope
    errors = np.sqrt(np.clip(np.diag(cov), 0, None))
    fit = ScalingFit(
        model=FitModel.EXPONENTIAL,
        parameters={"T0": t0, "l_loc": l_loc},
        parameter_errors={"T0": t0 * float(errors[1]), "l_loc": float(errors[0]) / slope ** 2},
        residual_sum=_residual_sum(T, t0 * np.exp(-L / l_loc), sigma),
        n_points=int(L.size), l_range=window, column=column, weighted=sigma is not None,
    )
    logger.info(f"Exponential fit: T0={t0:.4g}, l_loc={l_loc:.4g}, residual={fit.residual_sum:.3e}")
    return fit


def _hyperbola(L, c, L0):
    return c / (L + L0)


def fit_hyperbolic(curve: TransmissionCurve, l_range: Optional[Tuple[float, float]] = None,
                   column: str = "T_mean") -> ScalingFit:
    """T = c / (L + L0) by weighted nonlinear least squares, seeded from a line through 1/T."""
    L, T, sigma, window = _fit_data(curve, l_range, column)
    slope, intercept = np.polyfit(L, 1.0 / T, 1)
    if not slope > 0:
        raise FitError(f"1/T does not grow with L over the window (slope {slope:.3e})")
    p0 = (1.0 / slope, intercept / slope)
    try:
        popt, pcov = curve_fit(_hyperbola, L, T, p0=p0, sigma=sigma, absolute_sigma=sigma is not None)
    except (RuntimeError, ValueError) as e:
        raise FitError(f"Hyperbolic fit did not converge: {e}") from e
    c, l0 = (float(v) for v in popt)
    if not c > 0:
        raise FitError(f"Hyperbolic amplitude must be positive, got {c:.3e}")
    errors = np.sqrt(np.clip(np.diag(pcov), 0, None))
    fit = ScalingFit(
        model=FitModel.HYPERBOLIC,
        parameters={"c": c, "L0": l0},
        parameter_errors={"c": float(errors[0]), "L0": float(errors[1])},
        residual_sum=_residual_sum(T, _hyperbola(L, c, l0), sigma),
        n_points=int(L.size), l_range=window, column=column, weighted=sigma is not None,
    )
    logger.info(f"Hyperbolic fit: c={c:.4g}, L0={l0:.4g}, residual={fit.residual_sum:.3e}")
    return fit


def select_model(fit_e: ScalingFit, fit_h: ScalingFit, threshold: float = SELECTION_RATIO) -> Regime:
    """Pick a regime only when one model's residual per degree of freedom is `threshold` times smaller."""
    if fit_e.n_points != fit_h.n_points or fit_e.l_range != fit_h.l_range:
        raise PreconditionError("Both fits must use the same L window")
    r_e = fit_e.residual_sum / fit_e.dof
    r_h = fit_h.residual_sum / fit_h.dof
    if r_e == 0 and r_h == 0:
        return Regime.AMBIGUOUS
    if r_h == 0 or r_e > threshold * r_h:
        return Regime.DIFFUSIVE
    if r_e == 0 or r_h > threshold * r_e:
        return Regime.LOCALIZATION
    return Regime.AMBIGUOUS


def single_scatterer_transmission(position, geom: WaveguideGeometry, detuning: float, orientation=(0.0, 1.0, 0.0),
                                  k: float = K0, opts: KernelOptions = KernelOptions()) -> float:
    """One-dimensional single-scatterer transmission |D / (D + i Gamma / 2)|^2 for a single-mode guide.

    D is the detuning corrected by the waveguide level shift and Gamma the
    decay rate into the guided mode, both from the self term.
    """
    o = np.asarray(orientation, dtype=float)
    o = o / np.linalg.norm(o)
    g_self = o @ waveguide_self_term(position, geom, k, opts) @ o
    shifted = detuning + 0.5 * GAMMA0 * g_self.real
    return float(abs(shifted / (shifted + 0.5j * GAMMA0 * g_self.imag)) ** 2)
