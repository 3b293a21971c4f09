"""
Persistence of transmission curves, fit reports and run manifests.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from src.analysis.scaling import Regime, ScalingFit
from src.errors import OutputError
from src.transport.transmission import TransmissionCurve

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["L", "T_mean", "T_stderr", "T_geomean", "n_realizations"]
FLOAT_FORMAT = "%.17g"
CODE_VERSION = "0.1.0"


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit for bit; timestamps live only here."""

    config: Dict[str, Any]
    master_seed: int
    seed_keys: Dict[str, List[int]]
    code_version: str = CODE_VERSION
    started_at: str = ""
    finished_at: str = ""
    timings: Dict[str, float] = field(default_factory=dict)
    failure_counts: Dict[str, int] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)


def _finite_or_none(value):
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path: Path, payload: Dict[str, Any]):
    with open(path, "w") as f:
        json.dump(_finite_or_none(payload), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def fits_document(fits: Dict[str, Optional[ScalingFit]], regime: Regime,
                  fit_errors: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {"regime": regime.value}
    for name, fit in fits.items():
        if fit is not None:
            doc[name] = fit.to_dict()
        else:
            doc[name] = {"error": (fit_errors or {}).get(name, "fit not performed")}
    return doc


def emit_outputs(curve: TransmissionCurve, fits: Dict[str, Optional[ScalingFit]], regime: Regime,
                 manifest: RunManifest, out_dir, fit_errors: Optional[Dict[str, str]] = None) -> Dict[str, Path]:
    """Write curve.csv, fits.json, manifest.json and two-column plot files."""
    out_dir = Path(out_dir)
    paths = {
        "curve": out_dir / "curve.csv",
        "fits": out_dir / "fits.json",
        "manifest": out_dir / "manifest.json",
        "linear": out_dir / "curve_linear.dat",
        "log": out_dir / "curve_log.dat",
    }
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        curve.records[CURVE_COLUMNS].to_csv(paths["curve"], index=False, float_format=FLOAT_FORMAT)
        _write_json(paths["fits"], fits_document(fits, regime, fit_errors))
        _write_json(paths["manifest"], asdict(manifest))
        valid = curve.valid()
        valid = valid[valid["T_mean"] > 0]
        L = valid["L"].to_numpy(dtype=float)
        T = valid["T_mean"].to_numpy(dtype=float)
        np.savetxt(paths["linear"], np.column_stack([L, T]), fmt=FLOAT_FORMAT, header="L T_mean")
        np.savetxt(paths["log"], np.column_stack([L, np.log(T)]), fmt=FLOAT_FORMAT, header="L ln_T_mean")
    except OSError as e:
        raise OutputError(f"Could not write outputs to {out_dir}: {e}") from e
    logger.info(f"Wrote {len(paths)} output files to {out_dir}")
    return paths


def read_curve_csv(path) -> pd.DataFrame:
    """Re-read a curve file with exact float round-trip."""
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise OutputError(f"Could not read curve {path}: {e}") from e


def write_error_record(out_dir, error: Exception, exit_code: int) -> Optional[Path]:
    """Machine-readable error.json; silently skipped when the directory is unwritable."""
    record = {"error": type(error).__name__, "message": str(error), "exit_code": exit_code}
    try:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        _write_json(path / "error.json", record)
        return path / "error.json"
    except OSError:
        logger.debug(f"Could not write error record to {out_dir}")
        return None
