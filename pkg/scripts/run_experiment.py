"""
End-to-end transmission experiment: scan T(L), fit both scaling laws, pick a regime, write outputs.
"""
import argparse
import dataclasses
import logging
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd

# Add paths for imports
root_dir = Path(__file__).parent.parent
sys.path.insert(0, str(root_dir))

from src.analysis.scaling import (Regime, ScalingFit, default_fit_range, fit_exponential, fit_hyperbolic,
                                  select_model)
from src.data.config_loader import config_snapshot, parse_config
from src.data.outputs import RunManifest, emit_outputs
from src.dipoles.coupled import SourceSpec
from src.errors import ConfigError, FitError, SimulationError
from src.transport.transmission import SimulationConfig, TransmissionCurve, scan_curve
from src.waveguide.geometry import WaveguideGeometry, propagating_modes

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["a", "b", "mode_count", "T0", "l_loc", "c", "L0", "regime", "error"]


def apply_overrides(config: SimulationConfig, seed: Optional[int] = None,
                    threads: Optional[int] = None) -> SimulationConfig:
    """Command-line flags win over the file."""
    changes = {}
    if seed is not None:
        changes["master_seed"] = seed
    if threads is not None:
        changes["threads"] = threads
    if not changes:
        return config
    try:
        return dataclasses.replace(config, **changes)
    except SimulationError as e:
        raise ConfigError(f"Invalid command-line override: {e}") from e


def with_geometry(config: SimulationConfig, a: float, b: float) -> SimulationConfig:
    """Same experiment in another cross-section; the source stays on-axis at its original depth."""
    try:
        geom = WaveguideGeometry(a, b)
        src = config.source
        source = SourceSpec(position=[a / 2, b / 2, src.position[2]], orientation=src.orientation,
                            detuning=src.detuning, gamma_s=src.gamma_s)
        return dataclasses.replace(config, geom=geom, source=source)
    except SimulationError as e:
        raise ConfigError(f"Invalid geometry ({a}, {b}): {e}") from e


def load_geometries(path) -> List[Tuple[float, float]]:
    """CSV with columns a, b."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Geometry list not found: {path}")
    df = pd.read_csv(path, comment="#")
    if df.empty:
        return []
    missing = {"a", "b"} - set(df.columns)
    if missing:
        raise ConfigError(f"Geometry list {path} lacks columns {sorted(missing)}", key=sorted(missing)[0])
    return [(float(a), float(b)) for a, b in zip(df["a"], df["b"])]


class ExperimentRunner:
    """Drives one configuration, or a sweep over cross-sections, to files on disk."""

    def __init__(self, out_dir, progress: bool = True):
        self.out_dir = Path(out_dir)
        self.progress = progress

    def fit_curve(self, config: SimulationConfig, curve: TransmissionCurve):
        """Both scaling fits over L >= fit_min_length; a failed fit is recorded, not fatal."""
        lo = config.fit_min_length if config.fit_min_length is not None \
            else default_fit_range(config.density, config.detuning)[0]
        window = (lo, float("inf"))
        fits: Dict[str, Optional[ScalingFit]] = {}
        errors: Dict[str, str] = {}
        for name, fitter in (("exponential", fit_exponential), ("hyperbolic", fit_hyperbolic)):
            try:
                fits[name] = fitter(curve, window, column=config.fit_column)
            except FitError as e:
                logger.warning(f"{name.capitalize()} fit failed: {e}")
                fits[name] = None
                errors[name] = str(e)
        if fits["exponential"] is not None and fits["hyperbolic"] is not None:
            regime = select_model(fits["exponential"], fits["hyperbolic"])
        else:
            regime = Regime.AMBIGUOUS
        return fits, errors, regime

    def run_experiment(self, config: SimulationConfig, out_dir=None):
        """Scan, fit, select and write; returns (curve, exponential fit, hyperbolic fit, manifest)."""
        out_dir = Path(out_dir) if out_dir is not None else self.out_dir
        logger.info("=== EXPERIMENT STARTED ===")
        started = datetime.now()
        t0 = time.perf_counter()
        logger.info(f"Geometry {config.geom.a} x {config.geom.b}, {len(propagating_modes(config.geom, config.k))} "
                    f"propagating modes, {config.realizations_per_l} realizations per length")

        curve = scan_curve(config, progress=self.progress)
        scan_seconds = time.perf_counter() - t0
        fits, fit_errors, regime = self.fit_curve(config, curve)

        failures = curve.metadata.get("failures", [])
        manifest = RunManifest(
            config=config_snapshot(config),
            master_seed=config.master_seed,
            seed_keys=curve.metadata.get("seed_keys", {}),
            started_at=started.isoformat(timespec="seconds"),
            finished_at=datetime.now().isoformat(timespec="seconds"),
            timings={"scan_seconds": scan_seconds, "total_seconds": time.perf_counter() - t0},
            failure_counts={
                "realizations": len(failures),
                "solver": curve.metadata.get("solver_failures", 0),
                "failed_points": int(curve.records["failed"].sum()),
            },
            failures=failures,
        )
        emit_outputs(curve, fits, regime, manifest, out_dir, fit_errors)

        logger.info("=== EXPERIMENT COMPLETED ===")
        logger.info(f"Regime: {regime.value}")
        logger.info(f"Run time: {datetime.now() - started}")
        return curve, fits["exponential"], fits["hyperbolic"], manifest

    def sweep_geometry(self, base: SimulationConfig, geometries: Iterable[Tuple[float, float]]) -> pd.DataFrame:
        """Repeat the experiment per cross-section; one failing geometry does not stop the sweep."""
        logger.info("=== GEOMETRY SWEEP STARTED ===")
        rows = []
        for a, b in geometries:
            row = {col: None for col in SWEEP_COLUMNS}
            row.update(a=a, b=b)
            try:
                config = with_geometry(base, a, b)
                row["mode_count"] = len(propagating_modes(config.geom, config.k))
                _, fit_e, fit_h, _ = self.run_experiment(config, self.out_dir / f"a{a:g}_b{b:g}")
                if fit_e is not None:
                    row.update(T0=fit_e.parameters["T0"], l_loc=fit_e.parameters["l_loc"])
                if fit_h is not None:
                    row.update(c=fit_h.parameters["c"], L0=fit_h.parameters["L0"])
                row["regime"] = select_model(fit_e, fit_h).value if fit_e and fit_h else Regime.AMBIGUOUS.value
            except SimulationError as e:
                logger.error(f"Geometry ({a}, {b}) failed: {type(e).__name__}: {e}")
                row["error"] = f"{type(e).__name__}: {e}"
            rows.append(row)
        table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(self.out_dir / "sweep.csv", index=False, float_format="%.17g")
        logger.info(f"=== GEOMETRY SWEEP COMPLETED: {len(table)} geometries ===")
        return table


def main():
    """Run one configuration or shipped preset."""
    parser = argparse.ArgumentParser(description='Run a transmission experiment from a TOML config or preset name')
    parser.add_argument('config', help='Config path or preset name (fig2a, fig2b)')
    parser.add_argument('--out', default='results', help='Output directory')
    parser.add_argument('--seed', type=int, help='Override rng.master_seed')
    parser.add_argument('--threads', type=int, help='Worker threads for realizations')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')

    args = parser.parse_args()
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')

    try:
        config = apply_overrides(parse_config(args.config), args.seed, args.threads)
        ExperimentRunner(args.out).run_experiment(config)
    except SimulationError as e:
        print(f"\n❌ FAILED: {type(e).__name__}: {e}")
        sys.exit(e.exit_code)

    print(f"\n✅ SUCCESS: results written to {args.out}")


if __name__ == "__main__":
    main()
