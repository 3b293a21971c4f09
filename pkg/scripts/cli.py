"""
Command-line front end: run, sweep, modes, mfp.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 IO failure.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd

root_dir = Path(__file__).parent.parent
sys.path.insert(0, str(root_dir))

from scripts.run_experiment import ExperimentRunner, apply_overrides, load_geometries
from src.analysis.scaling import mean_free_path
from src.data.config_loader import parse_config
from src.data.outputs import write_error_record
from src.errors import OutputError, SimulationError
from src.waveguide.geometry import WaveguideGeometry, cutoff_wavenumber, longitudinal_wavenumber, propagating_modes

logger = logging.getLogger(__name__)


def mode_census_table(a: float, b: float, k: float) -> pd.DataFrame:
    geom = WaveguideGeometry(a, b)
    rows = []
    for mode in propagating_modes(geom, k):
        rows.append({"mode": mode.label, "k_c": cutoff_wavenumber(mode, geom),
                     "k_z": longitudinal_wavenumber(mode, geom, k).real})
    return pd.DataFrame(rows, columns=["mode", "k_c", "k_z"])


def cmd_run(args) -> int:
    config = apply_overrides(parse_config(args.config), args.seed, args.threads)
    ExperimentRunner(args.out, progress=not args.quiet).run_experiment(config)
    print(f"✅ Results written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = apply_overrides(parse_config(args.config), args.seed, args.threads)
    table = ExperimentRunner(args.out, progress=not args.quiet).sweep_geometry(config, load_geometries(args.geometries))
    print(table.to_string(index=False) if not table.empty else "No geometries given")
    return 0


def cmd_modes(args) -> int:
    table = mode_census_table(args.a, args.b, args.k)
    print(f"{len(table)} propagating modes for a={args.a:g}, b={args.b:g}, k={args.k:g}")
    if not table.empty:
        print(table.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
    return 0


def cmd_mfp(args) -> int:
    print(f"{mean_free_path(args.n, args.delta):.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Light transport through random atoms in a rectangular waveguide',
        epilog='💡 Presets: fig2a (single-mode guide), fig2b (multimode guide)'
    )
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    sub = parser.add_subparsers(dest='command', required=True)

    for name, helptext in (('run', 'Scan T(L) and fit scaling laws'), ('sweep', 'Repeat a run over cross-sections')):
        p = sub.add_parser(name, help=helptext)
        p.add_argument('config', help='TOML config path or preset name')
        p.add_argument('--out', default='results', help='Output directory (default: results)')
        p.add_argument('--seed', type=int, help='Override rng.master_seed')
        p.add_argument('--threads', type=int, help='Worker threads for realizations')
        p.add_argument('--quiet', action='store_true', help='No progress bar')
        if name == 'sweep':
            p.add_argument('--geometries', required=True, help='CSV file with columns a,b')

    p = sub.add_parser('modes', help='Print the propagating mode census')
    p.add_argument('--a', type=float, required=True)
    p.add_argument('--b', type=float, required=True)
    p.add_argument('--k', type=float, default=1.0)

    p = sub.add_parser('mfp', help='Free-space photon mean free path')
    p.add_argument('--n', type=float, required=True, help='Atomic density (k0^3 units)')
    p.add_argument('--delta', type=float, required=True, help='Detuning (gamma0 units)')
    return parser


COMMANDS = {'run': cmd_run, 'sweep': cmd_sweep, 'modes': cmd_modes, 'mfp': cmd_mfp}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return COMMANDS[args.command](args)
    except (SimulationError, OSError) as e:
        if isinstance(e, OSError):
            e = OutputError(str(e))
        exit_code = e.exit_code
        logger.error(f"❌ {type(e).__name__}: {e}")
        if getattr(args, 'out', None):
            write_error_record(args.out, e, exit_code)
        print(json.dumps({"error": type(e).__name__, "message": str(e), "exit_code": exit_code}), file=sys.stderr)
        return exit_code


if __name__ == "__main__":
    sys.exit(main())
