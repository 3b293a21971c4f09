"""
Strict TOML configuration loader for transmission experiments.
"""
import difflib
import logging
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10: tomli is the stdlib tomllib backport
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from src.dipoles.coupled import SourceSpec
from src.errors import ConfigError, SimulationError
from src.transport.transmission import DetectorGrid, SimulationConfig
from src.waveguide.geometry import WaveguideGeometry
from src.waveguide.green import KernelOptions

ROOT_DIR = Path(__file__).parent.parent.parent
PRESETS_DIR = ROOT_DIR / "presets"

logger = logging.getLogger(__name__)

# section -> allowed keys; physics-bearing keys have no defaults
SCHEMA: Dict[str, tuple] = {
    "geometry": ("a", "b"),
    "medium": ("density", "detuning", "min_separation"),
    "source": ("position", "orientation", "gamma_s"),
    "detector": ("offset", "nx", "ny"),
    "scan": ("lengths", "realizations_per_l", "fit_min_length", "fit_column", "threads"),
    "kernel": ("image_truncation_radius", "damping_parameter", "mode_evanescent_cutoff",
               "crossover_dz", "resolution_factor", "convergence_tolerance"),
    "rng": ("master_seed",),
}
REQUIRED = ("geometry.a", "geometry.b", "medium.density", "medium.detuning", "scan.lengths")


def _suggest(word: str, candidates) -> Optional[str]:
    matches = difflib.get_close_matches(word, list(candidates), n=1, cutoff=0.6)
    return matches[0] if matches else None


def _check_keys(raw: Dict[str, Any]):
    for section, body in raw.items():
        if section not in SCHEMA:
            raise ConfigError(f"Unknown section [{section}]", key=section, suggestion=_suggest(section, SCHEMA))
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table", key=section)
        for key in body:
            if key not in SCHEMA[section]:
                raise ConfigError(f"Unknown key '{section}.{key}'", key=f"{section}.{key}",
                                  suggestion=_suggest(key, SCHEMA[section]))
    missing = [dotted for dotted in REQUIRED if dotted.split(".")[1] not in raw.get(dotted.split(".")[0], {})]
    if missing:
        raise ConfigError(f"Missing required keys: {', '.join(missing)}", key=missing[0])


def _number(raw: Dict[str, Any], dotted: str, default=None, kind=float):
    section, key = dotted.split(".")
    value = raw.get(section, {}).get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{dotted}' must be a number, got {value!r}", key=dotted)
    if kind is int and value != int(value):
        raise ConfigError(f"'{dotted}' must be an integer, got {value!r}", key=dotted)
    return kind(value)


def _vector(raw: Dict[str, Any], dotted: str, default):
    section, key = dotted.split(".")
    value = raw.get(section, {}).get(key, default)
    try:
        vec = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{dotted}' must be a list of numbers", key=dotted) from e
    if vec.shape != (3,):
        raise ConfigError(f"'{dotted}' must have 3 components, got {value!r}", key=dotted)
    return vec


def build_config(raw: Dict[str, Any]) -> SimulationConfig:
    """Validate a parsed TOML document and apply the documented defaults."""
    _check_keys(raw)
    lengths = raw["scan"]["lengths"]
    if not isinstance(lengths, list) or not lengths:
        raise ConfigError("'scan.lengths' must be a non-empty list", key="scan.lengths")
    if any(isinstance(L, bool) or not isinstance(L, (int, float)) for L in lengths):
        raise ConfigError("'scan.lengths' must contain only numbers", key="scan.lengths")
    stage = "geometry"
    try:
        geom = WaveguideGeometry(_number(raw, "geometry.a"), _number(raw, "geometry.b"))
        stage = "medium"
        detuning = _number(raw, "medium.detuning")
        stage = "source"
        source = SourceSpec(
            position=_vector(raw, "source.position", [geom.a / 2, geom.b / 2, -500.0]),
            orientation=_vector(raw, "source.orientation", [0.0, 1.0, 0.0]),
            detuning=detuning,
            gamma_s=_number(raw, "source.gamma_s", 1e-3),
        )
        stage = "detector"
        detector = DetectorGrid(
            offset=_number(raw, "detector.offset", 100.0),
            nx=_number(raw, "detector.nx", 16, int),
            ny=_number(raw, "detector.ny", 16, int),
        )
        stage = "kernel"
        defaults = KernelOptions()
        kernel = KernelOptions(**{
            key: _number(raw, f"kernel.{key}", getattr(defaults, key), type(getattr(defaults, key)))
            for key in SCHEMA["kernel"]
        })
        stage = "scan"
        fit_column = raw.get("scan", {}).get("fit_column", "T_mean")
        config = SimulationConfig(
            geom=geom,
            density=_number(raw, "medium.density"),
            detuning=detuning,
            lengths=tuple(float(L) for L in lengths),
            realizations_per_l=_number(raw, "scan.realizations_per_l", 256, int),
            master_seed=_number(raw, "rng.master_seed", 0, int),
            source=source,
            detector=detector,
            kernel=kernel,
            min_separation=_number(raw, "medium.min_separation", 0.05),
            fit_min_length=_number(raw, "scan.fit_min_length"),
            fit_column=fit_column,
            threads=_number(raw, "scan.threads", 1, int),
        )
    except ConfigError:
        raise
    except SimulationError as e:
        raise ConfigError(f"Invalid [{stage}] settings: {e}", key=stage) from e
    return config


def parse_config(path) -> SimulationConfig:
    """Read a TOML experiment file; bare names resolve against the shipped presets."""
    path = Path(path)
    if not path.exists() and (PRESETS_DIR / f"{path.name}.toml").exists():
        path = PRESETS_DIR / f"{path.name}.toml"
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Malformed TOML in {path}: {e}") from e
    config = build_config(raw)
    logger.info(f"Loaded config {path.name}: a={config.geom.a}, b={config.geom.b}, "
                f"n={config.density}, delta={config.detuning}, {len(config.lengths)} lengths")
    return config


def config_snapshot(config: SimulationConfig) -> Dict[str, Any]:
    """Plain-data view of a config, enough to rebuild it with build_config."""
    k = config.kernel
    snapshot = {
        "geometry": {"a": config.geom.a, "b": config.geom.b},
        "medium": {"density": config.density, "detuning": config.detuning, "min_separation": config.min_separation},
        "source": {"position": config.source.position.tolist(),
                   "orientation": np.real(config.source.orientation).tolist(),
                   "gamma_s": config.source.gamma_s},
        "detector": {"offset": config.detector.offset, "nx": config.detector.nx, "ny": config.detector.ny},
        "scan": {"lengths": list(config.lengths), "realizations_per_l": config.realizations_per_l,
                 "fit_column": config.fit_column, "threads": config.threads},
        "kernel": {key: getattr(k, key) for key in SCHEMA["kernel"]},
        "rng": {"master_seed": config.master_seed},
    }
    if config.fit_min_length is not None:
        snapshot["scan"]["fit_min_length"] = config.fit_min_length
    return snapshot
