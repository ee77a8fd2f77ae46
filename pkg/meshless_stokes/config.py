"""Configuration loader for meshless-stokes.

Every section is optional; missing keys take the desk-scale defaults below.
Unknown sections or keys, wrong types and out-of-range values are rejected so
that a run is fully described by its config file.
"""

import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    # Python < 3.11 fallback
    try:
        import tomli as tomllib  # type: ignore[no-redef]
    except ModuleNotFoundError:
        print("ERROR: Python 3.11+ is required (for tomllib), or install tomli: pip install tomli")
        sys.exit(1)

from .errors import ConfigError

# Project root is two levels up from this file (meshless_stokes/config.py -> project root)
_PROJECT_ROOT = Path(__file__).resolve().parent.parent

SCENARIOS = ("taylor-green", "obstacle", "duplicate-cells", "suspension")
OBSTACLE_SHAPES = ("square", "hexagon", "triangle", "parallelogram")
ORDERS = (2, 4, 6)

# section -> key -> default; the default's type is the accepted type
_DEFAULT_SETTINGS = {
    "scenario": {
        "name": "taylor-green",
        "output_dir": "results",
        "dump_debug": False,
    },
    "discretization": {
        "order": 2,
        "threads": 1,
    },
    "refinement": {
        "alpha": 0.8,
        "tolerance": 1e-3,
        "max_levels": 10,
    },
    "solver": {
        "gmres_tol": 1e-6,
        "restart": 100,
        "maxiter": 1000,
        "smoothing_sweeps": 3,
    },
    "fluid": {
        "viscosity": 1.0,
        "density": 1.0,
    },
    "dynamics": {
        "horizon": 0.5,
        "dt0": 0.2,
        "rtol": 1e-5,
        "atol": 1e-8,
    },
    "taylor_green": {
        "dx0": 0.125,
        "levels": 4,
    },
    "obstacle": {
        "shapes": list(OBSTACLE_SHAPES),
        "side": 0.2,
        "box_side": 1.0,
        "dx0": 0.1,
        "levels": 10,
        "tolerance": 1e-8,
    },
    "duplicate_cells": {
        "solid_counts": [4, 16, 36],
        "radius_fraction": 0.1,
        "gap_fraction": 0.05,
        "dx0": 0.1,
        "levels": 7,
    },
    "suspension": {
        "circles": 12,
        "squares": 0,
        "radius": 0.04,
        "square_side": 0.08,
        "corner_fraction": 0.1,
        "dx0": 0.04,
    },
}

# keys that must be strictly positive
_POSITIVE = {
    ("discretization", "threads"),
    ("refinement", "tolerance"), ("refinement", "max_levels"),
    ("solver", "gmres_tol"), ("solver", "restart"), ("solver", "maxiter"),
    ("fluid", "viscosity"), ("fluid", "density"),
    ("dynamics", "horizon"), ("dynamics", "dt0"), ("dynamics", "rtol"), ("dynamics", "atol"),
    ("taylor_green", "dx0"), ("taylor_green", "levels"),
    ("obstacle", "side"), ("obstacle", "box_side"), ("obstacle", "dx0"), ("obstacle", "levels"),
    ("obstacle", "tolerance"),
    ("duplicate_cells", "radius_fraction"), ("duplicate_cells", "gap_fraction"),
    ("duplicate_cells", "dx0"), ("duplicate_cells", "levels"),
    ("suspension", "radius"), ("suspension", "square_side"), ("suspension", "corner_fraction"),
    ("suspension", "dx0"),
}


def _check_type(section: str, key: str, value, default):
    name = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(f"{name} must not be a boolean")
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise ConfigError(f"{name} must be a non-empty list, got {value!r}")
        item_type = type(default[0])
        if not all(isinstance(v, item_type) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{name} must be a list of {item_type.__name__}, got {value!r}")
        return list(value)
    return value


def _validate(config: dict) -> dict:
    for section, key in sorted(_POSITIVE):
        if not config[section][key] > 0:
            raise ConfigError(f"{section}.{key} must be positive, got {config[section][key]}")

    if config["scenario"]["name"] not in SCENARIOS:
        raise ConfigError(f"scenario.name must be one of {', '.join(SCENARIOS)}, got {config['scenario']['name']!r}")
    if config["discretization"]["order"] not in ORDERS:
        raise ConfigError(f"discretization.order must be one of {ORDERS}, got {config['discretization']['order']}")
    if not 0.0 < config["refinement"]["alpha"] <= 1.0:
        raise ConfigError(f"refinement.alpha must lie in (0, 1], got {config['refinement']['alpha']}")
    if config["solver"]["smoothing_sweeps"] < 1:
        raise ConfigError("solver.smoothing_sweeps must be at least 1")

    unknown = [s for s in config["obstacle"]["shapes"] if s not in OBSTACLE_SHAPES]
    if unknown:
        raise ConfigError(f"obstacle.shapes has unknown shape(s) {', '.join(unknown)}; "
                          f"expected {', '.join(OBSTACLE_SHAPES)}")
    if config["obstacle"]["side"] >= config["obstacle"]["box_side"]:
        raise ConfigError("obstacle.side must be smaller than obstacle.box_side")

    for count in config["duplicate_cells"]["solid_counts"]:
        if count <= 0 or count % 4:
            raise ConfigError(f"duplicate_cells.solid_counts entries must be positive multiples of 4, got {count}")
    cells = config["duplicate_cells"]
    # outermost cylinder edge sits (2 + gap/2) R from the cell center
    if cells["radius_fraction"] * (2.0 + 0.5 * cells["gap_fraction"]) >= 0.5:
        raise ConfigError("duplicate_cells cylinders do not fit inside their cell")

    susp = config["suspension"]
    if susp["circles"] < 0 or susp["squares"] < 0 or susp["circles"] + susp["squares"] == 0:
        raise ConfigError("suspension needs a non-negative number of circles and squares, at least one body")
    if susp["corner_fraction"] >= 0.5:
        raise ConfigError("suspension.corner_fraction must be below 0.5")
    return config


def _populate_defaults(config: dict) -> dict:
    """Reject unknown entries, coerce types and fill every missing key with its default.

    Mutates *config* in place and returns it.
    """
    unknown_sections = [s for s in config if s not in _DEFAULT_SETTINGS]
    if unknown_sections:
        raise ConfigError(f"Unknown config section(s): {', '.join(unknown_sections)}")

    for section, defaults in _DEFAULT_SETTINGS.items():
        values = config.setdefault(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        unknown_keys = [k for k in values if k not in defaults]
        if unknown_keys:
            raise ConfigError(f"Unknown key(s) in [{section}]: {', '.join(unknown_keys)}")
        for key, default_val in defaults.items():
            if key in values:
                values[key] = _check_type(section, key, values[key], default_val)
            else:
                values[key] = list(default_val) if isinstance(default_val, list) else default_val

    return _validate(config)


def default_config() -> dict:
    return _populate_defaults({})


def load_config(path: str | Path | None = None) -> dict:
    """Load and validate the TOML configuration file.

    Parameters
    ----------
    path : str | Path | None
        Path to the TOML config file.  When *None* (the default), the loader
        looks for ``config.toml`` in the project root and falls back to the
        built-in defaults if there is none.

    Returns
    -------
    dict
        Parsed configuration dictionary with defaults applied.

    Raises
    ------
    ConfigError
        If the file is missing, unparsable, or fails validation.
    """
    if path is None:
        path = _PROJECT_ROOT / "config.toml"
        if not path.exists():
            return default_config()
    else:
        path = Path(path)

    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")

    try:
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"Failed to parse {path}: {exc}")

    return _populate_defaults(config)


def apply_overrides(config: dict, scenario: str | None = None, threads: int | None = None,
                    output_dir: str | None = None, dump_debug: bool | None = None) -> dict:
    """Merge command-line values over the file values and re-validate."""
    if scenario is not None:
        config["scenario"]["name"] = scenario
    if threads is not None:
        config["discretization"]["threads"] = threads
    if output_dir is not None:
        config["scenario"]["output_dir"] = str(output_dir)
    if dump_debug is not None:
        config["scenario"]["dump_debug"] = dump_debug
    return _validate(config)
