import pytest

from meshless_stokes.config import apply_overrides, default_config, load_config
from meshless_stokes.errors import ConfigError


def _write(tmp_path, text):
    path = tmp_path / "config.toml"
    path.write_text(text)
    return path


def test_defaults_cover_every_section():
    cfg = default_config()
    assert cfg["scenario"]["name"] == "taylor-green"
    assert cfg["discretization"]["order"] == 2
    assert cfg["refinement"]["alpha"] == 0.8
    assert cfg["solver"]["restart"] == 100
    assert cfg["duplicate_cells"]["solid_counts"] == [4, 16, 36]
    assert cfg["suspension"]["circles"] == 12


def test_partial_file_is_filled_with_defaults(tmp_path):
    cfg = load_config(_write(tmp_path, '[scenario]\nname = "obstacle"\n\n[discretization]\norder = 4\n'))
    assert cfg["scenario"]["name"] == "obstacle"
    assert cfg["discretization"]["order"] == 4
    assert cfg["solver"]["gmres_tol"] == 1e-6


def test_integer_accepted_for_float_key(tmp_path):
    cfg = load_config(_write(tmp_path, "[fluid]\nviscosity = 2\n"))
    assert cfg["fluid"]["viscosity"] == 2.0
    assert isinstance(cfg["fluid"]["viscosity"], float)


@pytest.mark.parametrize(
    "text",
    [
        "[plotting]\ndpi = 100\n",
        "[solver]\ntolerance = 1e-6\n",
        "[discretization]\norder = 3\n",
        "[discretization]\norder = 2.0\n",
        "[discretization]\nthreads = true\n",
        "[scenario]\ndump_debug = 1\n",
        "[refinement]\nalpha = 0.0\n",
        "[refinement]\nalpha = 1.5\n",
        "[refinement]\ntolerance = -1e-3\n",
        "[solver]\nsmoothing_sweeps = 0\n",
        '[scenario]\nname = "channel"\n',
        '[obstacle]\nshapes = ["circle"]\n',
        "[obstacle]\nshapes = []\n",
        "[obstacle]\nside = 1.5\n",
        "[duplicate_cells]\nsolid_counts = [5]\n",
        "[duplicate_cells]\nradius_fraction = 0.3\n",
        "[suspension]\ncircles = 0\nsquares = 0\n",
        "[suspension]\ncorner_fraction = 0.5\n",
        "scenario = 3\n",
    ],
)
def test_invalid_values_are_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[scenario\nname = 1\n"))


def test_overrides_are_validated():
    cfg = apply_overrides(default_config(), scenario="suspension", threads=4, output_dir="out/run1")
    assert cfg["scenario"]["name"] == "suspension"
    assert cfg["discretization"]["threads"] == 4
    assert cfg["scenario"]["output_dir"] == "out/run1"
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), threads=0)


def test_dump_flag_from_file_and_override(tmp_path):
    assert default_config()["scenario"]["dump_debug"] is False
    cfg = load_config(_write(tmp_path, "[scenario]\ndump_debug = true\n"))
    assert cfg["scenario"]["dump_debug"] is True
    assert apply_overrides(default_config(), dump_debug=True)["scenario"]["dump_debug"] is True
