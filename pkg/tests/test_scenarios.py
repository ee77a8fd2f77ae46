import json

import numpy as np
import pytest

import meshless_stokes.__main__ as cli
from meshless_stokes.config import default_config
from meshless_stokes.errors import ConfigError, GeometryError, SolverError
from meshless_stokes.flows import TaylorGreenFlow
from meshless_stokes.geometry import Circle, RoundedSquare, gap, minimum_gap
from meshless_stokes.point_cloud import seed_uniform
from meshless_stokes.report import load_stats, validate_stats
from meshless_stokes.scenarios import (
    Scenario,
    cylinder_cells,
    obstacle_shape,
    rms_errors,
    run_scenario,
    suspension_domain,
)


def test_taylor_green_exact_values():
    flow = TaylorGreenFlow()
    np.testing.assert_allclose(flow.velocity(np.array([[0.0, 0.5]])), [[1.0, 0.0]], atol=1e-15)
    assert flow.pressure(np.array([[0.0, 0.5]]))[0] == pytest.approx(0.0, abs=1e-15)


def test_taylor_green_forcing_divergence_matches_finite_difference():
    flow = TaylorGreenFlow(viscosity=0.5, density=2.0)
    x = np.array([[0.13, -0.41], [0.7, 0.2]])
    h = 1e-5
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    fd = ((flow.body_force(x + ex)[:, 0] - flow.body_force(x - ex)[:, 0])
          + (flow.body_force(x + ey)[:, 1] - flow.body_force(x - ey)[:, 1])) / (2 * h)
    np.testing.assert_allclose(flow.force_divergence(x), fd, rtol=1e-6, atol=1e-6)


def test_rms_errors_vanish_for_exact_solution(empty_domain):
    flow = TaylorGreenFlow()
    nodes = seed_uniform(empty_domain, 0.25)
    x = np.zeros(3 * len(nodes))
    vel = flow.velocity(nodes.positions)
    x[0::3], x[1::3] = vel[:, 0], vel[:, 1]
    x[2::3] = flow.pressure(nodes.positions) + 5.0
    assert rms_errors(nodes, x, flow) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_cylinder_cells_layout():
    domain = cylinder_cells(4, 0.1, 0.05)
    assert len(domain.bodies) == 4
    assert domain.bodies[0].shape.radius == pytest.approx(0.2)
    assert gap(domain.bodies[0], domain.bodies[1]) == pytest.approx(0.01)

    domain = cylinder_cells(16, 0.1, 0.05)
    assert len(domain.bodies) == 16
    assert minimum_gap(domain) == pytest.approx(0.005)
    with pytest.raises(ConfigError):
        cylinder_cells(5, 0.1, 0.05)


def test_suspension_layout():
    domain = suspension_domain(3, 1, 0.04, 0.08, 0.1)
    assert [type(b.shape) for b in domain.bodies] == [Circle, Circle, Circle, RoundedSquare]
    assert minimum_gap(domain) > 0
    with pytest.raises(ConfigError):
        suspension_domain(12, 0, 0.3, 0.08, 0.1)


def test_obstacle_shapes():
    assert len(obstacle_shape("hexagon", 0.2).vertices) == 6
    assert len(obstacle_shape("parallelogram", 0.2).vertices) == 4
    with pytest.raises(ConfigError):
        obstacle_shape("circle", 0.2)


def test_scenario_resolves_section_overrides():
    cfg = default_config()
    sc = Scenario.from_config(cfg, "obstacle")
    assert sc.tolerance == 1e-8
    assert sc.max_levels == 10
    assert sc.horizon is None
    options = sc.options(dx0=0.05)
    assert options.dx0 == 0.05
    assert options.restart == 100

    susp = Scenario.from_config(cfg, "suspension")
    assert susp.tolerance == cfg["refinement"]["tolerance"]
    assert susp.horizon == 0.5


def test_cli_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "config.toml"
    path.write_text("[discretization]\norder = 3\n")
    assert cli.main(["solve", "--config", str(path)]) == 2
    assert "ERROR" in capsys.readouterr().out


@pytest.mark.parametrize("error, code", [(GeometryError("bad"), 2), (SolverError("stuck", level=3), 3)])
def test_cli_exit_codes(monkeypatch, tmp_path, error, code):
    def fail(cfg, verbose=False):
        raise error

    monkeypatch.setattr(cli, "run_scenario", fail)
    assert cli.main(["solve", "--out", str(tmp_path)]) == code


def test_cli_validate(tmp_path):
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"scenario": "taylor-green", "runs": [{"label": "a", "levels": [
        {"level": 0, "n_nodes": 10, "dofs": 30, "eta": 0.1, "gmres_iterations": 2, "wall_time": 0.1}]}]}))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"runs": []}))

    assert cli.main(["validate", str(good)]) == 0
    assert cli.main(["validate", str(bad)]) == 2
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 2


def _small_config(tmp_path, name):
    cfg = default_config()
    cfg["scenario"]["name"] = name
    cfg["scenario"]["output_dir"] = str(tmp_path)
    return cfg


@pytest.mark.slow
def test_taylor_green_run_converges_at_second_order(tmp_path):
    cfg = _small_config(tmp_path, "taylor-green")
    cfg["taylor_green"].update(dx0=0.25, levels=3)
    summary = run_scenario(cfg)

    assert 1.4 < summary["velocity_slope"] < 3.0
    stats = load_stats(tmp_path / "stats.json")
    assert validate_stats(stats) == []
    assert (tmp_path / "fields_L2.csv").exists()
    assert (tmp_path / "report.md").exists()


@pytest.mark.slow
def test_obstacle_run_writes_one_run_per_shape(tmp_path):
    cfg = _small_config(tmp_path, "obstacle")
    cfg["obstacle"].update(shapes=["square", "triangle"], levels=2)
    run_scenario(cfg)

    stats = load_stats(tmp_path / "stats.json")
    assert [r["label"] for r in stats["runs"]] == ["square", "triangle"]
    assert (tmp_path / "square" / "fields_L0.csv").exists()


@pytest.mark.slow
def test_suspension_reaches_horizon(tmp_path):
    cfg = _small_config(tmp_path, "suspension")
    cfg["suspension"].update(circles=2, radius=0.2, dx0=0.2)
    cfg["refinement"].update(max_levels=1)
    cfg["dynamics"].update(horizon=0.05, dt0=0.05)
    summary = run_scenario(cfg)

    assert summary["final_time"] == pytest.approx(0.05)
    assert summary["min_gap"] > 0
    assert (tmp_path / "trajectory.csv").exists()


def test_cli_dump_writes_conditions_and_matrices(tmp_path):
    config = tmp_path / "config.toml"
    config.write_text('[scenario]\nname = "taylor-green"\n\n[taylor_green]\ndx0 = 0.5\nlevels = 1\n')
    out = tmp_path / "run"
    assert cli.main(["solve", "--config", str(config), "--out", str(out), "--dump"]) == 0

    conditions = (out / "conditions_L0.csv").read_text().splitlines()
    assert conditions[0] == "node,eps,neighbors,condition"
    n_nodes = len((out / "fields_L0.csv").read_text().splitlines()) - 1
    assert len(conditions) == n_nodes + 1

    entries = np.loadtxt(out / "matrix_L0.coo", ndmin=2)
    assert entries.shape[1] == 3
    assert entries[:, :2].max() < 3 * n_nodes


def test_debug_dumps_are_off_by_default(tmp_path):
    config = tmp_path / "config.toml"
    config.write_text('[taylor_green]\ndx0 = 0.5\nlevels = 1\n')
    assert cli.main(["solve", "--config", str(config), "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "fields_L0.csv").exists()
    assert not (tmp_path / "run" / "conditions_L0.csv").exists()
    assert not (tmp_path / "run" / "matrix_L0.coo").exists()


@pytest.mark.slow
def test_duplicate_cells_records_iteration_ratio(tmp_path):
    cfg = _small_config(tmp_path, "duplicate-cells")
    cfg["duplicate_cells"].update(solid_counts=[4, 16], gap_fraction=1.0, dx0=0.1, levels=2)
    summary = run_scenario(cfg)

    stats = load_stats(tmp_path / "stats.json")
    assert validate_stats(stats) == []
    assert [r["label"] for r in stats["runs"]] == ["ns_4", "ns_16"]
    assert len(summary["ns_16_iterations"]) <= 2
    assert summary["iteration_ratio_16_4"] > 0
    assert stats["summary"]["iteration_ratio_16_4"] == pytest.approx(summary["iteration_ratio_16_4"])
    assert (tmp_path / "ns_16" / "fields_L0.csv").exists()
