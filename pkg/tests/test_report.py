import csv
from datetime import datetime, timezone

import numpy as np
import pytest

from meshless_stokes.gmls import build_stencils
from meshless_stokes.report import (
    CONDITION_HEADER,
    FIELD_HEADER,
    generate_report,
    load_stats,
    validate_stats,
    write_conditions_csv,
    write_convergence_csv,
    write_fields_csv,
    write_stats,
    write_trajectory_csv,
)


@pytest.fixture
def stats():
    level = {"level": 0, "n_nodes": 96, "dofs": 288, "eta": 1.5e-2, "gmres_iterations": 7, "wall_time": 0.4}
    return {
        "scenario": "obstacle",
        "order": 2,
        "runs": [{"label": "square", "levels": [level, {**level, "level": 1, "eta": 4e-3}],
                  "slopes": {"recovered_error": 1.93}}],
        "summary": {"square_slope": 1.93},
    }


def test_valid_stats_have_no_problems(stats, tmp_path):
    path = tmp_path / "nested" / "stats.json"
    write_stats(stats, path)
    assert validate_stats(load_stats(path)) == []


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda s: s.pop("scenario"), "scenario"),
        (lambda s: s.update(runs=[]), "runs"),
        (lambda s: s["runs"][0].pop("label"), "label"),
        (lambda s: s["runs"][0]["levels"][0].pop("dofs"), "dofs"),
        (lambda s: s["runs"][0]["levels"][0].update(eta=-1.0), "negative"),
        (lambda s: s["runs"][0]["levels"][0].update(gmres_iterations=True), "gmres_iterations"),
        (lambda s: s["runs"][0]["levels"][0].update(n_nodes=9.5), "n_nodes"),
        (lambda s: s["runs"][0]["levels"][1].update(wall_time=float("inf")), "finite"),
    ],
)
def test_schema_problems_are_reported(stats, mutate, fragment):
    mutate(stats)
    problems = validate_stats(stats)
    assert problems
    assert any(fragment in p for p in problems)


def test_fields_csv(coarse_nodes, tmp_path):
    x = np.arange(3 * len(coarse_nodes), dtype=float)
    path = tmp_path / "fields_L0.csv"
    write_fields_csv(path, coarse_nodes, x)

    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == FIELD_HEADER
    assert len(rows) == len(coarse_nodes) + 1
    assert [float(v) for v in rows[1][3:6]] == [0.0, 1.0, 2.0]
    assert rows[1][6] == "0"


def test_conditions_csv_has_one_row_per_stencil(coarse_nodes, tmp_path):
    path = tmp_path / "debug" / "conditions_L0.csv"
    write_conditions_csv(path, build_stencils(coarse_nodes, 2))

    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == CONDITION_HEADER
    assert [int(r[0]) for r in rows[1:]] == list(range(len(coarse_nodes)))
    assert all(1.0 <= float(r[3]) <= 1e12 for r in rows[1:])


def test_convergence_csv_uses_union_of_columns(tmp_path):
    path = tmp_path / "convergence.csv"
    write_convergence_csv([{"run": "a", "level": 0}, {"run": "a", "level": 1, "velocity_rms": 0.1}], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "run,level,velocity_rms"
    assert lines[1] == "a,0,"


def test_trajectory_csv_header(tmp_path):
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv([{"t": 0.0, "body": 0, "X": 0.1, "Y": 0.2, "theta": 0.0, "Xdot": 0.0,
                           "Ydot": 0.0, "thetadot": 0.0, "min_gap": 0.05}], path)
    assert path.read_text().splitlines()[0] == "t,body,X,Y,theta,Xdot,Ydot,thetadot,min_gap"


def test_report_lists_runs_and_slopes(stats):
    stats["steps"] = [{"t": 0.1, "dt": 0.1, "rejected": 0, "min_gap": 0.02, "gmres_iterations": [3, 5]}]
    text = generate_report(stats, datetime(2026, 1, 2, 3, 4, tzinfo=timezone.utc))

    assert text.startswith("# meshless-stokes run: obstacle (2026-01-02 03:04 UTC)")
    assert "## square" in text
    assert "| level | N | DOFs | eta | GMRES | time [s] |" in text
    assert "- slope (recovered_error): 1.93" in text
    assert "## Time steps" in text
    assert "3, 5" in text
