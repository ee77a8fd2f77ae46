"""Run artifacts: stats.json, CSV tables and the markdown run report."""

import csv
import json
import math
import os
from datetime import datetime, timezone

import numpy as np

from .gmls import condition_table

LEVEL_FIELDS = {
    "level": int,
    "n_nodes": int,
    "dofs": int,
    "eta": float,
    "gmres_iterations": int,
    "wall_time": float,
}

FIELD_HEADER = ["x", "y", "dx", "u", "v", "p", "level"]
TRAJECTORY_HEADER = ["t", "body", "X", "Y", "theta", "Xdot", "Ydot", "thetadot", "min_gap"]
CONDITION_HEADER = ["node", "eps", "neighbors", "condition"]


def write_stats(stats, stats_file):
    """Save a run's stats dict as indented JSON."""
    os.makedirs(os.path.dirname(os.path.abspath(stats_file)), exist_ok=True)
    with open(stats_file, "w") as f:
        json.dump(stats, f, indent=2)


def load_stats(stats_file):
    with open(stats_file, "r") as f:
        return json.load(f)


def _number(value, kind):
    if isinstance(value, bool):
        return False
    if kind is int:
        return isinstance(value, int)
    return isinstance(value, (int, float))


def validate_stats(stats) -> list[str]:
    """Schema problems in a stats dict; an empty list means it is valid."""
    problems = []
    if not isinstance(stats, dict):
        return ["stats must be a JSON object"]
    if not isinstance(stats.get("scenario"), str):
        problems.append("missing string field 'scenario'")
    runs = stats.get("runs")
    if not isinstance(runs, list) or not runs:
        problems.append("missing non-empty list 'runs'")
        return problems
    for r, run in enumerate(runs):
        if not isinstance(run, dict):
            problems.append(f"runs[{r}] is not an object")
            continue
        if not isinstance(run.get("label"), str):
            problems.append(f"runs[{r}] has no string 'label'")
        levels = run.get("levels")
        if not isinstance(levels, list) or not levels:
            problems.append(f"runs[{r}] has no non-empty 'levels' list")
            continue
        for i, level in enumerate(levels):
            for key, kind in LEVEL_FIELDS.items():
                if key not in level:
                    problems.append(f"runs[{r}].levels[{i}] is missing '{key}'")
                elif not _number(level[key], kind):
                    problems.append(f"runs[{r}].levels[{i}].{key} should be {kind.__name__}, got {level[key]!r}")
                elif kind is float and not math.isfinite(level[key]):
                    problems.append(f"runs[{r}].levels[{i}].{key} is not finite")
            if _number(level.get("eta"), float) and level["eta"] < 0:
                problems.append(f"runs[{r}].levels[{i}].eta is negative")
    return problems


def write_convergence_csv(rows, path):
    """One row per (run, level); columns are the union of the row keys in first-seen order."""
    header = []
    for row in rows:
        header.extend(k for k in row if k not in header)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)


def write_fields_csv(path, nodes, solution):
    """Nodal (u, v, p) of one level with header x,y,dx,u,v,p,level."""
    n = len(nodes)
    x = np.asarray(solution, dtype=float)
    table = np.column_stack([
        nodes.positions, nodes.spacing, x[0: 3 * n: 3], x[1: 3 * n: 3], x[2: 3 * n: 3], np.full(n, nodes.level),
    ])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savetxt(path, table, delimiter=",", header=",".join(FIELD_HEADER), comments="",
               fmt=["%.17g"] * 6 + ["%d"])


def write_conditions_csv(path, stencils):
    """Moment-matrix condition number of every stencil of one level."""
    table = condition_table(stencils).reshape(-1, 4)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.savetxt(path, table, delimiter=",", header=",".join(CONDITION_HEADER), comments="",
               fmt=["%d", "%.17g", "%d", "%.17g"])


def write_trajectory_csv(rows, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRAJECTORY_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.3e}" if value and (abs(value) < 1e-2 or abs(value) >= 1e4) else f"{value:.4g}"
    return str(value)


def generate_report(stats, run_time=None):
    """Markdown summary of a run: one table per run plus the scenario summary."""
    run_time = run_time or datetime.now(timezone.utc)
    lines = []
    lines.append(f"# meshless-stokes run: {stats['scenario']} ({run_time.strftime('%Y-%m-%d %H:%M UTC')})")
    lines.append("")
    lines.append(f"**GMLS order:** {stats.get('order', '?')} | **Runs:** {len(stats['runs'])}")
    lines.append("")

    summary = stats.get("summary", {})
    if summary:
        lines.append("## Summary")
        lines.append("")
        for key, value in summary.items():
            lines.append(f"- **{key}:** {_fmt(value)}")
        lines.append("")

    for run in stats["runs"]:
        lines.append(f"## {run['label']}")
        lines.append("")
        extra = [k for k in ("velocity_rms", "pressure_rms") if k in run["levels"][0]]
        header = ["level", "N", "DOFs", "eta", "GMRES"] + extra + ["time [s]"]
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "---|" * len(header))
        for level in run["levels"]:
            cells = [level["level"], level["n_nodes"], level["dofs"], level["eta"], level["gmres_iterations"]]
            cells += [level[k] for k in extra] + [level["wall_time"]]
            lines.append("| " + " | ".join(_fmt(c) for c in cells) + " |")
        lines.append("")
        for key, value in run.get("slopes", {}).items():
            lines.append(f"- slope ({key}): {_fmt(value)}")
        if run.get("slopes"):
            lines.append("")

    steps = stats.get("steps")
    if steps:
        lines.append("## Time steps")
        lines.append("")
        lines.append("| t | dt | rejected | min gap | GMRES per level (last stage) |")
        lines.append("|---|---|---|---|---|")
        for step in steps:
            iters = ", ".join(str(i) for i in step["gmres_iterations"])
            lines.append(f"| {_fmt(step['t'])} | {_fmt(step['dt'])} | {step['rejected']} | "
                         f"{_fmt(step['min_gap'])} | {iters} |")
        lines.append("")

    return "\n".join(lines)
