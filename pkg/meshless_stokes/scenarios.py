"""Scenario runners: Taylor-Green convergence, obstacle shapes, duplicate cells, suspensions."""

import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dynamics import BodyState, QuasiStaticRhs, configure, step_rk45
from .errors import ConfigError, GeometryError
from .flows import TaylorGreenFlow
from .geometry import Circle, Domain, Polygon, Rectangle, RoundedSquare, SolidBody, minimum_gap
from .refine import AdaptOptions, adapt_loop, regression_slope, uniform_loop
from .report import (
    generate_report,
    validate_stats,
    write_conditions_csv,
    write_convergence_csv,
    write_fields_csv,
    write_stats,
    write_trajectory_csv,
)

logger = logging.getLogger(__name__)

SLOPE_POINTS = 4


@dataclass
class Scenario:
    """Everything one run needs, resolved from the config sections."""

    name: str
    order: int
    dx0: float
    alpha: float
    tolerance: float
    gmres_tol: float
    max_levels: int
    output_dir: Path
    threads: int = 1
    restart: int = 100
    maxiter: int = 1000
    smoothing_sweeps: int = 3
    viscosity: float = 1.0
    density: float = 1.0
    horizon: float | None = None
    dt0: float | None = None
    rtol: float = 1e-5
    atol: float = 1e-8
    verbose: bool = False
    dump_debug: bool = False

    @classmethod
    def from_config(cls, cfg, name=None, verbose=False) -> "Scenario":
        name = name or cfg["scenario"]["name"]
        section = cfg[name.replace("-", "_")]
        refinement = cfg["refinement"]
        solver = cfg["solver"]
        dynamic = name == "suspension"
        return cls(
            name=name,
            order=cfg["discretization"]["order"],
            dx0=section["dx0"],
            alpha=refinement["alpha"],
            tolerance=section.get("tolerance", refinement["tolerance"]),
            gmres_tol=solver["gmres_tol"],
            max_levels=section.get("levels", refinement["max_levels"]),
            output_dir=Path(cfg["scenario"]["output_dir"]),
            threads=cfg["discretization"]["threads"],
            restart=solver["restart"],
            maxiter=solver["maxiter"],
            smoothing_sweeps=solver["smoothing_sweeps"],
            viscosity=cfg["fluid"]["viscosity"],
            density=cfg["fluid"]["density"],
            horizon=cfg["dynamics"]["horizon"] if dynamic else None,
            dt0=cfg["dynamics"]["dt0"] if dynamic else None,
            rtol=cfg["dynamics"]["rtol"],
            atol=cfg["dynamics"]["atol"],
            verbose=verbose,
            dump_debug=cfg["scenario"].get("dump_debug", False),
        )

    def options(self, **overrides) -> AdaptOptions:
        values = dict(
            order=self.order, dx0=self.dx0, alpha=self.alpha, tolerance=self.tolerance,
            max_levels=self.max_levels, threads=self.threads, gmres_tol=self.gmres_tol,
            restart=self.restart, maxiter=self.maxiter, smoothing_sweeps=self.smoothing_sweeps,
        )
        values.update(overrides)
        return AdaptOptions(**values)

    def flow(self) -> TaylorGreenFlow:
        return TaylorGreenFlow(viscosity=self.viscosity, density=self.density)


# ---------------------------------------------------------------------------
# Shared output helpers
# ---------------------------------------------------------------------------

def _level_rows(label, result, extra=None):
    rows = []
    for i, record in enumerate(result.records):
        row = {"run": label, **record.as_dict()}
        row.pop("residual_history", None)
        if extra:
            row.update(extra[i])
        rows.append(row)
    return rows


def _run_entry(label, result, extra=None, slopes=None):
    levels = []
    for i, record in enumerate(result.records):
        level = record.as_dict()
        if extra:
            level.update(extra[i])
        levels.append(level)
    return {"label": label, "converged": result.converged, "levels": levels, "slopes": slopes or {}}


def _write_levels(sc: "Scenario", directory: Path, result):
    for i, level in enumerate(result.hierarchy.levels):
        write_fields_csv(directory / f"fields_L{i}.csv", level.nodes, result.solutions[i])
        if sc.dump_debug:
            write_conditions_csv(directory / f"conditions_L{i}.csv", level.stencils)
            level.system.dump_coo(directory / f"matrix_L{i}.coo")


def _recovered_slope(result) -> float:
    records = result.records[-SLOPE_POINTS:]
    n = [r.n_nodes for r in records]
    eta = [max(r.eta, 1e-300) for r in records]
    return regression_slope(np.log(n), -np.log(eta))


def _finish(sc: Scenario, cfg, runs, rows, summary, steps=None):
    stats = {
        "scenario": sc.name,
        "order": sc.order,
        "config": cfg,
        "runs": runs,
        "summary": summary,
    }
    if steps is not None:
        stats["steps"] = steps
    problems = validate_stats(stats)
    if problems:
        logger.warning("stats.json schema problems: %s", "; ".join(problems))

    out = sc.output_dir
    write_stats(stats, out / "stats.json")
    write_convergence_csv(rows, out / "convergence.csv")
    with open(out / "report.md", "w") as f:
        f.write(generate_report(stats, datetime.now(timezone.utc)))
    print(f"\n  Stats written to:  {out / 'stats.json'}")
    print(f"  Report written to: {out / 'report.md'}")
    return stats


def _print_levels(result):
    for r in result.records:
        print(f"    L{r.level}: N={r.n_nodes:<7d} DOFs={r.dofs:<8d} eta={r.eta:.3e}  "
              f"GMRES={r.gmres_iterations:<4d} {r.wall_time:.1f}s")


def _banner(title):
    run_time = datetime.now(timezone.utc)
    print(f"meshless-stokes: {title} at {run_time.strftime('%Y-%m-%d %H:%M UTC')}")
    print(f"{'='*60}")


def _footer(message):
    print(f"\n{'='*60}")
    print(f"  DONE: {message}")
    print(f"{'='*60}")


# ---------------------------------------------------------------------------
# Taylor-Green
# ---------------------------------------------------------------------------

def rms_errors(nodes, solution, flow: TaylorGreenFlow):
    """RMS velocity error and RMS pressure error after removing the mean pressure offset."""
    n = len(nodes)
    x = np.asarray(solution, dtype=float)
    velocity = np.column_stack([x[0: 3 * n: 3], x[1: 3 * n: 3]]) - flow.velocity(nodes.positions)
    pressure = x[2: 3 * n: 3] - flow.pressure(nodes.positions)
    pressure -= pressure.mean()
    return (float(np.sqrt(np.mean(np.sum(velocity**2, axis=1)))),
            float(np.sqrt(np.mean(pressure**2))))


def run_taylor_green(cfg, verbose=False):
    """Uniform refinement sweep against the exact Taylor-Green vortex. Returns a summary dict."""
    sc = Scenario.from_config(cfg, "taylor-green", verbose)
    flow = sc.flow()
    domain = Domain(Rectangle.square(2.0), (), sc.viscosity, sc.density)

    _banner(f"Taylor-Green sweep (order {sc.order}, {sc.max_levels} levels)")
    print(f"  Initial spacing {sc.dx0:g}, GMRES tol {sc.gmres_tol:g}")
    result = uniform_loop(domain, flow, sc.options(), sc.max_levels, keep_history=verbose)
    _print_levels(result)

    extra = []
    for level, x in zip(result.hierarchy.levels, result.solutions):
        vel, pres = rms_errors(level.nodes, x, flow)
        extra.append({"velocity_rms": vel, "pressure_rms": pres})
    _write_levels(sc, sc.output_dir, result)

    h = np.log(np.sqrt([r.n_nodes for r in result.records]))
    slopes = {
        "velocity": regression_slope(h, -np.log([e["velocity_rms"] for e in extra])),
        "pressure": regression_slope(h, -np.log([e["pressure_rms"] for e in extra])),
    }
    runs = [_run_entry("taylor-green", result, extra, slopes)]
    summary = {
        "levels": len(result.records),
        "velocity_slope": slopes["velocity"],
        "pressure_slope": slopes["pressure"],
        "finest_velocity_rms": extra[-1]["velocity_rms"],
        "finest_pressure_rms": extra[-1]["pressure_rms"],
    }
    _finish(sc, cfg, runs, _level_rows("taylor-green", result, extra), summary)
    _footer(f"velocity slope {slopes['velocity']:.2f}, pressure slope {slopes['pressure']:.2f}")
    return summary


# ---------------------------------------------------------------------------
# Stationary obstacle shapes
# ---------------------------------------------------------------------------

def obstacle_shape(name: str, side: float) -> Polygon:
    if name == "square":
        return Polygon.regular(4, side)
    if name == "hexagon":
        return Polygon.regular(6, side)
    if name == "triangle":
        return Polygon.regular(3, side)
    if name == "parallelogram":
        return Polygon.parallelogram(side)
    raise ConfigError(f"Unknown obstacle shape {name!r}")


def run_obstacle(cfg, verbose=False):
    """Adaptive refinement around one fixed sharp-cornered obstacle per shape."""
    sc = Scenario.from_config(cfg, "obstacle", verbose)
    section = cfg["obstacle"]
    flow = sc.flow()
    box = Rectangle.square(section["box_side"])

    _banner(f"Obstacle convergence ({', '.join(section['shapes'])})")
    runs, rows, summary = [], [], {}
    for name in section["shapes"]:
        body = SolidBody(obstacle_shape(name, section["side"]), fixed=True)
        domain = Domain(box, (body,), sc.viscosity, sc.density)
        print(f"\n  [{name}]")
        result = adapt_loop(domain, flow, sc.options(), keep_history=verbose)
        _print_levels(result)
        slope = _recovered_slope(result)
        print(f"    recovered-error slope (last {SLOPE_POINTS} levels): {slope:.2f}")
        _write_levels(sc, sc.output_dir / name, result)
        runs.append(_run_entry(name, result, slopes={"recovered_error": slope}))
        rows.extend(_level_rows(name, result))
        summary[f"{name}_slope"] = slope

    _finish(sc, cfg, runs, rows, summary)
    _footer(", ".join(f"{name} {summary[f'{name}_slope']:.2f}" for name in section["shapes"]))
    return summary


# ---------------------------------------------------------------------------
# Duplicate cells of near-contact cylinders
# ---------------------------------------------------------------------------

def cylinder_cells(solid_count: int, radius_fraction: float, gap_fraction: float,
                   viscosity: float = 1.0, density: float = 1.0) -> Domain:
    """Tile [-1, 1]^2 with cells holding four cylinders each around the cell center."""
    if solid_count <= 0 or solid_count % 4:
        raise ConfigError(f"Duplicate cells need a positive multiple of 4 solids, got {solid_count}")
    cells = solid_count // 4
    cols = math.ceil(math.sqrt(cells))
    rows = math.ceil(cells / cols)
    side = 2.0 / max(cols, rows)
    radius = radius_fraction * side
    offset = radius + 0.5 * gap_fraction * radius
    x0 = -0.5 * cols * side
    y0 = -0.5 * rows * side

    bodies = []
    for c in range(cells):
        cx = x0 + side * (c % cols + 0.5)
        cy = y0 + side * (c // cols + 0.5)
        for sx, sy in ((-1, -1), (1, -1), (-1, 1), (1, 1)):
            bodies.append(SolidBody(Circle(radius), position=(cx + sx * offset, cy + sy * offset)))
    return Domain(Rectangle.square(2.0), tuple(bodies), viscosity, density)


def run_duplicate_cells(cfg, verbose=False):
    """GMRES iteration counts per refinement level for growing numbers of cylinders."""
    sc = Scenario.from_config(cfg, "duplicate-cells", verbose)
    section = cfg["duplicate_cells"]
    flow = sc.flow()

    _banner(f"Duplicate cells (N_s = {', '.join(str(n) for n in section['solid_counts'])})")
    runs, rows, summary = [], [], {}
    for count in section["solid_counts"]:
        domain = cylinder_cells(count, section["radius_fraction"], section["gap_fraction"],
                                sc.viscosity, sc.density)
        radius = domain.bodies[0].shape.radius
        dx0 = min(sc.dx0, radius)
        print(f"\n  [N_s = {count}] R = {radius:.4g}, gap = {section['gap_fraction'] * radius:.3g}, dx0 = {dx0:g}")
        result = adapt_loop(domain, flow, sc.options(dx0=dx0), keep_history=verbose)
        _print_levels(result)
        label = f"ns_{count}"
        _write_levels(sc, sc.output_dir / label, result)
        runs.append(_run_entry(label, result, slopes={"recovered_error": _recovered_slope(result)}))
        rows.extend(_level_rows(label, result))
        summary[f"{label}_iterations"] = [r.gmres_iterations for r in result.records]

    counts = section["solid_counts"]
    if 4 in counts and 16 in counts:
        summary["iteration_ratio_16_4"] = (summary["ns_16_iterations"][-1] / max(summary["ns_4_iterations"][-1], 1))
    _finish(sc, cfg, runs, rows, summary)
    _footer(f"{len(counts)} solid counts")
    return summary


# ---------------------------------------------------------------------------
# Suspension of freely moving particles
# ---------------------------------------------------------------------------

def suspension_domain(circles: int, squares: int, radius: float, square_side: float,
                      corner_fraction: float, viscosity: float = 1.0, density: float = 1.0) -> Domain:
    """Circles then rounded squares on a regular grid over [-1, 1]^2."""
    total = circles + squares
    cols = math.ceil(math.sqrt(total))
    rows = math.ceil(total / cols)
    pitch = 2.0 / max(cols, rows)
    bodies = []
    for k in range(total):
        position = (-1.0 + pitch * (k % cols + 0.5), -1.0 + pitch * (k // cols + 0.5))
        if k < circles:
            shape = Circle(radius)
        else:
            shape = RoundedSquare(square_side, corner_fraction * square_side)
        bodies.append(SolidBody(shape, position=position))
    try:
        return Domain(Rectangle.square(2.0), tuple(bodies), viscosity, density)
    except GeometryError as e:
        raise ConfigError(f"Initial suspension layout is invalid: {e}")


def _trajectory_rows(state: BodyState, rates, min_gap):
    rates = np.asarray(rates).reshape(-1, 3)
    return [
        {
            "t": state.time, "body": n,
            "X": state.positions[n, 0], "Y": state.positions[n, 1], "theta": state.orientations[n],
            "Xdot": rates[n, 0], "Ydot": rates[n, 1], "thetadot": rates[n, 2],
            "min_gap": min_gap,
        }
        for n in range(len(state.positions))
    ]


def run_suspension(cfg, verbose=False):
    """RK45 evolution of a particle suspension with adaptive refinement at every stage."""
    sc = Scenario.from_config(cfg, "suspension", verbose)
    section = cfg["suspension"]
    domain = suspension_domain(section["circles"], section["squares"], section["radius"],
                               section["square_side"], section["corner_fraction"], sc.viscosity, sc.density)
    rhs = QuasiStaticRhs(domain, sc.flow(), sc.options())

    _banner(f"Suspension ({section['circles']} circles, {section['squares']} squares, T = {sc.horizon:g})")
    state = BodyState.from_domain(domain, sc.dt0)
    rates = rhs(state.time, state.to_vector())
    trajectory = _trajectory_rows(state, rates, minimum_gap(domain))
    steps = []

    while sc.horizon - state.time > 1e-12 * max(1.0, sc.horizon):
        state, step = step_rk45(state, rhs, sc.rtol, sc.atol, max_dt=sc.horizon - state.time, rates=rates)
        # the last stage was solved at the accepted state
        rates, last = step.rates, rhs.stages[-1]
        dt = step.dt
        gap = minimum_gap(configure(domain, state))
        trajectory.extend(_trajectory_rows(state, rates, gap))
        steps.append({
            "t": state.time,
            "dt": dt,
            "rejected": step.rejected,
            "solves": step.evaluations,
            "min_gap": gap,
            "levels": last["levels"],
            "gmres_iterations": last["gmres_iterations"],
            "eta": last["eta"],
        })
        print(f"  t={state.time:.4f} dt={dt:.3e} min gap={gap:.3e} "
              f"GMRES={'/'.join(str(i) for i in last['gmres_iterations'])}")

    write_trajectory_csv(trajectory, sc.output_dir / "trajectory.csv")
    final = rhs.last
    _write_levels(sc, sc.output_dir, final)
    runs = [_run_entry("final step", final, slopes={"recovered_error": _recovered_slope(final)})]
    summary = {
        "steps": len(steps),
        "final_time": state.time,
        "min_gap": min(s["min_gap"] for s in steps) if steps else minimum_gap(domain),
        "solves": len(rhs.stages),
    }
    _finish(sc, cfg, runs, _level_rows("final step", final), summary, steps=steps)
    _footer(f"{len(steps)} accepted steps, smallest gap {summary['min_gap']:.3e}")
    return summary


RUNNERS = {
    "taylor-green": run_taylor_green,
    "obstacle": run_obstacle,
    "duplicate-cells": run_duplicate_cells,
    "suspension": run_suspension,
}


def run_scenario(cfg, verbose=False):
    return RUNNERS[cfg["scenario"]["name"]](cfg, verbose=verbose)
