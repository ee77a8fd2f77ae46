"""Adaptive h-refinement: SOLVE -> ESTIMATE -> MARK -> REFINE.

The estimator compares each node's reconstructed velocity gradient, evaluated at its
neighbors, against the gradient recovered there by averaging every reconstruction
that reaches that neighbor.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import assemble
from .errors import RefinementError, SolverError
from .geometry import Domain
from .gmls import build_stencils
from .multigrid import Hierarchy
from .multigrid import solve as multigrid_solve
from .parallel import parallel_map
from .point_cloud import NodeSet, compose_parents, refine_nodes, seed_uniform, support_radius

logger = logging.getLogger(__name__)

MAX_ROUNDS = 20
QUASI_UNIFORM_RATIO = 2.0


@dataclass
class ErrorField:
    local: np.ndarray
    volumes: np.ndarray
    total: float
    gradient_energy: float
    alpha: float = 0.8
    tolerance: float = 1e-3

    def recompute_total(self) -> float:
        return float(self.local @ self.volumes) / max(self.gradient_energy, 1e-300)


def recover_gradients(neighbor_lists, outgoing, n: int) -> np.ndarray:
    """Average of every reconstruction evaluated at each node.

    ``outgoing[i]`` holds node i's gradient (rows ux, uy, vx, vy) evaluated at each
    entry of ``neighbor_lists[i]``.
    """
    total = np.zeros((n, 4))
    count = np.zeros(n)
    for nbrs, grads in zip(neighbor_lists, outgoing):
        np.add.at(total, nbrs, grads)
        np.add.at(count, nbrs, 1.0)
    return total / np.maximum(count, 1.0)[:, None]


def recovered_error(neighbor_lists, outgoing, recovered, volumes) -> np.ndarray:
    """Volume-weighted mean squared gap between recovered and direct gradients per node."""
    eta = np.empty(len(neighbor_lists))
    for i, (nbrs, grads) in enumerate(zip(neighbor_lists, outgoing)):
        v = volumes[nbrs]
        gap = np.sum((recovered[nbrs] - grads) ** 2, axis=1)
        eta[i] = gap @ v / v.sum()
    return eta


def estimate(nodes: NodeSet, solution, stencils, threads: int = 1, alpha: float = 0.8,
             tolerance: float = 1e-3) -> ErrorField:
    x = np.asarray(solution, dtype=float)
    n = len(nodes)
    u = x[0: 3 * n: 3]
    v = x[1: 3 * n: 3]

    def outgoing_of(i):
        st = stencils[i]
        samples = np.concatenate([u[st.neighbors], v[st.neighbors]])
        return st.gradient_rows_at(nodes.positions[st.neighbors]) @ samples

    neighbor_lists = [st.neighbors for st in stencils]
    outgoing = parallel_map(outgoing_of, range(n), threads)
    recovered = recover_gradients(neighbor_lists, outgoing, n)
    volumes = nodes.spacing ** 2
    local = recovered_error(neighbor_lists, outgoing, recovered, volumes)

    direct = np.array([
        st.gradient @ np.concatenate([u[st.neighbors], v[st.neighbors]]) for st in stencils
    ])
    energy = float(np.sum(direct ** 2, axis=1) @ volumes)
    total = float(local @ volumes) / max(energy, 1e-300)
    return ErrorField(local=local, volumes=volumes, total=total, gradient_energy=energy,
                      alpha=alpha, tolerance=tolerance)


def mark(error_field: ErrorField) -> np.ndarray:
    """Smallest set of largest weighted errors carrying ``alpha`` of the total (sorted ids)."""
    if not 0.0 < error_field.alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {error_field.alpha}")
    weighted = error_field.local * error_field.volumes
    total = weighted.sum()
    if total <= 0.0:
        return np.array([], dtype=np.int64)
    ids = np.arange(len(weighted))
    order = np.lexsort((ids, -weighted))
    running = np.cumsum(weighted[order])
    count = int(np.searchsorted(running, error_field.alpha * total - 1e-12 * total, side="left")) + 1
    return np.sort(order[: min(count, len(order))])


def _refine_in_place(nodes: NodeSet, marked, domain: Domain) -> NodeSet:
    """Refine without starting a new level: parent links still point at the previous one."""
    return compose_parents(refine_nodes(nodes, marked, domain), nodes)


def _neighborhoods(nodes: NodeSet, order: int):
    return nodes.neighbor_lists(support_radius(order, nodes.spacing))


def preprocess_gaps(nodes: NodeSet, domain: Domain, order: int) -> NodeSet:
    """Refine around boundary nodes that see another boundary inside their neighborhood."""
    for round_ in range(MAX_ROUNDS):
        ids = nodes.boundary_ids
        lists = _neighborhoods(nodes, order)
        marked = set()
        for i in np.flatnonzero(ids >= 0):
            other = ids[lists[i]]
            if np.any((other >= 0) & (other != ids[i])):
                marked.add(int(i))
                marked.update(int(j) for j in lists[i])
        if not marked:
            return nodes
        logger.debug("Gap preprocessing round %d: refining %d nodes", round_, len(marked))
        nodes = _refine_in_place(nodes, sorted(marked), domain)
    raise RefinementError(f"Narrow gaps still unresolved after {MAX_ROUNDS} preprocessing rounds")


def spacing_ratio(nodes: NodeSet, order: int) -> np.ndarray:
    """max/min spacing inside every node's neighborhood."""
    return np.array([nodes.spacing[nbrs].max() / nodes.spacing[nbrs].min() for nbrs in _neighborhoods(nodes, order)])


def enforce_quasi_uniform(nodes: NodeSet, domain: Domain, order: int) -> NodeSet:
    """Refine the coarsest nodes of every neighborhood whose spacing ratio exceeds 2."""
    limit = QUASI_UNIFORM_RATIO * (1.0 + 1e-12)
    for round_ in range(MAX_ROUNDS):
        marked = set()
        for nbrs in _neighborhoods(nodes, order):
            s = nodes.spacing[nbrs]
            if s.max() > limit * s.min():
                marked.update(int(j) for j in nbrs[s >= s.max() * (1.0 - 1e-12)])
        if not marked:
            return nodes
        logger.debug("Quasi-uniformity round %d: refining %d nodes", round_, len(marked))
        nodes = _refine_in_place(nodes, sorted(marked), domain)
    raise RefinementError(f"Spacing ratio still above {QUASI_UNIFORM_RATIO} after {MAX_ROUNDS} rounds")


def refine_uniform(nodes: NodeSet, domain: Domain) -> NodeSet:
    return refine_nodes(nodes, range(len(nodes)), domain)


def regression_slope(x, y) -> float:
    """Least-squares slope of y against x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return float("nan")
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class AdaptOptions:
    order: int = 2
    dx0: float = 0.1
    alpha: float = 0.8
    tolerance: float = 1e-3
    max_levels: int = 10
    threads: int = 1
    gmres_tol: float = 1e-6
    restart: int = 100
    maxiter: int = 1000
    smoothing_sweeps: int = 3


@dataclass
class LevelRecord:
    level: int
    n_nodes: int
    dofs: int
    eta: float
    gmres_iterations: int
    residual: float
    solve_time: float
    wall_time: float
    min_spacing: float
    marked: int = 0
    residual_history: list[float] | None = None

    def as_dict(self) -> dict:
        out = asdict(self)
        if out["residual_history"] is None:
            del out["residual_history"]
        return out


@dataclass
class AdaptResult:
    hierarchy: Hierarchy
    solutions: list[np.ndarray] = field(default_factory=list)
    records: list[LevelRecord] = field(default_factory=list)
    fields: list[ErrorField] = field(default_factory=list)
    converged: bool = False

    @property
    def solution(self) -> np.ndarray:
        return self.solutions[-1]

    @property
    def nodes(self) -> NodeSet:
        return self.hierarchy.finest.nodes


def _solve_level(hierarchy: Hierarchy, nodes: NodeSet, domain: Domain, flow, options: AdaptOptions,
                 solve, keep_history: bool):
    started = time.perf_counter()
    index = len(hierarchy)
    stencils = build_stencils(nodes, options.order, options.threads)
    system = assemble(nodes, domain, stencils, flow, options.threads)
    hierarchy.add_level(nodes, stencils, system)
    x, report = solve(hierarchy, tol=options.gmres_tol, restart=options.restart, maxiter=options.maxiter)
    if not report.converged:
        raise SolverError(
            f"GMRES did not reach {options.gmres_tol:g} on level {index} "
            f"(residual {report.residual:.3e} after {report.iterations} iterations)",
            level=index,
        )
    error = estimate(nodes, x, stencils, options.threads, options.alpha, options.tolerance)
    record = LevelRecord(
        level=index,
        n_nodes=len(nodes),
        dofs=system.size,
        eta=error.total,
        gmres_iterations=report.iterations,
        residual=report.residual,
        solve_time=report.wall_time,
        wall_time=time.perf_counter() - started,
        min_spacing=float(nodes.spacing.min()),
        residual_history=list(report.history) if keep_history else None,
    )
    logger.debug("Level %d: N=%d DOFs=%d eta=%.3e GMRES=%d", index, len(nodes), system.size,
                 error.total, report.iterations)
    return x, error, record


def _initial_nodes(domain: Domain, options: AdaptOptions) -> NodeSet:
    nodes = seed_uniform(domain, options.dx0)
    nodes = preprocess_gaps(nodes, domain, options.order)
    return enforce_quasi_uniform(nodes, domain, options.order)


def adapt_loop(domain: Domain, flow, options: AdaptOptions, solve=multigrid_solve,
               keep_history: bool = False) -> AdaptResult:
    """Solve and refine until the recovered error drops below tolerance or the level cap."""
    hierarchy = Hierarchy(options.order, options.smoothing_sweeps, options.threads)
    result = AdaptResult(hierarchy=hierarchy)
    nodes = _initial_nodes(domain, options)

    for level in range(options.max_levels):
        x, error, record = _solve_level(hierarchy, nodes, domain, flow, options, solve, keep_history)
        result.solutions.append(x)
        result.fields.append(error)
        result.records.append(record)
        if error.total <= options.tolerance:
            result.converged = True
            break
        if level == options.max_levels - 1:
            logger.warning("Level cap %d reached with recovered error %.3e > %.1e",
                           options.max_levels, error.total, options.tolerance)
            break
        marked = mark(error)
        record.marked = len(marked)
        nodes = refine_nodes(nodes, marked, domain)
        nodes = enforce_quasi_uniform(preprocess_gaps(nodes, domain, options.order), domain, options.order)
    return result


def uniform_loop(domain: Domain, flow, options: AdaptOptions, levels: int, solve=multigrid_solve,
                 keep_history: bool = False) -> AdaptResult:
    """Same pipeline as ``adapt_loop`` but every node is refined on every level."""
    hierarchy = Hierarchy(options.order, options.smoothing_sweeps, options.threads)
    result = AdaptResult(hierarchy=hierarchy)
    nodes = seed_uniform(domain, options.dx0)
    for level in range(levels):
        x, error, record = _solve_level(hierarchy, nodes, domain, flow, options, solve, keep_history)
        result.solutions.append(x)
        result.fields.append(error)
        result.records.append(record)
        if level < levels - 1:
            record.marked = len(nodes)
            nodes = refine_uniform(nodes, domain)
    result.converged = bool(result.records) and result.records[-1].eta <= options.tolerance
    return result
