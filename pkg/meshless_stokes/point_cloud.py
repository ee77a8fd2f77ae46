"""Leveled point clouds with KD-tree neighbor search and parent-child refinement links."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, UnisolvencyError
from .geometry import Domain

logger = logging.getLogger(__name__)

INTERIOR = 0
WALL = 1
SOLID = 2

# Support radius per GMLS order, in units of the local spacing.
SUPPORT_FACTORS = {2: 2.6, 4: 4.2, 6: 5.4}


def support_radius(order: int, dx):
    """Default epsilon-neighborhood radius for a node of spacing ``dx``."""
    try:
        factor = SUPPORT_FACTORS[order]
    except KeyError:
        raise GeometryError(f"Unsupported GMLS order {order}; expected one of {sorted(SUPPORT_FACTORS)}")
    return factor * np.asarray(dx, dtype=float)


def _readonly(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class NodeSet:
    """All GMLS nodes of one refinement level.

    ``body`` holds the body index for solid-boundary nodes and -1 elsewhere.
    ``spacing`` doubles as the quadrature weight of boundary nodes.
    ``parent`` points into the previous level (-1 on the coarsest level).
    """

    positions: np.ndarray
    spacing: np.ndarray
    kind: np.ndarray
    body: np.ndarray
    normals: np.ndarray
    arclength: np.ndarray
    level: int = 0
    parent: np.ndarray | None = None
    tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.positions)
        object.__setattr__(self, "positions", _readonly(self.positions, float).reshape(n, 2))
        object.__setattr__(self, "spacing", _readonly(self.spacing, float))
        object.__setattr__(self, "kind", _readonly(self.kind, np.int8))
        object.__setattr__(self, "body", _readonly(self.body, np.int64))
        object.__setattr__(self, "normals", _readonly(self.normals, float).reshape(n, 2))
        object.__setattr__(self, "arclength", _readonly(self.arclength, float))
        parent = np.full(n, -1) if self.parent is None else self.parent
        object.__setattr__(self, "parent", _readonly(parent, np.int64))
        if np.any(self.spacing <= 0):
            raise GeometryError("Node spacing must be positive")
        object.__setattr__(self, "tree", cKDTree(self.positions))

    def __len__(self):
        return len(self.positions)

    @property
    def boundary_ids(self) -> np.ndarray:
        """-1 for interior nodes, 0 for the wall, n + 1 for body n."""
        ids = np.full(len(self), -1)
        ids[self.kind == WALL] = 0
        solid = self.kind == SOLID
        ids[solid] = self.body[solid] + 1
        return ids

    @property
    def is_boundary(self) -> np.ndarray:
        return self.kind != INTERIOR

    def children(self, parent_count: int) -> list[np.ndarray]:
        """Child ids of each node of the previous level."""
        order = np.argsort(self.parent, kind="stable")
        counts = np.bincount(self.parent[self.parent >= 0], minlength=parent_count)
        skip = np.count_nonzero(self.parent < 0)
        return np.split(order[skip:], np.cumsum(counts)[:-1])

    def neighbors(self, i: int, eps: float, source: "NodeSet | None" = None, min_count: int = 0) -> np.ndarray:
        """Sorted ids of ``source`` nodes strictly within ``eps`` of node ``i``."""
        return self.neighbors_of_point(self.positions[i], eps, source=source, min_count=min_count, node=i)

    def neighbors_of_point(self, x, eps: float, source=None, min_count: int = 0, node=None) -> np.ndarray:
        if not eps > 0:
            raise GeometryError(f"Neighborhood radius must be positive, got {eps}")
        target = self if source is None else source
        candidates = np.asarray(target.tree.query_ball_point(x, eps), dtype=np.int64)
        if len(candidates):
            dist = np.linalg.norm(target.positions[candidates] - x, axis=1)
            candidates = np.sort(candidates[dist < eps])
        if len(candidates) < min_count:
            raise UnisolvencyError(
                f"Node {node} has {len(candidates)} neighbors within {eps:g}, needs {min_count}",
                node=node,
            )
        return candidates

    def neighbor_lists(self, eps) -> list[np.ndarray]:
        """Neighborhoods of every node for per-node radii ``eps``."""
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (len(self),))
        raw = self.tree.query_ball_point(self.positions, eps)
        lists = []
        for i, cand in enumerate(raw):
            cand = np.asarray(cand, dtype=np.int64)
            dist = np.linalg.norm(self.positions[cand] - self.positions[i], axis=1)
            lists.append(np.sort(cand[dist < eps[i]]))
        return lists

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        table = np.column_stack([
            self.positions, self.spacing, self.kind, np.full(len(self), self.level), self.parent,
        ])
        np.savetxt(path, table, delimiter=",", header="x,y,dx,kind,level,parent", comments="",
                   fmt=["%.17g", "%.17g", "%.17g", "%d", "%d", "%d"])


def _boundary_nodes(domain: Domain, dx: float):
    """Sample the wall and every body at spacing ``dx``."""
    rows = []
    for b, curve in enumerate(domain.curves()):
        sample = curve.sample(dx)
        kind = WALL if b == 0 else SOLID
        rows.append((sample, kind, b - 1))
    return rows


def seed_uniform(domain: Domain, dx0: float) -> NodeSet:
    """Coarsest level: a cell-centered lattice of pitch ``dx0`` plus sampled boundaries."""
    if not dx0 > 0:
        raise GeometryError(f"Initial spacing must be positive, got {dx0}")
    box = domain.box
    axes = []
    for lo, length in ((box.lower[0], box.width), (box.lower[1], box.height)):
        count = int(np.floor(length / dx0 + 1e-9))
        margin = 0.5 * (length - count * dx0)
        axes.append(lo + margin + dx0 * (np.arange(count) + 0.5))
    gx, gy = np.meshgrid(*axes, indexing="xy")
    lattice = np.column_stack([gx.ravel(), gy.ravel()])
    lattice = lattice[domain.clearance(lattice) >= 0.25 * dx0] if len(lattice) else lattice
    if len(lattice) == 0:
        raise GeometryError(f"No interior nodes fit in the fluid region at dx0={dx0:g}")

    positions = [lattice]
    spacing = [np.full(len(lattice), dx0)]
    kind = [np.full(len(lattice), INTERIOR)]
    body = [np.full(len(lattice), -1)]
    normals = [np.zeros((len(lattice), 2))]
    arclength = [np.full(len(lattice), np.nan)]
    for sample, k, b in _boundary_nodes(domain, dx0):
        positions.append(sample.positions)
        spacing.append(sample.weights)
        kind.append(np.full(len(sample), k))
        body.append(np.full(len(sample), b))
        normals.append(sample.normals)
        arclength.append(sample.arclength)

    nodes = NodeSet(
        np.concatenate(positions), np.concatenate(spacing), np.concatenate(kind),
        np.concatenate(body), np.concatenate(normals), np.concatenate(arclength), level=0,
    )
    logger.debug("Seeded %d nodes (%d interior) at dx0=%g", len(nodes), len(lattice), dx0)
    return nodes


_QUADRANTS = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])


def refine_nodes(node_set: NodeSet, marked, domain: Domain) -> NodeSet:
    """Split marked nodes; interior nodes into four children, boundary nodes into two.

    Unmarked nodes are carried over with a parent link to themselves.  Interior
    children that land closer than a quarter of their spacing to a boundary (or
    outside the fluid) are discarded.
    """
    mask = np.zeros(len(node_set), dtype=bool)
    mask[np.asarray(list(marked), dtype=np.int64)] = True
    curves = domain.curves()
    boundary_ids = node_set.boundary_ids

    positions, spacing, kind, body, normals, arclength, parent = [], [], [], [], [], [], []

    def push(x, dx, k, b, n, s, p):
        positions.append(x)
        spacing.append(dx)
        kind.append(k)
        body.append(b)
        normals.append(n)
        arclength.append(s)
        parent.append(p)

    for i in range(len(node_set)):
        x = node_set.positions[i]
        dx = node_set.spacing[i]
        k = node_set.kind[i]
        if not mask[i]:
            push(x, dx, k, node_set.body[i], node_set.normals[i], node_set.arclength[i], i)
            continue
        half = 0.5 * dx
        if k == INTERIOR:
            children = x + 0.25 * dx * _QUADRANTS
            keep = domain.clearance(children) >= 0.25 * half
            for c in children[keep]:
                push(c, half, k, -1, (0.0, 0.0), np.nan, i)
        else:
            curve = curves[boundary_ids[i]]
            s = node_set.arclength[i] + np.array([-0.25 * dx, 0.25 * dx])
            s = np.mod(s, curve.perimeter)
            points, child_normals = curve.evaluate(s)
            for c, n, sc in zip(points, child_normals, s):
                push(c, half, k, node_set.body[i], n, sc, i)

    return NodeSet(
        np.array(positions), np.array(spacing), np.array(kind), np.array(body),
        np.array(normals), np.array(arclength), level=node_set.level + 1, parent=np.array(parent),
    )


def compose_parents(fine: NodeSet, intermediate: NodeSet) -> NodeSet:
    """Collapse an extra refinement round so ``fine`` links to ``intermediate``'s parents."""
    if intermediate.level == 0 or intermediate.parent is None or np.all(intermediate.parent < 0):
        parent = np.full(len(fine), -1)
    else:
        parent = intermediate.parent[fine.parent]
    return NodeSet(
        fine.positions, fine.spacing, fine.kind, fine.body, fine.normals, fine.arclength,
        level=intermediate.level, parent=parent,
    )
