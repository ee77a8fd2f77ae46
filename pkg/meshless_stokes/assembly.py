"""Monolithic block system for the coupled fluid-solid Stokes problem.

Unknowns are laid out node by node as (u, v, p), followed by three rigid-body
unknowns (Xdot_x, Xdot_y, Thetadot) per free solid.  Blocks are labeled by the
(row kind, column kind) pair:

    K  velocity rows / velocity columns   (curl-curl, Dirichlet identities)
    G  velocity rows / pressure columns   (staggered gradient / rho)
    C  velocity rows / solid columns      (rigid-body no-slip coupling)
    B  pressure rows / velocity columns   (curl-curl inside the Neumann datum)
    L  pressure rows / pressure columns   (staggered Laplacian)
    D  solid rows / velocity columns      (viscous traction)
    T  solid rows / pressure columns      (pressure traction)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError
from .geometry import Domain, rigid_velocity
from .parallel import parallel_map
from .point_cloud import INTERIOR, SOLID, WALL, NodeSet

logger = logging.getLogger(__name__)

VELOCITY = 0
PRESSURE = 1
SOLID_DOF = 2

BLOCK_LABELS = {
    (VELOCITY, VELOCITY): "K",
    (VELOCITY, PRESSURE): "G",
    (VELOCITY, SOLID_DOF): "C",
    (PRESSURE, VELOCITY): "B",
    (PRESSURE, PRESSURE): "L",
    (SOLID_DOF, VELOCITY): "D",
    (SOLID_DOF, PRESSURE): "T",
}


def zero_mean_apply(v) -> np.ndarray:
    """Remove the mean of a pressure-sized vector."""
    v = np.asarray(v, dtype=float)
    return v - v.mean()


def _project_pressure(v, fluid_size: int) -> np.ndarray:
    out = np.array(v, dtype=float, copy=True)
    out[2:fluid_size:3] = zero_mean_apply(out[2:fluid_size:3])
    return out


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Assembled matrix, projected right-hand side and DOF bookkeeping of one level."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_nodes: int
    solids: tuple[int, ...] = ()

    @property
    def n_solids(self) -> int:
        return len(self.solids)

    @property
    def size(self) -> int:
        return 3 * self.n_nodes + 3 * self.n_solids

    @property
    def fluid_size(self) -> int:
        return 3 * self.n_nodes

    @property
    def pressure_dofs(self) -> np.ndarray:
        return np.arange(2, self.fluid_size, 3)

    @property
    def dof_types(self) -> np.ndarray:
        types = np.full(self.size, SOLID_DOF)
        types[: self.fluid_size] = VELOCITY
        types[2: self.fluid_size: 3] = PRESSURE
        return types

    def solid_dofs(self, k: int) -> np.ndarray:
        """Global DOFs of the k-th free solid."""
        start = self.fluid_size + 3 * k
        return np.arange(start, start + 3)

    def project(self, v) -> np.ndarray:
        """Apply the zero-mean projection to the pressure entries of a full vector."""
        return _project_pressure(v, self.fluid_size)

    def apply(self, x) -> np.ndarray:
        return self.project(self.matrix @ x)

    def residual(self, x) -> np.ndarray:
        return self.rhs - self.apply(x)

    def nonzero_labels(self) -> np.ndarray:
        """Block label of every stored nonzero, '?' if it falls outside the block map."""
        coo = self.matrix.tocoo()
        types = self.dof_types
        return np.array([BLOCK_LABELS.get((types[r], types[c]), "?") for r, c in zip(coo.row, coo.col)])

    def block(self, label: str) -> sp.csr_matrix:
        row_type, col_type = next(key for key, name in BLOCK_LABELS.items() if name == label)
        types = self.dof_types
        rows = np.flatnonzero(types == row_type)
        cols = np.flatnonzero(types == col_type)
        return self.matrix[rows][:, cols]

    def dump_coo(self, path) -> None:
        """Write the matrix as 'row col value' lines."""
        coo = self.matrix.tocoo()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]), fmt=["%d", "%d", "%.17g"])


def _velocity_cols(nbrs: np.ndarray) -> np.ndarray:
    return np.concatenate([3 * nbrs, 3 * nbrs + 1])


def force_torque_rows(nodes: NodeSet, body_index: int, stencils, domain: Domain):
    """Viscous (D) and pressure (T) rows of the force and torque balance of one body.

    Returns two (3, 3N) matrices whose rows are the x force, y force and z torque
    integrated with the composite rule sum_i sigma_h(x_i) n_i dA_i, where n points
    out of the body.
    """
    n_dofs = 3 * len(nodes)
    body = domain.bodies[body_index]
    mu = domain.density * domain.viscosity
    center = np.asarray(body.position)
    ids = np.flatnonzero((nodes.kind == SOLID) & (nodes.body == body_index))

    d_rows, d_cols, d_vals = [], [], []
    t_rows, t_cols, t_vals = [], [], []
    for i in ids:
        st = stencils[i]
        dA = nodes.spacing[i]
        nx, ny = -nodes.normals[i]
        rx, ry = nodes.positions[i] - center
        g = st.gradient
        shear = g[1] + g[2]
        tx = mu * (2.0 * nx * g[0] + ny * shear)
        ty = mu * (nx * shear + 2.0 * ny * g[3])
        cols = _velocity_cols(st.neighbors)
        for row, vals in enumerate((tx, ty, rx * ty - ry * tx)):
            d_rows.append(np.full(len(cols), row))
            d_cols.append(cols)
            d_vals.append(dA * vals)
        t_rows.extend([0, 1, 2])
        t_cols.extend([3 * i + 2] * 3)
        t_vals.extend([-dA * nx, -dA * ny, -dA * (rx * ny - ry * nx)])

    if d_rows:
        d = sp.coo_matrix(
            (np.concatenate(d_vals), (np.concatenate(d_rows), np.concatenate(d_cols))), shape=(3, n_dofs)
        ).tocsr()
    else:
        d = sp.csr_matrix((3, n_dofs))
    t = sp.coo_matrix((t_vals, (t_rows, t_cols)), shape=(3, n_dofs)).tocsr()
    return d, t


def _pressure_row(st, i: int, nodes: NodeSet, nu: float, rho: float):
    """Staggered Laplacian row; boundary nodes fold the Neumann datum into B and the RHS."""
    pcols = 3 * st.neighbors + 2
    cols = [pcols]
    vals = [-st.staggered.laplacian / rho]
    lam = 0.0
    if nodes.kind[i] != INTERIOR:
        lam = st.staggered.laplacian_g
        n = nodes.normals[i]
        cols.append(_velocity_cols(st.neighbors))
        vals.append(lam * nu * (n[0] * st.curlcurl[0] + n[1] * st.curlcurl[1]))
    return np.concatenate(cols), np.concatenate(vals), lam


def assemble(nodes: NodeSet, domain: Domain, stencils, flow, threads: int = 1) -> BlockSystem:
    """Build the block system of one level from its stencils and the flow data."""
    if len(stencils) != len(nodes) or any(s is None for s in stencils):
        raise AssemblyError(f"Expected {len(nodes)} stencils, got {sum(s is not None for s in stencils)}")
    n_nodes = len(nodes)
    nu, rho = domain.viscosity, domain.density
    free = domain.free_bodies
    solid_col = {body: 3 * n_nodes + 3 * k for k, body in enumerate(free)}

    force = np.asarray(flow.body_force(nodes.positions), dtype=float)
    div_force = flow.force_divergence(nodes.positions)
    if div_force is None:
        div_force = np.array([
            st.scalar_gradient[0] @ force[st.neighbors, 0] + st.scalar_gradient[1] @ force[st.neighbors, 1]
            for st in stencils
        ])
    wall_velocity = np.asarray(flow.wall_velocity(nodes.positions), dtype=float)

    def node_rows(i):
        st = stencils[i]
        x = nodes.positions[i]
        kind = nodes.kind[i]
        rows, cols, vals = [], [], []
        rhs = np.zeros(3)

        if kind == INTERIOR:
            vcols = _velocity_cols(st.neighbors)
            pcols = 3 * st.neighbors + 2
            for c in (0, 1):
                row_cols = np.concatenate([vcols, pcols])
                rows.append(np.full(len(row_cols), 3 * i + c))
                cols.append(row_cols)
                vals.append(np.concatenate([nu * st.curlcurl[c], st.staggered.gradient[c] / rho]))
                rhs[c] = force[i, c]
        else:
            body = nodes.body[i]
            if kind == WALL or domain.bodies[body].fixed:
                target = wall_velocity[i] if kind == WALL else rigid_velocity(domain.bodies[body], x)
                rows.append(np.array([3 * i, 3 * i + 1]))
                cols.append(np.array([3 * i, 3 * i + 1]))
                vals.append(np.ones(2))
                rhs[:2] = target
            else:
                sc = solid_col[body]
                rx, ry = x - np.asarray(domain.bodies[body].position)
                rows.append(np.full(3, 3 * i))
                cols.append(np.array([3 * i, sc, sc + 2]))
                vals.append(np.array([1.0, -1.0, ry]))
                rows.append(np.full(3, 3 * i + 1))
                cols.append(np.array([3 * i + 1, sc + 1, sc + 2]))
                vals.append(np.array([1.0, -1.0, -rx]))

        pcols, pvals, lam = _pressure_row(st, i, nodes, nu, rho)
        rows.append(np.full(len(pcols), 3 * i + 2))
        cols.append(pcols)
        vals.append(pvals)
        rhs[2] = -div_force[i] + lam * (nodes.normals[i] @ force[i])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs

    parts = parallel_map(node_rows, range(n_nodes), threads)
    rows = [p[0] for p in parts]
    cols = [p[1] for p in parts]
    vals = [p[2] for p in parts]
    rhs = np.concatenate([p[3] for p in parts] + [np.zeros(3 * len(free))])

    for k, body_index in enumerate(free):
        d, t = force_torque_rows(nodes, body_index, stencils, domain)
        block = (d + t).tocoo()
        rows.append(block.row + 3 * n_nodes + 3 * k)
        cols.append(block.col)
        vals.append(block.data)
        body = domain.bodies[body_index]
        rhs[3 * n_nodes + 3 * k: 3 * n_nodes + 3 * k + 3] = [-body.force[0], -body.force[1], -body.torque]

    size = 3 * n_nodes + 3 * len(free)
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    matrix.sum_duplicates()
    system = BlockSystem(matrix=matrix, rhs=_project_pressure(rhs, 3 * n_nodes), n_nodes=n_nodes, solids=free)
    logger.debug("Assembled %d x %d system with %d nonzeros", size, size, matrix.nnz)
    return system
