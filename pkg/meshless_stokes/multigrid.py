"""Monolithic geometric multigrid for the coupled fluid-solid block system.

Each level keeps its own assembled operator.  Transfers use GMLS evaluation from
coarse to fine (divergence-free for velocity, scalar for pressure) and child
averaging from fine to coarse; rigid-body unknowns pass through unchanged.
Smoothing is k node-wise block Gauss-Seidel sweeps over the fluid unknowns
followed by one additive Schwarz correction per free solid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem
from .errors import SolverError
from .gmls import interpolation_stencil
from .krylov import gmres
from .parallel import parallel_map
from .point_cloud import SOLID, NodeSet, support_radius

logger = logging.getLogger(__name__)

DENSE_COARSE_LIMIT = 3000
REGULARIZATION = 1e-12
SINGULAR_CONDITION = 1e14


# ---------------------------------------------------------------------------
# Transfers
# ---------------------------------------------------------------------------

def _identity_tail(n_rows_fluid: int, n_cols_fluid: int, n_solids: int):
    rows = n_rows_fluid + np.arange(3 * n_solids)
    cols = n_cols_fluid + np.arange(3 * n_solids)
    return rows, cols, np.ones(3 * n_solids)


def build_interpolation(coarse: NodeSet, fine: NodeSet, order: int, n_solids: int = 0,
                        threads: int = 1) -> sp.csr_matrix:
    """Coarse-to-fine prolongation of (u, v, p) plus identity on the solid unknowns."""
    dist, nearest = coarse.tree.query(fine.positions)

    def rows_of(f):
        if dist[f] < 1e-12:
            c = nearest[f]
            return (3 * f + np.arange(3), 3 * c + np.arange(3), np.ones(3))
        p = fine.parent[f]
        dx_parent = coarse.spacing[p] if p >= 0 else 2.0 * fine.spacing[f]
        st = interpolation_stencil(fine.positions[f], coarse, float(support_radius(order, dx_parent)),
                                   order, node=f)
        nb = st.neighbors
        vcols = np.concatenate([3 * nb, 3 * nb + 1])
        rows = np.concatenate([np.full(len(vcols), 3 * f), np.full(len(vcols), 3 * f + 1), np.full(len(nb), 3 * f + 2)])
        cols = np.concatenate([vcols, vcols, 3 * nb + 2])
        vals = np.concatenate([st.value[0], st.value[1], st.scalar_value])
        return rows, cols, vals

    parts = parallel_map(rows_of, range(len(fine)), threads)
    parts.append(_identity_tail(3 * len(fine), 3 * len(coarse), n_solids))
    shape = (3 * len(fine) + 3 * n_solids, 3 * len(coarse) + 3 * n_solids)
    return sp.coo_matrix(
        (np.concatenate([p[2] for p in parts]),
         (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))),
        shape=shape,
    ).tocsr()


def build_restriction(fine: NodeSet, coarse: NodeSet, n_solids: int = 0) -> sp.csr_matrix:
    """Fine-to-coarse restriction: each coarse node averages its surviving children."""
    rows, cols, vals = [], [], []
    for c, kids in enumerate(fine.children(len(coarse))):
        if len(kids) == 0:
            # every child was discarded; fall back to the closest fine node
            kids = np.array([fine.tree.query(coarse.positions[c])[1]])
            logger.debug("Coarse node %d has no surviving children", c)
        w = 1.0 / len(kids)
        for comp in range(3):
            rows.append(np.full(len(kids), 3 * c + comp))
            cols.append(3 * kids + comp)
            vals.append(np.full(len(kids), w))
    tail = _identity_tail(3 * len(coarse), 3 * len(fine), n_solids)
    rows.append(tail[0])
    cols.append(tail[1])
    vals.append(tail[2])
    shape = (3 * len(coarse) + 3 * n_solids, 3 * len(fine) + 3 * n_solids)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape).tocsr()


# ---------------------------------------------------------------------------
# Smoothers
# ---------------------------------------------------------------------------

class BlockGaussSeidel:
    """One forward node-block Gauss-Seidel sweep, written as a unit-triangular solve.

    With F = D_B + L_B + U_B split by 3x3 node blocks, the sweep computes
    (D_B + L_B)^-1 r = (I + D_B^-1 L_B)^-1 D_B^-1 r.
    """

    def __init__(self, F: sp.spmatrix):
        F = sp.csr_matrix(F)
        m = F.shape[0] // 3
        coo = F.tocoo()
        block_row, block_col = coo.row // 3, coo.col // 3

        blocks = np.zeros((m, 3, 3))
        diag = block_row == block_col
        np.add.at(blocks, (block_row[diag], coo.row[diag] % 3, coo.col[diag] % 3), coo.data[diag])
        self.inverse_blocks = np.empty_like(blocks)
        for b in range(m):
            block = blocks[b]
            if np.linalg.cond(block) > SINGULAR_CONDITION:
                logger.warning("Singular 3x3 diagonal block at node %d; regularizing", b)
                block = block + REGULARIZATION * np.eye(3)
            self.inverse_blocks[b] = np.linalg.inv(block)

        self.d_inverse = sp.bsr_matrix(
            (self.inverse_blocks, np.arange(m), np.arange(m + 1)), shape=(3 * m, 3 * m)
        ).tocsr()
        lower = block_row > block_col
        strict = sp.coo_matrix((coo.data[lower], (coo.row[lower], coo.col[lower])), shape=F.shape).tocsr()
        self.triangle = (sp.identity(3 * m, format="csr") + self.d_inverse @ strict).tocsr()
        self.triangle.sort_indices()

    def solve(self, r: np.ndarray) -> np.ndarray:
        rhs = self.d_inverse @ r
        if rhs.ndim == 1:
            return spla.spsolve_triangular(self.triangle, rhs, lower=True, unit_diagonal=True)
        return spla.spsolve_triangular(self.triangle, np.asarray(rhs), lower=True, unit_diagonal=True)


@dataclass(eq=False)
class SolidPatch:
    """Subdomain of one free solid: its boundary nodes plus their stencil neighbors."""

    solid: int
    fluid_dofs: np.ndarray
    solid_dofs: np.ndarray
    gauss_seidel: BlockGaussSeidel
    constraint: np.ndarray
    gs_coupling: np.ndarray
    schur: tuple


@dataclass(eq=False)
class SmootherState:
    fluid: BlockGaussSeidel
    patches: list[SolidPatch] = field(default_factory=list)


def _solid_patch(system: BlockSystem, nodes: NodeSet, stencils, k: int) -> SolidPatch:
    body = system.solids[k]
    boundary = np.flatnonzero((nodes.kind == SOLID) & (nodes.body == body))
    patch_nodes = np.unique(np.concatenate([stencils[i].neighbors for i in boundary] + [boundary]))
    fluid_dofs = (3 * patch_nodes[:, None] + np.arange(3)).ravel()
    solid_dofs = system.solid_dofs(k)

    A = system.matrix
    rows_f = A[fluid_dofs]
    F = rows_f[:, fluid_dofs]
    coupling = rows_f[:, solid_dofs].toarray()
    constraint = A[solid_dofs][:, fluid_dofs].toarray()

    gs = BlockGaussSeidel(F)
    schur = -constraint @ (gs.d_inverse @ coupling)
    if not np.all(np.isfinite(schur)) or np.linalg.cond(schur) > SINGULAR_CONDITION:
        raise SolverError(f"Approximate Schur complement of solid {body} is singular", solid=body)
    return SolidPatch(
        solid=k,
        fluid_dofs=fluid_dofs,
        solid_dofs=solid_dofs,
        gauss_seidel=gs,
        constraint=constraint,
        gs_coupling=gs.solve(coupling),
        schur=sla.lu_factor(schur),
    )


def build_smoother(system: BlockSystem, nodes: NodeSet, stencils, threads: int = 1) -> SmootherState:
    n = system.fluid_size
    fluid = BlockGaussSeidel(system.matrix[:n][:, :n])
    patches = parallel_map(lambda k: _solid_patch(system, nodes, stencils, k), range(system.n_solids), threads)
    return SmootherState(fluid=fluid, patches=patches)


def smooth_fluid(system: BlockSystem, state: SmootherState, y, chi, sweeps: int = 3) -> np.ndarray:
    """``sweeps`` forward node-block Gauss-Seidel sweeps on the fluid unknowns."""
    chi = np.array(chi, dtype=float, copy=True)
    n = system.fluid_size
    for _ in range(sweeps):
        r = system.project(y - system.matrix @ chi)
        chi[:n] += state.fluid.solve(r[:n])
    return chi


def _patch_correction(patch: SolidPatch, r: np.ndarray):
    a = patch.gauss_seidel.solve(r[patch.fluid_dofs])
    b = sla.lu_solve(patch.schur, r[patch.solid_dofs] - patch.constraint @ a)
    return a - patch.gs_coupling @ b, b


def smooth_solids(system: BlockSystem, state: SmootherState, y, chi, threads: int = 1) -> np.ndarray:
    """Additive Schwarz correction: every solid patch is solved against the same residual."""
    r = system.project(y - system.matrix @ chi)
    corrections = parallel_map(lambda patch: _patch_correction(patch, r), state.patches, threads)
    correction = np.zeros_like(r)
    for patch, (zf, zs) in zip(state.patches, corrections):
        correction[patch.fluid_dofs] += zf
        correction[patch.solid_dofs] += zs
    return np.asarray(chi, dtype=float) + correction


# ---------------------------------------------------------------------------
# Hierarchy and V-cycle
# ---------------------------------------------------------------------------

class CoarseSolver:
    """Direct solve of the coarsest operator bordered by the pressure-mean constraint."""

    def __init__(self, system: BlockSystem):
        self.system = system
        e = np.zeros(system.size)
        e[system.pressure_dofs] = 1.0
        bordered = sp.bmat([[system.matrix, sp.csr_matrix(e[:, None])], [sp.csr_matrix(e[None, :]), None]])
        if system.size <= DENSE_COARSE_LIMIT:
            lu = sla.lu_factor(bordered.toarray())
            self._solve = lambda b: sla.lu_solve(lu, b)
        else:
            lu = spla.splu(bordered.tocsc())
            self._solve = lu.solve

    def solve(self, y) -> np.ndarray:
        rhs = np.append(self.system.project(y), 0.0)
        return self._solve(rhs)[:-1]


@dataclass(eq=False)
class Level:
    nodes: NodeSet
    stencils: list
    system: BlockSystem
    interpolation: sp.csr_matrix | None = None
    restriction: sp.csr_matrix | None = None
    smoother: SmootherState | None = None


class Hierarchy:
    """Levels from coarsest (index 0) to finest, with transfers between neighbors."""

    def __init__(self, order: int, smoothing_sweeps: int = 3, threads: int = 1):
        self.order = order
        self.smoothing_sweeps = smoothing_sweeps
        self.threads = threads
        self.levels: list[Level] = []
        self.coarse: CoarseSolver | None = None

    def __len__(self):
        return len(self.levels)

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    def add_level(self, nodes: NodeSet, stencils, system: BlockSystem) -> Level:
        level = Level(nodes=nodes, stencils=stencils, system=system)
        if not self.levels:
            self.coarse = CoarseSolver(system)
        else:
            prev = self.levels[-1]
            level.interpolation = build_interpolation(prev.nodes, nodes, self.order, system.n_solids, self.threads)
            level.restriction = build_restriction(nodes, prev.nodes, system.n_solids)
        self.levels.append(level)
        return level

    def smoother(self, index: int) -> SmootherState:
        level = self.levels[index]
        if level.smoother is None:
            level.smoother = build_smoother(level.system, level.nodes, level.stencils, self.threads)
        return level.smoother

    def smooth(self, index: int, y, chi) -> np.ndarray:
        system = self.levels[index].system
        state = self.smoother(index)
        chi = smooth_fluid(system, state, y, chi, self.smoothing_sweeps)
        return smooth_solids(system, state, y, chi, self.threads)


def vcycle(hierarchy: Hierarchy, level: int, y) -> np.ndarray:
    """One V-cycle on ``level``; a fixed linear map of ``y``."""
    if level == 0:
        return hierarchy.coarse.solve(y)
    current = hierarchy.levels[level]
    coarse = hierarchy.levels[level - 1]
    y = np.asarray(y, dtype=float)
    chi = hierarchy.smooth(level, y, np.zeros_like(y))
    r = current.system.project(y - current.system.matrix @ chi)
    r_coarse = coarse.system.project(current.restriction @ r)
    chi = chi + current.interpolation @ vcycle(hierarchy, level - 1, r_coarse)
    return hierarchy.smooth(level, y, chi)


def solve(hierarchy: Hierarchy, tol: float = 1e-6, restart: int = 100, maxiter: int = 1000):
    """GMRES on the finest level, preconditioned by one V-cycle per application."""
    top = len(hierarchy) - 1
    system = hierarchy.levels[top].system
    return gmres(
        system.apply,
        system.rhs,
        apply_M=lambda v: vcycle(hierarchy, top, v),
        tol=tol,
        restart=restart,
        maxiter=maxiter,
        level=top,
    )
