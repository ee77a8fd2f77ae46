"""Generalized moving least squares on epsilon-neighborhoods.

Each node gets a ``GmlsStencil``: weighted least-squares coefficient maps for
an epsilon-scaled Taylor basis (scalars) and for a divergence-free vector basis
(velocity), plus precomputed functional rows that turn neighbor samples into
values, gradients, curl-curl and the staggered pressure gradient and Laplacian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .errors import UnisolvencyError
from .parallel import parallel_map
from .point_cloud import NodeSet, support_radius

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
EPS_GROWTH = 1.2
MAX_GROWTHS = 10
MAX_INTERPOLATION_GROWTHS = 5
NEIGHBOR_FACTOR = 1.5


def weight(r, eps):
    """Compactly supported weight 1 - (r/eps)^4."""
    ratio = np.asarray(r, dtype=float) / eps
    return np.where(ratio < 1.0, 1.0 - ratio**4, 0.0)


@lru_cache(maxsize=None)
def monomial_exponents(degree: int, start: int = 0) -> np.ndarray:
    """Exponent pairs (a, b) ordered by total degree, x-heavy first."""
    rows = [(d - b, b) for d in range(start, degree + 1) for b in range(d + 1)]
    exps = np.array(rows, dtype=np.int64).reshape(-1, 2)
    exps.flags.writeable = False
    return exps


def _falling(n: np.ndarray, k: int) -> np.ndarray:
    out = np.ones(n.shape, dtype=float)
    for j in range(k):
        out *= n - j
    return out


def _monomials(xi, eta, exps, p: int = 0, q: int = 0) -> np.ndarray:
    """d^p/dxi^p d^q/deta^q of every monomial xi^a eta^b, one column per exponent."""
    a, b = exps[:, 0], exps[:, 1]
    coef = _falling(a, p) * _falling(b, q)
    ea = np.maximum(a - p, 0)
    eb = np.maximum(b - q, 0)
    return coef * np.asarray(xi)[:, None] ** ea * np.asarray(eta)[:, None] ** eb


def _index(exps, a, b) -> int:
    return int(np.flatnonzero((exps[:, 0] == a) & (exps[:, 1] == b))[0])


@dataclass(frozen=True)
class ScalarBasis:
    """Epsilon-scaled Taylor monomials of total degree <= order around ``center``."""

    order: int
    center: tuple[float, float]
    scale: float

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.order)

    @property
    def dimension(self) -> int:
        return (self.order + 1) * (self.order + 2) // 2

    def evaluate(self, x, dx: int = 0, dy: int = 0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        xi = (pts[:, 0] - self.center[0]) / self.scale
        eta = (pts[:, 1] - self.center[1]) / self.scale
        return _monomials(xi, eta, self.exponents, dx, dy) / self.scale ** (dx + dy)


@dataclass(frozen=True)
class DivFreeBasis:
    """Curls of epsilon-scaled stream-function monomials xi^a eta^b, 1 <= a + b <= order + 1.

    Element (a, b) is the vector field (d/deta, -d/dxi) of its stream monomial,
    which has identically zero divergence.
    """

    order: int
    center: tuple[float, float]
    scale: float

    @property
    def stream_exponents(self) -> np.ndarray:
        return monomial_exponents(self.order + 1, start=1)

    @property
    def dimension(self) -> int:
        return (self.order + 2) * (self.order + 3) // 2 - 1

    def evaluate(self, x, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Array of shape (points, 2, dimension)."""
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        xi = (pts[:, 0] - self.center[0]) / self.scale
        eta = (pts[:, 1] - self.center[1]) / self.scale
        exps = self.stream_exponents
        u = _monomials(xi, eta, exps, dx, dy + 1)
        v = -_monomials(xi, eta, exps, dx + 1, dy)
        return np.stack([u, v], axis=1) / self.scale ** (dx + dy)

    def component_polynomials(self) -> list[tuple[dict, dict]]:
        """Each element as (u, v) coefficient tables {(i, j): c} in scaled coordinates."""
        polys = []
        for a, b in self.stream_exponents:
            u = {(int(a), int(b) - 1): float(b)} if b > 0 else {}
            v = {(int(a) - 1, int(b)): -float(a)} if a > 0 else {}
            polys.append((u, v))
        return polys

    def divergence_polynomials(self) -> list[dict]:
        """Analytic divergence of every element, zero coefficients dropped."""
        result = []
        for u, v in self.component_polynomials():
            div: dict = {}
            for (i, j), c in u.items():
                if i > 0:
                    div[(i - 1, j)] = div.get((i - 1, j), 0.0) + c * i
            for (i, j), c in v.items():
                if j > 0:
                    div[(i, j - 1)] = div.get((i, j - 1), 0.0) + c * j
            result.append({k: c for k, c in div.items() if c != 0.0})
        return result

    def is_divergence_free(self) -> bool:
        return all(not div for div in self.divergence_polynomials())


def _weighted_pinv(design: np.ndarray, sqrt_w: np.ndarray, node=None) -> tuple[np.ndarray, float]:
    """Coefficient map of min ||sqrt(W) (P c - s)|| via pivoted QR; returns (map, cond(M))."""
    rows, dim = design.shape
    if rows < dim:
        raise UnisolvencyError(f"Node {node}: {rows} samples for a basis of dimension {dim}", node=node)
    scaled = design * sqrt_w[:, None]
    q, r, piv = sla.qr(scaled, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag[-1] <= 1e-14 * diag[0]:
        raise UnisolvencyError(f"Node {node}: rank-deficient moment matrix", node=node)
    condition = float(np.linalg.cond(r)) ** 2
    if not condition <= CONDITION_LIMIT:
        raise UnisolvencyError(f"Node {node}: moment matrix condition {condition:.3e}", node=node)
    permuted = sla.solve_triangular(r, q.T * sqrt_w[None, :])
    coeff = np.empty_like(permuted)
    coeff[piv] = permuted
    return coeff, condition


@dataclass(frozen=True)
class StaggeredRows:
    """Pressure gradient and Laplacian functionals over the neighbor pressures.

    ``gradient_g`` and ``laplacian_g`` carry the dependence on the Neumann datum
    when the fit is constrained by n . grad p = g.
    """

    gradient: np.ndarray
    laplacian: np.ndarray
    gradient_g: np.ndarray
    laplacian_g: float
    condition: float


def staggered_divgrad(points, self_index: int, eps: float, order: int, normal=None, node=None) -> StaggeredRows:
    """Staggered div-grad functionals built from edge differences p_j - p_i.

    The differences are regressed at the edge midpoints on monomials without a
    constant term; the 1/2 and 1/4 prefactors map the midpoint coefficients back to
    the gradient and Laplacian at the center.  With ``normal`` the fit is solved
    in the null space of the constraint n . grad p = g.
    """
    points = np.asarray(points, dtype=float)
    center = points[self_index]
    others = np.delete(np.arange(len(points)), self_index)
    rel = points[others] - center
    delta = 0.5 * rel / eps
    exps = monomial_exponents(order, start=1)
    design = _monomials(delta[:, 0], delta[:, 1], exps)
    sqrt_w = np.sqrt(weight(np.linalg.norm(rel, axis=1), eps))
    i10, i01 = _index(exps, 1, 0), _index(exps, 0, 1)
    i20, i02 = _index(exps, 2, 0), _index(exps, 0, 2)

    if normal is None:
        cmap, condition = _weighted_pinv(design, sqrt_w, node)
        g_coef = np.zeros(len(exps))
    else:
        a = np.zeros(len(exps))
        a[i10] = 0.5 * normal[0] / eps
        a[i01] = 0.5 * normal[1] / eps
        basis_z = sla.null_space(a[None, :])
        reduced, condition = _weighted_pinv(design @ basis_z, sqrt_w, node)
        cmap = basis_z @ reduced
        g_coef = (np.eye(len(exps)) - cmap @ design) @ a / (a @ a)

    grad_q = (0.5 / eps) * cmap[[i10, i01]]
    lap_q = (0.25 / eps**2) * (2.0 * cmap[i20] + 2.0 * cmap[i02])

    gradient = np.zeros((2, len(points)))
    gradient[:, others] = grad_q
    gradient[:, self_index] = -grad_q.sum(axis=1)
    laplacian = np.zeros(len(points))
    laplacian[others] = lap_q
    laplacian[self_index] = -lap_q.sum()
    return StaggeredRows(
        gradient=gradient,
        laplacian=laplacian,
        gradient_g=(0.5 / eps) * g_coef[[i10, i01]],
        laplacian_g=float((0.25 / eps**2) * (2.0 * g_coef[i20] + 2.0 * g_coef[i02])),
        condition=condition,
    )


@dataclass(frozen=True, eq=False)
class GmlsStencil:
    """Factorized local least-squares problem of one node (or one interpolation target)."""

    node: int
    neighbors: np.ndarray
    center: np.ndarray
    eps: float
    order: int
    weights: np.ndarray
    scalar_map: np.ndarray
    divfree_map: np.ndarray
    condition: float
    value: np.ndarray
    gradient: np.ndarray
    curlcurl: np.ndarray
    scalar_value: np.ndarray
    scalar_gradient: np.ndarray
    scalar_laplacian: np.ndarray
    staggered: StaggeredRows | None = None
    normal: np.ndarray | None = None

    @property
    def scalar_basis(self) -> ScalarBasis:
        return ScalarBasis(self.order, tuple(self.center), self.eps)

    @property
    def divfree_basis(self) -> DivFreeBasis:
        return DivFreeBasis(self.order, tuple(self.center), self.eps)

    def divfree_rows_at(self, x, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Rows (points, 2, 2n) evaluating a derivative of the velocity reconstruction at ``x``."""
        return np.einsum("pcd,ds->pcs", self.divfree_basis.evaluate(x, dx, dy), self.divfree_map)

    def gradient_rows_at(self, x) -> np.ndarray:
        """Rows (points, 4, 2n) for (du/dx, du/dy, dv/dx, dv/dy) at ``x``."""
        ddx = self.divfree_rows_at(x, 1, 0)
        ddy = self.divfree_rows_at(x, 0, 1)
        return np.stack([ddx[:, 0], ddy[:, 0], ddx[:, 1], ddy[:, 1]], axis=1)


@dataclass(frozen=True)
class ScalarFit:
    coefficients: np.ndarray
    value: float
    gradient: np.ndarray
    laplacian: float


@dataclass(frozen=True)
class DivFreeFit:
    coefficients: np.ndarray
    value: np.ndarray
    gradient: np.ndarray
    curlcurl: np.ndarray


def fit_scalar(stencil: GmlsStencil, samples) -> ScalarFit:
    """Weighted least-squares scalar reconstruction from neighbor samples."""
    s = np.asarray(samples, dtype=float)
    return ScalarFit(
        coefficients=stencil.scalar_map @ s,
        value=float(stencil.scalar_value @ s),
        gradient=stencil.scalar_gradient @ s,
        laplacian=float(stencil.scalar_laplacian @ s),
    )


def fit_divfree(stencil: GmlsStencil, samples) -> DivFreeFit:
    """Divergence-free reconstruction from neighbor velocities of shape (n, 2)."""
    u = np.asarray(samples, dtype=float)
    s = np.concatenate([u[:, 0], u[:, 1]])
    return DivFreeFit(
        coefficients=stencil.divfree_map @ s,
        value=stencil.value @ s,
        gradient=(stencil.gradient @ s).reshape(2, 2),
        curlcurl=stencil.curlcurl @ s,
    )


def build_stencil(center, points, eps: float, order: int, node: int = -1, neighbors=None,
                  normal=None, staggered: bool = True) -> GmlsStencil:
    """Factorize the local problems for one center and its neighbor positions."""
    center = np.asarray(center, dtype=float)
    points = np.asarray(points, dtype=float)
    n = len(points)
    r = np.linalg.norm(points - center, axis=1)
    w = weight(r, eps)
    sqrt_w = np.sqrt(w)

    sbasis = ScalarBasis(order, tuple(center), eps)
    scalar_map, cond_s = _weighted_pinv(sbasis.evaluate(points), sqrt_w, node)

    dbasis = DivFreeBasis(order, tuple(center), eps)
    values = dbasis.evaluate(points)
    design = np.vstack([values[:, 0, :], values[:, 1, :]])
    divfree_map, cond_d = _weighted_pinv(design, np.concatenate([sqrt_w, sqrt_w]), node)

    at = center[None, :]
    value = dbasis.evaluate(at)[0] @ divfree_map
    ddx = dbasis.evaluate(at, 1, 0)[0] @ divfree_map
    ddy = dbasis.evaluate(at, 0, 1)[0] @ divfree_map
    dxx = dbasis.evaluate(at, 2, 0)[0] @ divfree_map
    dyy = dbasis.evaluate(at, 0, 2)[0] @ divfree_map
    gradient = np.stack([ddx[0], ddy[0], ddx[1], ddy[1]])
    # curl curl u = -laplacian u for a divergence-free field
    curlcurl = -(dxx + dyy)

    s_value = (sbasis.evaluate(at) @ scalar_map)[0]
    s_gradient = np.vstack([sbasis.evaluate(at, 1, 0) @ scalar_map, sbasis.evaluate(at, 0, 1) @ scalar_map])
    s_laplacian = ((sbasis.evaluate(at, 2, 0) + sbasis.evaluate(at, 0, 2)) @ scalar_map)[0]

    rows = None
    condition = max(cond_s, cond_d)
    if staggered:
        self_index = int(np.argmin(r))
        if r[self_index] > 1e-12 * eps:
            raise UnisolvencyError(f"Node {node} is missing from its own neighborhood", node=node)
        rows = staggered_divgrad(points, self_index, eps, order, normal=normal, node=node)
        condition = max(condition, rows.condition)

    return GmlsStencil(
        node=node,
        neighbors=np.arange(n) if neighbors is None else np.asarray(neighbors),
        center=center,
        eps=float(eps),
        order=order,
        weights=w,
        scalar_map=scalar_map,
        divfree_map=divfree_map,
        condition=condition,
        value=value,
        gradient=gradient,
        curlcurl=curlcurl,
        scalar_value=s_value,
        scalar_gradient=s_gradient,
        scalar_laplacian=s_laplacian,
        staggered=rows,
        normal=None if normal is None else np.asarray(normal, dtype=float),
    )


def minimum_neighbors(order: int) -> int:
    dim = (order + 2) * (order + 3) // 2 - 1
    return int(math.ceil(NEIGHBOR_FACTOR * dim))


def _node_stencil(nodes: NodeSet, i: int, order: int) -> GmlsStencil:
    eps = float(support_radius(order, nodes.spacing[i]))
    needed = minimum_neighbors(order)
    normal = nodes.normals[i] if nodes.is_boundary[i] else None
    for _ in range(MAX_GROWTHS + 1):
        nbrs = nodes.neighbors(i, eps)
        if len(nbrs) >= needed:
            try:
                return build_stencil(nodes.positions[i], nodes.positions[nbrs], eps, order,
                                     node=i, neighbors=nbrs, normal=normal)
            except UnisolvencyError:
                pass
        eps *= EPS_GROWTH
    raise UnisolvencyError(f"Node {i}: no unisolvent neighborhood after {MAX_GROWTHS} radius growths", node=i)


def build_stencils(nodes: NodeSet, order: int, threads: int = 1) -> list[GmlsStencil]:
    """One stencil per node, growing epsilon by 1.2 until the local problem is unisolvent."""
    stencils = parallel_map(lambda i: _node_stencil(nodes, i, order), range(len(nodes)), threads)
    worst = max(s.condition for s in stencils)
    logger.debug("Built %d stencils (order %d), worst condition %.3e", len(stencils), order, worst)
    return stencils


def interpolation_stencil(x, coarse: NodeSet, eps: float, order: int, node=None) -> GmlsStencil:
    """Stencil centered at a fine-level point with coarse-level neighbors."""
    needed = minimum_neighbors(order)
    for _ in range(MAX_INTERPOLATION_GROWTHS + 1):
        nbrs = coarse.neighbors_of_point(x, eps)
        if len(nbrs) >= needed:
            try:
                return build_stencil(x, coarse.positions[nbrs], eps, order, node=node,
                                     neighbors=nbrs, staggered=False)
            except UnisolvencyError:
                pass
        eps *= EPS_GROWTH
    raise UnisolvencyError(
        f"Fine node {node}: no unisolvent coarse neighborhood after {MAX_INTERPOLATION_GROWTHS} growths",
        node=node,
    )


def condition_table(stencils) -> np.ndarray:
    """Per-node (node, eps, neighbor count, condition) rows for debug dumps."""
    return np.array([(s.node, s.eps, len(s.neighbors), s.condition) for s in stencils])
