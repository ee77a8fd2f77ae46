import numpy as np
import pytest

from meshless_stokes.flows import Flow, TaylorGreenFlow
from meshless_stokes.geometry import Circle, Domain, Rectangle, SolidBody
from meshless_stokes.krylov import SolverReport
from meshless_stokes.multigrid import CoarseSolver
from meshless_stokes.point_cloud import seed_uniform


def lattice(n, h, center=(0.0, 0.0)):
    """n x n square lattice of pitch h centered on ``center``."""
    offsets = (np.arange(n) - 0.5 * (n - 1)) * h
    gx, gy = np.meshgrid(offsets + center[0], offsets + center[1], indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


class LinearFlow(Flow):
    """u = (-y, x) + (a, b), p = c x + d y: reproduced exactly at every GMLS order."""

    def __init__(self, shift=(0.3, -0.2), pressure=(1.0, 2.0), density=1.0):
        self.shift = np.asarray(shift, dtype=float)
        self.gradient = np.asarray(pressure, dtype=float)
        self.density = density

    def velocity(self, points):
        points = np.asarray(points, dtype=float)
        return np.column_stack([-points[:, 1], points[:, 0]]) + self.shift

    def pressure(self, points):
        return np.asarray(points, dtype=float) @ self.gradient

    def body_force(self, points):
        return np.tile(self.gradient / self.density, (len(points), 1))

    def wall_velocity(self, points):
        return self.velocity(points)


def direct_solve(hierarchy, tol=1e-6, restart=100, maxiter=1000):
    """Stand-in for the multigrid solve: factorize the finest level directly."""
    system = hierarchy.finest.system
    x = CoarseSolver(system).solve(system.rhs)
    residual = np.linalg.norm(system.residual(x)) / max(np.linalg.norm(system.rhs), 1e-300)
    return x, SolverReport(iterations=0, residual=float(residual), history=[float(residual)], converged=True)


@pytest.fixture
def box():
    return Rectangle.square(2.0)


@pytest.fixture
def empty_domain(box):
    return Domain(box)


@pytest.fixture
def circle_domain(box):
    return Domain(box, (SolidBody(Circle(0.3)),))


@pytest.fixture
def coarse_nodes(empty_domain):
    """8 x 8 lattice plus 32 wall nodes."""
    return seed_uniform(empty_domain, 0.25)


@pytest.fixture
def taylor_green():
    return TaylorGreenFlow()


@pytest.fixture
def linear_flow():
    return LinearFlow()
