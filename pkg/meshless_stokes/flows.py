"""Body forcing and wall data driving the Stokes problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Flow:
    """Unforced flow with stationary walls."""

    def body_force(self, points) -> np.ndarray:
        return np.zeros((len(points), 2))

    def force_divergence(self, points) -> np.ndarray | None:
        return np.zeros(len(points))

    def wall_velocity(self, points) -> np.ndarray:
        return np.zeros((len(points), 2))


@dataclass
class TaylorGreenFlow(Flow):
    """Steady Taylor-Green vortex on [-1, 1]^2, scaled by ``amplitude``.

    u = (cos pi x sin pi y, -sin pi x cos pi y), p = -(cos 2 pi x + cos 2 pi y),
    forced so that -nu lap u + grad p / rho = f exactly.
    """

    viscosity: float = 1.0
    density: float = 1.0
    amplitude: float = 1.0

    def velocity(self, points) -> np.ndarray:
        x, y = np.asarray(points, dtype=float).T
        pi = np.pi
        return self.amplitude * np.column_stack([
            np.cos(pi * x) * np.sin(pi * y),
            -np.sin(pi * x) * np.cos(pi * y),
        ])

    def pressure(self, points) -> np.ndarray:
        x, y = np.asarray(points, dtype=float).T
        return -self.amplitude * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y))

    def body_force(self, points) -> np.ndarray:
        x, y = np.asarray(points, dtype=float).T
        pi = np.pi
        viscous = 2 * pi**2 * self.viscosity
        pressure = 2 * pi / self.density
        return self.amplitude * np.column_stack([
            viscous * np.cos(pi * x) * np.sin(pi * y) + pressure * np.sin(2 * pi * x),
            -viscous * np.sin(pi * x) * np.cos(pi * y) + pressure * np.sin(2 * pi * y),
        ])

    def force_divergence(self, points) -> np.ndarray:
        x, y = np.asarray(points, dtype=float).T
        return self.amplitude * (4 * np.pi**2 / self.density) * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y))

    def wall_velocity(self, points) -> np.ndarray:
        return self.velocity(points)
