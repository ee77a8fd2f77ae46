"""Rigid-body time integration over quasi-static Stokes solves (Dormand-Prince 5(4))."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, SolverError
from .geometry import Domain, minimum_gap, wrap_angle
from .multigrid import solve as multigrid_solve
from .refine import AdaptOptions, AdaptResult, adapt_loop

logger = logging.getLogger(__name__)

MIN_STEP = 1e-8
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth- minus fourth-order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@dataclass
class BodyState:
    """Positions and orientations of every body at ``time``, with the next trial step."""

    positions: np.ndarray
    orientations: np.ndarray
    time: float = 0.0
    dt: float = 0.2

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.orientations = wrap_angle(np.asarray(self.orientations, dtype=float).reshape(-1))
        if not self.dt > 0:
            raise ValueError(f"Time step must be positive, got {self.dt}")

    @classmethod
    def from_domain(cls, domain: Domain, dt: float, time: float = 0.0) -> "BodyState":
        return cls(
            positions=[b.position for b in domain.bodies],
            orientations=[b.orientation for b in domain.bodies],
            time=time,
            dt=dt,
        )

    def to_vector(self) -> np.ndarray:
        return np.column_stack([self.positions, self.orientations]).ravel()

    @classmethod
    def from_vector(cls, y, time: float, dt: float) -> "BodyState":
        y = np.asarray(y, dtype=float).reshape(-1, 3)
        return cls(positions=y[:, :2], orientations=y[:, 2], time=time, dt=dt)


@dataclass
class StepResult:
    time: float
    y: np.ndarray
    dt: float
    dt_next: float
    error: float
    rejected: int = 0
    # f(time, y); the first stage of the following step
    rates: np.ndarray | None = None
    evaluations: int = 0


def next_step_size(dt: float, error: float) -> float:
    factor = MAX_FACTOR if error <= 0.0 else SAFETY * error ** -0.2
    return dt * min(MAX_FACTOR, max(MIN_FACTOR, factor))


def attempt_step(f, t: float, y, dt: float, rtol: float, atol: float = 1e-8, k1=None):
    """One Dormand-Prince attempt.

    Returns the fifth-order update, its scaled error and the last stage, which is
    f(t + dt, update) and can start the next step. With ``k1`` given only six stages
    are evaluated.
    """
    y = np.asarray(y, dtype=float)
    k = np.zeros((7, len(y)))
    k[0] = f(t, y) if k1 is None else k1
    for s in range(1, 7):
        k[s] = f(t + _C[s] * dt, y + dt * np.dot(_A[s], k[:s]))
    y_new = y + dt * (_B @ k)
    e = dt * (_E @ k)
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    error = float(np.max(np.abs(e) / scale)) if len(y) else 0.0
    return y_new, error, k[6]


def advance(f, t: float, y, dt: float, rtol: float, atol: float = 1e-8, wrap=None, k1=None) -> StepResult:
    """Retry with shrinking steps until one is accepted; f(t, y) is evaluated at most once."""
    if not rtol > 0:
        raise ValueError(f"rtol must be positive, got {rtol}")
    y = np.asarray(y, dtype=float)
    evaluations = 0
    if k1 is None:
        k1 = np.asarray(f(t, y), dtype=float)
        evaluations += 1
    rejected = 0
    while True:
        if dt < MIN_STEP:
            raise SolverError(f"Time step underflow at t={t:.6g}: dt={dt:.3e} < {MIN_STEP:g}")
        y_new, error, k_last = attempt_step(f, t, y, dt, rtol, atol, k1=k1)
        evaluations += 6
        if not np.isfinite(error):
            raise SolverError(f"Non-finite error estimate at t={t:.6g}")
        if error <= 1.0:
            if wrap is not None:
                y_new = wrap(y_new)
            return StepResult(time=t + dt, y=y_new, dt=dt, dt_next=next_step_size(dt, error),
                              error=error, rejected=rejected, rates=k_last, evaluations=evaluations)
        rejected += 1
        logger.debug("Rejected step at t=%.6g, dt=%.3e (error %.3e)", t, dt, error)
        dt = next_step_size(dt, error)


def _wrap_orientations(y: np.ndarray) -> np.ndarray:
    y = y.reshape(-1, 3).copy()
    y[:, 2] = wrap_angle(y[:, 2])
    return y.ravel()


def step_rk45(state: BodyState, rhs, rtol: float = 1e-5, atol: float = 1e-8, max_dt: float | None = None,
              rates=None):
    """Advance every body by one accepted step.

    ``rates`` are the body rates at ``state`` when already known. Returns the new state and
    the ``StepResult``, whose ``rates`` belong to the new state.
    """
    dt = state.dt if max_dt is None else min(state.dt, max_dt)
    step = advance(rhs, state.time, state.to_vector(), dt, rtol, atol, wrap=_wrap_orientations, k1=rates)
    return BodyState.from_vector(step.y, step.time, step.dt_next), step


def integrate(f, y0, t0: float, t1: float, dt0: float, rtol: float = 1e-5, atol: float = 1e-8,
              wrap=None, callback=None):
    """Adaptive integration from t0 to t1, clipping the final step onto t1."""
    t, y, dt = float(t0), np.asarray(y0, dtype=float), float(dt0)
    steps = []
    rates = None
    while t1 - t > 1e-12 * max(1.0, abs(t1)):
        step = advance(f, t, y, min(dt, t1 - t), rtol, atol, wrap=wrap, k1=rates)
        t, y, dt, rates = step.time, step.y, step.dt_next, step.rates
        steps.append(step)
        if callback is not None:
            callback(step)
    return y, steps


def configure(domain: Domain, state: BodyState) -> Domain:
    """``domain`` with every body moved to its pose in ``state``."""
    try:
        return domain.with_bodies([
            body.moved(state.positions[n], state.orientations[n]) for n, body in enumerate(domain.bodies)
        ])
    except GeometryError as e:
        raise SolverError(f"Bodies interpenetrate at t={state.time:.6g}: {e}")


def body_velocities(domain: Domain, flow, options: AdaptOptions, solve=multigrid_solve):
    result = adapt_loop(domain, flow, options, solve=solve)
    x = result.solution
    fluid = 3 * len(result.nodes)
    velocities = np.zeros((len(domain.bodies), 2))
    angular = np.zeros(len(domain.bodies))
    for k, body in enumerate(domain.free_bodies):
        velocities[body] = x[fluid + 3 * k: fluid + 3 * k + 2]
        angular[body] = x[fluid + 3 * k + 2]
    return velocities, angular, result


def rhs(domain: Domain, state: BodyState, flow, options: AdaptOptions, solve=multigrid_solve):
    """Rigid-body velocities at the configuration in ``state`` (full adaptive solve)."""
    return body_velocities(configure(domain, state), flow, options, solve)


@dataclass
class QuasiStaticRhs:
    """``f(t, y)`` for the body-state vector; records solver stats of every stage."""

    domain: Domain
    flow: object
    options: AdaptOptions
    solve: object = multigrid_solve
    stages: list[dict] = field(default_factory=list)
    last: AdaptResult | None = None

    def __call__(self, t: float, y) -> np.ndarray:
        moved = configure(self.domain, BodyState.from_vector(y, t, 1.0))
        velocities, angular, result = body_velocities(moved, self.flow, self.options, self.solve)
        self.last = result
        self.stages.append({
            "t": float(t),
            "levels": len(result.records),
            "converged": result.converged,
            "gmres_iterations": [r.gmres_iterations for r in result.records],
            "eta": [r.eta for r in result.records],
            "n_nodes": [r.n_nodes for r in result.records],
            "min_gap": minimum_gap(moved),
        })
        return np.column_stack([velocities, angular]).ravel()
