import math

import numpy as np
import pytest

from conftest import direct_solve
from meshless_stokes.dynamics import (
    BodyState,
    QuasiStaticRhs,
    advance,
    attempt_step,
    configure,
    integrate,
    next_step_size,
    rhs,
    step_rk45,
)
from meshless_stokes.errors import SolverError
from meshless_stokes.flows import Flow, TaylorGreenFlow
from meshless_stokes.geometry import Circle, Domain, SolidBody
from meshless_stokes.refine import AdaptOptions


def test_constant_rate_is_integrated_exactly():
    y_new, error, _ = attempt_step(lambda t, y: np.array([1.0, -2.0, 0.5]), 0.0, np.zeros(3), 0.3, 1e-5)
    np.testing.assert_allclose(y_new, [0.3, -0.6, 0.15], atol=1e-15)
    assert error < 1e-8


def test_exponential_decay_to_tolerance():
    y, steps = integrate(lambda t, y: -y, [1.0], 0.0, 1.0, 0.2, rtol=1e-5)
    assert abs(y[0] - math.exp(-1.0)) < 1e-5
    assert steps[-1].time == pytest.approx(1.0)
    assert all(s.error <= 1.0 for s in steps)


def test_rejected_step_shrinks_dt():
    f = lambda t, y: -50.0 * y  # noqa: E731
    _, error, _ = attempt_step(f, 0.0, np.array([1.0]), 1.0, 1e-5)
    assert error > 1.0

    step = advance(f, 0.0, np.array([1.0]), 1.0, 1e-5)
    assert step.rejected >= 1
    assert step.dt < 1.0
    assert step.error <= 1.0


class CountingRhs:
    def __init__(self, rate):
        self.rate = rate
        self.calls = []

    def __call__(self, t, y):
        self.calls.append((t, np.array(y)))
        return self.rate * np.asarray(y)


def test_attempt_reuses_given_first_stage():
    f = CountingRhs(-1.0)
    y = np.array([1.0, 2.0])
    y_new, _, last = attempt_step(f, 0.0, y, 0.1, 1e-5, k1=f(0.0, y))
    assert len(f.calls) == 7
    # the last stage sits at the update itself
    np.testing.assert_allclose(last, -y_new, rtol=1e-14)


def test_rejections_keep_the_first_stage():
    f = CountingRhs(-50.0)
    step = advance(f, 0.0, np.array([1.0]), 1.0, 1e-5)

    assert step.rejected >= 1
    assert len(f.calls) == 1 + 6 * (step.rejected + 1)
    assert step.evaluations == len(f.calls)
    assert sum(1 for t, y in f.calls if t == 0.0 and y[0] == 1.0) == 1
    np.testing.assert_allclose(step.rates, -50.0 * step.y, rtol=1e-12)


def test_integrate_passes_last_stage_forward():
    f = CountingRhs(-1.0)
    y, steps = integrate(f, [1.0], 0.0, 1.0, 0.2, rtol=1e-5)

    assert len(steps) > 1
    assert len(f.calls) == 1 + sum(6 * (s.rejected + 1) for s in steps)
    assert [s.evaluations for s in steps[1:]] == [6 * (s.rejected + 1) for s in steps[1:]]


def test_step_size_factor_is_clamped():
    assert next_step_size(0.1, 0.0) == pytest.approx(0.5)
    assert next_step_size(0.1, 1e12) == pytest.approx(0.02)
    assert next_step_size(0.1, 1.0) == pytest.approx(0.09)


def test_step_underflow_raises():
    with pytest.raises(SolverError):
        advance(lambda t, y: -1e6 * y, 0.0, np.array([1.0]), 0.2, rtol=1e-300, atol=1e-300)


def test_invalid_tolerance():
    with pytest.raises(ValueError):
        advance(lambda t, y: y, 0.0, np.ones(1), 0.1, rtol=0.0)
    with pytest.raises(ValueError):
        BodyState(np.zeros((1, 2)), [0.0], dt=0.0)


def test_body_state_vector_layout():
    state = BodyState([[0.1, 0.2], [0.3, 0.4]], [0.5, 4.0], time=1.0, dt=0.1)
    np.testing.assert_allclose(state.orientations[1], 4.0 - 2 * math.pi)
    y = state.to_vector()
    np.testing.assert_allclose(y[:3], [0.1, 0.2, 0.5])
    back = BodyState.from_vector(y, 1.0, 0.1)
    np.testing.assert_allclose(back.positions, state.positions)


def test_step_rk45_translates_and_rotates():
    rates = np.array([1.0, -0.5, 2.0])
    state = BodyState([[0.0, 0.0]], [3.0], dt=0.2)
    new, step = step_rk45(state, lambda t, y: rates, max_dt=0.1)

    assert step.dt == pytest.approx(0.1)
    np.testing.assert_allclose(step.rates, rates)
    assert new.time == pytest.approx(0.1)
    np.testing.assert_allclose(new.positions, [[0.1, -0.05]])
    # 3.2 rad wraps into [-pi, pi)
    assert new.orientations[0] == pytest.approx(3.2 - 2 * math.pi)
    assert new.dt > step.dt


def test_configure_rejects_overlap(box):
    domain = Domain(box, (SolidBody(Circle(0.1)), SolidBody(Circle(0.1), position=(0.5, 0.0))))
    state = BodyState([[0.0, 0.0], [0.15, 0.0]], [0.0, 0.0])
    with pytest.raises(SolverError):
        configure(domain, state)


def test_unforced_bodies_stay_still(box):
    domain = Domain(box, (SolidBody(Circle(0.3)),))
    state = BodyState.from_domain(domain, dt=0.2)
    velocities, angular, result = rhs(domain, state, Flow(), AdaptOptions(dx0=0.25))

    np.testing.assert_array_equal(velocities, 0.0)
    np.testing.assert_array_equal(angular, 0.0)
    assert result.converged


def test_quasi_static_rhs_records_stages(box):
    domain = Domain(box, (SolidBody(Circle(0.3)),))
    f = QuasiStaticRhs(domain, Flow(), AdaptOptions(dx0=0.25), solve=direct_solve)
    rates = f(0.0, BodyState.from_domain(domain, dt=0.2).to_vector())

    np.testing.assert_allclose(rates, 0.0, atol=1e-12)
    assert len(f.stages) == 1
    assert f.stages[0]["min_gap"] == pytest.approx(0.7)
    assert f.last is not None


@pytest.mark.slow
def test_body_velocities_scale_with_forcing(box):
    domain = Domain(box, (SolidBody(Circle(0.3), position=(0.2, 0.1)),))
    state = BodyState.from_domain(domain, dt=0.2)
    options = AdaptOptions(dx0=0.25, max_levels=1, gmres_tol=1e-10)

    v1, w1, _ = rhs(domain, state, TaylorGreenFlow(amplitude=1.0), options)
    v2, w2, _ = rhs(domain, state, TaylorGreenFlow(amplitude=2.0), options)
    np.testing.assert_allclose(v2, 2.0 * v1, rtol=1e-4, atol=1e-10)
    np.testing.assert_allclose(w2, 2.0 * w1, rtol=1e-4, atol=1e-10)
