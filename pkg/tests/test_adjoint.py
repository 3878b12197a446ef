import json
import math

import numpy as np
import pytest

from forhc import models
from forhc.adjoint import finite_difference_gradient, gradient, is_eps_fos
from forhc.signals import ControlSignal, TimeGrid, l2_norm, random_smooth_control
from forhc.simulate import eval_cost

SIN = models.sin_drift_system()


def rel_err(a, b):
    return l2_norm(ControlSignal(a.grid, a.samples - b.samples)) / l2_norm(b)


def test_zero_at_origin():
    g = TimeGrid(1.0, 100)
    res = gradient(SIN, models.sin_drift_compliant_costs(), ControlSignal.zeros(g, 1), [0.0])
    assert res.eps_measured == 0.0
    fd = finite_difference_gradient(SIN, models.sin_drift_compliant_costs(), ControlSignal.zeros(g, 1), [0.0])
    assert np.all(fd.samples == 0.0)


@pytest.mark.parametrize("T", [1.0, 5.0, 20.0])
def test_sin_drift_counterexample_stationary(T):
    costs = models.sin_drift_counterexample_costs()
    u = ControlSignal.constant(TimeGrid.default(T), [-1 / math.sqrt(2)])
    res = gradient(SIN, costs, u, [3 * math.pi / 4])
    p_norm = l2_norm(ControlSignal(u.grid, res.costate.p))
    assert res.eps_measured <= 1e-8 * (1 + p_norm)
    assert res.costate.p[-1, 0] == pytest.approx(3 * math.pi / 2)
    assert is_eps_fos(res, 1e-6)


@pytest.mark.parametrize("r", [0.1, 1.0, 10.0])
def test_bump_counterexample_stationary(r):
    res = gradient(models.bump_system(), models.bump_counterexample_costs(r=r),
                   ControlSignal.zeros(TimeGrid.default(2.0), 1), [5.0, -5.0])
    assert res.eps_measured <= 1e-10
    assert np.allclose(res.costate.p, [10.0, 0.0], atol=1e-9)


def test_terminal_costate(rng):
    entry = models.lookup("lti_nonsymmetric")
    u = random_smooth_control(TimeGrid(1.0, 100), 1, rng)
    res = gradient(entry.system, entry.costs, u, [0.5, 0.5])
    assert np.array_equal(res.costate.p[-1], entry.costs.grad_V(res.rollout.trajectory.states[-1]))
    assert res.eps_measured == l2_norm(res.gradient)


@pytest.mark.parametrize("name", ["sin_drift", "lti_nonsymmetric"])
def test_matches_finite_differences(name, rng):
    entry = models.lookup(name)
    g = TimeGrid(0.5, 1000)
    lo, hi = entry.system.state_box
    for _ in range(2):
        u = random_smooth_control(g, entry.system.m, rng)
        x0 = 0.2 * rng.uniform(lo, hi)
        adj = gradient(entry.system, entry.costs, u, x0).gradient
        fd = finite_difference_gradient(entry.system, entry.costs, u, x0, h=1e-4)
        assert rel_err(adj, fd) <= 1e-4


def test_transpose_is_needed(rng):
    # dropping the transpose on the nonsymmetric system breaks oracle agreement
    entry = models.lookup("lti_nonsymmetric")
    s = entry.system
    flipped = models.SystemModel(
        "flipped", s.n, s.m, s.f,
        lambda x, u: np.swapaxes(s.jac_x(x, u), -1, -2), s.jac_u, s.lipschitz,
        s.state_box, s.input_box,
    )
    u = random_smooth_control(TimeGrid(0.5, 500), 1, rng)
    fd = finite_difference_gradient(s, entry.costs, u, [0.4, -0.3])
    assert rel_err(gradient(s, entry.costs, u, [0.4, -0.3]).gradient, fd) < 1e-3
    assert rel_err(gradient(flipped, entry.costs, u, [0.4, -0.3]).gradient, fd) > 1e-2


def test_gradient_affine_on_lti(rng):
    entry = models.lookup("lti")
    g = TimeGrid(1.0, 100)
    u = random_smooth_control(g, 2, rng)
    x0 = [0.0, 0.0]
    g0 = gradient(entry.system, entry.costs, ControlSignal.zeros(g, 2), x0).gradient.samples
    g1 = gradient(entry.system, entry.costs, u, x0).gradient.samples
    g2 = gradient(entry.system, entry.costs, ControlSignal(g, 2 * u.samples), x0).gradient.samples
    assert np.allclose(g2 - g0, 2 * (g1 - g0), atol=1e-12)


def test_descent_direction(rng):
    entry = models.lookup("bump")
    g = TimeGrid(1.0, 200)
    u = random_smooth_control(g, 1, rng)
    x0 = [0.5, -0.5]
    res = gradient(entry.system, entry.costs, u, x0)
    J0 = res.rollout.J
    for s in 10.0 ** -np.arange(1, 8):
        step = ControlSignal(g, u.samples - s * res.gradient.samples)
        if eval_cost(entry.system, entry.costs, step, x0).J < J0:
            break
    else:
        pytest.fail("no decreasing step along the negative gradient")


def test_eps_fos_predicate():
    g = TimeGrid(1.0, 10)
    res = gradient(SIN, models.sin_drift_compliant_costs(), ControlSignal.zeros(g, 1), [0.0])
    assert is_eps_fos(res, 0.0)
    res = gradient(SIN, models.sin_drift_compliant_costs(), ControlSignal.constant(g, [1.0]), [0.0])
    assert not is_eps_fos(res, res.eps_measured / 2)
    with pytest.raises(ValueError):
        is_eps_fos(res, -1.0)


def test_export():
    g = TimeGrid(1.0, 10)
    res = gradient(SIN, models.sin_drift_compliant_costs(), ControlSignal.constant(g, [1.0]), [0.2])
    assert json.loads(res.to_json()) == {"eps_measured": res.eps_measured}
    assert res.to_csv().splitlines()[0] == "t,v0"
