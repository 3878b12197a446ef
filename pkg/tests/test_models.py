import math

import numpy as np
import pytest

from forhc import models
from forhc.errors import CatalogError, InvalidCostError
from forhc.signals import ControlSignal, TimeGrid
from forhc.simulate import rollout


@pytest.mark.parametrize("entry", models.catalog(), ids=lambda e: e.name)
def test_catalog_invariants(entry, rng):
    s = entry.system
    assert np.array_equal(s.f(np.zeros(s.n), np.zeros(s.m)), np.zeros(s.n))
    assert models.jacobian_error(s, rng) <= 1e-5
    assert models.lipschitz_ratio(s, rng) <= 1.0
    assert models.cost_bound_violation(entry.costs, s.n, s.m, rng) <= 1e-6


def test_catalog_names():
    names = [e.name for e in models.catalog()]
    assert len(set(names)) == len(names)
    assert {"sin_drift", "bump", "bump_linearized", "lti"} <= set(names)
    assert models.lookup("sin_drift").system.n == 1
    with pytest.raises(CatalogError):
        models.lookup("pendulum")


def test_quadratic_cost_bounds():
    c = models.quadratic_cost(1.0, 1.0, 1.0, 2, 1)
    x = np.array([0.3, -2.0])
    assert c.Q(x) == pytest.approx(x @ x)
    assert (c.alpha_Q, c.beta_Q, c.alpha_R, c.beta_R, c.alpha_V, c.beta_V) == (2, 2, 2, 2, 2, 2)
    assert models.quadratic_cost(1.0, 1.0, 0.0, 1, 1).alpha_V == 0.0
    for q, r in ((0.0, 1.0), (1.0, -1.0)):
        with pytest.raises(InvalidCostError):
            models.quadratic_cost(q, r, 1.0, 1, 1)


def test_counterexample_weights():
    c = models.sin_drift_counterexample_costs()
    assert c.alpha_Q / 2 == pytest.approx(1 / math.sqrt(2))
    assert c.alpha_R / 2 == pytest.approx(3 * math.pi / (2 * math.sqrt(2)))
    assert c.alpha_R / 2 == pytest.approx(3.3322, abs=1e-4)


def test_sin_drift_examples():
    s = models.sin_drift_system()
    assert s.f(np.array([0.0]), np.array([0.0]))[0] == 0.0
    assert abs(s.f(np.array([3 * math.pi / 4]), np.array([-1 / math.sqrt(2)]))[0]) < 1e-15
    assert s.jac_x(np.array([3 * math.pi / 4]), np.array([0.0]))[0, 0] == pytest.approx(-1 / math.sqrt(2))
    assert s.jac_u(np.array([1.0]), np.array([0.0]))[0, 0] == 1.0
    assert s.lipschitz == 1.0


def test_bump_function_shape():
    z = np.linspace(-1, 4, 501)
    eta = models.bump(z)
    assert np.all(eta[z <= 1] == 0) and np.all(eta[z >= 2] == 1)
    assert np.all(models.bump(z, 1) >= 0)
    assert models.bump(np.array(1.5)) == pytest.approx(0.5)
    h = 1e-6
    fd = (models.bump(z + h) - models.bump(z - h)) / (2 * h)
    assert np.max(np.abs(fd - models.bump(z, 1))) < 1e-6


def test_bump_system_examples():
    s = models.bump_system()
    assert np.array_equal(s.f(np.zeros(2), np.zeros(1)), np.zeros(2))
    assert np.allclose(s.f(np.array([5.0, -5.0]), np.zeros(1)), 0.0, atol=1e-14)
    assert np.allclose(s.f(np.array([0.5, 1.0]), np.array([2.0])), [0.5, 2.0], atol=1e-15)


def test_linearizing_coordinates():
    assert np.allclose(models.bump_to_linearizing(np.zeros(2)), 0.0)
    assert np.allclose(models.bump_to_linearizing(np.array([5.0, -5.0])), [5.0, 0.0])
    rng = np.random.default_rng(5)
    x = rng.uniform(-4, 4, size=(50, 2))
    assert np.allclose(models.bump_from_linearizing(models.bump_to_linearizing(x)), x, atol=1e-12)


@pytest.mark.parametrize("x0", [(0.5, 1.0), (1.4, -0.5), (5.0, -5.0), (1.8, 0.3)])
def test_flow_conjugacy(x0):
    grid = TimeGrid(1.0, 1000)
    u = ControlSignal.from_function(grid, lambda t: 0.5 * np.sin(3 * t))
    x = rollout(models.bump_system(), u, x0).states
    xi = rollout(models.bump_system_linearizing_coords(), u, models.bump_to_linearizing(np.array(x0))).states
    assert np.max(np.abs(models.bump_to_linearizing(x) - xi)) <= 1e-6


def test_linearizing_coords_drift_is_matched():
    s = models.bump_system_linearizing_coords()
    xi = np.array([[1.3, 0.4], [3.0, -2.0]])
    B = s.jac_u(xi, np.zeros((2, 1)))
    assert np.allclose(B[:, 0, 0], 0.0)
