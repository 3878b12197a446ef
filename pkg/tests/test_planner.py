import json
import math

import numpy as np
import pytest

from forhc import models
from forhc.adjoint import gradient
from forhc.errors import BudgetError, StalledError
from forhc.planner import CoarseSpec, PlannerConfig, brute_force_min, plan
from forhc.signals import ControlSignal, TimeGrid, random_smooth_control
from forhc.simulate import eval_cost


def test_origin_needs_no_iterations():
    s = models.sin_drift_system()
    c = models.sin_drift_compliant_costs()
    u0 = ControlSignal.zeros(TimeGrid.default(2.0), 1)
    res = plan(s, c, [0.0], u0)
    assert res.iterations == 0 and res.converged
    assert res.J_out == 0.0


def test_stuck_warm_start_is_kept():
    s = models.sin_drift_system()
    c = models.sin_drift_counterexample_costs()
    g = TimeGrid.default(5.0)
    u0 = ControlSignal.constant(g, [-1 / math.sqrt(2)])
    res = plan(s, c, [3 * math.pi / 4], u0, PlannerConfig(eps0=1e-3))
    assert res.iterations == 0
    assert res.J_out == res.J_in
    assert np.array_equal(res.u_out.samples, u0.samples)


@pytest.mark.parametrize("x0", [0.8, -0.5, 2.0])
def test_converges_to_threshold(x0):
    s = models.sin_drift_system()
    c = models.sin_drift_compliant_costs()
    u0 = ControlSignal.zeros(TimeGrid.default(3.0), 1)
    cfg = PlannerConfig(eps0=1e-2)
    res = plan(s, c, [x0], u0, cfg)
    assert res.converged
    assert res.eps_measured <= cfg.eps0 * math.sqrt(res.J_in)
    fresh = gradient(s, c, res.u_out, [x0])
    assert fresh.rollout.J == pytest.approx(res.J_out, rel=1e-12)
    assert fresh.eps_measured == pytest.approx(res.eps_measured, rel=1e-12)
    assert res.J_out < res.J_in


def test_history_strictly_decreasing(rng):
    s = models.lookup("lti_nonsymmetric").system
    c = models.quadratic_cost(1.0, 0.1, 1.0, s.n, s.m)
    u0 = random_smooth_control(TimeGrid.default(2.0), s.m, rng)
    res = plan(s, c, [1.0, -0.5], u0, PlannerConfig(eps0=1e-3))
    h = np.array(res.history)
    assert np.all(np.diff(h) < 0)
    assert len(h) == res.iterations + 1
    # the descent contract: output cost never exceeds input cost
    assert res.J_out <= res.J_in


def test_idempotent_on_own_output():
    s = models.sin_drift_system()
    c = models.sin_drift_compliant_costs()
    u0 = ControlSignal.zeros(TimeGrid.default(2.0), 1)
    first = plan(s, c, [1.0], u0)
    # restart with the first run's threshold: the output already meets it
    cfg = PlannerConfig(eps0=first.threshold / math.sqrt(first.J_out))
    again = plan(s, c, [1.0], first.u_out, cfg)
    assert again.iterations == 0
    assert np.array_equal(again.u_out.samples, first.u_out.samples)


def test_iteration_cap_reports_unconverged():
    s = models.sin_drift_system()
    c = models.sin_drift_compliant_costs()
    u0 = ControlSignal.zeros(TimeGrid.default(3.0), 1)
    res = plan(s, c, [2.0], u0, PlannerConfig(eps0=1e-8, max_iters=2))
    assert not res.converged and res.iterations == 2


def test_stall_carries_iterate():
    s = models.lti_system([[1.0]], [[1.0]])
    c = models.quadratic_cost(1.0, 1.0, 1.0, 1, 1)
    u0 = ControlSignal.zeros(TimeGrid.default(2.0), 1)
    cfg = PlannerConfig(initial_step=1e6, max_backtracks=1)
    with pytest.raises(StalledError) as info:
        plan(s, c, [1.0], u0, cfg)
    assert info.value.result is not None
    assert info.value.result.iterations == 0
    assert np.array_equal(info.value.result.u_out.samples, u0.samples)


@pytest.mark.parametrize("kwargs", [{"eps0": 0.0}, {"shrink": 1.0}, {"armijo": 0.0}, {"max_iters": -1},
                                    {"initial_step": 0.0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PlannerConfig(**kwargs)


def test_result_json():
    s = models.sin_drift_system()
    res = plan(s, models.sin_drift_compliant_costs(), [0.5], ControlSignal.zeros(TimeGrid.default(1.0), 1))
    d = json.loads(res.to_json())
    assert set(d) == {"J_in", "J_out", "eps_measured", "iterations", "converged"}


def test_brute_force_at_origin():
    s = models.sin_drift_system()
    spec = CoarseSpec(TimeGrid(2.0, 100), levels=(-1.0, 0.0, 1.0), n_nodes=3)
    bf = brute_force_min(s, models.sin_drift_compliant_costs(), [0.0], spec)
    assert bf.J == 0.0
    assert bf.n_candidates == 27


def test_brute_force_beats_stuck_point():
    s = models.sin_drift_system()
    c = models.sin_drift_counterexample_costs()
    g = TimeGrid(5.0, 100)
    spec = CoarseSpec(g, levels=tuple(np.linspace(-4, 2, 7)), n_nodes=4)
    _, J_star = brute_force_min(s, c, [3 * math.pi / 4], spec)
    J_stuck = eval_cost(s, c, ControlSignal.constant(g, [-1 / math.sqrt(2)]), [3 * math.pi / 4]).J
    assert J_star <= 0.95 * J_stuck


def test_brute_force_budget():
    s = models.bump_system()
    spec = CoarseSpec(TimeGrid(1.0, 100), levels=tuple(range(7)), n_nodes=4, budget=1000)
    with pytest.raises(BudgetError):
        brute_force_min(s, models.bump_counterexample_costs(), [0.0, 0.0], spec)
    with pytest.raises(BudgetError):
        brute_force_min(s, models.bump_counterexample_costs(), [0.0, 0.0],
                        CoarseSpec(TimeGrid(1.0, 100), levels=tuple(range(10)), n_nodes=2))
