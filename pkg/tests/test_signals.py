import math

import numpy as np
import pytest

from forhc.errors import GridMismatchError, HorizonMismatchError
from forhc.signals import (
    ControlSignal,
    TimeGrid,
    Trajectory,
    l2_inner,
    l2_norm,
    random_smooth_control,
    resample,
)


def test_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.dt * g.n_steps == pytest.approx(2.0, abs=1e-15)
    assert g.n_nodes == 9
    assert g.weights.sum() == pytest.approx(2.0)
    assert g.steps_for(0.5) == 2
    assert g.steps_for(0.3) is None
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_default_grid_resolution():
    assert TimeGrid.default(5.0).dt <= 0.01
    assert TimeGrid.default(0.5).dt <= 0.5 / 100


def test_inner_zero_and_constant():
    g = TimeGrid(1.0, 10)
    b = random_smooth_control(g, 1, np.random.default_rng(0))
    assert l2_inner(ControlSignal.zeros(g, 1), b) == 0.0
    c = ControlSignal.constant(g, [1.7])
    assert l2_inner(c, c) == pytest.approx(1.7**2, rel=1e-14)


def test_inner_linear_exact():
    g = TimeGrid(1.0, 100)
    a = ControlSignal.from_function(g, lambda t: t)
    b = ControlSignal.constant(g, [1.0])
    assert abs(l2_inner(a, b) - 0.5) <= 1e-12


def test_norm_examples():
    assert l2_norm(ControlSignal.zeros(TimeGrid(1.0, 4), 2)) == 0.0
    assert l2_norm(ControlSignal.constant(TimeGrid(4.0, 7), [1.0])) == pytest.approx(2.0, rel=1e-14)
    g = TimeGrid(2 * math.pi, 2000)
    assert abs(l2_norm(ControlSignal.from_function(g, np.sin)) - math.sqrt(math.pi)) <= 1e-6


def test_mismatch_errors():
    a = ControlSignal.zeros(TimeGrid(1.0, 10), 1)
    with pytest.raises(GridMismatchError):
        l2_inner(a, ControlSignal.zeros(TimeGrid(1.0, 20), 1))
    with pytest.raises(GridMismatchError):
        l2_inner(a, ControlSignal.zeros(TimeGrid(1.0, 10), 2))
    with pytest.raises(HorizonMismatchError):
        resample(a, TimeGrid(2.0, 10))


def test_evaluation_outside_interval():
    a = ControlSignal.from_function(TimeGrid(1.0, 10), lambda t: t)
    assert a(0.25)[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        a(1.5)
    with pytest.raises(ValueError):
        ControlSignal(TimeGrid(1.0, 2), [[0.0], [np.nan], [1.0]])


def test_resample_examples():
    g = TimeGrid(1.0, 10)
    a = random_smooth_control(g, 2, np.random.default_rng(1))
    same = resample(a, TimeGrid(1.0, 10))
    assert np.array_equal(same.samples, a.samples)
    c = resample(ControlSignal.constant(g, [3.0]), TimeGrid(1.0, 37))
    assert np.all(c.samples == 3.0)
    lin = resample(ControlSignal.from_function(g, lambda t: t), TimeGrid(1.0, 1000))
    assert np.max(np.abs(lin.samples[:, 0] - lin.grid.times)) == 0.0


def test_cauchy_schwarz(rng):
    g = TimeGrid(3.0, 300)
    for _ in range(20):
        a = random_smooth_control(g, 2, rng)
        b = random_smooth_control(g, 2, rng)
        assert abs(l2_inner(a, b)) <= l2_norm(a) * l2_norm(b) + 1e-12


def test_quadrature_order_two():
    exact = (1 - math.cos(2.0)) / 2
    errs = []
    for n in (20, 40, 80):
        g = TimeGrid(1.0, n)
        a = ControlSignal.from_function(g, lambda t: np.sin(2 * t))
        errs.append(abs(l2_inner(a, ControlSignal.constant(g, [1.0])) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.02)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.02)


def test_resample_preserves_norms():
    g = TimeGrid(1.0, 10)
    lin = ControlSignal.from_function(g, lambda t: 2 * t - 0.5)
    fine = resample(lin, TimeGrid(1.0, 40))
    assert np.allclose(fine.samples[:, 0], 2 * fine.grid.times - 0.5, atol=1e-15)
    errs = []
    for n in (50, 100):
        s = ControlSignal.from_function(TimeGrid(1.0, n), lambda t: np.cos(3 * t))
        errs.append(abs(l2_norm(resample(s, TimeGrid(1.0, 997))) - l2_norm(s)))
    assert errs[1] < errs[0] / 3


def test_csv_roundtrip(tmp_path):
    g = TimeGrid(1.5, 6)
    a = random_smooth_control(g, 2, np.random.default_rng(3))
    text = a.to_csv(tmp_path / "u.csv")
    assert text.splitlines()[0] == "t,v0,v1"
    b = ControlSignal.from_csv(tmp_path / "u.csv")
    assert np.array_equal(a.samples, b.samples)
    t = Trajectory.from_csv(text)
    assert np.array_equal(t.states, a.samples)


def test_values_read_only():
    a = ControlSignal.zeros(TimeGrid(1.0, 3), 1)
    with pytest.raises(ValueError):
        a.samples[0, 0] = 1.0
