"""Forward rollouts and evaluation of the finite-horizon cost ``J_T``."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._integrate import rk4_rollout
from .signals import ControlSignal, Trajectory, resample


def _check_dims(system, u, x0):
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (system.n,):
        raise ValueError(f"x0 must have {system.n} entries, got {x0.size}")
    if u.dim != system.m:
        raise ValueError(f"control has {u.dim} channels, system expects {system.m}")
    return x0


def rollout(system, u, x0):
    """RK4 solution of ``x' = F(x, u)``, ``x(0) = x0`` on the grid of ``u``.

    Raises
    ------
    DivergenceError
        If the state leaves ``|x| <= 1e8`` or becomes non-finite.
    """
    x0 = _check_dims(system, u, x0)
    states = rk4_rollout(system.f, x0, np.asarray(u.samples), u.grid.dt)
    return Trajectory(u.grid, states)


@dataclass(frozen=True)
class RolloutResult:
    """Trajectory, per-node running cost ``Q(x) + R(u)`` and total cost ``J``."""

    trajectory: Trajectory
    control: ControlSignal
    integrand: np.ndarray
    terminal: float
    J: float

    @property
    def grid(self):
        return self.trajectory.grid

    def summary(self):
        g = self.grid
        return {
            "J": float(self.J),
            "T": g.horizon,
            "n_steps": g.n_steps,
            "x0": [float(v) for v in self.trajectory.states[0]],
            "terminal_state": [float(v) for v in self.trajectory.states[-1]],
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self, path=None):
        return self.trajectory.to_csv(path)


def cost_of(costs, traj, u):
    """Assemble a :class:`RolloutResult` from an existing state path."""
    states = traj.states
    integrand = costs.Q(states) + costs.R(u.samples)
    terminal = float(costs.V(states[-1]))
    J = float(np.dot(u.grid.weights, integrand)) + terminal
    integrand = np.array(integrand)
    integrand.setflags(write=False)
    return RolloutResult(traj, u, integrand, terminal, J)


def eval_cost(system, costs, u, x0, grid=None):
    """``J_T(u; x0)``: trapezoid of ``Q + R`` plus ``V(x(T))``.

    When ``grid`` is given and differs from the control grid, ``u`` is
    resampled onto it first.
    """
    if grid is not None:
        u = resample(u, grid)
    traj = rollout(system, u, x0)
    return cost_of(costs, traj, u)


def value_to_go_profile(result):
    """``V~(s)`` at every node: tail trapezoid of the integrand plus the terminal cost."""
    f = result.integrand
    dt = result.grid.dt
    seg = 0.5 * dt * (f[:-1] + f[1:])
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return tail + result.terminal


def value_to_go(result, costs, s):
    """Cost-to-go ``V~(s)`` of the tail ``[s, T]`` of a fixed rollout.

    ``s`` is snapped to the nearest grid node. ``costs`` is accepted for
    signature symmetry; the integrand and terminal cost retained in
    ``result`` are used.
    """
    T = result.grid.horizon
    if s < -1e-12 * max(1.0, T) or s > T * (1 + 1e-12) + 1e-15:
        raise ValueError(f"s={s} outside [0, {T}]")
    k = result.grid.node_index(s)
    if k == 0:
        return result.J
    return float(value_to_go_profile(result)[k])
