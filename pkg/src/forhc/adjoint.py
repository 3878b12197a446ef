"""Costate gradients of ``J_T`` and first-order stationarity tests.

The gradient is the continuous adjoint sampled on the grid
(differentiate, then discretize): the costate solves
``-p' = A(t)^T p + grad Q(x(t))`` backward from ``p(T) = grad V(x(T))``
and the L2 gradient density is ``B(t)^T p(t) + grad R(u(t))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._integrate import affine_maps, rk4_batched_cost, rk4_suffix_costs
from .signals import ControlSignal, _GridFunction, l2_norm
from .simulate import RolloutResult, cost_of, rollout


class CostatePath(_GridFunction):
    """Adjoint variable ``p(t)`` sampled at grid nodes."""

    @property
    def p(self):
        return self.values


@dataclass(frozen=True)
class GradientResult:
    gradient: ControlSignal
    eps_measured: float
    costate: CostatePath
    rollout: Optional[RolloutResult] = None

    def to_csv(self, path=None):
        return self.gradient.to_csv(path)

    def to_json(self):
        return json.dumps({"eps_measured": float(self.eps_measured)}, indent=2)


def _midpoints(z):
    return 0.5 * (z[:-1] + z[1:])


def costate_sweep(A, A_mid, gQ, gQ_mid, p_T, dt):
    """Backward RK4 for ``-p' = A^T p + gQ`` on precomputed node/midpoint data.

    ``A`` has shape (N + 1, n, n), ``A_mid`` (N, n, n), ``gQ`` (N + 1, n) and
    ``gQ_mid`` (N, n). Reversed time turns the costate equation into a
    forward linear ODE whose step maps come from :func:`affine_maps`.
    """
    At = np.swapaxes(A, -1, -2)[::-1]
    Am = np.swapaxes(A_mid, -1, -2)[::-1]
    Phi, P1, P2, P4 = affine_maps(At, Am, dt)
    g_rev = gQ[::-1]
    gm_rev = gQ_mid[::-1]
    forcing = (
        np.einsum("kij,kj->ki", P1, g_rev[:-1])
        + np.einsum("kij,kj->ki", P2, gm_rev)
        + np.einsum("kij,kj->ki", P4, g_rev[1:])
    )
    n_steps = Phi.shape[0]
    p = np.empty((n_steps + 1, np.shape(p_T)[-1]))
    y = np.array(p_T, dtype=float)
    p[n_steps] = y
    for j in range(n_steps):
        y = Phi[j] @ y + forcing[j]
        p[n_steps - 1 - j] = y
    return p


def gradient_from_path(grid, A, A_mid, B, x_nodes, u_nodes, costs):
    """Adjoint gradient given Jacobian data along a state/input path.

    Returns ``(gradient_nodes, costate_nodes)``.
    """
    x_mid = _midpoints(x_nodes)
    p = costate_sweep(A, A_mid, costs.grad_Q(x_nodes), costs.grad_Q(x_mid),
                      costs.grad_V(x_nodes[-1]), grid.dt)
    g = np.einsum("kji,kj->ki", B, p) + costs.grad_R(u_nodes)
    return g, p


def gradient(system, costs, u, x0, evaluated=None):
    """Adjoint gradient of ``J_T(u; x0)`` as a :class:`GradientResult`.

    ``evaluated`` may carry an existing :class:`RolloutResult` for the same
    ``u`` and ``x0`` to skip the forward pass.
    """
    if evaluated is None:
        evaluated = cost_of(costs, rollout(system, u, x0), u)
    res = evaluated
    traj = res.trajectory
    x = traj.states
    us = np.asarray(u.samples)
    A = system.jac_x(x, us)
    B = system.jac_u(x, us)
    A_mid = system.jac_x(_midpoints(x), _midpoints(us))
    g, p = gradient_from_path(u.grid, A, A_mid, B, x, us, costs)
    gsig = ControlSignal(u.grid, g)
    return GradientResult(gsig, l2_norm(gsig), CostatePath(u.grid, p), res)


def batched_cost(system, costs, u_batch, x0, dt):
    """Discrete ``J`` for a batch of nodal controls of shape (N + 1, B, m)."""
    return rk4_batched_cost(system.f, costs.running, costs.V, x0, u_batch, dt)


def finite_difference_gradient(system, costs, u, x0, h=1e-4, chunk=2048):
    """Central-difference L2 gradient density of the discretized cost.

    Each nodal value ``u_i(t_j)`` is perturbed by ``+-h``; the difference
    quotient is divided by the trapezoid weight of node ``j``. A
    perturbation at node ``j`` leaves the first ``j - 1`` steps unchanged,
    so those are taken from one base rollout.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    grid = u.grid
    base = np.asarray(u.samples)
    n_nodes, m = base.shape
    x_base = rollout(system, u, x0).states
    n_pert = n_nodes * m
    diffs = np.empty(n_pert)
    idx = np.arange(n_pert)
    for lo in range(0, n_pert, chunk):
        sel = idx[lo:lo + chunk]
        b = sel.size
        nodes, chans = np.divmod(sel, m)
        # interleave +h / -h so start steps stay sorted
        batch = np.repeat(base[:, None, :], 2 * b, axis=1)
        cols = 2 * np.arange(b)
        batch[nodes, cols, chans] += h
        batch[nodes, cols + 1, chans] -= h
        start = np.repeat(np.maximum(nodes - 1, 0), 2)
        J = rk4_suffix_costs(system.f, costs.running, costs.V, x_base, base,
                             batch, start, grid.dt)
        diffs[sel] = (J[0::2] - J[1::2]) / (2 * h)
    dens = diffs.reshape(n_nodes, m) / grid.weights[:, None]
    return ControlSignal(grid, dens)


def is_eps_fos(result, eps):
    """True when the measured gradient norm is at most ``eps``."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    return bool(result.eps_measured <= eps)

