"""Fixed-step RK4 kernels shared by rollouts, adjoints and Riccati sweeps.

Controls are piecewise linear, so the RK4 stages of step ``k`` read the
input at node ``k``, at the interval midpoint (average of the two nodes)
and at node ``k + 1``.
"""

import numpy as np

from .errors import DivergenceError

DIVERGENCE_BOUND = 1e8


def _guard(x, t, batch_ok=False):
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_BOUND)
    if batch_ok:
        return bad
    if np.any(bad) or np.linalg.norm(x) > DIVERGENCE_BOUND:
        raise DivergenceError(t)
    return None


def rk4_rollout(f, x0, u_nodes, dt):
    """Integrate ``x' = f(x, u)`` on a uniform grid.

    Parameters
    ----------
    f : callable
        Vector field accepting arrays with matching leading axes.
    x0 : ndarray, shape (..., n)
    u_nodes : ndarray, shape (N + 1, ..., m)
    dt : float

    Returns
    -------
    ndarray, shape (N + 1, ..., n)
    """
    x = np.array(x0, dtype=float)
    n_steps = u_nodes.shape[0] - 1
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    _guard(x, 0.0)
    half = 0.5 * dt
    for k in range(n_steps):
        u0 = u_nodes[k]
        u1 = u_nodes[k + 1]
        um = 0.5 * (u0 + u1)
        k1 = f(x, u0)
        k2 = f(x + half * k1, um)
        k3 = f(x + half * k2, um)
        k4 = f(x + dt * k3, u1)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(x, (k + 1) * dt)
        out[k + 1] = x
    return out


def rk4_batched_cost(f, running, terminal, x0, u_nodes, dt):
    """Trapezoid cost of many rollouts without storing the trajectories.

    ``u_nodes`` has shape (N + 1, B, m) and ``x0`` shape (B, n) or (n,).
    Diverging members get cost ``inf`` instead of raising.
    """
    n_steps = u_nodes.shape[0] - 1
    batch = u_nodes.shape[1]
    x = np.broadcast_to(np.asarray(x0, dtype=float), (batch, np.shape(x0)[-1])).copy()
    alive = np.ones(batch, dtype=bool)
    w_end = 0.5 * dt
    total = w_end * running(x, u_nodes[0])
    half = 0.5 * dt
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            u0 = u_nodes[k]
            u1 = u_nodes[k + 1]
            um = 0.5 * (u0 + u1)
            k1 = f(x, u0)
            k2 = f(x + half * k1, um)
            k3 = f(x + half * k2, um)
            k4 = f(x + dt * k3, u1)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = np.any(_guard(x, 0.0, batch_ok=True), axis=-1)
            if np.any(bad):
                alive &= ~bad
                x[bad] = 0.0
            w = w_end if k + 1 == n_steps else dt
            total = total + w * running(x, u1)
        total = total + terminal(x)
    total = np.where(alive, total, np.inf)
    return total


def rk4_suffix_costs(f, running, terminal, x_base, u_base, u_batch, start, dt):
    """Costs of controls that agree with a base control before a start step.

    Member ``b`` of ``u_batch`` (shape (N + 1, B, m)) must equal ``u_base``
    at every node before ``start[b]``, so its state matches ``x_base`` up
    to node ``start[b]``; only the remaining steps are integrated. ``start``
    must be nondecreasing. Diverging members get cost ``inf``.
    """
    n_steps = u_batch.shape[0] - 1
    batch = u_batch.shape[1]
    start = np.asarray(start)
    w = np.full(n_steps + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    base_run = running(x_base, u_base)
    prefix = np.concatenate([[0.0], np.cumsum(w * base_run)])
    x = np.zeros((batch, x_base.shape[-1]))
    total = np.zeros(batch)
    alive = np.ones(batch, dtype=bool)
    half = 0.5 * dt
    na = 0
    with np.errstate(all="ignore"):
        for k in range(n_steps):
            nb = int(np.searchsorted(start, k, side="right"))
            if nb > na:
                x[na:nb] = x_base[k]
                total[na:nb] = prefix[k] + w[k] * running(x[na:nb], u_batch[k, na:nb])
                na = nb
            if na == 0:
                continue
            xa = x[:na]
            u0 = u_batch[k, :na]
            u1 = u_batch[k + 1, :na]
            um = 0.5 * (u0 + u1)
            k1 = f(xa, u0)
            k2 = f(xa + half * k1, um)
            k3 = f(xa + half * k2, um)
            k4 = f(xa + dt * k3, u1)
            xa = xa + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            bad = np.any(_guard(xa, 0.0, batch_ok=True), axis=-1)
            if np.any(bad):
                alive[:na] &= ~bad
                xa[bad] = 0.0
            x[:na] = xa
            total[:na] += w[k + 1] * running(xa, u1)
        total = total + terminal(x)
    return np.where(alive, total, np.inf)


def affine_maps(L_nodes, L_mids, dt):
    """RK4 step maps for ``y' = L(t) y + g(t)``.

    With the coefficient ``L`` known at the nodes and midpoints, one RK4
    step reads ``y+ = Phi y + P1 g1 + P2 g2 + P4 g4`` where ``g1, g2, g4``
    are the forcing at the start, midpoint and end of the step.

    Returns
    -------
    Phi, P1, P2, P4 : ndarray, shape (N, n, n)
    """
    L1 = L_nodes[:-1]
    L4 = L_nodes[1:]
    L2 = L_mids
    n = L1.shape[-1]
    eye = np.broadcast_to(np.eye(n), L1.shape)
    h2 = 0.5 * dt
    # stage coefficients w.r.t. (y, g1, g2, g4)
    K1y, K1_1 = L1, eye
    K2y = L2 + h2 * L2 @ K1y
    K2_1 = h2 * L2 @ K1_1
    K2_2 = eye
    K3y = L2 + h2 * L2 @ K2y
    K3_1 = h2 * L2 @ K2_1
    K3_2 = eye + h2 * L2 @ K2_2
    K4y = L4 + dt * L4 @ K3y
    K4_1 = dt * L4 @ K3_1
    K4_2 = dt * L4 @ K3_2
    K4_4 = eye
    s = dt / 6.0
    Phi = eye + s * (K1y + 2 * K2y + 2 * K3y + K4y)
    P1 = s * (K1_1 + 2 * K2_1 + 2 * K3_1 + K4_1)
    P2 = s * (2 * K2_2 + 2 * K3_2 + K4_2)
    P4 = s * K4_4
    return Phi, P1, P2, P4


def linear_sweep(Phi, c, y0, guard_times=None):
    """Iterate ``y_{k+1} = Phi_k y_k + c_k``; returns all iterates."""
    n_steps = Phi.shape[0]
    out = np.empty((n_steps + 1,) + np.shape(y0))
    y = np.array(y0, dtype=float)
    out[0] = y
    for k in range(n_steps):
        y = Phi[k] @ y + c[k]
        if guard_times is not None:
            _guard(y, guard_times[k + 1])
        out[k + 1] = y
    return out
