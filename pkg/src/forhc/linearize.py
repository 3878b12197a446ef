"""Jacobian linearization along a nominal pair and the convex surrogate ``J^jac``.

Along a nominal ``(x~, u~)`` the dynamics are replaced by
``x' = A(t) x + B(t) u + d(t)`` with ``A, B`` the Jacobians and ``d`` the
drift that makes the affine model exact on the nominal. Keeping the
original convex costs gives a strongly convex problem in ``u``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import optimize
from scipy.sparse import linalg as sparse_linalg

from ._integrate import _guard, affine_maps
from .adjoint import GradientResult, CostatePath, gradient_from_path
from .errors import GridMismatchError, NoFiniteGainError, NonConvergenceError
from .signals import ControlSignal, Trajectory, l2_norm
from .simulate import cost_of

PINV_RCOND = 1e-10


def _mid(z):
    return 0.5 * (z[:-1] + z[1:])


@dataclass(frozen=True, eq=False)
class LinearizationPath:
    """Per-node ``A(t), B(t), d(t)`` plus their values at interval midpoints.

    Midpoint coefficients are the Jacobians and drift at the interpolated
    nominal midpoint; they are what the RK4 middle stages read.
    """

    grid: object
    A: np.ndarray
    B: np.ndarray
    d: np.ndarray
    A_mid: np.ndarray
    B_mid: np.ndarray
    d_mid: np.ndarray
    x_nominal: Trajectory
    u_nominal: ControlSignal

    @property
    def n(self):
        return self.A.shape[-1]

    @property
    def m(self):
        return self.B.shape[-1]

    @cached_property
    def step_maps(self):
        """``(Phi, G0, G1, e)`` with ``x+ = Phi x + G0 u_k + G1 u_{k+1} + e``."""
        Phi, P1, P2, P4 = affine_maps(self.A, self.A_mid, self.grid.dt)
        Bm = 0.5 * self.B_mid
        G0 = P1 @ self.B[:-1] + P2 @ Bm
        G1 = P2 @ Bm + P4 @ self.B[1:]
        e = (
            np.einsum("kij,kj->ki", P1, self.d[:-1])
            + np.einsum("kij,kj->ki", P2, self.d_mid)
            + np.einsum("kij,kj->ki", P4, self.d[1:])
        )
        return Phi, G0, G1, e

    def to_csv(self, path=None):
        """CSV with columns ``t``, flattened ``A``, ``B`` and ``d`` per node."""
        n, m = self.n, self.m
        header = (["t"] + [f"A{i}{j}" for i in range(n) for j in range(n)]
                  + [f"B{i}{j}" for i in range(n) for j in range(m)]
                  + [f"d{i}" for i in range(n)])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(self.grid.times):
            row = np.concatenate([self.A[k].ravel(), self.B[k].ravel(), self.d[k]])
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def linearize_along(system, x_nom, u_nom):
    """Jacobians and drift of ``system`` along the nominal pair."""
    if x_nom.grid != u_nom.grid:
        raise GridMismatchError("nominal state and input live on different grids")
    if x_nom.dim != system.n or u_nom.dim != system.m:
        raise ValueError("nominal dimensions do not match the system")
    x = np.asarray(x_nom.states)
    u = np.asarray(u_nom.samples)

    def coeffs(xs, us):
        A = system.jac_x(xs, us)
        B = system.jac_u(xs, us)
        d = system.f(xs, us) - np.einsum("kij,kj->ki", A, xs) - np.einsum("kij,kj->ki", B, us)
        return A, B, d

    A, B, d = coeffs(x, u)
    A_mid, B_mid, d_mid = coeffs(_mid(x), _mid(u))
    return LinearizationPath(x_nom.grid, A, B, d, A_mid, B_mid, d_mid, x_nom, u_nom)


def _check_control(path, u):
    if u.grid != path.grid:
        raise GridMismatchError("control grid differs from the linearization grid")
    if u.dim != path.m:
        raise ValueError("control dimension differs from the linearization")


def _affine_states(path, u_nodes, x0, guard=True):
    Phi, G0, G1, e = path.step_maps
    c = np.einsum("kij,kj->ki", G0, u_nodes[:-1]) + np.einsum("kij,kj->ki", G1, u_nodes[1:]) + e
    x = np.empty((u_nodes.shape[0], path.n))
    y = np.array(x0, dtype=float).reshape(path.n)
    x[0] = y
    times = path.grid.times
    for k in range(Phi.shape[0]):
        y = Phi[k] @ y + c[k]
        if guard:
            _guard(y, times[k + 1])
        x[k + 1] = y
    return x


def affine_rollout(path, u_bar, x0):
    """RK4 solution of ``x' = A x + B u_bar + d`` on the path grid."""
    _check_control(path, u_bar)
    return Trajectory(path.grid, _affine_states(path, np.asarray(u_bar.samples), x0))


def jac_eval(path, costs, u_bar, x0):
    """:class:`RolloutResult` of the surrogate problem."""
    traj = affine_rollout(path, u_bar, x0)
    return cost_of(costs, traj, u_bar)


def jac_cost(path, costs, u_bar, x0):
    """``J^jac_T(u_bar; x0, u~)``."""
    return jac_eval(path, costs, u_bar, x0).J


def jac_gradient(path, costs, u_bar, x0):
    """Adjoint gradient of ``J^jac`` with the path's frozen Jacobians."""
    res = jac_eval(path, costs, u_bar, x0)
    g, p = gradient_from_path(path.grid, path.A, path.A_mid, path.B,
                              res.trajectory.states, np.asarray(u_bar.samples), costs)
    gsig = ControlSignal(path.grid, g)
    return GradientResult(gsig, l2_norm(gsig), CostatePath(path.grid, p), res)


def jac_discrete_gradient(path, costs, u_nodes, x0):
    """Exact gradient of the discretized surrogate.

    Returns ``(J, density)`` where ``density`` is the derivative with respect
    to the nodal values divided by the trapezoid weights, i.e. the gradient
    in the trapezoid-weighted inner product.
    """
    Phi, G0, G1, _ = path.step_maps
    w = path.grid.weights
    x = _affine_states(path, u_nodes, x0, guard=False)
    J = float(w @ (costs.Q(x) + costs.R(u_nodes)) + costs.V(x[-1]))
    gQ = costs.grad_Q(x)
    n_steps = Phi.shape[0]
    lam = np.empty_like(x)
    lam[n_steps] = w[n_steps] * gQ[n_steps] + costs.grad_V(x[-1])
    PhiT = np.swapaxes(Phi, -1, -2)
    for k in range(n_steps - 1, -1, -1):
        lam[k] = w[k] * gQ[k] + PhiT[k] @ lam[k + 1]
    dJ = w[:, None] * costs.grad_R(u_nodes)
    dJ[:-1] += np.einsum("kji,kj->ki", G0, lam[1:])
    dJ[1:] += np.einsum("kji,kj->ki", G1, lam[1:])
    return J, dJ / w[:, None]


@dataclass(frozen=True)
class JacMinimum:
    u: ControlSignal
    J: float
    grad_norm: float
    iterations: int

    def __iter__(self):
        return iter((self.u, self.J))


def minimize_jac(path, costs, x0, tol=1e-8, max_iters=20000, u_init=None):
    """Minimize the strongly convex surrogate to gradient norm ``tol``.

    Limited-memory BFGS runs in the variable ``W^{1/2} u`` so that the
    Euclidean gradient there is the weighted-L2 gradient of ``J^jac``.
    Unpacks as ``(u_star, J_star)``.

    Raises
    ------
    NonConvergenceError
        If the gradient norm is still above ``tol`` after ``max_iters``
        iterations; carries the best iterate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = path.grid
    w = grid.weights
    sw = np.sqrt(w)[:, None]
    shape = (grid.n_nodes, path.m)
    u0 = np.zeros(shape) if u_init is None else np.array(u_init.samples, dtype=float)

    def fun(v):
        u = v.reshape(shape) / sw
        J, dens = jac_discrete_gradient(path, costs, u, x0)
        return J, (dens * sw).ravel()

    def wnorm(dens):
        return float(np.sqrt(np.sum(w[:, None] * dens**2)))

    v = (u0 * sw).ravel()
    J, g = fun(v)
    total = 0
    best = (J, v, float(np.linalg.norm(g)))
    while best[2] > tol and total < max_iters:
        res = optimize.minimize(
            fun, best[1], jac=True, method="L-BFGS-B",
            options={"maxiter": max_iters - total, "gtol": 0.0, "ftol": 0.0, "maxcor": 30},
        )
        total += max(int(res.nit), 1)
        J, g = fun(res.x)
        gn = float(np.linalg.norm(g))
        if gn < best[2]:
            best = (J, res.x, gn)
        elif res.nit == 0:
            break
    if best[2] > tol:
        # function-value line searches run out of precision near the
        # optimum; finish with Newton steps judged by the gradient alone
        best, extra = _newton_polish(fun, best, tol, max_iters - total)
        total += extra
    u_best = ControlSignal(grid, best[1].reshape(shape) / sw)
    if best[2] > tol:
        raise NonConvergenceError(
            f"surrogate gradient norm {best[2]:.3e} above tol {tol:.1e}", u_best, best[0]
        )
    return JacMinimum(u_best, float(best[0]), best[2], total)


def _newton_polish(fun, best, tol, budget, max_newton=20):
    """Newton-CG steps accepted when they shrink the gradient norm."""
    J, v, gn = best
    g = fun(v)[1]
    used = 0
    for _ in range(max_newton):
        if gn <= tol or used >= budget:
            break

        def hess(d, v=v, g=g):
            nd = np.linalg.norm(d)
            if nd == 0:
                return np.zeros_like(d)
            tau = 1e-3 / nd
            return (fun(v + tau * d)[1] - fun(v - tau * d)[1]) / (2 * tau)

        op = sparse_linalg.LinearOperator((v.size, v.size), matvec=hess, dtype=float)
        step, _ = sparse_linalg.cg(op, -g, rtol=min(0.1, 0.1 * tol / gn), maxiter=500)
        used += 1
        improved = False
        for scale in (1.0, 0.5, 0.25):
            v_try = v + scale * step
            J_try, g_try = fun(v_try)
            gn_try = float(np.linalg.norm(g_try))
            if gn_try < gn:
                J, v, g, gn = J_try, v_try, g_try, gn_try
                improved = True
                break
        if not improved:
            break
    return (J, v, gn), used


def _pinv(B):
    return np.linalg.pinv(B, rcond=PINV_RCOND)


def matching_residual(path):
    """``|(I - B B^+) d|`` at every node."""
    B = path.B
    Bp = _pinv(B)
    proj = B @ Bp
    r = path.d - np.einsum("kij,kj->ki", proj, path.d)
    return np.linalg.norm(r, axis=-1)


def drift_cancelling_control(path, u_bar):
    """``u_bar - B^+ d`` at the nodes: removes matched drift from the surrogate."""
    corr = np.einsum("kij,kj->ki", _pinv(path.B), path.d)
    return ControlSignal(path.grid, np.asarray(u_bar.samples) - corr)


class DriftGains(NamedTuple):
    L_x: float
    L_u: float
    max_violation: float
    binding: dict


FIT_TOL = 1e-9


def drift_gain_fit(paths):
    """Smallest ``L_x + L_u`` with ``|B^+ d| <= L_x |x~| + L_u |u~|`` at every sampled node.

    Solved exactly as a two-variable linear program.

    Raises
    ------
    NoFiniteGainError
        If some node has nonzero ``B^+ d`` while ``x~ = u~ = 0``.
    """
    if not paths:
        raise ValueError("need at least one path")
    a, bx, bu, where = [], [], [], []
    for i, path in enumerate(paths):
        a.append(np.linalg.norm(np.einsum("kij,kj->ki", _pinv(path.B), path.d), axis=-1))
        bx.append(np.linalg.norm(path.x_nominal.states, axis=-1))
        bu.append(np.linalg.norm(path.u_nominal.samples, axis=-1))
        where.append(np.stack([np.full(path.grid.n_nodes, i), np.arange(path.grid.n_nodes)], 1))
    a, bx, bu, where = (np.concatenate(z) for z in (a, bx, bu, where))
    need = a > FIT_TOL
    if not np.any(need):
        return DriftGains(0.0, 0.0, float(np.max(a - FIT_TOL, initial=-FIT_TOL)), {})
    if np.any(need & (bx == 0) & (bu == 0)):
        k = int(np.argmax(need & (bx == 0) & (bu == 0)))
        raise NoFiniteGainError(
            f"drift {a[k]:.3e} at a zero nominal (path {where[k][0]}, node {where[k][1]})"
        )
    res = optimize.linprog(
        c=[1.0, 1.0],
        A_ub=-np.stack([bx[need], bu[need]], axis=1),
        b_ub=-(a[need] - FIT_TOL),
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if res.status != 0:
        raise NoFiniteGainError(f"gain program failed: {res.message}")
    L_x, L_u = (float(v) for v in res.x)
    slack = a - L_x * bx - L_u * bu
    k = int(np.argmax(slack))
    binding = {
        "path": int(where[k][0]),
        "node": int(where[k][1]),
        "drift_norm": float(a[k]),
        "state_norm": float(bx[k]),
        "input_norm": float(bu[k]),
    }
    return DriftGains(L_x, L_u, float(slack[k]), binding)
