"""Unit-weight finite-horizon LQR along a linearization path.

The cost-to-go of ``min int_s^T |x|^2 + |u|^2 dt + |x(T)|^2`` subject to
``x' = A(t) x + B(t) u`` is ``x_s' P(s) x_s`` with ``P`` the solution of
``-P' = A'P + PA - PBB'P + I``, ``P(T) = I``. The largest eigenvalue of
``P`` over the horizon is the stabilizability constant ``gamma`` of the
path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, UnstabilizableError
from .linearize import linearize_along
from .signals import TimeGrid, random_smooth_control
from .simulate import rollout

BLOWUP = 1e10


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    grid: TimeGrid
    P: np.ndarray
    gamma: float
    P_mid: np.ndarray = field(repr=False, default=None)

    def value(self, s, x0):
        """Quadratic form ``x0' P(s) x0`` at the node nearest to ``s``."""
        k = self.grid.node_index(s)
        x0 = np.asarray(x0, dtype=float)
        return float(x0 @ self.P[k] @ x0)

    def summary(self):
        return {
            "gamma": float(self.gamma),
            "blowup": False,
            "T": self.grid.horizon,
            "n_steps": self.grid.n_steps,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _rhs(P, A, S):
    """``dP/dt`` of the Riccati equation written forward in time."""
    At = np.swapaxes(A, -1, -2)
    return -(At @ P + P @ A - P @ S @ P + np.eye(P.shape[-1]))


def solve_riccati(path):
    """Backward RK4 on the Riccati equation, symmetrizing after every step.

    Raises
    ------
    UnstabilizableError
        If ``lambda_max(P)`` exceeds ``1e10``; reports the time reached.
    """
    grid = path.grid
    dt = grid.dt
    n = path.n
    S = path.B @ np.swapaxes(path.B, -1, -2)
    S_mid = path.B_mid @ np.swapaxes(path.B_mid, -1, -2)
    N = grid.n_steps
    P = np.empty((N + 1, n, n))
    Pk = np.eye(n)
    P[N] = Pk
    times = grid.times
    for k in range(N - 1, -1, -1):
        # stepping backward: d/dt with step -dt
        k1 = _rhs(Pk, path.A[k + 1], S[k + 1])
        k2 = _rhs(Pk - 0.5 * dt * k1, path.A_mid[k], S_mid[k])
        k3 = _rhs(Pk - 0.5 * dt * k2, path.A_mid[k], S_mid[k])
        k4 = _rhs(Pk - dt * k3, path.A[k], S[k])
        Pk = Pk - (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        Pk = 0.5 * (Pk + Pk.T)
        if not np.all(np.isfinite(Pk)) or np.linalg.eigvalsh(Pk)[-1] > BLOWUP:
            raise UnstabilizableError(float(times[k]))
        P[k] = Pk
    gamma = float(np.max(np.linalg.eigvalsh(P)[:, -1]))
    dP = _rhs(P, path.A, S)
    P_mid = 0.5 * (P[:-1] + P[1:]) + (dt / 8.0) * (dP[:-1] - dP[1:])
    P_mid = 0.5 * (P_mid + np.swapaxes(P_mid, -1, -2))
    return RiccatiSolution(grid, P, gamma, P_mid)


def verify_gamma(path, solution, x0, s):
    """Cost of the Riccati feedback ``u = -B'P x`` started from ``(s, x0)``.

    The closed loop and its running cost ``x'(I + PBB'P)x`` are integrated
    together with RK4, so the result should reproduce ``x0' P(s) x0``.
    """
    grid = path.grid
    k0 = grid.node_index(s)
    y = np.array(x0, dtype=float).reshape(path.n)
    K = np.swapaxes(path.B, -1, -2) @ solution.P
    K_mid = np.swapaxes(path.B_mid, -1, -2) @ solution.P_mid
    L = path.A - path.B @ K
    L_mid = path.A_mid - path.B_mid @ K_mid
    eye = np.eye(path.n)
    W = eye + np.swapaxes(K, -1, -2) @ K
    W_mid = eye + np.swapaxes(K_mid, -1, -2) @ K_mid
    h = grid.dt
    cost = 0.0
    for k in range(k0, grid.n_steps):
        k1 = L[k] @ y
        y2 = y + 0.5 * h * k1
        k2 = L_mid[k] @ y2
        y3 = y + 0.5 * h * k2
        k3 = L_mid[k] @ y3
        y4 = y + h * k3
        k4 = L[k + 1] @ y4
        cost += (h / 6.0) * (y @ W[k] @ y + 2 * (y2 @ W_mid[k] @ y2)
                             + 2 * (y3 @ W_mid[k] @ y3) + y4 @ W[k + 1] @ y4)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > 1e8:
            raise DivergenceError(float(grid.times[k + 1]))
    return float(cost + y @ y)


@dataclass(frozen=True)
class SampleSpec:
    """Which nominal pairs to draw when checking path-wise assumptions.

    Initial states are uniform in ``state_scale`` times the system's state
    box; controls are random smooth signals with peak ``control_scale``.
    """

    horizons: tuple = (1.0, 3.0)
    n_initial: int = 4
    n_controls: int = 3
    seed: int = 0
    state_scale: float = 0.5
    control_scale: float = 1.0
    max_dt: float = 0.01
    extra_initial: tuple = ()

    def census(self):
        return {
            "horizons": [float(T) for T in self.horizons],
            "n_initial": self.n_initial,
            "n_controls": self.n_controls,
            "seed": self.seed,
            "state_scale": self.state_scale,
            "control_scale": self.control_scale,
            "max_dt": self.max_dt,
            "extra_initial": [list(map(float, x)) for x in self.extra_initial],
        }


def sample_paths(system, spec):
    """Linearization paths along sampled rollouts.

    Returns ``(paths, census)``; rollouts that diverge are skipped and
    counted in the census.
    """
    rng = np.random.default_rng(spec.seed)
    lo, hi = system.state_box
    paths = []
    diverged = 0
    for T in spec.horizons:
        grid = TimeGrid.default(T, spec.max_dt)
        starts = [rng.uniform(lo, hi) * spec.state_scale for _ in range(spec.n_initial)]
        starts += [np.asarray(x, dtype=float) for x in spec.extra_initial]
        for x0 in starts:
            for j in range(spec.n_controls):
                if j == 0:
                    u = random_smooth_control(grid, system.m, rng, scale=0.0)
                else:
                    u = random_smooth_control(grid, system.m, rng, scale=spec.control_scale)
                try:
                    traj = rollout(system, u, x0)
                except DivergenceError:
                    diverged += 1
                    continue
                paths.append(linearize_along(system, traj, u))
    census = dict(spec.census())
    census.update({
        "n_paths": len(paths),
        "n_nodes": int(sum(p.grid.n_nodes for p in paths)),
        "diverged": diverged,
    })
    return paths, census


def estimate_gamma_uniform(system, spec, paths=None):
    """Largest path ``gamma`` over the sample census.

    Raises
    ------
    UnstabilizableError
        From the first sample whose Riccati solution blows up, with the
        sample index in the message.
    """
    census = None
    if paths is None:
        paths, census = sample_paths(system, spec)
    gamma = 1.0
    for i, path in enumerate(paths):
        try:
            sol = solve_riccati(path)
        except UnstabilizableError as exc:
            raise UnstabilizableError(exc.time, f"sample {i} (T={path.grid.horizon}): {exc}") from exc
        gamma = max(gamma, sol.gamma)
    if census is None:
        census = dict(spec.census())
        census["n_paths"] = len(paths)
    return gamma, census

