"""First-order planner with a descent-and-stationarity contract, plus a brute-force oracle.

``plan`` never accepts a step that increases the cost and stops once the
gradient norm is below ``max(eps0 * sqrt(J_in), floor)``; that is the
contract the receding-horizon analysis relies on.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import batched_cost, gradient
from .errors import BudgetError, DivergenceError, StalledError
from .signals import ControlSignal, TimeGrid
from .simulate import eval_cost


@dataclass(frozen=True)
class PlannerConfig:
    """Gradient descent settings.

    The first trial step of each iteration is the Barzilai-Borwein step
    (``initial_step`` on the first iteration); Armijo backtracking then
    shrinks it by ``shrink`` until sufficient decrease holds.
    """

    eps0: float = 1e-2
    max_iters: int = 500
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    floor: float = 1e-9
    max_backtracks: int = 60
    max_step: float = 1e6

    def __post_init__(self):
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.armijo < 1:
            raise ValueError("Armijo constant must lie in (0, 1)")
        if self.max_iters < 0 or self.initial_step <= 0 or self.floor < 0:
            raise ValueError("max_iters, initial_step and floor must be nonnegative/positive")


@dataclass(frozen=True, eq=False)
class PlannerResult:
    u_out: ControlSignal
    J_in: float
    J_out: float
    eps_measured: float
    iterations: int
    converged: bool
    threshold: float
    history: tuple = field(default=(), repr=False)

    def summary(self):
        return {
            "J_in": float(self.J_in),
            "J_out": float(self.J_out),
            "eps_measured": float(self.eps_measured),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _try_cost(system, costs, u_nodes, x0, grid):
    try:
        return eval_cost(system, costs, ControlSignal(grid, u_nodes), x0)
    except DivergenceError:
        return None


def plan(system, costs, x0, u_init, config=None):
    """Armijo gradient descent from ``u_init``.

    Raises
    ------
    StalledError
        When no step satisfies the Armijo condition although the gradient
        is above threshold; the current iterate is carried in ``result``.
    DivergenceError
        If the initial guess itself diverges.
    """
    cfg = config or PlannerConfig()
    grid = u_init.grid
    w = grid.weights[:, None]
    x0 = np.asarray(x0, dtype=float)
    u = np.array(u_init.samples, dtype=float)
    res = gradient(system, costs, u_init, x0)
    J = J_in = res.rollout.J
    g = np.asarray(res.gradient.samples)
    eps = res.eps_measured
    thr = max(cfg.eps0 * math.sqrt(max(J_in, 0.0)), cfg.floor)
    history = [J]
    it = 0
    alpha = cfg.initial_step
    u_prev = g_prev = None

    def result(converged):
        return PlannerResult(ControlSignal(grid, u), J_in, J, eps, it, converged, thr, tuple(history))

    while eps > thr:
        if it >= cfg.max_iters:
            return result(False)
        if u_prev is not None:
            s = u - u_prev
            y = g - g_prev
            sy = float(np.sum(w * s * y))
            if sy > 0:
                alpha = float(np.sum(w * s * s)) / sy
            else:
                alpha = alpha / cfg.shrink
        alpha = min(alpha, cfg.max_step)
        g2 = eps**2
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand = u - alpha * g
            trial = _try_cost(system, costs, cand, x0, grid)
            if trial is not None and trial.J <= J - cfg.armijo * alpha * g2 and trial.J < J:
                accepted = True
                break
            alpha *= cfg.shrink
        if not accepted:
            raise StalledError(
                f"no descent step at iteration {it} (|g|={eps:.3e}, threshold {thr:.3e})",
                result(False),
            )
        u_prev, g_prev = u, g
        u = cand
        res = gradient(system, costs, trial.control, x0, evaluated=trial)
        J = res.rollout.J
        g = np.asarray(res.gradient.samples)
        eps = res.eps_measured
        history.append(J)
        it += 1
    return result(True)


@dataclass(frozen=True)
class CoarseSpec:
    """Lattice of piecewise-linear controls for exhaustive search.

    ``n_nodes`` control nodes per channel are spread uniformly over
    ``[0, T]`` and each takes one of ``levels``. Candidates are costed on
    ``grid``; the ``refine_top`` best are then improved with :func:`plan`.
    """

    grid: TimeGrid
    levels: tuple
    n_nodes: int = 4
    refine_top: int = 3
    budget: int = 9**6
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(eps0=1e-4, max_iters=300))
    chunk: int = 20000


@dataclass(frozen=True, eq=False)
class BruteForceResult:
    u: ControlSignal
    J: float
    n_candidates: int
    lattice_best: float

    def __iter__(self):
        return iter((self.u, self.J))


def _lattice_controls(spec, m, values):
    """Fine-grid nodal controls for coarse node values of shape (B, n_nodes * m)."""
    t = spec.grid.times
    knots = np.linspace(0.0, spec.grid.horizon, spec.n_nodes) if spec.n_nodes > 1 else np.array([0.0])
    B = values.shape[0]
    vals = values.reshape(B, spec.n_nodes, m)
    out = np.empty((t.size, B, m))
    if spec.n_nodes == 1:
        out[:] = vals[:, 0, :][None]
        return out
    # piecewise-linear interpolation weights, shared by all candidates
    idx = np.clip(np.searchsorted(knots, t, side="right") - 1, 0, spec.n_nodes - 2)
    lam = (t - knots[idx]) / (knots[idx + 1] - knots[idx])
    out[:] = (1 - lam)[:, None, None] * vals[:, idx, :].transpose(1, 0, 2) \
        + lam[:, None, None] * vals[:, idx + 1, :].transpose(1, 0, 2)
    return out


def brute_force_min(system, costs, x0, spec):
    """Best control found by lattice enumeration followed by local refinement.

    Ties in cost are broken lexicographically on the flattened coarse values.

    Raises
    ------
    BudgetError
        If the lattice is larger than allowed.
    """
    levels = np.asarray(spec.levels, dtype=float)
    dim = spec.n_nodes * system.m
    if spec.n_nodes > 6 or levels.size > 9:
        raise BudgetError("coarse lattice limited to 6 nodes and 9 levels per node")
    count = levels.size**dim
    if count > spec.budget:
        raise BudgetError(f"{count} candidates exceed the budget of {spec.budget}")
    x0 = np.asarray(x0, dtype=float)
    combos = np.array(list(itertools.product(range(levels.size), repeat=dim)), dtype=np.int64)
    J_all = np.empty(count)
    for lo in range(0, count, spec.chunk):
        vals = levels[combos[lo:lo + spec.chunk]]
        U = _lattice_controls(spec, system.m, vals)
        J_all[lo:lo + spec.chunk] = batched_cost(system, costs, U, x0, spec.grid.dt)
    # lexsort: last key is primary
    keys = [levels[combos[:, j]] for j in range(dim - 1, -1, -1)] + [J_all]
    order = np.lexsort(keys)
    lattice_best = float(J_all[order[0]])
    best_u, best_J, best_key = None, math.inf, None
    for i in order[:spec.refine_top]:
        if not math.isfinite(J_all[i]):
            continue
        u0 = ControlSignal(spec.grid, _lattice_controls(spec, system.m, levels[combos[i]][None])[:, 0, :])
        try:
            r = plan(system, costs, x0, u0, spec.planner)
            u_r, J_r = r.u_out, r.J_out
        except StalledError as exc:
            u_r, J_r = exc.result.u_out, exc.result.J_out
        except DivergenceError:
            continue
        key = (J_r, tuple(np.asarray(u_r.samples).ravel()))
        if best_key is None or key < best_key:
            best_u, best_J, best_key = u_r, J_r, key
    if best_u is None:
        raise DivergenceError(0.0, "every refined lattice candidate diverged")
    return BruteForceResult(best_u, float(best_J), int(count), lattice_best)
