"""First-order receding-horizon control.

Every ``delta`` seconds the planner is warm-started from the previous
plan shifted by ``delta`` and padded with zero input, run from the
measured state, and its first ``delta`` seconds are applied to the
system. Measurements are the exact simulated state.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._jsonutil import dumps
from .errors import AlignmentError, DivergenceError, StalledError
from .planner import PlannerConfig, PlannerResult, plan
from .signals import ControlSignal, TimeGrid, Trajectory, l2_norm
from .simulate import eval_cost, rollout


def warm_start_shift(u_prev, delta):
    """``u_prev(t + delta)`` on ``[0, T - delta]``, zero afterwards, on the same grid.

    A full shift-out (``delta = T``) returns the zero signal.

    Raises
    ------
    AlignmentError
        If ``delta`` is not a whole number of grid steps or exceeds ``T``.
    """
    grid = u_prev.grid
    k = grid.steps_for(delta)
    if k is None or k < 0:
        raise AlignmentError(f"delta={delta} is not a multiple of dt={grid.dt}")
    if k > grid.n_steps:
        raise AlignmentError(f"delta={delta} exceeds the horizon {grid.horizon}")
    u = np.asarray(u_prev.samples)
    out = np.zeros_like(u)
    if k < grid.n_steps:
        out[:u.shape[0] - k] = u[k:]
    return ControlSignal(grid, out)


@dataclass(frozen=True, eq=False)
class RhcConfig:
    """Settings of one closed-loop run; the planning grid is ``u_bar0.grid``."""

    T: float
    delta: float
    n_replans: int
    x0: tuple
    u_bar0: ControlSignal
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        grid = self.u_bar0.grid
        if not math.isclose(grid.horizon, self.T, rel_tol=1e-12, abs_tol=1e-12):
            raise AlignmentError(f"warm start spans {grid.horizon}, horizon is {self.T}")
        if not 0 < self.delta <= self.T:
            raise AlignmentError("need 0 < delta <= T")
        if grid.steps_for(self.delta) is None:
            raise AlignmentError(f"delta={self.delta} is not a multiple of dt={grid.dt}")
        if self.n_replans < 0:
            raise ValueError("n_replans must be nonnegative")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    @classmethod
    def with_zero_start(cls, T, delta, n_replans, x0, m, planner=None, max_dt=0.01):
        grid = TimeGrid.default(T, max_dt)
        return cls(T, delta, n_replans, x0, ControlSignal.zeros(grid, m), planner or PlannerConfig())

    @property
    def grid(self):
        return self.u_bar0.grid

    @property
    def steps_per_cycle(self):
        return self.grid.steps_for(self.delta)

    def summary(self):
        return {
            "T": float(self.T),
            "delta": float(self.delta),
            "n_replans": int(self.n_replans),
            "x0": list(self.x0),
            "n_steps": int(self.grid.n_steps),
            "u_bar0_l2": float(l2_norm(self.u_bar0)),
            "planner": asdict(self.planner),
        }


@dataclass(frozen=True, eq=False)
class CycleRecord:
    k: int
    t: float
    x: np.ndarray
    warm_start: ControlSignal
    J_warm: Optional[float]
    result: Optional[PlannerResult]
    applied: Optional[ControlSignal]
    failure: Optional[str] = None

    def summary(self):
        return {
            "k": self.k,
            "t": self.t,
            "x": [float(v) for v in self.x],
            "norm": float(np.linalg.norm(self.x)),
            "J_warm": None if self.J_warm is None else float(self.J_warm),
            "planner": None if self.result is None else self.result.summary(),
            "failure": self.failure,
        }


@dataclass(frozen=True, eq=False)
class RhcTrace:
    config: RhcConfig
    cycles: tuple
    states: Trajectory
    measured: np.ndarray

    @property
    def times(self):
        """Measurement times ``t_k``, one per entry of :attr:`measured`."""
        return self.config.delta * np.arange(self.measured.shape[0])

    @property
    def norms(self):
        return np.linalg.norm(self.measured, axis=-1)

    @property
    def failure(self):
        for c in self.cycles:
            if c.failure is not None:
                return c.failure
        return None

    @property
    def truncated(self):
        return self.failure is not None

    def applied_rows(self):
        """Rows ``(cycle, t, u...)`` of the applied segments, boundaries included."""
        rows = []
        for c in self.cycles:
            if c.applied is None:
                continue
            t = c.t + c.applied.grid.times
            for ti, ui in zip(t, np.asarray(c.applied.samples)):
                rows.append((c.k, ti, *ui))
        return rows


def run_fo_rhc(system, costs, config):
    """Closed-loop FO-RHC for ``config.n_replans`` cycles.

    A planner stall or a diverging rollout ends the run early; the failing
    cycle is kept in the trace with its ``failure`` message.
    """
    grid = config.grid
    ks = config.steps_per_cycle
    seg_grid = TimeGrid(config.delta, ks)
    x = np.array(config.x0, dtype=float)
    if x.shape != (system.n,):
        raise ValueError(f"x0 has shape {x.shape}, system state dimension is {system.n}")
    measured = [x]
    pieces = [x[None]]
    cycles = []
    prev = None
    for k in range(config.n_replans):
        t_k = k * config.delta
        warm = config.u_bar0 if prev is None else warm_start_shift(prev, config.delta)
        try:
            J_warm = eval_cost(system, costs, warm, x).J
        except DivergenceError:
            J_warm = None
        try:
            res = plan(system, costs, x, warm, config.planner)
        except StalledError as exc:
            cycles.append(CycleRecord(k, t_k, x, warm, J_warm, exc.result, None, f"stall: {exc}"))
            break
        except DivergenceError as exc:
            cycles.append(CycleRecord(k, t_k, x, warm, J_warm, None, None, f"divergence: {exc}"))
            break
        seg = ControlSignal(seg_grid, np.asarray(res.u_out.samples)[:ks + 1])
        try:
            path = rollout(system, seg, x).states
        except DivergenceError as exc:
            cycles.append(CycleRecord(k, t_k, x, warm, J_warm, res, seg, f"divergence: {exc}"))
            break
        cycles.append(CycleRecord(k, t_k, x, warm, J_warm, res, seg))
        pieces.append(path[1:])
        x = path[-1].copy()
        measured.append(x)
        prev = res.u_out
    states = np.concatenate(pieces, axis=0)
    n_steps = states.shape[0] - 1
    if n_steps > 0:
        traj = Trajectory(TimeGrid(n_steps * grid.dt, n_steps), states)
    else:
        traj = Trajectory(TimeGrid(0.0, 1), np.repeat(states, 2, axis=0))
    return RhcTrace(config, tuple(cycles), traj, np.array(measured))


@dataclass(frozen=True)
class DecayReport:
    times: np.ndarray
    norms: np.ndarray
    bound: Optional[np.ndarray]
    holds: Optional[np.ndarray]
    applicable: bool
    fitted_rate: Optional[float]
    eta: Optional[float]

    @property
    def passed(self):
        """Bound holds at every measurement (``None`` when no constants apply)."""
        if self.holds is None:
            return None
        return bool(np.all(self.holds))

    @property
    def rate_below_eta(self):
        if self.fitted_rate is None or self.eta is None:
            return None
        return bool(self.fitted_rate <= self.eta)

    def summary(self):
        return {
            "applicable": self.applicable,
            "passed": self.passed,
            "n_checked": int(self.times.size),
            "n_violations": None if self.holds is None else int(np.sum(~self.holds)),
            "fitted_rate": self.fitted_rate,
            "eta": self.eta,
            "rate_below_eta": self.rate_below_eta,
            "norms": [float(v) for v in self.norms],
        }


def fitted_decay_rate(times, norms, floor=1e-300):
    """Slope of the least-squares line through ``(t, log |x|)``.

    ``None`` when fewer than two norms are positive or they share one time.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    keep = norms > floor
    if keep.sum() < 2 or np.ptp(times[keep]) == 0:
        return None
    slope, _ = np.polyfit(times[keep], np.log(norms[keep]), 1)
    return float(slope)


def decay_report(trace, constants=None, certificate=None):
    """Check ``|x(t_k)| <= sqrt(M) exp(eta t_k) |x0|`` and fit the realized rate.

    Without ``constants``, or with a certificate whose assumptions failed,
    the bound check is reported inapplicable.
    """
    t = trace.times
    norms = trace.norms
    rate = fitted_decay_rate(t, norms)
    applicable = constants is not None and (certificate is None or certificate.applicable)
    if constants is None:
        return DecayReport(t, norms, None, None, False, rate, None)
    bound = math.sqrt(constants.M) * np.exp(constants.eta * t) * norms[0]
    holds = norms <= bound * (1 + 1e-12)
    return DecayReport(t, norms, bound, holds, applicable, rate, float(constants.eta))


def trace_manifest(trace, report=None):
    """JSON-ready record of a run: config, per-cycle summaries, decay report."""
    return {
        "config": trace.config.summary(),
        "cycles": [c.summary() for c in trace.cycles],
        "truncated": trace.truncated,
        "failure": trace.failure,
        "decay_report": None if report is None else report.summary(),
    }


def export_trace(trace, directory, report=None):
    """Write ``trace.json``, ``closed_loop_states.csv`` and ``applied_control.csv``.

    Returns the written file names.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.json").write_text(dumps(trace_manifest(trace, report)))
    trace.states.to_csv(out / "closed_loop_states.csv")
    m = trace.config.u_bar0.dim
    lines = ["cycle,t," + ",".join(f"v{i}" for i in range(m))]
    for row in trace.applied_rows():
        lines.append(f"{row[0]}," + ",".join(f"{v:.17g}" for v in row[1:]))
    (out / "applied_control.csv").write_text("\n".join(lines) + "\n")
    return ["trace.json", "closed_loop_states.csv", "applied_control.csv"]
