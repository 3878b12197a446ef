"""Uniform-grid functions on ``[0, T]`` and their L2 geometry.

Signals are stored as nodal values on a uniform grid and are read
piecewise-linearly between nodes. All integrals use the trapezoid rule,
which is the quadrature consistent with that representation.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, HorizonMismatchError

DEFAULT_MAX_DT = 0.01


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, horizon]`` into ``n_steps`` intervals."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        horizon = float(self.horizon)
        if not math.isfinite(horizon) or horizon < 0:
            raise ValueError(f"horizon must be finite and >= 0, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @classmethod
    def default(cls, horizon, max_dt=DEFAULT_MAX_DT):
        """Grid with ``dt <= min(max_dt, horizon / 100)``."""
        if horizon == 0:
            return cls(0.0, 1)
        n = max(100, math.ceil(horizon / max_dt - 1e-9))
        return cls(horizon, n)

    @classmethod
    def from_dt(cls, horizon, dt):
        """Grid of step ``dt``; ``horizon`` must be an integer multiple of it."""
        n = horizon / dt
        k = round(n)
        if k < 1 or abs(n - k) > 1e-9 * max(1.0, n):
            raise ValueError(f"horizon {horizon} is not a multiple of dt={dt}")
        return cls(horizon, k)

    @property
    def dt(self):
        return self.horizon / self.n_steps

    @property
    def n_nodes(self):
        return self.n_steps + 1

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @property
    def weights(self):
        """Trapezoid quadrature weights, one per node."""
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def node_index(self, t):
        """Index of the node nearest to ``t`` (``t`` must lie in ``[0, T]``)."""
        if not (-1e-12 * max(1.0, self.horizon) <= t <= self.horizon * (1 + 1e-12) + 1e-15):
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        if self.horizon == 0:
            return 0
        return int(min(self.n_steps, max(0, round(t / self.dt))))

    def steps_for(self, duration):
        """Number of grid steps spanning ``duration``, or ``None`` if misaligned."""
        if self.dt == 0:
            return None
        n = duration / self.dt
        k = round(n)
        if abs(n - k) > 1e-9 * max(1.0, n):
            return None
        return int(k)


class _GridFunction:
    """Nodal samples on a :class:`TimeGrid`, read-only after construction."""

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise ValueError("samples must have shape (n_nodes, dim)")
        if values.shape[0] != grid.n_nodes:
            raise ValueError(
                f"expected {grid.n_nodes} samples for {grid}, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("samples must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def times(self):
        return self.grid.times

    def __call__(self, t):
        """Linear interpolant at ``t`` (scalar or array) inside ``[0, T]``."""
        t_arr = np.asarray(t, dtype=float)
        T = self.grid.horizon
        tol = 1e-12 * max(1.0, T)
        if np.any(t_arr < -tol) or np.any(t_arr > T + tol):
            raise ValueError(f"evaluation time outside [0, {T}]")
        if T == 0:
            out = np.broadcast_to(self.values[0], t_arr.shape + (self.dim,))
            return out.copy()
        tt = np.clip(t_arr, 0.0, T)
        out = np.stack(
            [np.interp(tt, self.grid.times, self.values[:, j]) for j in range(self.dim)],
            axis=-1,
        )
        return out

    def __len__(self):
        return self.grid.n_nodes

    def __repr__(self):
        return f"{type(self).__name__}(T={self.grid.horizon}, n_steps={self.grid.n_steps}, dim={self.dim})"

    def to_csv(self, path=None):
        """CSV text with header ``t,v0,...``; written to ``path`` when given."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"v{j}" for j in range(self.dim)])
        for t, row in zip(self.grid.times, self.values):
            writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        """Inverse of :meth:`to_csv`; ``source`` is a path or CSV text."""
        if "\n" in str(source):
            text = str(source)
        else:
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "t":
            raise ValueError("CSV header must start with 't'")
        data = np.array([[float(v) for v in r] for r in body])
        t = data[:, 0]
        grid = TimeGrid(t[-1], len(t) - 1)
        return cls(grid, data[:, 1:])


class ControlSignal(_GridFunction):
    """Piecewise-linear input ``[0, T] -> R^m``."""

    @property
    def samples(self):
        return self.values

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_nodes, 1)))

    @classmethod
    def zeros(cls, grid, m):
        return cls(grid, np.zeros((grid.n_nodes, m)))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(t)`` at the grid nodes."""
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.times], dtype=float)
        return cls(grid, vals)


class Trajectory(_GridFunction):
    """State path ``[0, T] -> R^n`` sampled at grid nodes."""

    @property
    def states(self):
        return self.values


def _check_compatible(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")
    if a.dim != b.dim:
        raise GridMismatchError(f"dimensions differ: {a.dim} vs {b.dim}")


def l2_inner(a, b):
    """Trapezoid approximation of the L2 inner product of two signals."""
    _check_compatible(a, b)
    pointwise = np.einsum("ij,ij->i", a.values, b.values)
    return float(np.dot(a.grid.weights, pointwise))


def l2_norm(a):
    return math.sqrt(max(l2_inner(a, a), 0.0))


def resample(a, grid):
    """Linear interpolation of ``a`` onto ``grid`` (same horizon)."""
    if not math.isclose(a.grid.horizon, grid.horizon, rel_tol=1e-12, abs_tol=1e-15):
        raise HorizonMismatchError(
            f"horizon mismatch: {a.grid.horizon} vs {grid.horizon}"
        )
    if grid == a.grid:
        return a
    vals = a(grid.times)
    return type(a)(grid, vals)


def random_smooth_control(grid, m, rng, scale=1.0, n_modes=3):
    """Random band-limited input: an offset plus a few sinusoids.

    Amplitudes are drawn so that the peak magnitude stays below ``scale``.
    """
    t = grid.times
    T = grid.horizon if grid.horizon > 0 else 1.0
    out = np.zeros((grid.n_nodes, m))
    for j in range(m):
        amps = rng.uniform(-1.0, 1.0, size=n_modes + 1)
        amps *= scale / max(1.0, np.sum(np.abs(amps)))
        phases = rng.uniform(0.0, 2 * np.pi, size=n_modes)
        out[:, j] = amps[0]
        for k in range(n_modes):
            out[:, j] += amps[k + 1] * np.sin(2 * np.pi * (k + 1) * t / T + phases[k])
    return ControlSignal(grid, out)
