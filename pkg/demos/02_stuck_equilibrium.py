"""A descent planner can sit forever at a poor stationary point.

For the scalar system dx/dt = sin(x) + u, a tuned quadratic cost makes the
constant pair x = 3 pi / 4, u = -1/sqrt(2) exactly stationary for every
horizon. Gradient descent started there never moves, and neither does the
receding-horizon loop built on it, although much cheaper inputs exist.
"""

import math

import numpy as np

from forhc import models
from forhc.adjoint import gradient
from forhc.planner import CoarseSpec, PlannerConfig, brute_force_min, plan
from forhc.rhc import RhcConfig, run_fo_rhc
from forhc.signals import ControlSignal, TimeGrid
from forhc.simulate import eval_cost

system = models.sin_drift_system()
costs = models.sin_drift_counterexample_costs()
x0 = [3 * math.pi / 4]
u_bad = -1 / math.sqrt(2)

print("gradient norm at the constant pair")
for T in (1.0, 5.0, 20.0):
    u = ControlSignal.constant(TimeGrid.default(T), [u_bad])
    print(f"  T = {T:4.0f}: {gradient(system, costs, u, x0).eps_measured:.1e}")

grid = TimeGrid(5.0, 100)
start = ControlSignal.constant(grid, [u_bad])
res = plan(system, costs, x0, start, PlannerConfig(eps0=1e-6))
print(f"\nplanner from the stationary pair: {res.iterations} iterations, J = {res.J_out:.4f}")

J_bad = eval_cost(system, costs, start, x0).J
bf = brute_force_min(system, costs, x0, CoarseSpec(grid, tuple(np.linspace(-4, 2, 7)), n_nodes=4))
print(f"lattice search over {bf.n_candidates} inputs: J* = {bf.J:.4f} "
      f"({100 * (1 - bf.J / J_bad):.0f}% below {J_bad:.4f})")

# closed loop: every warm start inherits the stationary input
rgrid = TimeGrid.default(30.0)
cfg = RhcConfig(30.0, 0.5, 20, x0, ControlSignal.constant(rgrid, [u_bad]), PlannerConfig(eps0=1e-3))
trace = run_fo_rhc(system, costs, cfg)
dev = np.abs(trace.measured[:, 0] - x0[0])
print(f"\nreceding horizon, 20 cycles: max |x(t_k) - 3pi/4| = {dev.max():.1e}")
print("iterations per cycle:", [c.result.iterations for c in trace.cycles])
