"""Control systems, convex costs and the built-in example catalog.

Every vector field, Jacobian and cost here is vectorized over leading
array axes: ``x`` has shape ``(..., n)`` and ``u`` shape ``(..., m)``.
That lets the same model drive single rollouts, batched finite
differences and pointwise sampling checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CatalogError, InvalidCostError


@dataclass(frozen=True)
class SystemModel:
    """Vector field ``x' = F(x, u)`` with its Jacobians.

    ``lipschitz`` is the constant ``L_F`` in
    ``|F(x1,u1) - F(x2,u2)| <= L_F (|x1-x2| + |u1-u2|)``; for systems that
    are not globally Lipschitz it is certified on ``state_box`` x
    ``input_box`` only.
    """

    name: str
    n: int
    m: int
    f: Callable
    jac_x: Callable
    jac_u: Callable
    lipschitz: float
    state_box: tuple
    input_box: tuple
    phi: Optional[Callable] = None
    phi_inv: Optional[Callable] = None
    notes: str = ""

    def __call__(self, x, u):
        return self.f(x, u)

    def sample_states(self, rng, size):
        lo, hi = self.state_box
        return rng.uniform(lo, hi, size=(size, self.n))

    def sample_inputs(self, rng, size):
        lo, hi = self.input_box
        return rng.uniform(lo, hi, size=(size, self.m))


@dataclass(frozen=True)
class CostModel:
    """Running costs ``Q(x)``, ``R(u)``, terminal cost ``V(x)`` and Hessian bounds."""

    Q: Callable
    grad_Q: Callable
    R: Callable
    grad_R: Callable
    V: Callable
    grad_V: Callable
    alpha_Q: float
    beta_Q: float
    alpha_R: float
    beta_R: float
    alpha_V: float
    beta_V: float
    weights: dict = field(default_factory=dict, compare=False)

    def running(self, x, u):
        return self.Q(x) + self.R(u)


def _quadform(W):
    W = np.asarray(W, dtype=float)

    def value(z):
        return np.einsum("...i,ij,...j->...", z, W, z)

    def grad(z):
        return 2.0 * z @ W

    return value, grad


def quadratic_costs(W_q, W_r, W_v):
    """Quadratic costs ``x'W_q x``, ``u'W_r u``, ``x'W_v x`` from weight matrices."""
    W_q, W_r, W_v = (np.atleast_2d(np.asarray(W, dtype=float)) for W in (W_q, W_r, W_v))
    for W in (W_q, W_r, W_v):
        if not np.allclose(W, W.T):
            raise InvalidCostError("weight matrices must be symmetric")
    eq, er, ev = (np.linalg.eigvalsh(W) for W in (W_q, W_r, W_v))
    if eq.min() <= 0 or er.min() <= 0:
        raise InvalidCostError("state and input weights must be positive definite")
    if ev.min() < -1e-14:
        raise InvalidCostError("terminal weight must be positive semidefinite")
    Q, gQ = _quadform(W_q)
    R, gR = _quadform(W_r)
    V, gV = _quadform(W_v)
    return CostModel(
        Q, gQ, R, gR, V, gV,
        alpha_Q=2 * eq.min(), beta_Q=2 * eq.max(),
        alpha_R=2 * er.min(), beta_R=2 * er.max(),
        alpha_V=max(0.0, 2 * ev.min()), beta_V=2 * ev.max(),
        weights={"W_q": W_q.tolist(), "W_r": W_r.tolist(), "W_v": W_v.tolist()},
    )


def quadratic_cost(q, r, q_f, n, m):
    """``Q = q|x|^2``, ``R = r|u|^2``, ``V = q_f|x|^2``."""
    if not (q > 0 and r > 0):
        raise InvalidCostError(f"q and r must be positive, got q={q}, r={r}")
    if q_f < 0:
        raise InvalidCostError(f"q_f must be nonnegative, got {q_f}")
    return quadratic_costs(q * np.eye(n), r * np.eye(m), q_f * np.eye(n))


# ---------------------------------------------------------------------------
# smooth step used by the bump example

def _sigma_parts(w, order):
    """``exp(-1/w)`` and its first two derivatives for ``w`` in ``(0, 1)``."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        inv = 1.0 / w
        a = np.exp(-inv)
        if order == 0:
            return a, None, None
        live = a > 0
        inv = np.where(live, inv, 0.0)
        d1 = a * inv**2
        d2 = a * (inv**4 - 2.0 * inv**3) if order == 2 else None
    return a, d1, d2


def smooth_step(w, order=0):
    """C-infinity step: 0 for ``w <= 0``, 1 for ``w >= 1``.

    ``order`` selects the value (0) or first/second derivative (1, 2).
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape)
    if order == 0:
        out[w >= 1.0] = 1.0
    mid = (w > 0.0) & (w < 1.0)
    if not np.any(mid):
        return out if out.ndim else float(out)
    wm = w[mid]
    a, a1, a2 = _sigma_parts(wm, order)
    b, b1, b2 = _sigma_parts(1.0 - wm, order)
    D = a + b
    if order == 0:
        out[mid] = a / D
    else:
        # b is a function of (1 - w): chain rule flips odd derivatives
        b1 = -b1
        num1 = a1 * b - a * b1
        if order == 1:
            out[mid] = num1 / D**2
        else:
            out[mid] = ((a2 * b - a * b2) * D - 2.0 * num1 * (a1 + b1)) / D**3
    return out if out.ndim else float(out)


def bump(z, order=0):
    """Bump ``eta(z)``: 0 for ``z <= 1``, 1 for ``z >= 2``, nondecreasing."""
    return smooth_step(np.asarray(z, dtype=float) - 1.0, order)


_D_GAIN = 10.0


# ---------------------------------------------------------------------------
# systems

def lti_system(A, B, name="lti", box=2.0):
    """Linear time-invariant system ``x' = A x + B u``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = B.shape
    if A.shape != (n, n):
        raise ValueError("A must be n x n and B n x m")

    def f(x, u):
        return x @ A.T + u @ B.T

    def jac_x(x, u):
        return np.broadcast_to(A, np.shape(x)[:-1] + (n, n)).copy()

    def jac_u(x, u):
        return np.broadcast_to(B, np.shape(x)[:-1] + (n, m)).copy()

    L = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2))
    if L == 0:
        L = 1.0
    return SystemModel(
        name, n, m, f, jac_x, jac_u, float(L),
        state_box=(-box * np.ones(n), box * np.ones(n)),
        input_box=(-box * np.ones(m), box * np.ones(m)),
        notes="globally Lipschitz linear map",
    )


def sin_drift_system():
    """Scalar ``x' = sin(x) + u``."""

    def f(x, u):
        return np.sin(x) + u

    def jac_x(x, u):
        return np.cos(x)[..., None]

    def jac_u(x, u):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    box = 2 * (3 * math.pi / 4)
    return SystemModel(
        "sin_drift", 1, 1, f, jac_x, jac_u, 1.0,
        state_box=(np.array([-box]), np.array([box])),
        input_box=(np.array([-2.0]), np.array([2.0])),
        notes="globally Lipschitz with L_F = 1",
    )


_BUMP_A = np.array([[-1.0, 1.0], [0.0, 0.0]])
_BUMP_B = np.array([[0.0], [1.0]])


def _max_bump_slope():
    z = np.linspace(1.0, 2.0, 200001)
    return float(np.max(bump(z, 1)))


def bump_system():
    """Two-state system that switches on a constant drift ``(10, 0)`` for ``x1 >= 2``."""

    def f(x, u):
        x1 = x[..., 0]
        out = x @ _BUMP_A.T + u @ _BUMP_B.T
        out[..., 0] += _D_GAIN * bump(x1)
        return out

    def jac_x(x, u):
        J = np.broadcast_to(_BUMP_A, np.shape(x)[:-1] + (2, 2)).copy()
        J[..., 0, 0] += _D_GAIN * bump(x[..., 0], 1)
        return J

    def jac_u(x, u):
        return np.broadcast_to(_BUMP_B, np.shape(x)[:-1] + (2, 1)).copy()

    # |J_x| is largest where eta' peaks; J_u has unit norm
    slope = _max_bump_slope()
    L = math.hypot(-1.0 + _D_GAIN * slope, 1.0) * 1.001
    return SystemModel(
        "bump", 2, 1, f, jac_x, jac_u, L,
        state_box=(np.array([-10.0, -10.0]), np.array([10.0, 10.0])),
        input_box=(np.array([-10.0]), np.array([10.0])),
        notes="L_F from sup of the state Jacobian norm over x1; eta' is bounded so it holds globally",
    )


def bump_to_linearizing(x):
    """``xi = (x1, -x1 + x2 + 10 eta(x1))``."""
    x = np.asarray(x, dtype=float)
    xi = x.copy()
    xi[..., 1] = -x[..., 0] + x[..., 1] + _D_GAIN * bump(x[..., 0])
    return xi


def bump_from_linearizing(xi):
    xi = np.asarray(xi, dtype=float)
    x = xi.copy()
    x[..., 1] = xi[..., 1] + xi[..., 0] - _D_GAIN * bump(xi[..., 0])
    return x


def bump_fbl_parts(xi):
    """Normal-form pieces: ``f_hat(xi)`` and its gradient (shape ``(..., 2)``)."""
    xi = np.asarray(xi, dtype=float)
    e1 = bump(xi[..., 0], 1)
    e2 = bump(xi[..., 0], 2)
    f_hat = (_D_GAIN * e1 - 1.0) * xi[..., 1]
    grad = np.stack([_D_GAIN * e2 * xi[..., 1], _D_GAIN * e1 - 1.0], axis=-1)
    return f_hat, grad


def bump_system_linearizing_coords(box=10.0):
    """The bump system in the input-output linearizing coordinates.

    ``xi1' = xi2`` and ``xi2' = (10 eta'(xi1) - 1) xi2 + u``.
    """

    def f(xi, u):
        out = np.empty(np.broadcast_shapes(np.shape(xi), np.shape(u)[:-1] + (2,)))
        out[..., 0] = xi[..., 1]
        out[..., 1] = (_D_GAIN * bump(xi[..., 0], 1) - 1.0) * xi[..., 1] + u[..., 0]
        return out

    def jac_x(xi, u):
        J = np.zeros(np.shape(xi)[:-1] + (2, 2))
        J[..., 0, 1] = 1.0
        J[..., 1, 0] = _D_GAIN * bump(xi[..., 0], 2) * xi[..., 1]
        J[..., 1, 1] = _D_GAIN * bump(xi[..., 0], 1) - 1.0
        return J

    def jac_u(xi, u):
        return np.broadcast_to(_BUMP_B, np.shape(xi)[:-1] + (2, 1)).copy()

    # sigma_max of J_x is convex in xi2, so its box maximum sits on |xi2| = box
    z = np.linspace(1.0, 2.0, 20001)
    pts = np.zeros((z.size, 2))
    pts[:, 0] = z
    pts[:, 1] = box
    Jmax = np.linalg.norm(jac_x(pts, np.zeros((z.size, 1))), 2, axis=(-2, -1)).max()
    L = max(Jmax, math.sqrt(2.0), 1.0) * 1.001
    return SystemModel(
        "bump_linearized", 2, 1, f, jac_x, jac_u, float(L),
        state_box=(np.array([-box, -box]), np.array([box, box])),
        input_box=(np.array([-box]), np.array([box])),
        phi=bump_to_linearizing, phi_inv=bump_from_linearizing,
        notes="L_F certified on the state box only (Jacobian grows with |xi2|)",
    )


# ---------------------------------------------------------------------------
# costs used by the examples

SQRT2 = math.sqrt(2.0)


def sin_drift_counterexample_costs(q_f=1.0):
    """Weights that make ``u = -1/sqrt(2)`` stationary from ``x0 = 3 pi / 4``."""
    q = q_f / SQRT2
    r = 3 * math.pi * q_f / (2 * SQRT2)
    return quadratic_cost(q, r, q_f, 1, 1)


# q / r = 20 clears the drift-gain compatibility bound (needs q / r >= 8 L_x^2,
# about 9); the overall scale 0.05 keeps the cost-to-go overbound valid near
# the end of the horizon while the decay constant stays short.
COMPLIANT_SIN_DRIFT = {"q": 0.05, "r": 0.0025, "q_f": 0.05}


def sin_drift_compliant_costs(q=None, r=None, q_f=None):
    """Weights with a small input cost so the compatibility bounds hold."""
    w = dict(COMPLIANT_SIN_DRIFT)
    for k, v in (("q", q), ("r", r), ("q_f", q_f)):
        if v is not None:
            w[k] = v
    return quadratic_cost(w["q"], w["r"], w["q_f"], 1, 1)


def bump_counterexample_costs(q=1.0, r=1.0, q_f=None):
    """``q|x|^2 + r|u|^2`` running cost and terminal ``q_f x1(T)^2``."""
    q_f = q if q_f is None else q_f
    return quadratic_costs(q * np.eye(2), r * np.eye(1), np.diag([q_f, 0.0]))


# ---------------------------------------------------------------------------
# catalog

@dataclass(frozen=True)
class SystemCatalogEntry:
    name: str
    system: SystemModel
    costs: CostModel
    provenance: str


def catalog():
    """Built-in systems with their default costs."""
    lti = lti_system(np.zeros((2, 2)), np.eye(2), name="lti")
    lti_ns = lti_system([[-0.5, 2.0], [0.0, -1.0]], [[0.0], [1.0]], name="lti_nonsymmetric")
    return [
        SystemCatalogEntry(
            "sin_drift", sin_drift_system(), sin_drift_compliant_costs(),
            "scalar sin-drift example; default weights satisfy the compatibility bounds",
        ),
        SystemCatalogEntry(
            "bump", bump_system(), bump_counterexample_costs(),
            "bump-spliced drift example with terminal cost on x1 only",
        ),
        SystemCatalogEntry(
            "bump_linearized", bump_system_linearizing_coords(), quadratic_cost(1.0, 0.1, 1.0, 2, 1),
            "bump example in linearizing coordinates, quadratic costs in xi",
        ),
        SystemCatalogEntry(
            "lti", lti, quadratic_cost(1.0, 1.0, 1.0, 2, 2),
            "controllable baseline A = 0, B = I",
        ),
        SystemCatalogEntry(
            "lti_nonsymmetric", lti_ns, quadratic_cost(1.0, 1.0, 1.0, 2, 1),
            "stable LTI with nonsymmetric A, used to pin the costate transpose",
        ),
    ]


def lookup(name):
    for entry in catalog():
        if entry.name == name:
            return entry
    raise CatalogError(f"unknown system {name!r}")


# ---------------------------------------------------------------------------
# sampling checks for the model assumptions

def jacobian_error(system, rng, n_points=100, h=1e-6):
    """Max relative error of the analytic Jacobians against central differences."""
    xs = system.sample_states(rng, n_points)
    us = system.sample_inputs(rng, n_points)
    Jx = system.jac_x(xs, us)
    Ju = system.jac_u(xs, us)
    fd_x = np.empty_like(Jx)
    fd_u = np.empty_like(Ju)
    for j in range(system.n):
        e = np.zeros(system.n)
        e[j] = h
        fd_x[..., j] = (system.f(xs + e, us) - system.f(xs - e, us)) / (2 * h)
    for j in range(system.m):
        e = np.zeros(system.m)
        e[j] = h
        fd_u[..., j] = (system.f(xs, us + e) - system.f(xs, us - e)) / (2 * h)
    err = 0.0
    for J, F in ((Jx, fd_x), (Ju, fd_u)):
        num = np.linalg.norm(J - F, axis=(-2, -1))
        den = np.maximum(np.linalg.norm(J, axis=(-2, -1)), 1.0)
        err = max(err, float(np.max(num / den)))
    return err


def lipschitz_ratio(system, rng, n_pairs=1000):
    """Largest sampled ``|dF| / (|dx| + |du|)`` over the test box, divided by ``L_F``."""
    x1, x2 = system.sample_states(rng, n_pairs), system.sample_states(rng, n_pairs)
    u1, u2 = system.sample_inputs(rng, n_pairs), system.sample_inputs(rng, n_pairs)
    # also probe nearby pairs, where the local slope is seen
    x3 = x1 + 1e-3 * rng.standard_normal(x1.shape)
    u3 = u1 + 1e-3 * rng.standard_normal(u1.shape)
    x2 = np.concatenate([x2, x3])
    u2 = np.concatenate([u2, u3])
    x1 = np.concatenate([x1, x1])
    u1 = np.concatenate([u1, u1])
    dF = np.linalg.norm(system.f(x1, u1) - system.f(x2, u2), axis=-1)
    d = np.linalg.norm(x1 - x2, axis=-1) + np.linalg.norm(u1 - u2, axis=-1)
    return float(np.max(dF / d) / system.lipschitz)


def cost_bound_violation(costs, n, m, rng, n_pairs=200, scale=3.0, h=1e-3):
    """Worst violation of the declared Hessian bounds and strong convexity.

    Returns the largest amount by which a sampled second difference or
    first-order convexity gap falls outside ``[alpha, beta]``, normalised
    by ``max(1, beta)``; values ``<= tol`` mean the checks pass.
    """
    worst = 0.0
    specs = (
        (costs.Q, costs.grad_Q, costs.alpha_Q, costs.beta_Q, n),
        (costs.R, costs.grad_R, costs.alpha_R, costs.beta_R, m),
        (costs.V, costs.grad_V, costs.alpha_V, costs.beta_V, n),
    )
    for fn, grad, alpha, beta, dim in specs:
        z = scale * rng.uniform(-1, 1, size=(n_pairs, dim))
        d = rng.standard_normal((n_pairs, dim))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        second = (fn(z + h * d) - 2 * fn(z) + fn(z - h * d)) / h**2
        worst = max(worst, float(np.max(alpha - second)), float(np.max(second - beta)))
        y = scale * rng.uniform(-1, 1, size=(n_pairs, dim))
        gap = fn(y) - fn(z) - np.einsum("ij,ij->i", grad(z), y - z)
        lower = 0.5 * alpha * np.sum((y - z) ** 2, axis=-1)
        worst = max(worst, float(np.max((lower - gap) / np.maximum(1.0, lower))))
        zero = np.zeros((1, dim))
        worst = max(worst, abs(float(fn(zero)[0])), float(np.max(np.abs(grad(zero)))))
    return worst / max(1.0, costs.beta_Q, costs.beta_R, costs.beta_V)
