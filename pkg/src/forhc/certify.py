"""Assumption checks and the stability constants for stationary points and FO-RHC.

Every check here is sampling based: the pipeline draws nominal pairs,
measures the matching residual, the Riccati constant ``gamma`` and the
drift gains on them, and records the census so certificates read as
"verified on these samples".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._jsonutil import dumps, to_jsonable
from .errors import InadmissibleEpsError, MissingDeltaError, NoFiniteGainError, UnstabilizableError
from .linearize import drift_gain_fit, matching_residual
from .riccati import SampleSpec, estimate_gamma_uniform, sample_paths
from .simulate import value_to_go_profile

MATCHING_TOL = 1e-8
_REL = 1e-12


@dataclass(frozen=True)
class RegularityBundle:
    L_F: float
    gamma: float
    L_x: float
    L_u: float
    alpha_Q: float
    beta_Q: float
    alpha_R: float
    beta_R: float
    alpha_V: float
    beta_V: float
    census: dict = field(default_factory=dict, compare=False)

    @classmethod
    def from_costs(cls, costs, L_F, gamma, L_x, L_u, census=None):
        return cls(L_F, gamma, L_x, L_u, costs.alpha_Q, costs.beta_Q, costs.alpha_R,
                   costs.beta_R, costs.alpha_V, costs.beta_V, dict(census or {}))

    @property
    def input_gain_bound(self):
        return self.alpha_R / (8 * self.beta_R)

    @property
    def state_gain_bound(self):
        return self.alpha_Q / (8 * self.beta_R)

    def compatibility(self):
        """Flags for ``L_u^2 <= aR/(8 bR)`` and ``L_x^2 <= aQ/(8 bR)`` plus the implied bounds."""
        return {
            "L_u_sq": self.L_u**2,
            "L_u_sq_bound": self.input_gain_bound,
            "L_x_sq": self.L_x**2,
            "L_x_sq_bound": self.state_gain_bound,
            "input_ok": bool(self.L_u**2 <= self.input_gain_bound),
            "state_ok": bool(self.L_x**2 <= self.state_gain_bound),
            # two readings of the implied input-gain bound, recorded side by side
            "L_u_below_one_eighth": bool(self.L_u < 1 / 8),
            "L_u_below_inv_2sqrt2": bool(self.L_u <= 1 / (2 * math.sqrt(2))),
        }

    def to_dict(self):
        return {
            "L_F": self.L_F, "gamma": self.gamma, "L_x": self.L_x, "L_u": self.L_u,
            "alpha_Q": self.alpha_Q, "beta_Q": self.beta_Q,
            "alpha_R": self.alpha_R, "beta_R": self.beta_R,
            "alpha_V": self.alpha_V, "beta_V": self.beta_V,
        }


def c0_delta(bundle, delta):
    b = bundle
    return 6 * b.L_F + 2 * b.L_F * b.alpha_Q / b.alpha_R + min(2 / delta, 2 * b.alpha_Q / b.alpha_R)


@dataclass(frozen=True)
class StabilityCertificate:
    bundle: RegularityBundle
    C0: Optional[float]
    C1: float
    C2: float
    C0_delta: Optional[float]
    C1_delta: Optional[float]
    delta: Optional[float]
    assumptions: dict = field(default_factory=dict)
    census: dict = field(default_factory=dict)

    @property
    def applicable(self):
        return all(a.get("pass", False) for a in self.assumptions.values())

    @property
    def matching_residual_max(self):
        return self.assumptions.get("a4", {}).get("evidence", {}).get("max_residual")

    def to_dict(self):
        return {
            "assumptions": self.assumptions,
            "bundle": self.bundle.to_dict(),
            "constants": {
                "C0": self.C0, "C1": self.C1, "C2": self.C2,
                "C0_delta": self.C0_delta, "C1_delta": self.C1_delta,
            },
            "census": self.census,
        }

    def to_json(self):
        return dumps(self.to_dict())


def _compatibility_assumption(bundle):
    flags = bundle.compatibility()
    return {"pass": flags["input_ok"] and flags["state_ok"], "evidence": flags}


def decay_constants(bundle, delta=None, assumptions=None, census=None):
    """Constants ``C0, C1, C2`` and, for a given ``delta``, ``C0^delta, C1^delta``.

    With ``alpha_V = 0`` only the ``delta`` form exists and ``C0`` is
    reported as ``None``.

    Raises
    ------
    MissingDeltaError
        If ``alpha_V = 0`` and no positive ``delta`` is given.
    """
    b = bundle
    if delta is not None and not delta > 0:
        raise MissingDeltaError("delta must be positive")
    if b.alpha_V == 0 and delta is None:
        raise MissingDeltaError("a terminal cost with alpha_V = 0 needs delta > 0")
    C1 = 4 * b.gamma * max(b.beta_V, b.beta_R, b.beta_Q)
    C2 = (1 / (2 * b.alpha_R)) * (1 + 8 * b.beta_R * max(b.L_x**2 / b.alpha_Q, b.L_u**2 / b.alpha_R))
    C0 = None
    if b.alpha_V > 0:
        C0 = 6 * b.L_F + 2 * b.L_F * b.alpha_Q / b.alpha_R + 2 * b.alpha_Q / b.alpha_V
    C0d = C1d = None
    if delta is not None:
        C0d = c0_delta(b, delta)
        C1d = math.exp(delta / C1) * C1 if delta / C1 < 700 else math.inf
    assumptions = dict(assumptions) if assumptions is not None else {}
    assumptions.setdefault("a7", _compatibility_assumption(b))
    return StabilityCertificate(b, C0, C1, C2, C0d, C1d, delta, assumptions,
                                dict(census if census is not None else b.census))


@dataclass(frozen=True)
class BoundReport:
    """Node-wise outcome of an inequality check."""

    name: str
    holds: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    applicable: bool = True

    @property
    def passed(self):
        return bool(np.all(self.holds))

    @property
    def n_violations(self):
        return int(np.sum(~self.holds))

    @property
    def worst(self):
        """Index of the smallest ``rhs / lhs`` ratio."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.lhs > 0, self.rhs / self.lhs, np.inf)
        return int(np.argmin(ratio))

    @property
    def min_slack_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.lhs > 0, self.rhs / self.lhs, np.inf)
        return float(np.min(ratio))

    def summary(self):
        return {
            "name": self.name,
            "passed": self.passed,
            "applicable": self.applicable,
            "n_checked": int(self.holds.size),
            "n_violations": self.n_violations,
            "worst_index": self.worst,
            "min_slack_ratio": self.min_slack_ratio,
        }


def _leq(lhs, rhs):
    return lhs <= rhs + _REL * np.maximum(np.abs(rhs), 1e-300)


def _decay_envelope(cert, s, x0_sq, eps):
    if cert.C0 is not None:
        return cert.C0 * (cert.C1 * np.exp(-s / cert.C1) * x0_sq + cert.C2 * eps**2), "terminal"
    return cert.C0_delta * (cert.C1_delta * np.exp(-s / cert.C1) * x0_sq + cert.C2 * eps**2), "delta"


def check_decay_bound(cert, rollout, eps):
    """``|x(s)|^2 <= C0 (C1 exp(-s/C1) |x0|^2 + C2 eps^2)`` at every node.

    Uses the ``delta`` form when the certificate has no ``C0``.
    """
    x = rollout.trajectory.states
    s = rollout.grid.times
    lhs = np.sum(x**2, axis=-1)
    rhs, form = _decay_envelope(cert, s, lhs[0], eps)
    return BoundReport(f"decay[{form}]", _leq(lhs, rhs), lhs, rhs, cert.applicable)


@dataclass(frozen=True)
class ValueBoundsReport:
    underbound: BoundReport
    overbound: BoundReport
    value_decay: BoundReport

    @property
    def passed(self):
        return self.underbound.passed and self.overbound.passed and self.value_decay.passed

    def summary(self):
        return {
            "underbound": self.underbound.summary(),
            "overbound": self.overbound.summary(),
            "value_decay": self.value_decay.summary(),
        }


def value_bounds_check(cert, rollout, eps, max_pairs_nodes=80):
    """Under- and overbounds of the cost-to-go and its integrated decay.

    * ``|x(s)|^2 <= C0 V(s') / alpha_Q`` for ``s' <= s`` (``s' <= T - delta``
      in the ``delta`` form), on all pairs of a node subsample plus the
      diagonal ``s' = s``;
    * ``V(s) <= alpha_Q (C1 |x(s)|^2 + C2 eps^2 / 2)`` at every node;
    * ``V(s) <= exp(-s/C1) V(0) + alpha_Q C2 eps^2 / 2`` at every node.
    """
    b = cert.bundle
    x = rollout.trajectory.states
    grid = rollout.grid
    s = grid.times
    xsq = np.sum(x**2, axis=-1)
    Vt = value_to_go_profile(rollout)
    Vt[0] = rollout.J
    if cert.C0 is not None:
        C0 = cert.C0
        s_max = grid.horizon
    else:
        C0 = cert.C0_delta
        s_max = grid.horizon - cert.delta
    idx = np.unique(np.linspace(0, grid.n_steps, min(grid.n_nodes, max_pairs_nodes)).round().astype(int))
    sp, ss = np.meshgrid(idx, idx, indexing="ij")
    keep = (sp <= ss) & (s[sp] <= s_max + 1e-12)
    pairs_p = np.concatenate([sp[keep], np.arange(grid.n_nodes)])
    pairs_s = np.concatenate([ss[keep], np.arange(grid.n_nodes)])
    diag_ok = s[pairs_p] <= s_max + 1e-12
    pairs_p, pairs_s = pairs_p[diag_ok], pairs_s[diag_ok]
    lhs_u = xsq[pairs_s]
    rhs_u = C0 * Vt[pairs_p] / b.alpha_Q
    under = BoundReport("underbound", _leq(lhs_u, rhs_u), lhs_u, rhs_u, cert.applicable)
    rhs_o = b.alpha_Q * (cert.C1 * xsq + 0.5 * cert.C2 * eps**2)
    over = BoundReport("overbound", _leq(Vt, rhs_o), Vt, rhs_o, cert.applicable)
    rhs_e = np.exp(-s / cert.C1) * Vt[0] + 0.5 * b.alpha_Q * cert.C2 * eps**2
    decay = BoundReport("value_decay", _leq(Vt, rhs_e), Vt, rhs_e, cert.applicable)
    return ValueBoundsReport(under, over, decay)


@dataclass(frozen=True)
class RhcConstants:
    delta: float
    T: float
    eps0: float
    C0_delta: float
    M: float
    eta: float
    E_term: float
    T_term: float
    min_horizon: float
    eta_negative: bool
    eps0_below_stated_threshold: bool
    eps0_below_denominator_threshold: bool

    def to_dict(self):
        return to_jsonable({k: getattr(self, k) for k in self.__dataclass_fields__})


def rate_constants(cert, delta, T, eps0):
    """Rate constants ``M``, ``eta`` and the horizon rule for FO-RHC.

    Raises
    ------
    InadmissibleEpsError
        If ``1 - (alpha_Q / 2) C2 eps0^2 <= 0``.
    """
    if not (delta > 0 and delta <= T):
        raise ValueError("need 0 < delta <= T")
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    b = cert.bundle
    C1, C2 = cert.C1, cert.C2
    C0d = c0_delta(b, delta)
    den = 1 - 0.5 * b.alpha_Q * C2 * eps0**2
    if den <= 0:
        raise InadmissibleEpsError(
            f"eps0={eps0} makes 1 - (alpha_Q/2) C2 eps0^2 = {den:.3e} nonpositive"
        )
    M = C0d * C1 / den
    E = 0.5 * C0d * C2 * math.exp(2 * b.L_F * delta) * ((delta + 1) * b.alpha_Q + b.alpha_V) * eps0**2
    expo = -T / C1 + delta * (1 / C1 + 2 * b.L_F)
    Tt = C0d * C1 * (delta * b.alpha_Q + b.alpha_V) * math.exp(expo)
    eta = (1 / (2 * delta)) * math.log(math.exp(-delta / C1) + Tt + E)
    min_horizon = math.log(C0d * C1 * (delta * b.alpha_Q + b.alpha_V)) + delta * (1 + C1 * 2 * b.L_F)
    return RhcConstants(
        delta=float(delta), T=float(T), eps0=float(eps0), C0_delta=C0d, M=M, eta=eta,
        E_term=E, T_term=Tt, min_horizon=min_horizon, eta_negative=bool(eta < 0),
        eps0_below_stated_threshold=bool(eps0 < math.sqrt(2 * b.alpha_Q * C2)),
        eps0_below_denominator_threshold=bool(eps0 < math.sqrt(2 / (b.alpha_Q * C2))),
    )


def certify_system(system, costs, sample_spec=None, delta=None):
    """Run the assumption checks on a sample census and assemble the certificate.

    Failures of individual checks are recorded as failed assumptions; when
    ``gamma`` or the drift gains cannot be computed the affected constants
    are ``inf``.
    """
    spec = sample_spec or SampleSpec()
    paths, census = sample_paths(system, spec)
    assumptions = {}

    worst = (0.0, -1, -1)
    for i, p in enumerate(paths):
        r = matching_residual(p)
        k = int(np.argmax(r))
        if r[k] > worst[0]:
            worst = (float(r[k]), i, k)
    assumptions["a4"] = {
        "pass": bool(worst[0] <= MATCHING_TOL),
        "evidence": {"max_residual": worst[0], "path": worst[1], "node": worst[2],
                     "tolerance": MATCHING_TOL},
    }

    try:
        gamma, _ = estimate_gamma_uniform(system, spec, paths=paths)
        assumptions["a5"] = {"pass": True, "evidence": {"gamma": gamma, "n_paths": len(paths)}}
    except UnstabilizableError as exc:
        gamma = math.inf
        assumptions["a5"] = {"pass": False, "evidence": {"error": str(exc), "time": exc.time}}

    try:
        gains = drift_gain_fit(paths)
        L_x, L_u = gains.L_x, gains.L_u
        assumptions["a6"] = {"pass": True, "evidence": {
            "L_x": L_x, "L_u": L_u, "max_violation": gains.max_violation, "binding": gains.binding}}
    except NoFiniteGainError as exc:
        L_x = L_u = math.inf
        assumptions["a6"] = {"pass": False, "evidence": {"error": str(exc)}}

    bundle = RegularityBundle.from_costs(costs, system.lipschitz, gamma, L_x, L_u, census)
    assumptions["a7"] = _compatibility_assumption(bundle)
    try:
        return decay_constants(bundle, delta, assumptions, census)
    except MissingDeltaError:
        cert = decay_constants(bundle, 1.0, assumptions, census)
        return StabilityCertificate(bundle, None, cert.C1, cert.C2, None, None, None,
                                    assumptions, census)
