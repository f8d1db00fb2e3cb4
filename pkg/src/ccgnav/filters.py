"""Safety filters: closed-form CBF-QP, smooth softplus filter, backstepping.

The single-constraint QP  min |u - u_d|^2  s.t.  a.u >= b  is the Euclidean
projection of the nominal input onto a half-space and has a closed form. The
smooth variant replaces the hinge with a softplus, which keeps the filtered
control differentiable (needed as the backstepping virtual control) while
still satisfying the hard constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cbf import (
    BacksteppingEval,
    BacksteppingParams,
    CbfEval,
    PlanarKinematics,
    eval_h,
    eval_h1,
    hdot_terms,
)
from .errors import (
    ConvergenceError,
    ConvexityError,
    DegenerateDirectionError,
    InfeasibleQPError,
    InvalidArgumentError,
    RankError,
)
from .flow import UnsafeFlow

__all__ = [
    "ClassKSpec",
    "FilterDecision",
    "qp_filter",
    "smooth_filter",
    "first_order_safe_controller",
    "make_virtual_control",
    "second_order_safe_controller",
]

_SOLVER_ERRORS = (ConvergenceError, ConvexityError, RankError, InfeasibleQPError)


@dataclass(frozen=True)
class ClassKSpec:
    """Linear extended class-K-infinity function alpha(s) = gain * s."""

    gain: float = 1.0
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise InvalidArgumentError(f"unsupported class-K kind {self.kind!r}")
        if self.gain <= 0:
            raise InvalidArgumentError("class-K gain must be positive")

    def __call__(self, s: float) -> float:
        return self.gain * s


@dataclass(frozen=True)
class FilterDecision:
    """Filtered input with the constraint slack achieved at that input."""

    u: np.ndarray
    constraint_active: bool
    slack: float
    fallback_used: bool = False


def qp_filter(u_d, Lf_h: float, LG_h, dh_dt: float, h: float,
              spec: ClassKSpec) -> FilterDecision:
    """Closed-form CBF-QP: project u_d onto {u : LG_h.u >= -alpha(h) - Lf_h - dh_dt}."""
    u_d = np.asarray(u_d, dtype=float).reshape(-1)
    a = np.asarray(LG_h, dtype=float).reshape(-1)
    vals = np.concatenate([u_d, a, [Lf_h, dh_dt, h]])
    if not np.all(np.isfinite(vals)):
        raise InvalidArgumentError("non-finite filter inputs")
    b_val = -spec(h) - Lf_h - dh_dt
    norm2 = float(a @ a)
    if norm2 == 0.0:
        if b_val > 0.0:
            raise InfeasibleQPError(
                f"zero constraint row with positive bound {b_val:.3e}"
            )
        return FilterDecision(u=u_d, constraint_active=False, slack=-b_val)
    slack0 = float(a @ u_d) - b_val
    if slack0 >= 0.0:
        return FilterDecision(u=u_d, constraint_active=False, slack=slack0)
    u = u_d + a * (-slack0) / norm2
    return FilterDecision(u=u, constraint_active=True, slack=float(a @ u) - b_val)


def _softplus(s: float, beta: float) -> float:
    # Overflow-safe: softplus(s) = max(s, 0) + log1p(exp(-beta |s|)) / beta.
    if s > 0:
        return s + np.log1p(np.exp(-beta * s)) / beta
    return np.log1p(np.exp(beta * s)) / beta


def smooth_filter(u_d, a, b_val: float, beta: float) -> np.ndarray:
    """Smooth safety filter u = u_d + a * softplus(b - a.u_d) / |a|^2.

    Satisfies a.u >= b_val for every input (softplus dominates the hinge) and
    is smooth in all arguments; sharpness grows with beta.
    """
    if beta <= 0:
        raise InvalidArgumentError("beta must be positive")
    u_d = np.asarray(u_d, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    norm2 = float(a @ a)
    if norm2 == 0.0:
        raise DegenerateDirectionError("smooth filter needs a nonzero constraint row")
    s = b_val - float(a @ u_d)
    return u_d + a * _softplus(s, beta) / norm2


def first_order_safe_controller(
    flow: UnsafeFlow,
    nominal_k_d,
    p,
    psi: float,
    t: float,
    spec: ClassKSpec,
    beta: float | None = None,
    model=None,
    warm: CbfEval | None = None,
    fallback_u=None,
):
    """Filter the first-order nominal through the barrier constraint.

    With ``beta`` None the hard (projection) QP is used; otherwise the smooth
    softplus filter with that sharpness. On a solver failure the provided
    ``fallback_u`` is returned flagged; without one the error propagates.

    Returns (FilterDecision, CbfEval or None).
    """
    model = model if model is not None else PlanarKinematics()
    u_d = np.asarray(nominal_k_d(p, psi, t), dtype=float).reshape(-1)
    try:
        ev = eval_h(flow, p, psi, t, warm=warm)
        Lf, LG, dh_dt = hdot_terms(flow, model, p, psi, t, ev=ev)
        if beta is None:
            return qp_filter(u_d, Lf, LG, dh_dt, ev.h, spec), ev
        b_val = -spec(ev.h) - Lf - dh_dt
        u = smooth_filter(u_d, LG, b_val, beta)
        slack = float(LG @ u) - b_val
        active = float(LG @ u_d) < b_val
        return FilterDecision(u=u, constraint_active=active, slack=slack), ev
    except _SOLVER_ERRORS:
        if fallback_u is None:
            raise
        u = np.asarray(fallback_u, dtype=float).reshape(-1)
        return FilterDecision(u=u, constraint_active=False, slack=np.nan,
                              fallback_used=True), None


def make_virtual_control(flow: UnsafeFlow, nominal_k_d, spec: ClassKSpec,
                         beta: float, model=None, warm_cache: dict | None = None):
    """Smooth first-order safe controller as a callable k(p, psi, t).

    Used as the backstepping virtual control. ``warm_cache`` (caller-owned)
    carries the barrier warm start between calls.
    """
    model = model if model is not None else PlanarKinematics()
    cache = warm_cache if warm_cache is not None else {}

    def k(p, psi, t):
        ev = eval_h(flow, p, psi, t, warm=cache.get("eval"))
        cache["eval"] = ev
        Lf, LG, dh_dt = hdot_terms(flow, model, p, psi, t, ev=ev)
        u_d = np.asarray(nominal_k_d(p, psi, t), dtype=float).reshape(-1)
        b_val = -spec(ev.h) - Lf - dh_dt
        return smooth_filter(u_d, LG, b_val, beta)

    return k


def second_order_safe_controller(
    flow: UnsafeFlow,
    params: BacksteppingParams,
    nominal_k_d1,
    virtual_k,
    p,
    psi: float,
    nu,
    t: float,
    spec: ClassKSpec,
    M,
    D,
    warm: CbfEval | None = None,
    fallback_u=None,
):
    """Backstepped safety filter in the force/torque input.

    The backstepped barrier couples the first-order barrier with the
    deviation of the velocity state from the virtual control; its derivative
    terms chain through (pdot, psidot) = G nu and nudot = M^-1 (tau - D nu).

    Returns (FilterDecision, BacksteppingEval or None).
    """
    M = np.asarray(M, dtype=float)
    D = np.asarray(D, dtype=float)
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError:
        from .errors import ConfigError

        raise ConfigError("inertia matrix M must be invertible") from None
    p = np.asarray(p, dtype=float).reshape(-1)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    model = PlanarKinematics()
    tau_d = np.asarray(nominal_k_d1(p, psi, nu, t), dtype=float).reshape(-1)
    try:
        bev = eval_h1(flow, params, virtual_k, p, psi, nu, t, warm=warm)
        grad_x = np.concatenate([bev.grad_p, [bev.dh_dpsi]])
        xdot = model.input_matrix(p, psi, t) @ nu
        Lf = float(grad_x @ xdot) + float(bev.grad_nu @ (-(Minv @ (D @ nu))))
        LG = Minv.T @ bev.grad_nu
        return qp_filter(tau_d, Lf, LG, bev.dh_dt, bev.h1, spec), bev
    except _SOLVER_ERRORS:
        if fallback_u is None:
            raise
        u = np.asarray(fallback_u, dtype=float).reshape(-1)
        return FilterDecision(u=u, constraint_active=False, slack=np.nan,
                              fallback_used=True), None
