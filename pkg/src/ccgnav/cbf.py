"""Barrier evaluation over an unsafe flow and its backstepping extension.

The barrier value at (p, psi, t) is the minimum of the smoothed generator
function over the affine fiber mapping onto the position p. The minimizer's
KKT multiplier gives the position gradient for free (envelope theorem), and
the attitude/time derivatives follow from the analytic derivatives of the
eliminated representation evaluated at the optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccg import ComposedLogSumExp
from .errors import ConvergenceError, ConvexityError, InvalidArgumentError
from .flow import UnsafeFlow, eval_Gc, eval_Gc_derivatives, rotation
from .numerics import KktSolution, kkt_newton_solve, nullspace_basis, pseudo_inverse

__all__ = [
    "CbfEval",
    "BacksteppingParams",
    "BacksteppingEval",
    "PlanarKinematics",
    "eval_h",
    "hdot_terms",
    "eval_h1",
]


@dataclass(frozen=True)
class CbfEval:
    """Barrier value with optimizer, multiplier, and state derivatives."""

    h: float
    eta_star: np.ndarray
    lambda_star: np.ndarray
    grad_p: np.ndarray
    dh_dpsi: float
    dh_dt: float
    converged: bool
    newton_iters: int


@dataclass(frozen=True)
class BacksteppingParams:
    """Backstepping weight mu and the finite-difference step for the
    virtual-control Jacobian."""

    mu: float = 1.0
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.mu <= 0 or self.fd_step <= 0:
            raise InvalidArgumentError("mu and fd_step must be positive")


@dataclass(frozen=True)
class BacksteppingEval:
    """Backstepped barrier h1 = h - |nu - k|^2 / (2 mu) and its gradients."""

    h1: float
    grad_p: np.ndarray
    dh_dpsi: float
    dh_dt: float
    grad_nu: np.ndarray
    k_virtual: np.ndarray
    base: CbfEval


class PlanarKinematics:
    """Driftless planar rigid-body kinematics (pdot, psidot) = G(psi) nu.

    The input is body-frame (surge, sway, yaw rate); the input matrix is the
    block rotation [[R(psi), 0], [0, 1]].
    """

    state_dim = 3
    input_dim = 3

    def drift(self, p, psi, t):
        return np.zeros(3)

    def input_matrix(self, p, psi, t):
        G = np.zeros((3, 3))
        G[:2, :2] = rotation(psi)
        G[2, 2] = 1.0
        return G


def _scaled_tol(tol: float, gamma: float, f_value: float) -> float:
    """Requested tolerance, floored at the float64 noise of the composition.

    Rounding in the LogSumExp gradient grows with gamma times the component
    magnitudes, so a fixed absolute KKT tolerance is unreachable when the
    barrier value is large (positions far from the unsafe set).
    """
    if not np.isfinite(f_value):
        return tol
    return max(tol, 1e-13 * gamma * (1.0 + abs(f_value)))


def _kkt_with_ridge_retry(grad, hess, G, rhs, eta0, tol, max_iter,
                          f_val=None) -> KktSolution:
    """Newton solve, retried with a tiny Hessian ridge on a convexity probe failure.

    Softmax weights can underflow at transient iterates, zeroing curvature in
    inactive generator blocks. The trace-scaled ridge restores a usable step
    without moving the optimum; the reported residual uses the true gradient.
    """
    try:
        return kkt_newton_solve(grad, hess, G, rhs, eta0, tol=tol,
                                max_iter=max_iter, f_val=f_val)
    except ConvexityError:
        def hess_ridged(e):
            H = hess(e)
            n = H.shape[0]
            return H + 1e-10 * max(1.0, np.trace(H) / n) * np.eye(n)

        return kkt_newton_solve(grad, hess_ridged, G, rhs, eta0, tol=tol,
                                max_iter=max_iter, f_val=f_val)


def _block_radius(gen, direction: np.ndarray, level: float) -> float:
    """Scale s with g(s * direction) = level for a unit direction."""
    if level <= -1.0:
        return 0.0
    from .ccg import Ball2

    if isinstance(gen, Ball2):
        return float(np.sqrt(1.0 + level))
    # SmoothBox: a y^m + b y = 1 + level with y = s^2; pure-float bisection.
    m = gen.power
    a = float(np.sum(direction ** (2 * m)))
    b = gen.reg * float(direction @ direction)
    target = 1.0 + level
    lo, hi = 0.0, 1.0
    while a * hi**m + b * hi < target:
        hi *= 2.0
        if hi > 1e16:
            return float(np.sqrt(hi))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if a * mid**m + b * mid < target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(0.5 * (lo + hi)))


def _balanced_start(flow: UnsafeFlow, G: np.ndarray, rhs: np.ndarray):
    """Initial point with all generator values equal and the target nearly met.

    Each block is stretched along its best-aligned direction until the sum of
    reaches matches |rhs|, with one shared level found by bisection. Only
    used when the constraint block is empty (blocks independent in eta).
    Returns (eta, level).
    """
    norm = float(np.linalg.norm(rhs))
    dim = flow.nullspace.shape[1]
    if norm == 0.0:
        return np.zeros(dim), -1.0
    d_hat = rhs / norm
    blocks = []
    lo = 0
    for gen in flow.gens:
        sl = slice(lo, lo + gen.dim)
        lo += gen.dim
        w = G[:, sl].T @ d_hat
        wn = float(np.linalg.norm(w))
        blocks.append((gen, sl, w / wn if wn > 1e-12 else None, wn))

    def total_reach(level: float) -> float:
        return sum(
            wn * _block_radius(gen, u, level)
            for gen, _, u, wn in blocks
            if u is not None
        )

    v_lo, v_hi = -1.0, 1.0
    while total_reach(v_hi) < norm and v_hi < 1e12:
        v_hi *= 4.0
    for _ in range(80):
        mid = 0.5 * (v_lo + v_hi)
        if total_reach(mid) < norm:
            v_lo = mid
        else:
            v_hi = mid
    level = 0.5 * (v_lo + v_hi)
    eta = np.zeros(dim)
    for gen, sl, u, wn in blocks:
        if u is not None:
            eta[sl] = _block_radius(gen, u, level) * u
    return eta, level


def _reduced_trust_solve(sg, G: np.ndarray, rhs: np.ndarray, starts, tol: float):
    """Eliminate the equality constraint and minimize with a trust region.

    Robust on far-field landscapes where the saddle Newton creeps. Feasible
    by construction; the multiplier is recovered by least squares and the
    result accepted on a gradient-relative stationarity criterion.
    """
    from scipy.optimize import minimize

    N = nullspace_basis(G)
    eta_p = pseudo_inverse(G) @ rhs
    if N.shape[1]:
        best = None
        for start in starts:
            res = minimize(lambda v: sg.value(eta_p + N @ v),
                           N.T @ (np.asarray(start) - eta_p),
                           jac=lambda v: N.T @ sg.grad(eta_p + N @ v),
                           hess=lambda v: N.T @ sg.hess(eta_p + N @ v) @ N,
                           method="trust-exact",
                           options={"gtol": tol, "maxiter": 1500})
            cand = eta_p + N @ res.x
            if best is None or sg.value(cand) < sg.value(best):
                best = cand
        eta = best
    else:
        eta = eta_p
    grad = sg.grad(eta)
    lam = np.linalg.lstsq(G.T, -grad, rcond=None)[0]
    stat = grad + G.T @ lam
    feas = G @ eta - rhs
    resid = float(np.sqrt(stat @ stat + feas @ feas))
    # Acceptance: 1e-5 relative to the gradient magnitude, the stationarity
    # floor achievable by the trust-region polish on stiff far-field
    # compositions. The residual bounds the multiplier (gradient) error.
    if resid > max(tol, 1e-5) * (1.0 + float(np.linalg.norm(grad))):
        raise ConvergenceError(
            f"barrier solve failed (residual {resid:.3e})", residual=resid
        )
    return KktSolution(eta, lam, 0, resid)


def _cold_barrier_solve(flow: UnsafeFlow, G: np.ndarray, rhs: np.ndarray,
                        tol: float) -> KktSolution:
    """Cold-start barrier solve: balanced start, sharpness continuation, polish.

    A cold Newton start with unbalanced softmax weights creeps or emits
    numerically singular Hessians, so the start point equalizes the
    generator values first. Mild sharpness levels are solved before the
    target one; as a last resort the equality constraint is eliminated and
    a trust-region method polishes the reduced problem, with the multiplier
    recovered by least squares.
    """
    sg = flow.smoothed
    if flow.A.shape[0] == 0:
        eta, level = _balanced_start(flow, G, rhs)
    else:
        eta, level = np.zeros(flow.nullspace.shape[1]), 0.0

    if level > 50.0:
        # Far field: the saddle Newton creeps on these landscapes; go
        # straight to the reduced trust-region solve from the balanced start.
        return _reduced_trust_solve(sg, G, rhs, [eta], tol)

    # The balanced start usually lets the target sharpness converge directly.
    tol_eff = _scaled_tol(tol, flow.gamma, sg.value(eta))
    try:
        return _kkt_with_ridge_retry(sg.grad, sg.hess, G, rhs, eta,
                                     tol=tol_eff, max_iter=50, f_val=sg.value)
    except (ConvergenceError, ConvexityError):
        pass

    stages = [8.0]
    while stages[-1] < flow.gamma:
        stages.append(min(stages[-1] * 10.0, flow.gamma))
    for g in stages[:-1]:
        comp = ComposedLogSumExp(flow.gens, flow.Ab, flow.nullspace, g)
        try:
            eta = _kkt_with_ridge_retry(comp.grad, comp.hess, G, rhs, eta,
                                        tol=1e-6, max_iter=100,
                                        f_val=comp.value).eta
        except (ConvergenceError, ConvexityError):
            pass  # keep the best iterate reached so far
    tol_eff = _scaled_tol(tol, flow.gamma, sg.value(eta))
    try:
        return _kkt_with_ridge_retry(sg.grad, sg.hess, G, rhs, eta,
                                     tol=tol_eff, max_iter=100, f_val=sg.value)
    except (ConvergenceError, ConvexityError):
        start2, _ = _balanced_start(flow, G, rhs) if flow.A.shape[0] == 0 else (eta, 0.0)
        return _reduced_trust_solve(sg, G, rhs, [eta, start2], tol)


def eval_h(flow: UnsafeFlow, p, psi: float, t: float, warm: CbfEval | None = None,
           tol: float = 1e-10, max_iter: int = 50) -> CbfEval:
    """Barrier value and derivatives at position p, attitude psi, time t.

    Solves min f(eta) subject to G(psi, t) eta + c(psi, t) = p, warm-started
    from a previous evaluation when provided. Derivatives come from the KKT
    multiplier: grad_p = -lambda, and the psi/t derivatives contract lambda
    with the analytic derivatives of (G, c) at the optimizer.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    G, c = eval_Gc(flow, psi, t)
    if p.size != c.size:
        raise InvalidArgumentError("position dimension mismatch")
    sg = flow.smoothed
    if sg is None:
        raise InvalidArgumentError("flow has no generator set; barrier undefined")
    if warm is not None and warm.eta_star.size == sg.dim:
        tol_eff = _scaled_tol(tol, flow.gamma, sg.value(warm.eta_star))
        try:
            sol = _kkt_with_ridge_retry(sg.grad, sg.hess, G, p - c, warm.eta_star,
                                        tol=tol_eff, max_iter=max_iter,
                                        f_val=sg.value)
        except (ConvergenceError, ConvexityError):
            sol = _cold_barrier_solve(flow, G, p - c, tol)
    else:
        sol = _cold_barrier_solve(flow, G, p - c, tol)
    dG_dpsi, dG_dt, dc_dpsi, dc_dt = eval_Gc_derivatives(flow, psi, t)
    lam = sol.lam
    return CbfEval(
        h=sg.value(sol.eta),
        eta_star=sol.eta,
        lambda_star=lam,
        grad_p=-lam,
        dh_dpsi=float(lam @ (dG_dpsi @ sol.eta + dc_dpsi)),
        dh_dt=float(lam @ (dG_dt @ sol.eta + dc_dt)),
        converged=True,
        newton_iters=sol.iterations,
    )


def hdot_terms(flow: UnsafeFlow, model, p, psi: float, t: float,
               ev: CbfEval | None = None, warm: CbfEval | None = None):
    """Lie-derivative terms of the barrier along a first-order ego model.

    Returns (Lf_h, LG_h, dh_dt) for hdot = Lf_h + LG_h @ u + dh_dt, chaining
    the barrier state gradient through the model drift and input matrix.
    """
    if ev is None:
        ev = eval_h(flow, p, psi, t, warm=warm)
    grad_x = np.concatenate([ev.grad_p, [ev.dh_dpsi]])
    Lf = float(grad_x @ model.drift(p, psi, t))
    LG = grad_x @ model.input_matrix(p, psi, t)
    return Lf, LG, ev.dh_dt


def eval_h1(flow: UnsafeFlow, params: BacksteppingParams, virtual_k, p, psi: float,
            nu, t: float, warm: CbfEval | None = None) -> BacksteppingEval:
    """Backstepped barrier h1 = h - |nu - k(p, psi, t)|^2 / (2 mu).

    ``virtual_k`` is the smooth virtual control; its Jacobian with respect to
    (p, psi, t) is taken by central differences with step ``params.fd_step``.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    nu = np.asarray(nu, dtype=float).reshape(-1)
    base = eval_h(flow, p, psi, t, warm=warm)
    k0 = np.asarray(virtual_k(p, psi, t), dtype=float).reshape(-1)
    dev = nu - k0
    h1 = base.h - float(dev @ dev) / (2.0 * params.mu)

    def k_of(z):
        return np.asarray(virtual_k(z[:2], z[2], z[3]), dtype=float).reshape(-1)

    z0 = np.array([p[0], p[1], psi, t])
    J = np.zeros((k0.size, 4))
    for j in range(3):
        e = np.zeros(4)
        e[j] = params.fd_step
        J[:, j] = (k_of(z0 + e) - k_of(z0 - e)) / (2.0 * params.fd_step)
    # The time stencil must stay inside the flow interval; clamp and use a
    # two-point difference with the actual spread.
    t_lo = max(flow.t_k, t - params.fd_step)
    t_hi = min(flow.t_end, t + params.fd_step)
    za, zb = z0.copy(), z0.copy()
    za[3], zb[3] = t_lo, t_hi
    J[:, 3] = (k_of(zb) - k_of(za)) / (t_hi - t_lo)

    corr = (J.T @ dev) / params.mu
    return BacksteppingEval(
        h1=h1,
        grad_p=base.grad_p + corr[:2],
        dh_dpsi=base.dh_dpsi + corr[2],
        dh_dt=base.dh_dt + corr[3],
        grad_nu=-dev / params.mu,
        k_virtual=k0,
        base=base,
    )
