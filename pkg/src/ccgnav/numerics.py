"""Dense linear-algebra and scalar-statistics primitives used everywhere else.

All operations work on plain float64 numpy arrays and are pure functions.
Problem sizes are small (a few hundred at most), so direct dense
factorizations are used throughout. Random state is carried explicitly in
:class:`RngState` (counter-based Philox streams), never in module globals,
which makes every simulation reproducible bit-for-bit from its seed.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np
from scipy.special import gammainc

from .errors import (
    ConvergenceError,
    ConvexityError,
    FactorizationError,
    InvalidArgumentError,
    RankError,
)

__all__ = [
    "RngState",
    "pseudo_inverse",
    "nullspace_basis",
    "cholesky",
    "chi2_quantile",
    "gaussian_sample",
    "KktSolution",
    "kkt_newton_solve",
    "finite_diff_jacobian",
]


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got ndim={M.ndim}")
    if M.size and not np.all(np.isfinite(M)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return M


def _as_vector(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size and not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return v


class RngState:
    """Seedable random stream with splittable substreams.

    Backed by numpy's Philox bit generator (64-bit counter-based), so the
    stream depends only on the seed and the sequence of calls, not on the
    platform. ``split`` spawns an independent child stream; parent and child
    never overlap.
    """

    def __init__(self, seed: int | None = None, _seq: np.random.SeedSequence | None = None):
        self._seq = _seq if _seq is not None else np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self) -> "RngState":
        """Spawn an independent substream (deterministic given call order)."""
        return RngState(_seq=self._seq.spawn(1)[0])

    def uniform(self, n: int) -> np.ndarray:
        """n uniforms in [0, 1)."""
        return self._gen.random(n)

    def standard_normal(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller over Philox uniforms."""
        m = (n + 1) // 2
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        # 1 - u1 lies in (0, 1], so the log is always finite.
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:n]


def pseudo_inverse(M, tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``tol * sigma_max`` are treated as zero.
    """
    M = _as_matrix(M, "M")
    if tol < 0:
        raise InvalidArgumentError("tol must be nonnegative")
    if M.shape[0] == 0 or M.shape[1] == 0:
        return np.zeros((M.shape[1], M.shape[0]))
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    cutoff = tol * (s[0] if s.size else 0.0)
    s_inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (vt.T * s_inv) @ u.T


def nullspace_basis(M, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ker(M) as columns; empty when M has full column rank."""
    M = _as_matrix(M, "M")
    n = M.shape[1]
    if M.shape[0] == 0 or n == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    cutoff = tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    return vt[rank:].T.copy()


def cholesky(S) -> np.ndarray:
    """Lower-triangular L with L @ L.T == S for symmetric positive definite S.

    Raises :class:`FactorizationError` naming the failing pivot index when S
    is not positive definite.
    """
    S = _as_matrix(S, "S")
    n = S.shape[0]
    if S.shape[1] != n:
        raise InvalidArgumentError("S must be square")
    if n and not np.allclose(S, S.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(S).max())):
        raise InvalidArgumentError("S must be symmetric")
    L = np.zeros_like(S)
    for j in range(n):
        d = S[j, j] - L[j, :j] @ L[j, :j]
        if d <= 0.0:
            raise FactorizationError(
                f"matrix is not positive definite: pivot {j} is {d:.3e}", pivot_index=j
            )
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (S[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def _psd_cholesky(S, tol: float = 1e-10) -> np.ndarray:
    """Cholesky factor tolerant of semidefinite (zero-pivot) matrices.

    Columns with a (numerically) zero pivot must have a vanishing residual,
    otherwise S is indefinite and :class:`FactorizationError` is raised.
    """
    S = _as_matrix(S, "S")
    n = S.shape[0]
    scale = max(1.0, float(np.abs(S).max())) if n else 1.0
    L = np.zeros_like(S)
    for j in range(n):
        d = S[j, j] - L[j, :j] @ L[j, :j]
        if d > tol * scale:
            L[j, j] = np.sqrt(d)
            if j + 1 < n:
                L[j + 1 :, j] = (S[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        elif d >= -tol * scale:
            resid = S[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]
            if resid.size and np.abs(resid).max() > np.sqrt(tol) * scale:
                raise FactorizationError(
                    f"matrix is indefinite at pivot {j}", pivot_index=j
                )
        else:
            raise FactorizationError(
                f"matrix is indefinite: pivot {j} is {d:.3e}", pivot_index=j
            )
    return L


def chi2_quantile(dof: int, prob: float) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom.

    Uses the closed form -2*ln(1-prob) for dof == 2 and otherwise bisects the
    regularized lower incomplete gamma CDF to an absolute tolerance of 1e-10.
    """
    if dof < 1 or int(dof) != dof:
        raise InvalidArgumentError("dof must be a positive integer")
    if not 0.0 <= prob < 1.0:
        raise InvalidArgumentError("prob must lie in [0, 1)")
    if prob == 0.0:
        return 0.0
    if dof == 2:
        return -2.0 * np.log1p(-prob)

    def cdf(q: float) -> float:
        return float(gammainc(dof / 2.0, q / 2.0))

    lo, hi = 0.0, float(dof) + 10.0
    while cdf(hi) < prob:
        hi *= 2.0
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if cdf(mid) < prob:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gaussian_sample(rng: RngState, mean, cov) -> np.ndarray:
    """One draw from N(mean, cov); cov may be positive semidefinite."""
    mean = _as_vector(mean, "mean")
    cov = _as_matrix(cov, "cov")
    if cov.shape != (mean.size, mean.size):
        raise InvalidArgumentError("cov shape must match mean dimension")
    L = _psd_cholesky(cov)
    z = rng.standard_normal(mean.size)
    return mean + L @ z


class KktSolution(NamedTuple):
    eta: np.ndarray
    lam: np.ndarray
    iterations: int
    residual: float


def kkt_newton_solve(
    grad_f: Callable[[np.ndarray], np.ndarray],
    hess_f: Callable[[np.ndarray], np.ndarray],
    Geq,
    rhs,
    eta0,
    tol: float = 1e-10,
    max_iter: int = 50,
    f_val: Callable[[np.ndarray], float] | None = None,
) -> KktSolution:
    """Newton's method on the KKT system of  min f(eta)  s.t.  Geq eta = rhs.

    Each iteration solves the saddle system
    ``[[H, Geq.T], [Geq, 0]] @ [d_eta, lam] = [-grad, rhs - Geq eta]`` with a
    damped step (halving, at most 30 times). Convergence is declared on the
    KKT residual norm, scored with the least-squares multiplier. When the
    objective value ``f_val`` is supplied, feasible iterates backtrack with
    an Armijo test on f (the Newton step is constraint-tangent once
    feasible), which avoids the creep of pure residual backtracking on
    ill-conditioned Hessians; otherwise the residual norm itself must
    decrease. f must be strictly convex: the Hessian is probed for positive
    definiteness at every iterate and :class:`ConvexityError` is raised if
    the probe fails.
    """
    Geq = _as_matrix(Geq, "Geq")
    rhs = _as_vector(rhs, "rhs")
    eta = _as_vector(eta0, "eta0").copy()
    m, n = Geq.shape
    if rhs.size != m:
        raise InvalidArgumentError("rhs length must match rows of Geq")
    if eta.size != n:
        raise InvalidArgumentError("eta0 length must match cols of Geq")

    if m:
        GGt = Geq @ Geq.T
        try:
            GGt_inv = np.linalg.inv(GGt)
        except np.linalg.LinAlgError:
            GGt_inv = None
        # Minimum-norm feasibility restoration map (constraints are linear).
        Geq_pinv = Geq.T @ GGt_inv if GGt_inv is not None else pseudo_inverse(Geq)

    def best_lambda(g: np.ndarray) -> np.ndarray:
        # Minimum-residual multiplier: normal equations of min |g + Geq.T l|.
        if not m or not np.all(np.isfinite(g)):
            return np.zeros(m)
        if GGt_inv is not None:
            return GGt_inv @ (Geq @ -g)
        return np.linalg.lstsq(Geq.T, -g, rcond=None)[0]

    def kkt_residual(eta_v: np.ndarray, lam_v: np.ndarray, g: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            stat = g + Geq.T @ lam_v if m else g
            feas = Geq @ eta_v - rhs if m else np.zeros(0)
            r = float(np.sqrt(stat @ stat + feas @ feas))
        return r if np.isfinite(r) else np.inf

    g0 = grad_f(eta)
    lam = best_lambda(g0)
    res = kkt_residual(eta, lam, g0)
    if res <= tol:
        return KktSolution(eta, lam, 0, res)

    for it in range(1, max_iter + 1):
        H = hess_f(eta)
        try:
            np.linalg.cholesky(0.5 * (H + H.T))
        except np.linalg.LinAlgError:
            raise ConvexityError(
                f"Hessian not positive definite at iterate {it} "
                "(strict convexity assumption violated numerically)"
            ) from None
        g0 = grad_f(eta)
        K = np.zeros((n + m, n + m))
        K[:n, :n] = H
        if m:
            K[:n, n:] = Geq.T
            K[n:, :n] = Geq
        b = np.concatenate([-g0, rhs - Geq @ eta if m else np.zeros(0)])
        try:
            sol = np.linalg.solve(K, b)
        except np.linalg.LinAlgError:
            raise RankError("singular KKT matrix (Geq may be row-rank deficient)") from None
        d_eta = sol[:n]

        accepted = False
        use_armijo = False
        if f_val is not None:
            # Composite step: restore feasibility in full (the constraints
            # are linear, so the minimum-norm correction lands exactly), then
            # descend on f along the constraint-tangent component.
            if m:
                d_restore = Geq_pinv @ (rhs - Geq @ eta)
            else:
                d_restore = np.zeros(n)
            d_tan = d_eta - d_restore
            cap = 100.0 * (1.0 + float(np.linalg.norm(eta)))
            t_norm = float(np.linalg.norm(d_tan))
            if t_norm > cap:
                d_tan *= cap / t_norm
            restore_len = float(np.linalg.norm(d_restore))
            if restore_len > 1e-14 * (1.0 + float(np.linalg.norm(eta))):
                eta_base = eta + d_restore
                g_base = grad_f(eta_base)
            else:
                eta_base = eta  # bit-identical: keeps the evaluation cache hot
                g_base = g0
            slope = float(g_base @ d_tan)
            if np.isfinite(slope) and slope < 0.0:
                use_armijo = True
                f0 = f_val(eta_base)
                step = 1.0
                for _ in range(31):
                    eta_try = eta_base + step * d_tan
                    f_try = f_val(eta_try)
                    if np.isfinite(f_try) and f_try <= f0 + 1e-4 * step * slope:
                        g_try = grad_f(eta_try)
                        lam_try = best_lambda(g_try)
                        eta, lam = eta_try, lam_try
                        res = kkt_residual(eta_try, lam_try, g_try)
                        accepted = True
                        break
                    step *= 0.5
        if not use_armijo:
            # Backtrack on the KKT residual, scoring each trial point with
            # its own least-squares multiplier (the minimum over lambda).
            cap = 100.0 * (1.0 + float(np.linalg.norm(eta)))
            d_norm = float(np.linalg.norm(d_eta))
            if d_norm > cap:
                d_eta = d_eta * (cap / d_norm)
            step = 1.0
            for _ in range(31):
                eta_try = eta + step * d_eta
                g_try = grad_f(eta_try)
                lam_try = best_lambda(g_try)
                res_try = kkt_residual(eta_try, lam_try, g_try)
                if res_try < res:
                    eta, lam, res = eta_try, lam_try, res_try
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            # Line search hit the numerical floor. The stationarity residual
            # cancels gradients of magnitude `scale`; accept when the residual
            # is tol relative to that cancellation, otherwise report failure.
            g = grad_f(eta)
            scale = float(np.linalg.norm(g))
            if m:
                scale = max(scale, float(np.linalg.norm(Geq.T @ lam)))
            if res <= tol * (1.0 + scale):
                return KktSolution(eta, lam, it, res)
            raise ConvergenceError(
                f"KKT Newton stalled at iteration {it} (residual {res:.3e})", residual=res
            )
        if res <= tol:
            return KktSolution(eta, lam, it, res)

    raise ConvergenceError(
        f"KKT Newton did not converge in {max_iter} iterations (residual {res:.3e})",
        residual=res,
    )


def finite_diff_jacobian(fn: Callable[[np.ndarray], np.ndarray], x, step: float) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued function."""
    if step <= 0:
        raise InvalidArgumentError("step must be positive")
    x = _as_vector(x, "x")
    f0 = np.asarray(fn(x), dtype=float).reshape(-1)
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        fp = np.asarray(fn(x + e), dtype=float).reshape(-1)
        fm = np.asarray(fn(x - e), dtype=float).reshape(-1)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise InvalidArgumentError("fn returned non-finite values")
        J[:, j] = (fp - fm) / (2.0 * step)
    return J
