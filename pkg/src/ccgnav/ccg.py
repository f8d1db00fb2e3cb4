"""Constrained convex generator (CCG) sets and their exact operations.

A CCG represents the convex set ``{G xi + c : A xi = b, xi in GG}`` where GG
is a product of zero-sublevel sets of smooth, strictly convex generator
functions. Affine maps, Minkowski sums, and generalized intersections are
exact block operations on the tuple (G, c, A, b, GG); ``support`` and
``contains`` are numerical oracles used mainly by tests and diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize

from .errors import (
    ConstructionError,
    ConvergenceError,
    ConvexityError,
    IndeterminateError,
    InvalidArgumentError,
)
from .numerics import cholesky, kkt_newton_solve, nullspace_basis, pseudo_inverse

__all__ = [
    "Ball2",
    "SmoothBox",
    "GeneratorFn",
    "Ccg",
    "affine_map",
    "minkowski_sum",
    "generalized_intersection",
    "support",
    "contains",
    "feasibility_margin",
    "is_feasible",
    "make_ellipsoid",
    "make_ball",
    "make_point",
    "make_smooth_box",
    "ccg_to_dict",
    "ccg_from_dict",
]


@dataclass(frozen=True)
class Ball2:
    """Unit Euclidean ball generator: g(xi) = |xi|^2 - 1."""

    dim: int

    def value(self, xi: np.ndarray) -> float:
        return float(xi @ xi - 1.0)

    def grad(self, xi: np.ndarray) -> np.ndarray:
        return 2.0 * xi

    def hess(self, xi: np.ndarray) -> np.ndarray:
        return 2.0 * np.eye(self.dim)


@dataclass(frozen=True)
class SmoothBox:
    """Smooth strictly convex box generator: g(xi) = sum xi_i^(2m) + reg*|xi|^2 - 1.

    Twice differentiable with positive-definite Hessian everywhere (the
    regularization term keeps curvature away from zero at the origin).
    """

    dim: int
    power: int = 4
    reg: float = 1e-3

    def __post_init__(self):
        if self.power < 1 or self.reg <= 0.0:
            raise InvalidArgumentError("SmoothBox needs power >= 1 and reg > 0")

    def value(self, xi: np.ndarray) -> float:
        return float(np.sum(xi ** (2 * self.power)) + self.reg * (xi @ xi) - 1.0)

    def grad(self, xi: np.ndarray) -> np.ndarray:
        p = 2 * self.power
        return p * xi ** (p - 1) + 2.0 * self.reg * xi

    def hess(self, xi: np.ndarray) -> np.ndarray:
        p = 2 * self.power
        return np.diag(p * (p - 1) * xi ** (p - 2) + 2.0 * self.reg)


GeneratorFn = Union[Ball2, SmoothBox]


@dataclass(frozen=True)
class Ccg:
    """A constrained convex generator set {G xi + c : A xi = b, xi in GG}.

    ``gens`` is the ordered list of generator functions whose dimensions sum
    to the generator-space dimension (the column count of G and A). Values
    are immutable after construction; all operations return new objects.
    """

    G: np.ndarray
    c: np.ndarray
    A: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    gens: tuple = ()

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        xi = G.shape[1]
        A = np.zeros((0, xi)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        gens = tuple(self.gens)
        if G.shape[0] != c.size:
            raise InvalidArgumentError("G rows must match len(c)")
        if A.shape[1] != xi:
            raise InvalidArgumentError("A must have the same column count as G")
        if A.shape[0] != b.size:
            raise InvalidArgumentError("A rows must match len(b)")
        if sum(g.dim for g in gens) != xi:
            raise InvalidArgumentError("generator dimensions must sum to cols of G")
        for arr, name in ((G, "G"), (c, "c"), (A, "A"), (b, "b")):
            if arr.size and not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} contains non-finite entries")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "gens", gens)

    @property
    def dim(self) -> int:
        """Ambient dimension."""
        return self.c.size

    @property
    def xi_dim(self) -> int:
        """Generator-space dimension."""
        return self.G.shape[1]

    def gen_slices(self) -> list:
        """Index ranges of each generator block inside the xi vector."""
        out, lo = [], 0
        for g in self.gens:
            out.append(slice(lo, lo + g.dim))
            lo += g.dim
        return out

    def max_gen_value(self, xi: np.ndarray) -> float:
        """max_i g_i(S_i xi); -inf when there are no generators."""
        if not self.gens:
            return -np.inf
        return max(g.value(xi[sl]) for g, sl in zip(self.gens, self.gen_slices()))


def affine_map(Z: Ccg, R, t=None) -> Ccg:
    """Image R*Z + t. Exact: (R G, R c + t, A, b, GG)."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != Z.dim:
        raise InvalidArgumentError(f"R has {R.shape[1]} cols, set is {Z.dim}-dimensional")
    t = np.zeros(R.shape[0]) if t is None else np.asarray(t, dtype=float).reshape(-1)
    if t.size != R.shape[0]:
        raise InvalidArgumentError("t length must match rows of R")
    return Ccg(R @ Z.G, R @ Z.c + t, Z.A, Z.b, Z.gens)


def minkowski_sum(Z: Ccg, W: Ccg) -> Ccg:
    """Minkowski sum by block concatenation of generator spaces."""
    if Z.dim != W.dim:
        raise InvalidArgumentError("Minkowski sum needs equal ambient dimensions")
    G = np.hstack([Z.G, W.G])
    A = np.block(
        [
            [Z.A, np.zeros((Z.A.shape[0], W.xi_dim))],
            [np.zeros((W.A.shape[0], Z.xi_dim)), W.A],
        ]
    )
    return Ccg(G, Z.c + W.c, A, np.concatenate([Z.b, W.b]), Z.gens + W.gens)


def generalized_intersection(Z: Ccg, V: Ccg, R) -> Ccg:
    """Generalized intersection {z in Z : R z in V} by constraint stacking."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != Z.dim or R.shape[0] != V.dim:
        raise InvalidArgumentError("R must map the Z ambient space into the V ambient space")
    G = np.hstack([Z.G, np.zeros((Z.dim, V.xi_dim))])
    A = np.block(
        [
            [Z.A, np.zeros((Z.A.shape[0], V.xi_dim))],
            [np.zeros((V.A.shape[0], Z.xi_dim)), V.A],
            [R @ Z.G, -V.G],
        ]
    )
    b = np.concatenate([Z.b, V.b, V.c - R @ Z.c])
    return Ccg(G, Z.c, A, b, Z.gens + V.gens)


# --------------------------------------------------------------------------
# LogSumExp composition of generator functions along an affine substitution.
# --------------------------------------------------------------------------


class ComposedLogSumExp:
    """Smooth under-approximation of max_i g_i(u_i + B_i eta).

    f(eta) = (1/gamma) ln sum_i exp(gamma f_i(eta)) - ln(G+1)/gamma with
    f_i(eta) = g_i(S_i u + S_i B eta). Strictly below the max everywhere and
    at most ln(G+1)/gamma below it. Exponentials are evaluated in shifted
    form, so arbitrarily large component values are safe.
    """

    def __init__(self, gens: Sequence[GeneratorFn], offset: np.ndarray, basis: np.ndarray, gamma: float):
        if gamma <= 0:
            raise InvalidArgumentError("gamma must be positive")
        if not gens:
            raise InvalidArgumentError("need at least one generator")
        self.gens = tuple(gens)
        self.offset = np.asarray(offset, dtype=float).reshape(-1)
        self.basis = np.atleast_2d(np.asarray(basis, dtype=float))
        self.gamma = float(gamma)
        self.count = len(self.gens)
        self.dim = self.basis.shape[1]
        self._pad = np.log(self.count + 1.0) / self.gamma
        self._cache = None
        lo, self._slices = 0, []
        for g in self.gens:
            self._slices.append(slice(lo, lo + g.dim))
            lo += g.dim
        if lo != self.offset.size or lo != self.basis.shape[0]:
            raise InvalidArgumentError("generator dims must match offset/basis rows")
        # Hot-path shortcut: with no equality constraints the basis is the
        # identity and block quantities embed directly. When additionally all
        # blocks share one width and have diagonal Hessians (Ball2 and
        # SmoothBox do), the whole composition vectorizes across blocks.
        self._identity_basis = (
            self.basis.shape[0] == self.basis.shape[1]
            and np.array_equal(self.basis, np.eye(self.basis.shape[0]))
        )
        self._vectorized = False
        if self._identity_basis and len({g.dim for g in self.gens}) == 1:
            d = self.gens[0].dim
            ball_rows = [i for i, g in enumerate(self.gens) if isinstance(g, Ball2)]
            box_groups: dict = {}
            ok = True
            for i, g in enumerate(self.gens):
                if isinstance(g, Ball2):
                    continue
                elif isinstance(g, SmoothBox):
                    box_groups.setdefault((g.power, g.reg), []).append(i)
                else:
                    ok = False
            if ok:
                self._vectorized = True
                self._block_width = d
                # Unified per-row exponent/regularization so one broadcast
                # pass covers balls (m=1, reg=0) and boxes (m=power, reg).
                m_row = np.ones(self.count)
                reg_row = np.zeros(self.count)
                for i, g in enumerate(self.gens):
                    if isinstance(g, SmoothBox):
                        m_row[i] = g.power
                        reg_row[i] = g.reg
                self._m_row = m_row[:, None]
                self._reg_row = reg_row[:, None]

    def _core(self, eta: np.ndarray):
        """Values, softmax weights, LSE value, and block gradients at eta.

        Cached for the most recent eta: the Newton loop asks for the value,
        gradient, and Hessian at the same point in sequence. Line searches
        probe wild trial points; overflow there yields non-finite results
        the caller rejects, so the warnings are suppressed.
        """
        key = eta.tobytes()
        cached = self._cache
        if cached is not None and key == cached[0]:
            return cached[1]
        with np.errstate(over="ignore", invalid="ignore"):
            if self._vectorized:
                out = self._core_vectorized(eta)
            else:
                out = self._core_generic(eta)
        self._cache = (key, out)
        return out

    def _core_vectorized(self, eta: np.ndarray):
        d = self._block_width
        xi = self.offset + eta
        X = xi.reshape(self.count, d)
        mr, rr = self._m_row, self._reg_row
        # g_i = sum_j x_j^(2 m_i) + reg_i |x|^2 - 1 rowwise, in one broadcast.
        X2 = X * X
        B1 = X2 ** (mr - 1.0)
        A = B1 * X2
        vals = A.sum(axis=1) + (rr[:, 0]) * X2.sum(axis=1) - 1.0
        block_grads = (2.0 * mr) * B1 * X + (2.0 * rr) * X
        block_hdiag = (2.0 * mr) * (2.0 * mr - 1.0) * B1 + 2.0 * rr
        m = vals.max()
        w = np.exp(self.gamma * (vals - m))
        total = w.sum()
        value = m + np.log(total) / self.gamma - self._pad
        w = w / total
        grad = (w[:, None] * block_grads).ravel()
        return (xi, vals, w, value, grad, (block_grads, block_hdiag))

    def _core_generic(self, eta: np.ndarray):
        xi = self.offset + eta if self._identity_basis else self.offset + self.basis @ eta
        vals = np.array([g.value(xi[sl]) for g, sl in zip(self.gens, self._slices)])
        m = vals.max()
        w = np.exp(self.gamma * (vals - m))
        total = w.sum()
        value = m + np.log(total) / self.gamma - self._pad
        w = w / total
        grad = np.zeros(self.dim)
        comp_grads = []
        for wi, g, sl in zip(w, self.gens, self._slices):
            if self._identity_basis:
                gi = np.zeros(self.dim)
                gi[sl] = g.grad(xi[sl])
            else:
                gi = self.basis[sl].T @ g.grad(xi[sl])
            comp_grads.append(gi)
            grad += wi * gi
        return (xi, vals, w, value, grad, comp_grads)

    def component_values(self, eta: np.ndarray) -> np.ndarray:
        return self._core(np.asarray(eta, dtype=float))[1]

    def value(self, eta: np.ndarray) -> float:
        return self._core(np.asarray(eta, dtype=float))[3]

    def grad(self, eta: np.ndarray) -> np.ndarray:
        return self._core(np.asarray(eta, dtype=float))[4]

    def hess(self, eta: np.ndarray) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        xi, vals, w, value, grad, extra = self._core(eta)
        with np.errstate(over="ignore", invalid="ignore"):
            if self._vectorized:
                block_grads, block_hdiag = extra
                d = self._block_width
                n = self.dim
                H = np.zeros((n, n))
                H[np.arange(n), np.arange(n)] = (w[:, None] * block_hdiag).ravel()
                # Per-block outer products live on the block diagonal.
                O = (self.gamma * w)[:, None, None] * (
                    block_grads[:, :, None] * block_grads[:, None, :]
                )
                H4 = H.reshape(self.count, d, self.count, d)
                idx = np.arange(self.count)
                H4[idx, :, idx, :] += O
                H -= self.gamma * np.outer(grad, grad)
                return H
            H = np.zeros((self.dim, self.dim))
            for wi, g, sl, gi in zip(w, self.gens, self._slices, extra):
                if self._identity_basis:
                    H[sl, sl] += wi * g.hess(xi[sl])
                else:
                    Bi = self.basis[sl]
                    H += wi * (Bi.T @ g.hess(xi[sl]) @ Bi)
                H += self.gamma * wi * np.outer(gi, gi)
            H -= self.gamma * np.outer(grad, grad)
            return H

    @property
    def pad(self) -> float:
        """Gap bound: max_i f_i - pad <= f < max_i f_i."""
        return self._pad


def _min_smoothed_max(gens, offset, basis, gamma: float, eta0=None, ridge: float = 0.0):
    """Unconstrained minimum of the LogSumExp composition; returns (min_f, eta).

    A trace-scaled ridge keeps the Newton step defined when softmax weights
    of inactive generator blocks underflow to zero far away from the set;
    those blocks have zero gradient there, so the minimizer is unaffected.
    """
    eta = None if eta0 is None else np.asarray(eta0, dtype=float)
    # Continuation in the sharpness: each stage starts from the previous
    # minimizer, so the stiff final stage only has to polish.
    stages = [8.0]
    while stages[-1] < gamma:
        stages.append(min(stages[-1] * 10.0, gamma))
    comp = None
    for i, g in enumerate(stages):
        comp = ComposedLogSumExp(gens, offset, basis, g)
        if eta is None:
            eta = np.zeros(comp.dim)
        if comp.dim == 0:
            return comp.value(eta), eta
        if ridge > 0.0:
            def hess(e, comp=comp):
                H = comp.hess(e)
                return H + ridge * max(1.0, np.trace(H) / comp.dim) * np.eye(comp.dim)
        else:
            hess = comp.hess
        tol = 1e-9 if i == len(stages) - 1 else 1e-6
        try:
            sol = kkt_newton_solve(comp.grad, hess, np.zeros((0, comp.dim)), np.zeros(0), eta,
                                   tol=tol, max_iter=200, f_val=comp.value)
            eta = sol.eta
        except ConvergenceError:
            # Damped Newton creeps when two stiff components tie far from the
            # set; a trust-region polish handles that valley reliably. Accept
            # on a gradient criterion relative to the component magnitudes.
            res = minimize(comp.value, eta, jac=comp.grad, hess=comp.hess,
                           method="trust-exact", options={"gtol": tol, "maxiter": 500})
            xi = comp.offset + comp.basis @ res.x
            grad_scale = max(
                float(np.linalg.norm(comp.basis[sl].T @ gen.grad(xi[sl])))
                for gen, sl in zip(comp.gens, comp._slices)
            )
            if np.linalg.norm(comp.grad(res.x)) > 1e-6 * (1.0 + grad_scale):
                raise
            eta = res.x
    return comp.value(eta), eta


def _membership_bracket(Z: Ccg, x: np.ndarray, gamma: float):
    """Bracket [lo, hi] on min max_i g_i subject to A xi = b, G xi + c = x.

    Returns None when the affine system itself is inconsistent.
    """
    E = np.vstack([Z.A, Z.G])
    rhs = np.concatenate([Z.b, x - Z.c])
    xi0 = pseudo_inverse(E) @ rhs
    scale = 1.0 + np.abs(rhs).max() if rhs.size else 1.0
    if rhs.size and np.abs(E @ xi0 - rhs).max() > 1e-8 * scale:
        return None
    if not Z.gens:
        return (-np.inf, -np.inf)
    N = nullspace_basis(E)
    if N.shape[1] == 0:
        v = Z.max_gen_value(xi0)
        return (v, v)
    pad = np.log(len(Z.gens) + 1.0) / gamma
    min_f, _ = _min_smoothed_max(Z.gens, xi0, N, gamma, ridge=1e-9)
    # 1e-9 guards absorb the Newton tolerance in the reported bracket.
    return (min_f - 1e-9, min_f + pad + 1e-9)


def contains(Z: Ccg, x, tol: float = 1e-9) -> bool:
    """Membership test: does x belong to Z (with slack tol on the generators)?

    Decided by an equality-constrained convex minimization of the smoothed
    maximum of the generator functions, escalating the smoothing sharpness
    until the decision is unambiguous. Raises :class:`IndeterminateError`
    when x sits so close to the boundary that no tested sharpness resolves
    it; never silently returns False on solver trouble.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != Z.dim:
        raise InvalidArgumentError("point dimension mismatch")
    last = None
    for gamma in (2e3, 2e4, 2e5, 2e6):
        try:
            bracket = _membership_bracket(Z, x, gamma)
        except (ConvergenceError, ConvexityError) as exc:
            raise IndeterminateError(f"membership solve failed: {exc}") from exc
        if bracket is None:
            return False
        lo, hi = bracket
        if hi <= tol:
            return True
        if lo > tol:
            return False
        last = bracket
    raise IndeterminateError(
        f"point is within the smoothing band of the boundary (bracket {last}, tol {tol})"
    )


def feasibility_margin(Z: Ccg, gamma: float = 2e4):
    """Bracket on min {max_i g_i(S_i xi) : A xi = b}; empty iff it is > 0.

    Returns (lo, hi); ``hi < 0`` certifies a strictly feasible point exists,
    ``lo > 0`` certifies the set is empty. Raises ConstructionError when the
    equality system A xi = b itself has no solution.
    """
    xi0 = pseudo_inverse(Z.A) @ Z.b
    scale = 1.0 + np.abs(Z.b).max() if Z.b.size else 1.0
    if Z.b.size and np.abs(Z.A @ xi0 - Z.b).max() > 1e-8 * scale:
        raise ConstructionError("equality constraints A xi = b are inconsistent")
    if not Z.gens:
        return (-np.inf, -np.inf)
    N = nullspace_basis(Z.A)
    if N.shape[1] == 0:
        v = Z.max_gen_value(xi0)
        return (v, v)
    pad = np.log(len(Z.gens) + 1.0) / gamma
    min_f, _ = _min_smoothed_max(Z.gens, xi0, N, gamma, ridge=1e-9)
    return (min_f - 1e-9, min_f + pad + 1e-9)


def is_feasible(Z: Ccg) -> bool:
    """True iff Z is nonempty; raises IndeterminateError in the ambiguous band."""
    for gamma in (2e3, 2e4, 2e5):
        lo, hi = feasibility_margin(Z, gamma)
        if hi < 0.0:
            return True
        if lo > 0.0:
            return False
    raise IndeterminateError(f"feasibility margin bracket [{lo}, {hi}] straddles zero")


def support(Z: Ccg, d, tol: float = 1e-6) -> float:
    """Support function max {d.x : x in Z}, solved numerically to ~tol.

    This is a test/diagnostic oracle: a smooth constrained maximization over
    the generator space (SLSQP with analytic jacobians), verified against
    the constraint system before the value is returned.
    """
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.size != Z.dim or not np.linalg.norm(d) > 0:
        raise InvalidArgumentError("d must be a nonzero direction of the ambient dimension")
    if Z.xi_dim == 0:
        return float(d @ Z.c)
    if Z.A.shape[0] and not is_feasible(Z):
        raise ConstructionError("support of an empty set")

    obj_lin = -(Z.G.T @ d)
    slices = Z.gen_slices()

    def objective(xi):
        return float(obj_lin @ xi), obj_lin

    constraints = []
    if Z.A.shape[0]:
        constraints.append(
            {"type": "eq", "fun": lambda xi: Z.A @ xi - Z.b, "jac": lambda xi: Z.A}
        )
    for g, sl in zip(Z.gens, slices):
        def make(g=g, sl=sl):
            def fun(xi):
                return -g.value(xi[sl])

            def jac(xi):
                row = np.zeros(Z.xi_dim)
                row[sl] = -g.grad(xi[sl])
                return row

            return fun, jac

        fun, jac = make()
        constraints.append({"type": "ineq", "fun": fun, "jac": jac})

    xi0 = pseudo_inverse(Z.A) @ Z.b if Z.A.shape[0] else np.zeros(Z.xi_dim)
    best = None
    rng = np.random.RandomState(0)
    for attempt in range(3):
        start = xi0 if attempt == 0 else xi0 + 0.1 * rng.randn(Z.xi_dim)
        res = minimize(
            objective, start, jac=True, method="SLSQP", constraints=constraints,
            options={"ftol": 1e-12, "maxiter": 300},
        )
        xi = res.x
        eq_ok = (not Z.A.shape[0]) or np.abs(Z.A @ xi - Z.b).max() <= 1e-7
        gen_ok = Z.max_gen_value(xi) <= 1e-7
        if res.success and eq_ok and gen_ok:
            val = float(d @ (Z.G @ xi + Z.c))
            if best is None or val > best:
                best = val
    if best is None:
        raise ConvergenceError("support solve did not converge", residual=np.nan)
    return best


def make_ellipsoid(center, shape) -> Ccg:
    """Ellipsoid {x : (x-center)^T shape^-1 (x-center) <= 1} as a CCG."""
    center = np.asarray(center, dtype=float).reshape(-1)
    L = cholesky(shape)
    return Ccg(L, center, gens=(Ball2(center.size),))


def make_ball(center, radius: float) -> Ccg:
    """Euclidean ball of given radius as a CCG."""
    center = np.asarray(center, dtype=float).reshape(-1)
    if radius < 0:
        raise InvalidArgumentError("radius must be nonnegative")
    return Ccg(radius * np.eye(center.size), center, gens=(Ball2(center.size),))


def make_point(center) -> Ccg:
    """Singleton {center}: empty generator space."""
    center = np.asarray(center, dtype=float).reshape(-1)
    return Ccg(np.zeros((center.size, 0)), center)


def _smooth_box_scale(dim: int, power: int, reg: float) -> float:
    """Scale factor making the smooth box contain the sharp unit box.

    The corner (1,...,1)/s must satisfy g <= 0: dim*u^m + reg*dim*u = 1 with
    u = 1/s^2; tangency at the corners, slight over-approximation elsewhere.
    """
    f = lambda u: dim * u**power + reg * dim * u - 1.0
    u = brentq(f, 1e-12, 1.0)
    return 1.0 / np.sqrt(u)


def make_smooth_box(half_extents, power: int = 4, reg: float = 1e-3) -> Ccg:
    """Smooth, strictly convex over-approximation of an axis-aligned box.

    The returned set contains the sharp box [-h1,h1] x ... x [-hn,hn]
    (tangent at the corners) and is suitable for barrier construction.
    """
    h = np.asarray(half_extents, dtype=float).reshape(-1)
    if np.any(h <= 0):
        raise InvalidArgumentError("half extents must be positive")
    s = _smooth_box_scale(h.size, power, reg)
    return Ccg(s * np.diag(h), np.zeros(h.size), gens=(SmoothBox(h.size, power, reg),))


# --------------------------------------------------------------------------
# JSON serialization (debugging / golden tests)
# --------------------------------------------------------------------------


def _gen_to_dict(g: GeneratorFn) -> dict:
    if isinstance(g, Ball2):
        return {"kind": "ball2", "dim": g.dim}
    return {"kind": "smooth_box", "dim": g.dim, "power": g.power, "reg": g.reg}


def _gen_from_dict(d: dict) -> GeneratorFn:
    if d["kind"] == "ball2":
        return Ball2(d["dim"])
    if d["kind"] == "smooth_box":
        return SmoothBox(d["dim"], d["power"], d["reg"])
    raise InvalidArgumentError(f"unknown generator kind {d['kind']!r}")


def ccg_to_dict(Z: Ccg) -> dict:
    return {
        "G": Z.G.tolist(),
        "c": Z.c.tolist(),
        "A": Z.A.tolist(),
        "b": Z.b.tolist(),
        "generators": [_gen_to_dict(g) for g in Z.gens],
    }


def ccg_from_dict(d: dict) -> Ccg:
    xi = sum(g["dim"] for g in d["generators"])
    G = np.array(d["G"], dtype=float).reshape(len(d["c"]), xi)
    A = np.array(d["A"], dtype=float).reshape(len(d["b"]), xi)
    return Ccg(G, np.array(d["c"]), A, np.array(d["b"]),
               tuple(_gen_from_dict(g) for g in d["generators"]))


def ccg_to_json(Z: Ccg) -> str:
    return json.dumps(ccg_to_dict(Z), sort_keys=True)


def ccg_from_json(s: str) -> Ccg:
    return ccg_from_dict(json.loads(s))
