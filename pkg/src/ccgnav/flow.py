"""Per-sampling-interval unsafe set flow in CCG form.

For each interval the obstacle confidence set, the velocity displacement set
scaled by elapsed time, the rotated (negated) ego body, and the obstacle body
are Minkowski-combined into one CCG whose generator matrix and center depend
on attitude and time while the equality constraints and generator set do not.
The constraint block is eliminated once per interval through a pseudo-inverse
particular solution plus an orthonormal nullspace basis, and the generator
set indicator is replaced by a LogSumExp smooth under-approximation of the
component maximum, yielding the representation the barrier solver consumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccg import (
    Ccg,
    ComposedLogSumExp,
    affine_map,
    contains,
    is_feasible,
    minkowski_sum,
)
from .errors import ConstructionError, IndeterminateError, InvalidArgumentError
from .numerics import nullspace_basis, pseudo_inverse

__all__ = [
    "rotation",
    "rotation_derivative",
    "BodySets",
    "SmoothedGenerator",
    "UnsafeFlow",
    "build_unsafe_flow",
    "eval_Gc",
    "eval_Gc_derivatives",
    "smoothed_f",
]


def rotation(psi: float) -> np.ndarray:
    """Planar rotation matrix in SO(2)."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


def rotation_derivative(psi: float) -> np.ndarray:
    """d/dpsi of the planar rotation matrix."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class BodySets:
    """Shape data entering the unsafe set: ego body, obstacle body, velocity bound.

    All three are compact CCGs in the same ambient dimension; the velocity
    set must contain the origin so that a stationary obstacle is admissible.
    """

    ego_shape: Ccg
    obstacle_shape: Ccg
    velocity_set: Ccg

    def __post_init__(self):
        dims = {self.ego_shape.dim, self.obstacle_shape.dim, self.velocity_set.dim}
        if len(dims) != 1:
            raise InvalidArgumentError("body sets must share one ambient dimension")
        V = self.velocity_set
        if V.xi_dim == 0:
            inside = np.linalg.norm(V.c) == 0.0
        else:
            try:
                inside = contains(V, np.zeros(V.dim), tol=1e-9)
            except IndeterminateError:
                inside = True  # origin on the boundary is admissible
        if not inside:
            raise InvalidArgumentError("velocity set must contain the origin")


class SmoothedGenerator:
    """Smoothed generator-set indicator after constraint elimination.

    Wraps the LogSumExp composition f(eta) with analytic gradient and Hessian
    plus access to the per-generator component values f_i.
    """

    def __init__(self, composed: ComposedLogSumExp):
        self._c = composed

    @property
    def gamma(self) -> float:
        return self._c.gamma

    @property
    def count(self) -> int:
        return self._c.count

    @property
    def dim(self) -> int:
        return self._c.dim

    @property
    def pad(self) -> float:
        """Smoothing gap: max_i f_i - pad <= f < max_i f_i."""
        return self._c.pad

    def value(self, eta: np.ndarray) -> float:
        return self._c.value(eta)

    def grad(self, eta: np.ndarray) -> np.ndarray:
        return self._c.grad(eta)

    def hess(self, eta: np.ndarray) -> np.ndarray:
        return self._c.hess(eta)

    def component_values(self, eta: np.ndarray) -> np.ndarray:
        return self._c.component_values(eta)


class UnsafeFlow:
    """Unsafe-position CCG flow over one sampling interval.

    Holds the static blocks (confidence set, velocity, ego, obstacle), the
    precomputed particular solution and nullspace of the constraint system,
    and the smoothed generator function. Immutable after construction; all
    evaluations are pure.
    """

    def __init__(self, confidence_set: Ccg, bodies: BodySets, t_k: float,
                 gamma: float, t_end: float):
        self.t_k = float(t_k)
        self.t_end = float(t_end)
        self.gamma = float(gamma)
        self.confidence_set = confidence_set
        self.bodies = bodies

        combined = minkowski_sum(
            minkowski_sum(
                minkowski_sum(confidence_set, bodies.velocity_set),
                affine_map(bodies.ego_shape, -np.eye(bodies.ego_shape.dim)),
            ),
            bodies.obstacle_shape,
        )
        self.A = combined.A
        self.b = combined.b
        self.gens = combined.gens
        if self.A.shape[0]:
            resid = self.A @ (pseudo_inverse(self.A) @ self.b) - self.b
            if np.abs(resid).max() > 1e-8 * (1.0 + np.abs(self.b).max()):
                raise ConstructionError("combined equality constraints are inconsistent")
            try:
                if not is_feasible(combined):
                    raise ConstructionError("combined unsafe set is empty")
            except IndeterminateError as exc:
                raise ConstructionError(f"unsafe-set feasibility undecidable: {exc}") from exc
        self.Ab = pseudo_inverse(self.A) @ self.b
        self.nullspace = nullspace_basis(self.A)

        # Static per-component blocks; attitude and time enter only through
        # the ego rotation and the velocity scaling at evaluation time.
        self.G_r, self.c_r = confidence_set.G, confidence_set.c
        self.G_v, self.c_v = bodies.velocity_set.G, bodies.velocity_set.c
        self.G_e, self.c_e = bodies.ego_shape.G, bodies.ego_shape.c
        self.G_o, self.c_o = bodies.obstacle_shape.G, bodies.obstacle_shape.c
        self.dim = confidence_set.dim
        self.G_count = len(self.gens)

        self.smoothed = SmoothedGenerator(
            ComposedLogSumExp(self.gens, self.Ab, self.nullspace, self.gamma)
        ) if self.gens else None

    # -- raw (psi, t)-dependent blocks ------------------------------------

    def _check_time(self, t: float):
        if t < self.t_k - 1e-9 or t > self.t_end + 1e-9:
            raise InvalidArgumentError(
                f"t={t} outside the flow interval [{self.t_k}, {self.t_end}]"
            )

    def raw_Gc(self, psi: float, t: float):
        """Generator matrix and center of the unsmoothed unsafe set."""
        self._check_time(t)
        dt = t - self.t_k
        R = rotation(psi)
        G = np.hstack([self.G_r, dt * self.G_v, -(R @ self.G_e), self.G_o])
        c = self.c_r + dt * self.c_v - R @ self.c_e + self.c_o
        return G, c

    def as_ccg(self, psi: float, t: float) -> Ccg:
        """The sharp (unsmoothed) unsafe set at one attitude and time."""
        G, c = self.raw_Gc(psi, t)
        return Ccg(G, c, self.A, self.b, self.gens)


def build_unsafe_flow(R_hat: Ccg, bodies: BodySets, t_k: float, gamma: float,
                      t_end: float = np.inf) -> UnsafeFlow:
    """Assemble the unsafe flow for the interval starting at t_k."""
    if gamma <= 0:
        raise InvalidArgumentError("gamma must be positive")
    if R_hat.dim != bodies.ego_shape.dim:
        raise InvalidArgumentError("confidence set dimension must match the bodies")
    if t_end < t_k:
        raise InvalidArgumentError("t_end must not precede t_k")
    return UnsafeFlow(R_hat, bodies, t_k, gamma, t_end)


def eval_Gc(flow: UnsafeFlow, psi: float, t: float):
    """Constraint-eliminated generator matrix and center at (psi, t)."""
    G, c = flow.raw_Gc(psi, t)
    return G @ flow.nullspace, c + G @ flow.Ab


def eval_Gc_derivatives(flow: UnsafeFlow, psi: float, t: float):
    """Analytic (psi, t)-derivatives of the eliminated representation.

    Returns (dG_dpsi, dG_dt, dc_dpsi, dc_dt). Only the ego block depends on
    attitude and only the velocity block on time, so the derivatives are the
    corresponding single-block matrices pushed through the elimination.
    """
    flow._check_time(t)
    Rp = rotation_derivative(psi)
    zeros_r = np.zeros_like(flow.G_r)
    zeros_e = np.zeros_like(flow.G_e)
    zeros_o = np.zeros_like(flow.G_o)
    zeros_v = np.zeros_like(flow.G_v)

    dG_dt_raw = np.hstack([zeros_r, flow.G_v, zeros_e, zeros_o])
    dc_dt = flow.c_v + dG_dt_raw @ flow.Ab
    dG_dt = dG_dt_raw @ flow.nullspace

    dG_dpsi_raw = np.hstack([zeros_r, zeros_v, -(Rp @ flow.G_e), zeros_o])
    dc_dpsi = -(Rp @ flow.c_e) + dG_dpsi_raw @ flow.Ab
    dG_dpsi = dG_dpsi_raw @ flow.nullspace
    return dG_dpsi, dG_dt, dc_dpsi, dc_dt


def smoothed_f(flow: UnsafeFlow) -> SmoothedGenerator:
    """The smoothed generator function of the eliminated representation."""
    if flow.smoothed is None:
        raise ConstructionError("flow has no generators (all bodies are points)")
    return flow.smoothed
