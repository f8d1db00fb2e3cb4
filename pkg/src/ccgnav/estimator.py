"""Sliding-window least-squares estimation of the obstacle position.

A polynomial-in-time model is refitted over the N most recent noisy position
measurements at every sampling instant. The fit yields the current position
estimate, the weight vector mapping measurement noise into estimate error,
and the exact error covariance, from which a chi-square confidence ellipsoid
is built in CCG form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ccg import Ccg, make_ellipsoid
from .errors import EstimationError, FactorizationError, InvalidArgumentError, RankError
from .numerics import chi2_quantile, cholesky, pseudo_inverse

__all__ = [
    "BasisSpec",
    "EstimatorWindow",
    "PositionEstimate",
    "push_measurement",
    "fit",
    "confidence_ellipsoid",
    "ellipsoid_contains",
    "preprocess_linear_sensing",
]


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial time basis phi(t) = (1, t, ..., t^degree).

    With ``recenter`` (the default) window times are shifted so the window
    starts at zero before the design matrix is built; this conditions the
    fit without changing the estimate, the weight vector, or the covariance.
    """

    degree: int = 3
    kind: str = "polynomial"
    recenter: bool = True

    def __post_init__(self):
        if self.kind != "polynomial":
            raise InvalidArgumentError(f"unsupported basis kind {self.kind!r}")
        if self.degree < 0:
            raise InvalidArgumentError("degree must be nonnegative")

    @property
    def q(self) -> int:
        return self.degree + 1

    def row(self, t: float) -> np.ndarray:
        return np.power(t, np.arange(self.q, dtype=float))


@dataclass(frozen=True)
class EstimatorWindow:
    """Ring buffer of (time, measurement, noise covariance) triples.

    Entries are strictly time-increasing and at most ``capacity`` are kept.
    The window is a value: ``push_measurement`` returns a new window.
    """

    capacity: int
    entries: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.capacity < 1:
            raise InvalidArgumentError("capacity must be at least 1")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) == self.capacity

    def times(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])


def push_measurement(w: EstimatorWindow, t: float, y, Sigma) -> EstimatorWindow:
    """Append a measurement, evicting the oldest entry beyond capacity."""
    y = np.asarray(y, dtype=float).reshape(-1)
    Sigma = np.asarray(Sigma, dtype=float)
    if not np.isfinite(t) or not np.all(np.isfinite(y)):
        raise InvalidArgumentError("non-finite measurement")
    if w.entries and t <= w.entries[-1][0]:
        raise InvalidArgumentError(
            f"timestamps must be strictly increasing (got {t} after {w.entries[-1][0]})"
        )
    try:
        cholesky(Sigma)
    except FactorizationError as exc:
        raise InvalidArgumentError("noise covariance must be positive definite") from exc
    entries = w.entries + ((float(t), y, Sigma),)
    if len(entries) > w.capacity:
        entries = entries[1:]
    return replace(w, entries=entries)


@dataclass(frozen=True)
class PositionEstimate:
    """Least-squares fit output at the newest window time.

    ``theta_hat`` holds the fitted coefficients in the (possibly re-centered)
    basis; ``a`` is the weight vector so that the realized estimate error is
    exactly ``-W.T @ a`` for stacked noise W, and ``covariance`` its exact
    second moment.
    """

    t_k: float
    r_hat: np.ndarray
    covariance: np.ndarray
    a: np.ndarray
    theta_hat: np.ndarray
    time_shift: float


def fit(w: EstimatorWindow, basis: BasisSpec) -> PositionEstimate:
    """Refit the window and evaluate the model at the newest sample time."""
    if not w.is_full:
        raise EstimationError(f"window holds {len(w)} of {w.capacity} samples")
    n = len(w)
    if n < basis.q:
        raise EstimationError(f"window too short for basis: N={n} < q={basis.q}")
    times = w.times()
    shift = times[0] if basis.recenter else 0.0
    tau = times - shift
    Phi = np.vander(tau, basis.q, increasing=True)
    rank = np.linalg.matrix_rank(Phi)
    if rank < basis.q:
        raise EstimationError(f"design matrix numerical rank {rank} < {basis.q}")
    Y = np.stack([e[1] for e in w.entries])
    Phi_pinv = pseudo_inverse(Phi)
    theta = Phi_pinv @ Y
    phi_k = basis.row(tau[-1])
    r_hat = theta.T @ phi_k
    a = Phi_pinv.T @ phi_k
    p = Y.shape[1]
    cov = np.zeros((p, p))
    for ai, (_, _, Sigma) in zip(a, w.entries):
        cov += ai * ai * Sigma
    return PositionEstimate(
        t_k=times[-1], r_hat=r_hat, covariance=cov, a=a, theta_hat=theta, time_shift=shift
    )


def confidence_ellipsoid(est: PositionEstimate, alpha: float) -> Ccg:
    """(1-alpha)-confidence ellipsoid around the position estimate, as a CCG."""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    p = est.r_hat.size
    try:
        cholesky(est.covariance)
    except FactorizationError as exc:
        raise EstimationError("error covariance is singular (degenerate window)") from exc
    scale = chi2_quantile(p, 1.0 - alpha)
    return make_ellipsoid(est.r_hat, scale * est.covariance)


def ellipsoid_contains(est: PositionEstimate, alpha: float, point) -> bool:
    """Closed-form membership of a point in the confidence ellipsoid."""
    point = np.asarray(point, dtype=float).reshape(-1)
    scale = chi2_quantile(point.size, 1.0 - alpha)
    e = point - est.r_hat
    return float(e @ np.linalg.solve(scale * est.covariance, e)) <= 1.0


def preprocess_linear_sensing(z, H, Sigma_bar):
    """Reduce a linear sensing model z = H r + noise to a direct position reading.

    Returns (y, Sigma) with y = pinv(H) z and Sigma the correspondingly
    transformed noise covariance. H must have full column rank.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    Sigma_bar = np.asarray(Sigma_bar, dtype=float)
    if np.linalg.matrix_rank(H) < H.shape[1]:
        raise RankError("sensing matrix H must have full column rank")
    Hp = pseudo_inverse(H)
    return Hp @ z, Hp @ Sigma_bar @ Hp.T
