"""Tests for barrier evaluation: analytic cases, envelope derivatives, convexity."""

import numpy as np
import pytest

from ccgnav.ccg import contains, make_ball, make_ellipsoid, make_point, make_smooth_box
from ccgnav.cbf import BacksteppingParams, PlanarKinematics, eval_h, eval_h1, hdot_terms
from ccgnav.errors import IndeterminateError
from ccgnav.flow import BodySets, build_unsafe_flow
from ccgnav.numerics import chi2_quantile


def point_bodies():
    return BodySets(
        ego_shape=make_point([0.0, 0.0]),
        obstacle_shape=make_point([0.0, 0.0]),
        velocity_set=make_point([0.0, 0.0]),
    )


def unit_ball_flow(gamma=10.0):
    return build_unsafe_flow(make_ball([0.0, 0.0], 1.0), point_bodies(), 0.0, gamma, 0.1)


def example_flow(gamma=100.0):
    scale = chi2_quantile(2, 0.95)
    bodies = BodySets(
        ego_shape=make_smooth_box([0.5, 0.25]),
        obstacle_shape=make_ball([0.0, 0.0], 0.8),
        velocity_set=make_ball([0.0, 0.0], 0.75),
    )
    R_hat = make_ellipsoid([2.0, 1.0], scale * np.diag([0.02, 0.03]))
    return build_unsafe_flow(R_hat, bodies, 0.0, gamma, 0.1)


class TestAnalyticCases:
    def test_unit_ball_outside(self):
        ev = eval_h(unit_ball_flow(), [3.0, 0.0], 0.0, 0.0)
        assert abs(ev.h - (9.0 - 1.0 - np.log(2.0) / 10.0)) < 1e-9  # 7.930685...
        np.testing.assert_allclose(ev.grad_p, [6.0, 0.0], atol=1e-8)

    def test_unit_ball_inside(self):
        ev = eval_h(unit_ball_flow(), [0.0, 0.0], 0.0, 0.0)
        assert abs(ev.h - (-1.0 - np.log(2.0) / 10.0)) < 1e-9  # -1.069315...
        assert ev.h < 0

    def test_static_flow_time_and_attitude_invariant(self):
        bodies = BodySets(
            ego_shape=make_ball([0.0, 0.0], 0.5),  # rotation-invariant ego
            obstacle_shape=make_ball([0.0, 0.0], 0.8),
            velocity_set=make_point([0.0, 0.0]),
        )
        flow = build_unsafe_flow(make_ball([1.0, 0.0], 0.3), bodies, 0.0, 100.0, 0.1)
        ev = eval_h(flow, [3.0, 1.0], 0.4, 0.05)
        assert abs(ev.dh_dt) < 1e-9
        assert abs(ev.dh_dpsi) < 1e-9


class TestDerivatives:
    def test_gradients_match_finite_differences(self, rng):
        flow = example_flow()
        step = 1e-5
        checked = 0
        for _ in range(30):
            p = np.array([2.0, 1.0]) + 3.0 * rng.randn(2)
            psi = rng.uniform(-np.pi, np.pi)
            t = rng.uniform(0.0 + step, 0.1 - step)
            ev = eval_h(flow, p, psi, t)
            # Stencil evaluations warm-start from the base point, as the
            # closed loop does.
            for j in range(2):
                e = np.zeros(2)
                e[j] = step
                fd = (eval_h(flow, p + e, psi, t, warm=ev).h
                      - eval_h(flow, p - e, psi, t, warm=ev).h) / (2 * step)
                assert abs(fd - ev.grad_p[j]) <= 1e-5 * max(1.0, abs(ev.grad_p[j]))
            fd_psi = (eval_h(flow, p, psi + step, t, warm=ev).h
                      - eval_h(flow, p, psi - step, t, warm=ev).h) / (2 * step)
            assert abs(fd_psi - ev.dh_dpsi) <= 1e-5 * max(1.0, abs(ev.dh_dpsi))
            fd_t = (eval_h(flow, p, psi, t + step, warm=ev).h
                    - eval_h(flow, p, psi, t - step, warm=ev).h) / (2 * step)
            assert abs(fd_t - ev.dh_dt) <= 1e-5 * max(1.0, abs(ev.dh_dt))
            checked += 1
        assert checked == 30

    def test_warm_start_converges_quickly(self):
        # Centimeter-scale steps along a path, as in the closed loop; the
        # first few solves after the cold start are excluded from the bound.
        flow = example_flow()
        warm = None
        max_iters = 0
        for i, s in enumerate(np.linspace(0.0, 1.0, 300)):
            p = np.array([4.0 - 2.0 * s, -1.0 + 2.5 * s])
            psi = 0.5 * s
            t = 0.099 * s
            ev = eval_h(flow, p, psi, t, warm=warm)
            if i > 3:
                max_iters = max(max_iters, ev.newton_iters)
            warm = ev
        assert max_iters <= 5


class TestSignConsistency:
    def test_matches_membership_oracle(self):
        flow = example_flow()
        Q = flow.as_ccg(0.25, 0.05)
        sg = flow.smoothed
        band = sg.pad + 1e-3
        xs = np.linspace(0.0, 4.0, 15)
        ys = np.linspace(-1.0, 3.0, 15)
        decided = 0
        for x in xs:
            for y in ys:
                p = np.array([x, y])
                h = eval_h(flow, p, 0.25, 0.05).h
                if abs(h) <= band:
                    continue
                try:
                    inside = contains(Q, p, 1e-6)
                except IndeterminateError:
                    continue
                assert inside == (h < 0), f"mismatch at {p}, h={h}"
                decided += 1
        assert decided > 150

    def test_convexity_in_position(self, rng):
        flow = example_flow()
        for _ in range(40):
            p1 = np.array([2.0, 1.0]) + 2.0 * rng.randn(2)
            p2 = np.array([2.0, 1.0]) + 2.0 * rng.randn(2)
            th = rng.uniform(0.05, 0.95)
            h1 = eval_h(flow, p1, 0.1, 0.02).h
            h2 = eval_h(flow, p2, 0.1, 0.02).h
            hm = eval_h(flow, th * p1 + (1 - th) * p2, 0.1, 0.02).h
            assert hm <= th * h1 + (1 - th) * h2 + 1e-8

    def test_gradient_nonzero_on_level_set(self):
        flow = example_flow()
        center = np.array([2.0, 1.0])
        for ang in np.linspace(0.0, 2 * np.pi, 8, endpoint=False):
            d = np.array([np.cos(ang), np.sin(ang)])
            lo, hi = 0.0, 6.0
            warm = None
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                warm = eval_h(flow, center + mid * d, 0.0, 0.0, warm=warm)
                if warm.h < 0:
                    lo = mid
                else:
                    hi = mid
            p = center + 0.5 * (lo + hi) * d
            ev = eval_h(flow, p, 0.0, 0.0, warm=warm)
            assert abs(ev.h) < 1e-4
            assert np.linalg.norm(ev.grad_p) > 1e-3


class TestBoundaryContainment:
    def test_sharp_boundary_points_are_strictly_unsafe(self, rng):
        # Support-function extremizers of the sharp set lie strictly inside
        # the smoothed unsafe set: their barrier value is negative.
        from ccgnav.ccg import support
        from scipy.optimize import minimize

        flow = example_flow()
        Q = flow.as_ccg(0.0, 0.0)
        for _ in range(6):
            d = rng.randn(2)
            d /= np.linalg.norm(d)
            val = support(Q, d)
            # Recover a maximizer x* with d.x* = support value on the boundary.
            # Finding x*: maximize d.x subject to set membership was done by
            # the support solver; reconstruct from a fresh solve.
            obj = lambda xi: -(d @ (Q.G @ xi + Q.c))
            jac = lambda xi: -(Q.G.T @ d)
            cons = []
            for g, sl in zip(Q.gens, Q.gen_slices()):
                cons.append({
                    "type": "ineq",
                    "fun": lambda xi, g=g, sl=sl: -g.value(xi[sl]),
                    "jac": lambda xi, g=g, sl=sl: -np.concatenate([
                        np.zeros(sl.start), g.grad(xi[sl]), np.zeros(Q.xi_dim - sl.stop)
                    ]),
                })
            res = minimize(obj, np.zeros(Q.xi_dim), jac=jac, method="SLSQP",
                           constraints=cons, options={"ftol": 1e-12, "maxiter": 200})
            x_star = Q.G @ res.x + Q.c
            assert abs(d @ x_star - val) < 1e-5
            assert eval_h(flow, x_star, 0.0, 0.0).h < 0


class TestHdotTerms:
    def test_driftless_model_zero_lf(self):
        flow = example_flow()
        Lf, LG, dh_dt = hdot_terms(flow, PlanarKinematics(), [4.0, 2.0], 0.3, 0.05)
        assert Lf == 0.0
        assert LG.shape == (3,)

    def test_identity_input_matrix_returns_gradient(self):
        class IdentityModel:
            def drift(self, p, psi, t):
                return np.zeros(3)

            def input_matrix(self, p, psi, t):
                return np.eye(3)

        flow = example_flow()
        p, psi, t = np.array([4.0, 2.0]), 0.3, 0.05
        ev = eval_h(flow, p, psi, t)
        _, LG, _ = hdot_terms(flow, IdentityModel(), p, psi, t, ev=ev)
        np.testing.assert_allclose(LG, np.concatenate([ev.grad_p, [ev.dh_dpsi]]))


class TestBackstepping:
    @staticmethod
    def _virtual(p, psi, t):
        # Smooth synthetic virtual control for derivative checks.
        return np.array([
            0.5 * np.sin(p[0]) + 0.1 * t,
            0.2 * p[1] ** 2 + 0.3 * np.cos(psi),
            0.1 * p[0] * p[1] + psi,
        ])

    def test_matching_velocity_recovers_base(self):
        flow = example_flow()
        params = BacksteppingParams(mu=1.0)
        p, psi, t = np.array([3.0, 0.5]), 0.2, 0.03
        nu = self._virtual(p, psi, t)
        bev = eval_h1(flow, params, self._virtual, p, psi, nu, t)
        assert abs(bev.h1 - bev.base.h) < 1e-12

    def test_large_mu_limit(self):
        flow = example_flow()
        p, psi, t = np.array([3.0, 0.5]), 0.2, 0.03
        nu = np.array([0.4, -0.1, 0.2])
        h_base = eval_h(flow, p, psi, t).h
        h1 = eval_h1(flow, BacksteppingParams(mu=1e9), self._virtual, p, psi, nu, t).h1
        assert abs(h1 - h_base) < 1e-6

    def test_mu_monotonicity(self):
        flow = example_flow()
        p, psi, t = np.array([3.0, 0.5]), 0.2, 0.03
        nu = np.array([0.4, -0.1, 0.2])
        values = [
            eval_h1(flow, BacksteppingParams(mu=mu), self._virtual, p, psi, nu, t).h1
            for mu in (0.5, 1.0, 2.0)
        ]
        assert values[0] <= values[1] <= values[2]

    def test_gradients_match_finite_differences(self):
        flow = example_flow()
        params = BacksteppingParams(mu=0.8, fd_step=1e-5)
        p, psi, t = np.array([2.8, 0.4]), 0.15, 0.05
        nu = np.array([0.3, -0.2, 0.1])
        bev = eval_h1(flow, params, self._virtual, p, psi, nu, t)
        step = 1e-5

        def h1_of(pp, ps, nn, tt):
            return eval_h1(flow, params, self._virtual, pp, ps, nn, tt).h1

        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            fd = (h1_of(p + e, psi, nu, t) - h1_of(p - e, psi, nu, t)) / (2 * step)
            assert abs(fd - bev.grad_p[j]) <= 1e-4 * max(1.0, abs(bev.grad_p[j]))
        fd = (h1_of(p, psi + step, nu, t) - h1_of(p, psi - step, nu, t)) / (2 * step)
        assert abs(fd - bev.dh_dpsi) <= 1e-4 * max(1.0, abs(bev.dh_dpsi))
        fd = (h1_of(p, psi, nu, t + step) - h1_of(p, psi, nu, t - step)) / (2 * step)
        assert abs(fd - bev.dh_dt) <= 1e-4 * max(1.0, abs(bev.dh_dt))
        for j in range(3):
            e = np.zeros(3)
            e[j] = step
            fd = (h1_of(p, psi, nu + e, t) - h1_of(p, psi, nu - e, t)) / (2 * step)
            assert abs(fd - bev.grad_nu[j]) <= 1e-6 * max(1.0, abs(bev.grad_nu[j]))
