"""Tests for the unsafe-flow construction and its smoothed representation."""

import numpy as np
import pytest

from ccgnav.ccg import make_ball, make_ellipsoid, make_point, make_smooth_box, support
from ccgnav.errors import InvalidArgumentError
from ccgnav.flow import (
    BodySets,
    build_unsafe_flow,
    eval_Gc,
    eval_Gc_derivatives,
    rotation,
    rotation_derivative,
    smoothed_f,
)
from ccgnav.numerics import chi2_quantile


def example_bodies():
    return BodySets(
        ego_shape=make_smooth_box([0.5, 0.25]),
        obstacle_shape=make_ball([0.0, 0.0], 0.8),
        velocity_set=make_ball([0.0, 0.0], 0.75),
    )


def example_flow(gamma=100.0, t_k=0.0, t_end=0.1):
    scale = chi2_quantile(2, 0.95)
    R_hat = make_ellipsoid([2.0, 1.0], scale * np.diag([0.02, 0.03]))
    return build_unsafe_flow(R_hat, example_bodies(), t_k, gamma, t_end)


class TestRotation:
    def test_zero(self):
        np.testing.assert_allclose(rotation(0.0), np.eye(2))

    def test_quarter_turn(self):
        np.testing.assert_allclose(
            rotation(np.pi / 2), [[0.0, -1.0], [1.0, 0.0]], atol=1e-15
        )

    def test_derivative_matches_fd(self):
        for psi in (0.0, 0.7, -2.1):
            fd = (rotation(psi + 1e-6) - rotation(psi - 1e-6)) / 2e-6
            np.testing.assert_allclose(rotation_derivative(psi), fd, atol=1e-8)


class TestBuild:
    def test_point_bodies_give_confidence_ball(self, rng):
        bodies = BodySets(
            ego_shape=make_point([0.0, 0.0]),
            obstacle_shape=make_point([0.0, 0.0]),
            velocity_set=make_point([0.0, 0.0]),
        )
        flow = build_unsafe_flow(make_ball([0.0, 0.0], 1.0), bodies, 0.0, 10.0, 0.1)
        for t in (0.0, 0.05, 0.1):
            for psi in (0.0, 1.0):
                Z = flow.as_ccg(psi, t)
                d = rng.randn(2)
                d /= np.linalg.norm(d)
                assert abs(support(Z, d) - 1.0) < 1e-6

    def test_velocity_set_grows_support_affinely(self, rng):
        flow = example_flow()
        d = rng.randn(2)
        d /= np.linalg.norm(d)
        base = support(flow.as_ccg(0.3, 0.0), d)
        for dt in (0.05, 0.1):
            got = support(flow.as_ccg(0.3, dt), d)
            assert abs(got - (base + 0.75 * dt)) < 1e-5

    def test_rotated_ego_support_identity(self):
        # Every non-ego body is a centered ball, so rotating the ego by psi
        # equals probing the psi=0 set along the back-rotated direction.
        bodies = example_bodies()
        R_hat = make_ball([0.0, 0.0], 0.4)
        flow = build_unsafe_flow(R_hat, bodies, 0.0, 100.0, 0.1)
        d = np.array([1.0, 0.0])
        psi = np.pi / 2
        lhs = support(flow.as_ccg(psi, 0.0), d)
        rhs = support(flow.as_ccg(0.0, 0.0), rotation(psi).T @ d)
        assert abs(lhs - rhs) < 1e-5

    def test_velocity_must_contain_origin(self):
        with pytest.raises(InvalidArgumentError):
            BodySets(
                ego_shape=make_point([0.0, 0.0]),
                obstacle_shape=make_point([0.0, 0.0]),
                velocity_set=make_ball([3.0, 0.0], 1.0),
            )

    def test_bad_gamma(self):
        with pytest.raises(InvalidArgumentError):
            build_unsafe_flow(make_ball([0.0, 0.0], 1.0), example_bodies(), 0.0, 0.0)


class TestEvalGc:
    def test_no_constraints_passthrough(self):
        flow = example_flow()
        assert flow.A.shape[0] == 0
        G_raw, c_raw = flow.raw_Gc(0.4, 0.05)
        G_t, c_t = eval_Gc(flow, 0.4, 0.05)
        np.testing.assert_allclose(G_t, G_raw)
        np.testing.assert_allclose(c_t, c_raw)

    def test_velocity_block_zero_at_interval_start(self):
        flow = example_flow()
        G_t, _ = eval_Gc(flow, 0.0, 0.0)
        # Block order: confidence (2 cols), velocity (2), ego (2), obstacle (2).
        np.testing.assert_array_equal(G_t[:, 2:4], np.zeros((2, 2)))

    def test_full_row_rank(self):
        flow = example_flow()
        G_t, _ = eval_Gc(flow, 0.7, 0.08)
        s = np.linalg.svd(G_t, compute_uv=False)
        assert s.min() > 1e-8

    def test_time_window_enforced(self):
        flow = example_flow()
        with pytest.raises(InvalidArgumentError):
            eval_Gc(flow, 0.0, 0.2)
        with pytest.raises(InvalidArgumentError):
            eval_Gc(flow, 0.0, -0.05)


class TestDerivatives:
    def test_static_bodies_no_time_derivative(self):
        bodies = BodySets(
            ego_shape=make_smooth_box([0.5, 0.25]),
            obstacle_shape=make_ball([0.0, 0.0], 0.8),
            velocity_set=make_point([0.0, 0.0]),
        )
        flow = build_unsafe_flow(make_ball([1.0, 0.0], 0.3), bodies, 0.0, 100.0, 0.1)
        dG_dpsi, dG_dt, dc_dpsi, dc_dt = eval_Gc_derivatives(flow, 0.5, 0.05)
        assert np.abs(dG_dt).max() == 0.0
        assert np.abs(dc_dt).max() == 0.0

    def test_centered_ball_ego_center_derivative(self):
        bodies = BodySets(
            ego_shape=make_ball([0.0, 0.0], 0.5),
            obstacle_shape=make_ball([0.0, 0.0], 0.8),
            velocity_set=make_ball([0.0, 0.0], 0.75),
        )
        flow = build_unsafe_flow(make_ball([1.0, 2.0], 0.3), bodies, 0.0, 100.0, 0.1)
        _, _, dc_dpsi, _ = eval_Gc_derivatives(flow, 0.9, 0.02)
        np.testing.assert_allclose(
            dc_dpsi, -(rotation_derivative(0.9) @ bodies.ego_shape.c), atol=1e-12
        )

    @pytest.mark.parametrize("psi,t", [(0.3, 0.02), (-1.2, 0.07), (2.5, 0.099)])
    def test_matches_finite_differences(self, psi, t):
        flow = example_flow()
        dG_dpsi, dG_dt, dc_dpsi, dc_dt = eval_Gc_derivatives(flow, psi, t)
        step = 1e-6
        Gp, cp = eval_Gc(flow, psi + step, t)
        Gm, cm = eval_Gc(flow, psi - step, t)
        np.testing.assert_allclose(dG_dpsi, (Gp - Gm) / (2 * step), atol=1e-6)
        np.testing.assert_allclose(dc_dpsi, (cp - cm) / (2 * step), atol=1e-6)
        Gp, cp = eval_Gc(flow, psi, t + step)
        Gm, cm = eval_Gc(flow, psi, t - step)
        np.testing.assert_allclose(dG_dt, (Gp - Gm) / (2 * step), atol=1e-6)
        np.testing.assert_allclose(dc_dt, (cp - cm) / (2 * step), atol=1e-6)


class TestSmoothedGenerator:
    def test_single_generator_shift(self):
        bodies = BodySets(
            ego_shape=make_point([0.0, 0.0]),
            obstacle_shape=make_point([0.0, 0.0]),
            velocity_set=make_point([0.0, 0.0]),
        )
        flow = build_unsafe_flow(make_ball([0.0, 0.0], 1.0), bodies, 0.0, 10.0, 0.1)
        sg = smoothed_f(flow)
        assert sg.count == 1
        eta = np.array([0.3, -0.4])
        expected = (eta @ eta - 1.0) - np.log(2.0) / 10.0
        assert abs(sg.value(eta) - expected) < 1e-12

    def test_unit_ball_value_at_origin(self):
        bodies = BodySets(
            ego_shape=make_point([0.0, 0.0]),
            obstacle_shape=make_point([0.0, 0.0]),
            velocity_set=make_point([0.0, 0.0]),
        )
        flow = build_unsafe_flow(make_ball([0.0, 0.0], 1.0), bodies, 0.0, 10.0, 0.1)
        assert abs(smoothed_f(flow).value(np.zeros(2)) - (-1.0 - np.log(2.0) / 10.0)) < 1e-9

    @pytest.mark.parametrize("gamma", [10.0, 100.0])
    def test_sandwich_bound(self, gamma, rng):
        flow = example_flow(gamma=gamma)
        sg = smoothed_f(flow)
        pad = np.log(sg.count + 1.0) / gamma
        for _ in range(1000):
            eta = 1.5 * rng.randn(sg.dim)
            f = sg.value(eta)
            fmax = sg.component_values(eta).max()
            assert fmax - pad <= f < fmax

    def test_grad_hess_match_fd(self, rng):
        flow = example_flow()
        sg = smoothed_f(flow)
        eta = 0.5 * rng.randn(sg.dim)
        step = 1e-6
        g_fd = np.zeros(sg.dim)
        for j in range(sg.dim):
            e = np.zeros(sg.dim)
            e[j] = step
            g_fd[j] = (sg.value(eta + e) - sg.value(eta - e)) / (2 * step)
        np.testing.assert_allclose(sg.grad(eta), g_fd, atol=1e-6)
        H_fd = np.zeros((sg.dim, sg.dim))
        for j in range(sg.dim):
            e = np.zeros(sg.dim)
            e[j] = step
            H_fd[:, j] = (sg.grad(eta + e) - sg.grad(eta - e)) / (2 * step)
        np.testing.assert_allclose(sg.hess(eta), H_fd, atol=1e-5)

    @pytest.mark.parametrize("probe", [np.array([1.0, 0.0]), np.array([0.6, 0.8])])
    def test_gap_shrinks_with_gamma(self, probe):
        # 1-D probe: the zero crossing of f along a ray approaches the sharp
        # boundary monotonically as gamma grows.
        bodies = BodySets(
            ego_shape=make_point([0.0, 0.0]),
            obstacle_shape=make_point([0.0, 0.0]),
            velocity_set=make_point([0.0, 0.0]),
        )
        radii = []
        for gamma in (10.0, 100.0, 1000.0):
            flow = build_unsafe_flow(make_ball([0.0, 0.0], 1.0), bodies, 0.0, gamma, 0.1)
            sg = smoothed_f(flow)
            lo, hi = 0.5, 3.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if sg.value(mid * probe) < 0:
                    lo = mid
                else:
                    hi = mid
            radii.append(0.5 * (lo + hi))
        assert radii[0] > radii[1] > radii[2] >= 1.0
