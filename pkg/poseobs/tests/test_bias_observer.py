"""
Test suite for bias compensation, anti-windup and the rank conditions
"""

import math
import os
import sys

import numpy as np
import pytest

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from estimators.bias_observer import (
    AntiWindupConfig,
    BiasLaw,
    BiasState,
    ConfigurationError,
    bias_derivative_antiwindup,
    bias_derivative_decomposed,
    bias_derivative_projection,
    bias_rate,
    biased_error_derivative,
    lyapunov_from_cost,
    lyapunov_value,
    observability_matrices_a2,
    sat,
    step_biased,
)
from estimators.observer import ObserverState, cost, innovation, reference_set
from geometry.liealg import Pose, Twist, exp_se3, exp_so3, hat_se3, pose_inverse
from geometry.projective import MeasurementSet, embed_point, embed_vector, measure_all
from selftest.property_suites import random_measurement_set, random_pose, random_twist

SQRT3_2 = math.sqrt(3.0) / 2.0

CASE1_REFS = [embed_vector([0, 0, 1]), embed_vector([SQRT3_2, 0.5, 0]), embed_point([1, 0, 0])]
CASE2_REFS = [embed_vector([0, 0, 1]), embed_point([1, 0, 0]), embed_point([-0.5, SQRT3_2, 0])]
CASE3_REFS = [
    embed_point([1, 0, 0]),
    embed_point([-0.5, SQRT3_2, 0]),
    embed_point([-0.5, -SQRT3_2, 0]),
]


class TestSaturation:
    """Test sat_delta"""

    def test_inside_ball(self):
        """Test that vectors inside the ball are unchanged"""
        x = np.array([0.01, -0.02, 0.03])
        assert np.array_equal(sat(x, 0.052), x)

    def test_outside_ball(self):
        """Test scaling onto the sphere of radius delta"""
        assert np.allclose(sat([3.0, 0.0, 4.0], 1.0), [0.6, 0.0, 0.8], atol=1e-16)

    def test_zero_vector(self):
        """Test sat(0) = 0"""
        assert np.array_equal(sat(np.zeros(3), 0.1), np.zeros(3))

    def test_norm_bounded(self):
        """Test |sat(x)| <= delta"""
        rng = np.random.default_rng(50)
        for _ in range(100):
            assert np.linalg.norm(sat(10.0 * rng.normal(size=3), 0.3)) <= 0.3 + 1e-15

    def test_rejects_non_positive_radius(self):
        """Test delta validation"""
        with pytest.raises(ConfigurationError):
            sat([1.0, 0.0, 0.0], 0.0)


class TestAntiWindupConfig:
    """Test configuration validation"""

    def test_defaults(self):
        """Test the default parameters"""
        cfg = AntiWindupConfig()
        assert (cfg.k_b, cfg.kappa_angular, cfg.kappa_linear) == (1.0, 10.0, 10.0)
        assert (cfg.delta_angular, cfg.delta_linear) == (0.052, 0.346)

    @pytest.mark.parametrize("field", ["k_b", "kappa_angular", "kappa_linear", "delta_angular", "delta_linear"])
    def test_rejects_non_positive(self, field):
        """Test that every parameter must be positive"""
        with pytest.raises(ConfigurationError):
            AntiWindupConfig(**{field: 0.0})


class TestBiasLaws:
    """Test the bias derivative forms"""

    def test_projection_matches_decomposed(self):
        """Test projection form against the component form"""
        rng = np.random.default_rng(51)
        for _ in range(1000):
            m, Xhat = random_measurement_set(rng), random_pose(rng)
            k_b = float(rng.uniform(0.5, 2.0))
            a = bias_derivative_projection(Xhat, m, k_b).as_vector()
            b = bias_derivative_decomposed(Xhat, m, k_b).as_vector()
            assert np.max(np.abs(a - b)) <= 1e-10

    def test_projection_is_adjoint_of_innovation(self):
        """Test <b, rate> = k_b <Ad_Xhat b, Delta> for all b"""
        rng = np.random.default_rng(52)
        for _ in range(100):
            m, Xhat = random_measurement_set(rng), random_pose(rng)
            b = random_twist(rng)
            rate = hat_se3(bias_derivative_projection(Xhat, m, 1.0))
            moved = Xhat.matrix() @ hat_se3(b) @ pose_inverse(Xhat).matrix()
            delta = hat_se3(innovation(Xhat, m).value)
            assert np.sum(hat_se3(b) * rate) == pytest.approx(np.sum(moved * delta), abs=1e-10)

    def test_zero_at_truth(self):
        """Test that the bias rate vanishes with zero output error"""
        X = Pose(exp_so3([0.3, 0.1, -0.2]), [1, -1, 0.5])
        m = MeasurementSet.build(CASE1_REFS, measure_all(X, CASE1_REFS), [2.0] * 3)
        assert np.max(np.abs(bias_derivative_decomposed(X, m, 1.0).as_vector())) <= 1e-12

    def test_antiwindup_equals_decomposed_inside_ball(self):
        """Test that the leak is inactive inside the saturation ball"""
        rng = np.random.default_rng(53)
        m, Xhat = random_measurement_set(rng), random_pose(rng)
        cfg = AntiWindupConfig()
        b = BiasState([0.01, 0.0, 0.0], [0.1, 0.0, 0.0])
        a = bias_derivative_antiwindup(Xhat, m, b, cfg).as_vector()
        d = bias_derivative_decomposed(Xhat, m, cfg.k_b).as_vector()
        assert np.array_equal(a, d)

    def test_leak_pulls_back_outside_ball(self):
        """Test that the leak points toward the ball when b is far outside"""
        X = Pose(exp_so3([0.1, 0.2, 0.3]), [0.0, 0.0, 0.0])
        m = MeasurementSet.build(CASE3_REFS, measure_all(X, CASE3_REFS), [2.0] * 3)
        cfg = AntiWindupConfig()
        b = BiasState([1.0, 0.0, 0.0], [0.0, 5.0, 0.0])
        rate = bias_derivative_antiwindup(X, m, b, cfg)
        assert rate.angular[0] < 0.0
        assert rate.linear[1] < 0.0
        assert rate.angular[0] == pytest.approx(-10.0 * (1.0 - 0.052), abs=1e-9)

    def test_leak_decreases_norm_outside_ball(self):
        """Test that the norm excess shrinks under the leak alone"""
        cfg = AntiWindupConfig()
        X = Pose.identity()
        m = MeasurementSet.build(CASE2_REFS, measure_all(X, CASE2_REFS), [2.0] * 3)
        b = BiasState([0.3, -0.2, 0.1], [1.0, 0.5, -0.5])
        for _ in range(1000):
            b = b + bias_derivative_antiwindup(X, m, b, cfg) * 1e-3
        assert np.linalg.norm(b.angular) < np.linalg.norm([0.3, -0.2, 0.1])
        assert np.linalg.norm(b.linear) < np.linalg.norm([1.0, 0.5, -0.5])

    def test_bias_rate_none(self):
        """Test that the none law freezes the estimate"""
        rng = np.random.default_rng(54)
        m, Xhat = random_measurement_set(rng), random_pose(rng)
        rate = bias_rate(BiasLaw.NONE, Xhat, m, BiasState.zero(), AntiWindupConfig())
        assert np.array_equal(rate.as_vector(), np.zeros(6))


class TestBiasedStep:
    """Test the biased observer step and the error dynamics"""

    def test_compensates_known_bias(self):
        """Test that an exact bias estimate reproduces the true motion"""
        X = Pose(exp_so3([0.1, 0.2, 0.3]), [1, 2, 3])
        A = Twist([0.3, -0.1, 0.2], [0.5, 0.0, -0.4])
        b = BiasState([-0.02, 0.02, 0.01], [0.2, -0.1, 0.1])
        m = MeasurementSet.build(CASE1_REFS, measure_all(X, CASE1_REFS), [2.0] * 3)
        state, b_next = step_biased(ObserverState(X), b, A + b.as_twist(), m, AntiWindupConfig(), 1e-3)
        expected = X.compose(exp_se3(A * 1e-3))
        assert np.allclose(state.estimate.matrix(), expected.matrix(), atol=1e-12)
        assert np.allclose(b_next.as_vector(), b.as_vector(), atol=1e-14)

    def test_rejects_non_positive_dt(self):
        """Test dt validation"""
        m = reference_set(CASE1_REFS, [2.0] * 3)
        with pytest.raises(ValueError):
            step_biased(ObserverState(Pose.identity()), BiasState.zero(), Twist.zero(), m, AntiWindupConfig(), -1e-3)

    def test_biased_error_derivative(self):
        """Test dE/dt = (Ad_Xhat b_tilde - Delta) E against the closed loop"""
        rng = np.random.default_rng(55)
        X, E = random_pose(rng), random_pose(rng)
        Xhat = E.compose(X)
        A = random_twist(rng)
        b_true = BiasState([-0.02, 0.02, 0.01], [0.2, -0.1, 0.1])
        b_hat = BiasState([0.05, 0.0, -0.03], [0.0, 0.3, 0.0])
        m = MeasurementSet.build(CASE2_REFS, measure_all(X, CASE2_REFS), [2.0] * 3)

        A_y = A + b_true.as_twist()
        delta = hat_se3(innovation(Xhat, m).value)
        Xhat_dot = Xhat.matrix() @ hat_se3(A_y - b_hat.as_twist()) - delta @ Xhat.matrix()
        X_dot = X.matrix() @ hat_se3(A)
        X_inv = np.linalg.inv(X.matrix())
        E_dot = Xhat_dot @ X_inv - Xhat.matrix() @ X_inv @ X_dot @ X_inv

        refs = reference_set(CASE2_REFS, [2.0] * 3)
        result = biased_error_derivative(E, Xhat, b_true - b_hat, refs)
        assert np.allclose(result, E_dot, atol=1e-12)


class TestLyapunov:
    """Test the Lyapunov function"""

    def test_zero_at_equilibrium(self):
        """Test V_b(I, 0) = 0"""
        assert lyapunov_value(Pose.identity(), BiasState.zero(), CASE1_REFS, [2.0] * 3, 1.0) == 0.0

    def test_bias_term(self):
        """Test the |b_tilde|^2 / (2 k_b) term with the Frobenius norm"""
        b = BiasState([1.0, 0.0, 0.0], [0.0, 2.0, 0.0])
        value = lyapunov_value(Pose.identity(), b, CASE1_REFS, [2.0] * 3, 2.0)
        assert value == pytest.approx((2.0 * 1.0 + 4.0) / 4.0, rel=1e-15)

    def test_cost_term(self):
        """Test that V_b reduces to the cost for zero bias error"""
        E = Pose(exp_so3([0.2, -0.1, 0.3]), [0.5, 0.1, -0.2])
        refs = reference_set(CASE3_REFS, [2.0] * 3)
        assert lyapunov_value(E, BiasState.zero(), CASE3_REFS, [2.0] * 3, 1.0) == pytest.approx(
            cost(E, refs), rel=1e-15
        )

    def test_rejects_non_positive_gain(self):
        """Test k_b validation"""
        with pytest.raises(ConfigurationError):
            lyapunov_value(Pose.identity(), BiasState.zero(), CASE1_REFS, [2.0] * 3, 0.0)
        with pytest.raises(ConfigurationError):
            lyapunov_from_cost(0.0, BiasState.zero(), -1.0)

    def test_observer_cost_matches_group_error_cost(self):
        """Test C(Xhat, Y) = C(E, Yref) for exact outputs, so V_b follows from the observer cost"""
        rng = np.random.default_rng(57)
        gains = [2.0] * 3
        for _ in range(50):
            X = random_pose(rng)
            E = Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3))
            m = MeasurementSet.build(CASE2_REFS, measure_all(X, CASE2_REFS), gains)
            b_tilde = BiasState(0.05 * rng.normal(size=3), 0.2 * rng.normal(size=3))
            from_cost = lyapunov_from_cost(cost(E.compose(X), m), b_tilde, 1.5)
            assert from_cost == pytest.approx(lyapunov_value(E, b_tilde, CASE2_REFS, gains, 1.5), abs=1e-12)

    def test_derivative_is_minus_innovation_norm(self):
        """Test dV_b/dt = -|Delta|^2 under the projection-form law"""
        rng = np.random.default_rng(56)
        gains = [2.0] * 3
        refs = reference_set(CASE1_REFS, gains)
        k_b = 1.0
        for _ in range(20):
            X, E = random_pose(rng), Pose(exp_so3(0.5 * rng.normal(size=3)), 0.5 * rng.normal(size=3))
            Xhat = E.compose(X)
            b_tilde = BiasState(0.05 * rng.normal(size=3), 0.2 * rng.normal(size=3))
            m = MeasurementSet.build(CASE1_REFS, measure_all(X, CASE1_REFS), gains)

            E_dot = biased_error_derivative(E, Xhat, b_tilde, refs)
            b_hat_dot = BiasState.from_twist(bias_derivative_projection(Xhat, m, k_b))
            h = 1e-6
            E_fwd = Pose.from_matrix(E.matrix() + h * E_dot, tol=1e-6)
            E_bwd = Pose.from_matrix(E.matrix() - h * E_dot, tol=1e-6)
            # b_tilde' = -bhat'
            V_fwd = lyapunov_value(E_fwd, b_tilde - b_hat_dot * h, CASE1_REFS, gains, k_b)
            V_bwd = lyapunov_value(E_bwd, b_tilde + b_hat_dot * h, CASE1_REFS, gains, k_b)
            V_dot = (V_fwd - V_bwd) / (2 * h)
            delta_sq = innovation(E, refs).norm() ** 2
            assert V_dot == pytest.approx(-delta_sq, abs=1e-6)


class TestRankConditions:
    """Test the full-rank conditions on G and H"""

    @pytest.mark.parametrize("refs", [CASE1_REFS, CASE2_REFS, CASE3_REFS])
    def test_reference_cases_full_rank(self, refs):
        """Test that the reference geometries pass"""
        result = observability_matrices_a2(refs, [2.0] * 3)
        assert result.full_rank
        assert result.rank_G == 3 and result.rank_H == 3

    def test_case3_matrices(self):
        """Test G and H for three coplanar points at 120 degrees"""
        result = observability_matrices_a2(CASE3_REFS, [2.0] * 3)
        assert np.allclose(result.G, -np.diag([1.5, 1.5, 3.0]), atol=1e-12)
        assert np.allclose(result.H, -np.diag([2.25, 2.25, 3.0]), atol=1e-12)

    def test_all_directions_rank_deficient(self):
        """Test that a set without feature points fails"""
        refs = [embed_vector([1, 0, 0]), embed_vector([0, 1, 0]), embed_vector([0, 0, 1])]
        result = observability_matrices_a2(refs, [2.0] * 3)
        assert not result.full_rank
        assert result.diagnostic

    def test_single_direction_singular_G(self):
        """Test that one direction leaves G singular"""
        result = observability_matrices_a2([embed_vector([0, 0, 1])], [1.0])
        assert result.H is None
        assert not result.full_rank

    def test_length_mismatch(self):
        """Test gains/references length check"""
        with pytest.raises(ValueError):
            observability_matrices_a2(CASE1_REFS, [2.0])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
