"""
Numerical property suites executed by `selftest`

Every suite takes a numpy Generator plus an innovation function (so a faulty
innovation can be injected) and returns a result dictionary:
{"property", "success", "max_error", "tolerance", "samples", ...}.
"""

import logging
from typing import List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

from estimators.bias_observer import (
    BiasLaw,
    bias_derivative_decomposed,
    bias_derivative_projection,
    observability_matrices_a2,
)
from estimators.observer import (
    InnovationFn,
    ObservabilityCase,
    check_observability_a1,
    cost,
    innovation,
    innovation_matrix_form,
)
from geometry.liealg import Pose, Twist, exp_se3, exp_so3, twist_inner
from geometry.projective import (
    MeasurementSet,
    ProjectivePoint,
    embed_point,
    embed_vector,
    group_action_rho,
    measure_all,
)
from simulation.simulator import (
    SinusoidProfile,
    TrajectoryProfile,
    builtin_scenarios,
    run_scenario,
    without_bias,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
GRADIENT_REL_TOL = 1e-6
INNOVATION_FORM_TOL = 1e-12
BIAS_FORM_TOL = 1e-10
EQUIVARIANCE_TOL = 1e-12
AUTONOMY_TOL = 1e-6
LYAPUNOV_TOL = 1e-3
ZERO_COST_TOL = 1e-9
IDENTITY_DISTANCE = 1e-3


def _result(name: str, max_error: float, tolerance: float, samples: int, **extra) -> dict:
    result = {
        "property": name,
        "success": bool(np.isfinite(max_error) and max_error <= tolerance),
        "max_error": float(max_error),
        "tolerance": tolerance,
        "samples": samples,
    }
    result.update(extra)
    return result


# ---------------------------------------------------------------------------
# Random samplers (shared with the tests)
# ---------------------------------------------------------------------------


def random_pose(rng: np.random.Generator, position_scale: float = 1.0) -> Pose:
    return Pose(exp_so3(rng.normal(size=3)), position_scale * rng.normal(size=3))


def random_twist(rng: np.random.Generator, scale: float = 1.0) -> Twist:
    return Twist(scale * rng.normal(size=3), scale * rng.normal(size=3))


def random_references(rng: np.random.Generator, count: int) -> List[ProjectivePoint]:
    """Mixed feature points (within a few meters) and unit directions."""
    refs = []
    for _ in range(count):
        if rng.random() < 0.5:
            refs.append(embed_point(2.0 * rng.normal(size=3)))
        else:
            refs.append(embed_vector(rng.normal(size=3)))
    return refs


def random_measurement_set(
    rng: np.random.Generator, min_count: int = 1, max_count: int = 5
) -> MeasurementSet:
    """References with measurements produced by a random true pose."""
    count = int(rng.integers(min_count, max_count + 1))
    refs = random_references(rng, count)
    measured = measure_all(random_pose(rng), refs)
    gains = rng.uniform(0.5, 3.0, size=count)
    return MeasurementSet.build(refs, measured, gains)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def gradient_oracle(
    rng: np.random.Generator, samples: int = 1000, innovation_fn: InnovationFn = innovation
) -> dict:
    """Central difference of C along exp(sU) Xhat against <Delta, U>."""
    worst = 0.0
    for _ in range(samples):
        m = random_measurement_set(rng)
        Xhat = random_pose(rng)
        U = random_twist(rng)

        forward = cost(exp_se3(U * FD_STEP).compose(Xhat), m)
        backward = cost(exp_se3(U * -FD_STEP).compose(Xhat), m)
        numeric = (forward - backward) / (2.0 * FD_STEP)
        analytic = twist_inner(innovation_fn(Xhat, m).value, U)

        error = abs(numeric - analytic) / max(abs(analytic), 1.0)
        worst = max(worst, error)

    return _result("gradient_oracle", worst, GRADIENT_REL_TOL, samples)


def form_equality(
    rng: np.random.Generator, samples: int = 1000, innovation_fn: InnovationFn = innovation
) -> dict:
    """Projection and block forms of the innovation and of the bias law."""
    worst_innovation = 0.0
    worst_bias = 0.0
    for _ in range(samples):
        m = random_measurement_set(rng)
        Xhat = random_pose(rng)
        k_b = float(rng.uniform(0.5, 2.0))

        projection = innovation_fn(Xhat, m).value.as_vector()
        block = innovation_matrix_form(Xhat, m).value.as_vector()
        worst_innovation = max(worst_innovation, float(np.max(np.abs(projection - block))))

        bias_projection = bias_derivative_projection(Xhat, m, k_b).as_vector()
        bias_block = bias_derivative_decomposed(Xhat, m, k_b).as_vector()
        worst_bias = max(worst_bias, float(np.max(np.abs(bias_projection - bias_block))))

    innovation_ok = worst_innovation <= INNOVATION_FORM_TOL
    bias_ok = worst_bias <= BIAS_FORM_TOL
    return {
        "property": "form_equality",
        "success": bool(innovation_ok and bias_ok),
        "max_error": max(worst_innovation, worst_bias),
        "tolerance": INNOVATION_FORM_TOL,
        "samples": samples,
        "innovation_error": worst_innovation,
        "bias_error": worst_bias,
        "bias_tolerance": BIAS_FORM_TOL,
    }


def equivariance(
    rng: np.random.Generator, samples: int = 1000, innovation_fn: InnovationFn = innovation
) -> dict:
    """Delta and C unchanged under (Xhat, Y) -> (Xhat Q, rho(Q, Y)) and under antipodal pair flips."""
    worst = 0.0
    for _ in range(samples):
        m = random_measurement_set(rng)
        Xhat = random_pose(rng)
        Q = random_pose(rng)

        moved = m.with_measured([group_action_rho(Q, y) for y in m.measurements()])
        delta = innovation_fn(Xhat, m).value.as_vector()
        delta_moved = innovation_fn(Xhat.compose(Q), moved).value.as_vector()
        worst = max(worst, float(np.max(np.abs(delta - delta_moved))))
        worst = max(worst, abs(cost(Xhat, m) - cost(Xhat.compose(Q), moved)))

        # flipping both representatives of one pair describes the same elements
        i = int(rng.integers(len(m)))
        refs = m.references()
        measured = m.measurements()
        refs[i] = refs[i].negated()
        measured[i] = measured[i].negated()
        flipped = MeasurementSet.build(refs, measured, m.gain_vector)
        delta_flipped = innovation_fn(Xhat, flipped).value.as_vector()
        worst = max(worst, float(np.max(np.abs(delta - delta_flipped))))
        worst = max(worst, abs(cost(Xhat, m) - cost(Xhat, flipped)))

    return _result("equivariance", worst, EQUIVARIANCE_TOL, samples)


def _random_trajectory(rng: np.random.Generator) -> TrajectoryProfile:
    def sinusoid(amplitude_scale: float) -> SinusoidProfile:
        return SinusoidProfile(
            amplitude=tuple(rng.uniform(-amplitude_scale, amplitude_scale, 3)),
            frequency=tuple(rng.uniform(0.1, 1.5, 3)),
            phase=tuple(rng.uniform(0.0, 2.0 * np.pi, 3)),
        )

    return TrajectoryProfile(angular=sinusoid(0.5), linear=sinusoid(0.8))


def error_autonomy(
    rng: np.random.Generator,
    duration: float = 10.0,
    dt: float = 1e-3,
    innovation_fn: InnovationFn = innovation,
) -> dict:
    """Two runs with equal E(0) and references but different X(0) and inputs share E(t)."""
    base = without_bias(builtin_scenarios()["case1"]).replace(duration=duration, dt=dt)
    E0 = Pose(exp_so3([0.2, -0.3, 0.4]), [0.5, -0.4, 0.3])

    first = base.replace(
        name="autonomy_a", initial_estimate=E0.compose(base.initial_true_pose)
    )
    X2 = random_pose(rng, position_scale=2.0)
    second = base.replace(
        name="autonomy_b",
        trajectory=_random_trajectory(rng),
        initial_true_pose=X2,
        initial_estimate=E0.compose(X2),
    )

    E1 = run_scenario(first, innovation_fn).group_errors()
    E2 = run_scenario(second, innovation_fn).group_errors()
    worst = float(np.max(np.linalg.norm(E1 - E2, axis=(1, 2))))
    return _result("error_autonomy", worst, AUTONOMY_TOL, len(E1))


def lyapunov_identity(
    duration: float = 20.0, dt: float = 1e-3, innovation_fn: InnovationFn = innovation
) -> dict:
    """Mean |dV_b/dt + |Delta|^2| along a biased run with the projection-form bias law."""
    scenario = builtin_scenarios()["case1"].replace(
        name="lyapunov", duration=duration, dt=dt, bias_law=BiasLaw.PROPOSITION1
    )
    log = run_scenario(scenario, innovation_fn)
    V = log.column("lyapunov")
    delta_sq = log.column("innov_norm") ** 2

    rate = np.diff(V) / dt
    dissipation = 0.5 * (delta_sq[:-1] + delta_sq[1:])
    mean_residual = float(np.mean(np.abs(rate + dissipation)))
    return _result("lyapunov_identity", mean_residual, LYAPUNOV_TOL, len(rate))


def observability(rng: Optional[np.random.Generator] = None) -> dict:
    """Reference cases classify as cases 1/2/3 and pass the rank test; degenerate sets fail."""
    expected = {
        "case1": ObservabilityCase.CASE1,
        "case2": ObservabilityCase.CASE2,
        "case3": ObservabilityCase.CASE3,
    }
    failures = []
    for name, scenario in builtin_scenarios().items():
        refs = scenario.references()
        report = check_observability_a1(refs)
        if report.case is not expected[name]:
            failures.append(f"{name} classified as {report.case.value}")
        if not observability_matrices_a2(refs, scenario.gains).full_rank:
            failures.append(f"{name} fails the rank test")

    collinear = [embed_vector([0, 0, 1]), embed_vector([0, 0, -2])]
    if check_observability_a1(collinear).satisfied:
        failures.append("two collinear vectors accepted")
    if check_observability_a1([embed_point([1, 0, 0])]).satisfied:
        failures.append("single point accepted")
    directions = [embed_vector([1, 0, 0]), embed_vector([0, 1, 0]), embed_vector([0, 0, 1])]
    if observability_matrices_a2(directions, [2.0] * 3).full_rank:
        failures.append("all-direction set passes the rank test")

    return {
        "property": "observability",
        "success": not failures,
        "max_error": float(len(failures)),
        "tolerance": 0.0,
        "samples": 6,
        "failures": failures,
    }


def zero_cost_search(rng: np.random.Generator, samples: int = 100000) -> dict:
    """Random E away from the identity never reaches zero cost on the reference geometries."""
    rotations = Rotation.random(samples, random_state=rng).as_matrix()
    positions = 2.0 * rng.normal(size=(samples, 3))
    distance = np.sqrt(
        np.sum((rotations - np.eye(3)) ** 2, axis=(1, 2)) + np.sum(positions**2, axis=1)
    )
    away = distance > IDENTITY_DISTANCE

    lowest = np.inf
    for scenario in builtin_scenarios().values():
        Y = np.array([y.rep for y in scenario.references()])  # (N, 4)
        k = np.array(scenario.gains)
        # E y = [R y_ + y4 p ; y4]
        top = np.einsum("sij,nj->sni", rotations, Y[:, :3]) + Y[None, :, 3:4] * positions[:, None, :]
        Ey = np.concatenate([top, np.broadcast_to(Y[None, :, 3:4], top.shape[:2] + (1,))], axis=2)
        e = Ey / np.linalg.norm(Ey, axis=2, keepdims=True)
        costs = 0.5 * np.sum(k[None, :] * np.sum((e - Y[None]) ** 2, axis=2), axis=1)
        lowest = min(lowest, float(np.min(costs[away])) if np.any(away) else np.inf)

    # success means the lowest cost away from I stays above the tolerance
    success = bool(lowest > ZERO_COST_TOL)
    return {
        "property": "zero_cost_search",
        "success": success,
        "max_error": 0.0 if success else 1.0,
        "tolerance": ZERO_COST_TOL,
        "samples": samples,
        "lowest_cost": lowest,
    }


if __name__ == "__main__":
    print("Property suites module loaded successfully")
    print(gradient_oracle(np.random.default_rng(0), samples=20))
