"""
Closed-loop simulation: ground-truth kinematics, biased velocity sensing,
synthetic RP^3 measurements, the observer in the loop and error metrics
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from estimators.bias_observer import (
    AntiWindupConfig,
    BiasLaw,
    BiasState,
    ConfigurationError,
    lyapunov_from_cost,
    step_biased,
)
from estimators.observer import (
    InnovationFn,
    ObservabilityReport,
    ObserverState,
    check_observability_a1,
    cost,
    cost_and_innovation,
    group_error,
    innovation,
    reference_set,
)
from geometry.liealg import Pose, Twist, exp_se3, exp_so3, log_so3
from geometry.projective import (
    ProjectivePoint,
    embed_point,
    embed_vector,
    measure_all,
    measure_matrix,
)

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DEFAULT_DURATION = 60.0

# Steps between re-orthonormalizations and between full pose validity checks
RENORMALIZE_INTERVAL = 100
VALIDITY_CHECK_INTERVAL = 100

# Constant velocity biases and observer parameters of the reference runs
REFERENCE_BIAS_OMEGA = (-0.02, 0.02, 0.01)  # rad/s
REFERENCE_BIAS_V = (0.2, -0.1, 0.1)  # m/s
REFERENCE_GAIN = 2.0
REFERENCE_ANTIWINDUP = AntiWindupConfig(
    k_b=1.0, kappa_angular=10.0, kappa_linear=10.0, delta_angular=0.052, delta_linear=0.346
)

DEFAULT_TRUE_ROTATION = (0.0, 0.0, math.pi / 6.0)  # rotation vector, 30 deg about z
DEFAULT_TRUE_POSITION = (1.0, -1.0, 0.5)


class SimulationError(RuntimeError):
    """Raised when the closed loop produces a non-finite state."""

    def __init__(self, message: str, timestamp: float):
        super().__init__(f"{message} (t = {timestamp:.6f} s)")
        self.timestamp = timestamp


class FeatureKind(str, Enum):
    POINT = "point"
    VECTOR = "vector"


@dataclass(frozen=True, eq=False)
class ReferenceFeature:
    kind: FeatureKind
    coordinates: Tuple[float, float, float]

    def to_projective(self) -> ProjectivePoint:
        if self.kind is FeatureKind.POINT:
            return embed_point(self.coordinates)
        return embed_vector(self.coordinates)


@dataclass(frozen=True, eq=False)
class SinusoidProfile:
    """Per-axis a_k sin(w_k t + phi_k)."""

    amplitude: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    frequency: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    phase: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def value(self, t: float) -> np.ndarray:
        a = np.asarray(self.amplitude, dtype=float)
        w = np.asarray(self.frequency, dtype=float)
        phi = np.asarray(self.phase, dtype=float)
        return a * np.sin(w * t + phi)

    def table(self, t: np.ndarray) -> np.ndarray:
        """Values at every time in t as an (n, 3) array."""
        t = np.asarray(t, dtype=float).reshape(-1, 1)
        w = np.asarray(self.frequency, dtype=float)
        phi = np.asarray(self.phase, dtype=float)
        return np.asarray(self.amplitude, dtype=float) * np.sin(t * w + phi)

    def bound(self) -> float:
        return float(np.sum(np.abs(self.amplitude)))


@dataclass(frozen=True, eq=False)
class TrajectoryProfile:
    angular: SinusoidProfile
    linear: SinusoidProfile


DEFAULT_TRAJECTORY = TrajectoryProfile(
    angular=SinusoidProfile(
        amplitude=(0.3, 0.2, 0.25),
        frequency=(0.7, 0.5, 0.9),
        phase=(0.0, math.pi / 3.0, math.pi / 6.0),
    ),
    linear=SinusoidProfile(
        amplitude=(0.5, 0.4, 0.3),
        frequency=(0.4, 0.6, 0.8),
        phase=(0.0, math.pi / 4.0, math.pi / 2.0),
    ),
)


def _default_true_pose() -> Pose:
    return Pose(exp_so3(DEFAULT_TRUE_ROTATION), DEFAULT_TRUE_POSITION)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete description of one closed-loop run."""

    name: str
    reference_geometry: Tuple[ReferenceFeature, ...]
    gains: Tuple[float, ...]
    true_bias: BiasState = field(default_factory=BiasState.zero)
    antiwindup: AntiWindupConfig = REFERENCE_ANTIWINDUP
    trajectory: TrajectoryProfile = DEFAULT_TRAJECTORY
    initial_true_pose: Pose = field(default_factory=_default_true_pose)
    initial_estimate: Pose = field(default_factory=Pose.identity)
    initial_bias_estimate: BiasState = field(default_factory=BiasState.zero)
    dt: float = DEFAULT_DT
    duration: float = DEFAULT_DURATION
    noise_std: Optional[Tuple[float, float]] = None
    rng_seed: int = 0
    bias_law: BiasLaw = BiasLaw.ANTIWINDUP

    def references(self) -> List[ProjectivePoint]:
        return [feature.to_projective() for feature in self.reference_geometry]

    def step_count(self) -> int:
        return int(math.floor(self.duration / self.dt + 1e-9))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def validate(self) -> ObservabilityReport:
        """Check the scenario invariants; returns the observability report of its geometry."""
        if not self.dt > 0.0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.duration > self.dt:
            raise ConfigurationError(f"duration ({self.duration}) must exceed dt ({self.dt})")
        if not self.reference_geometry:
            raise ConfigurationError("Scenario has no reference geometry")
        if len(self.gains) != len(self.reference_geometry):
            raise ConfigurationError(
                f"{len(self.reference_geometry)} references but {len(self.gains)} gains"
            )
        if any(not k > 0.0 for k in self.gains):
            raise ConfigurationError(f"Gains must be positive, got {list(self.gains)}")
        if self.noise_std is not None and any(s < 0.0 for s in self.noise_std):
            raise ConfigurationError(f"Noise standard deviations must be >= 0, got {self.noise_std}")

        report = check_observability_a1(self.references())
        if not report.satisfied:
            logger.warning(
                f"Scenario '{self.name}': reference geometry does not satisfy any "
                "observability case; running in degraded mode"
            )
        if self.bias_law is BiasLaw.ANTIWINDUP:
            cfg = self.antiwindup
            if np.linalg.norm(self.true_bias.angular) > cfg.delta_angular:
                logger.warning(f"Scenario '{self.name}': |b_Omega| exceeds delta_Omega")
            if np.linalg.norm(self.true_bias.linear) > cfg.delta_linear:
                logger.warning(f"Scenario '{self.name}': |b_V| exceeds delta_V")
        return report


LOG_METRICS = (
    "rot_err_rad",
    "pos_err_m",
    "bias_omega_err",
    "bias_v_err",
    "cost",
    "lyapunov",
    "innov_norm",
    "group_pos_err_m",
)


@dataclass(eq=False)
class TrajectoryLog:
    """Column store of a run, one row per time sample."""

    scenario_name: str
    t: np.ndarray
    true_poses: np.ndarray  # (n, 12) row-major R then p
    estimated_poses: np.ndarray  # (n, 12)
    bias_estimates: np.ndarray  # (n, 6) Omega then V
    metrics: Dict[str, np.ndarray]

    @classmethod
    def allocate(cls, scenario_name: str, rows: int) -> "TrajectoryLog":
        return cls(
            scenario_name,
            np.zeros(rows),
            np.zeros((rows, 12)),
            np.zeros((rows, 12)),
            np.zeros((rows, 6)),
            {name: np.zeros(rows) for name in LOG_METRICS},
        )

    def __len__(self) -> int:
        return len(self.t)

    def column(self, name: str) -> np.ndarray:
        return self.metrics[name]

    def true_pose(self, index: int) -> Pose:
        return Pose.from_vector(self.true_poses[index])

    def estimated_pose(self, index: int) -> Pose:
        return Pose.from_vector(self.estimated_poses[index])

    def group_errors(self) -> np.ndarray:
        """Stack of E(t) = Xhat(t) X(t)^-1 as (n, 4, 4)."""
        return np.array(
            [
                group_error(self.estimated_pose(i), self.true_pose(i)).matrix()
                for i in range(len(self))
            ]
        )

    def attitude_angles(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-angle rotation angle of the true and estimated attitude."""
        true_angles = np.array(
            [np.linalg.norm(log_so3(row[:9].reshape(3, 3))) for row in self.true_poses]
        )
        estimated_angles = np.array(
            [np.linalg.norm(log_so3(row[:9].reshape(3, 3))) for row in self.estimated_poses]
        )
        return true_angles, estimated_angles

    def convergence_time(self, name: str, threshold: float) -> Optional[float]:
        """First time after which the column stays at or below threshold (None if never)."""
        above = np.nonzero(self.metrics[name] > threshold)[0]
        if above.size == 0:
            return float(self.t[0])
        last = int(above[-1])
        if last + 1 >= len(self):
            return None
        return float(self.t[last + 1])

    def final_summary(self) -> Dict[str, float]:
        summary = {"t": float(self.t[-1])}
        summary.update({name: float(values[-1]) for name, values in self.metrics.items()})
        return summary


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def twist_profile(params: TrajectoryProfile, t: float) -> Twist:
    """Group velocity A(t) of the combined sinusoidal inputs."""
    return Twist(params.angular.value(t), params.linear.value(t))


def velocity_table(params: TrajectoryProfile, t: np.ndarray) -> np.ndarray:
    """A(t) for every time in t, one (Omega, V) row of 6 numbers per sample."""
    return np.hstack([params.angular.table(t), params.linear.table(t)])


def velocity_noise(rng: np.random.Generator, noise_std: Tuple[float, float], rows: int) -> np.ndarray:
    """Gaussian velocity noise, (rows, 6) with std omega_std on Omega and v_std on V."""
    omega_std, v_std = noise_std
    return np.hstack([rng.normal(0.0, omega_std, (rows, 3)), rng.normal(0.0, v_std, (rows, 3))])


def integrate_true_state(X: Pose, A: Twist, dt: float, renormalize: bool = True) -> Pose:
    """X+ = X exp(dt A), exact for A frozen over the step."""
    out = X.compose(exp_se3(A * dt))
    return out.renormalized() if renormalize else out


def sensor_sample(
    X: Pose,
    A: Twist,
    s: Scenario,
    rng: Optional[np.random.Generator] = None,
    references: Optional[Sequence[ProjectivePoint]] = None,
) -> Tuple[Twist, List[ProjectivePoint]]:
    """Biased velocity A_y = A + b_A (+ optional Gaussian noise) and outputs y_i = h(X, yref_i).

    A scenario with noise_std set needs an rng.
    """
    A_y = A + s.true_bias.as_twist()
    if s.noise_std is not None:
        if rng is None:
            raise ConfigurationError(f"Scenario '{s.name}' has velocity noise but no rng was given")
        A_y = A_y + Twist.from_vector(velocity_noise(rng, s.noise_std, 1)[0])
    if references is None:
        references = s.references()
    return A_y, measure_all(X, references)


def rotation_angle_error(R_tilde: np.ndarray) -> float:
    """Rotation angle of R_tilde = Rhat R^T, in [0, pi].

    Same value as arccos((tr R_tilde - 1) / 2), computed with atan2 so that
    angles near zero keep full precision.
    """
    R_tilde = np.asarray(R_tilde, dtype=float)
    cos_theta = (np.trace(R_tilde) - 1.0) / 2.0
    axial = np.array(
        [R_tilde[2, 1] - R_tilde[1, 2], R_tilde[0, 2] - R_tilde[2, 0], R_tilde[1, 0] - R_tilde[0, 1]]
    )
    sin_theta = 0.5 * float(np.linalg.norm(axial))
    return float(math.atan2(sin_theta, min(1.0, max(-1.0, cos_theta))))


def position_error(Xhat: Pose, X: Pose) -> float:
    """|phat - p| (meters)."""
    return float(np.linalg.norm(Xhat.position - X.position))


def group_position_error(E: Pose) -> float:
    """|p_e| with p_e = phat - Rhat R^T p, the translation of the group error."""
    return float(np.linalg.norm(E.position))


def bias_error_norms(true_bias: BiasState, estimate: BiasState) -> Tuple[float, float]:
    """(|b_Omega - bhat_Omega|, |b_V - bhat_V|)."""
    b_tilde = true_bias - estimate
    return (
        math.sqrt(float(b_tilde.angular @ b_tilde.angular)),
        math.sqrt(float(b_tilde.linear @ b_tilde.linear)),
    )


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------


def run_scenario(s: Scenario, innovation_fn: Optional[InnovationFn] = None) -> TrajectoryLog:
    """Run the observer against the simulated truth and log every sample.

    innovation_fn replaces the observer innovation (the cost column is
    always the true output cost).
    """
    s.validate()
    ref_set = reference_set(s.references(), s.gains)
    fused = innovation_fn is None or innovation_fn is innovation
    rng = np.random.default_rng(s.rng_seed)
    steps = s.step_count()
    log = TrajectoryLog.allocate(s.name, steps + 1)
    metrics = log.metrics
    k_b = s.antiwindup.k_b

    logger.info(
        f"Running scenario '{s.name}': {steps} steps of {s.dt} s, bias law {s.bias_law.value}"
    )

    log.t[:] = np.arange(steps + 1) * s.dt
    velocities = velocity_table(s.trajectory, log.t)
    measured = velocities + s.true_bias.as_vector()
    if s.noise_std is not None:
        measured += velocity_noise(rng, s.noise_std, steps + 1)

    X = s.initial_true_pose
    state = ObserverState(s.initial_estimate)
    b = s.initial_bias_estimate

    for k in range(steps + 1):
        Xhat = state.estimate
        m = ref_set.with_measured_matrix(measure_matrix(X, ref_set.reference_matrix))
        if fused:
            output_cost, delta = cost_and_innovation(Xhat, m)
        else:
            output_cost, delta = cost(Xhat, m), innovation_fn(Xhat, m)

        E = group_error(Xhat, X)
        b_tilde = s.true_bias - b

        log.true_poses[k, :9] = X.rotation.reshape(9)
        log.true_poses[k, 9:] = X.position
        log.estimated_poses[k, :9] = Xhat.rotation.reshape(9)
        log.estimated_poses[k, 9:] = Xhat.position
        log.bias_estimates[k, :3] = b.angular
        log.bias_estimates[k, 3:] = b.linear
        metrics["rot_err_rad"][k] = rotation_angle_error(E.rotation)
        metrics["pos_err_m"][k] = position_error(Xhat, X)
        metrics["bias_omega_err"][k], metrics["bias_v_err"][k] = bias_error_norms(s.true_bias, b)
        metrics["cost"][k] = output_cost
        metrics["lyapunov"][k] = lyapunov_from_cost(output_cost, b_tilde, k_b)
        metrics["innov_norm"][k] = delta.norm()
        metrics["group_pos_err_m"][k] = group_position_error(E)

        healthy = math.isfinite(output_cost) and delta.is_finite() and b.is_finite()
        if healthy and (k % VALIDITY_CHECK_INTERVAL == 0 or k == steps):
            healthy = Xhat.is_valid(1e-6)
        if not healthy:
            logger.error(f"Scenario '{s.name}' diverged at t = {log.t[k]:.6f} s")
            raise SimulationError("Non-finite observer state", float(log.t[k]))

        if k == steps:
            break

        renormalize = (k + 1) % RENORMALIZE_INTERVAL == 0
        A = Twist.adopt(velocities[k, :3], velocities[k, 3:])
        A_y = Twist.adopt(measured[k, :3], measured[k, 3:])
        state, b = step_biased(
            state,
            b,
            A_y,
            m,
            s.antiwindup,
            s.dt,
            s.bias_law,
            innovation_fn or innovation,
            delta=delta,
            renormalize=renormalize,
        )
        X = integrate_true_state(X, A, s.dt, renormalize)

    logger.info(
        f"Scenario '{s.name}' finished: rotation error {metrics['rot_err_rad'][-1]:.3e} rad, "
        f"position error {metrics['pos_err_m'][-1]:.3e} m"
    )
    return log


# ---------------------------------------------------------------------------
# Reference scenarios
# ---------------------------------------------------------------------------


def _features(*items: Tuple[str, Sequence[float]]) -> Tuple[ReferenceFeature, ...]:
    return tuple(ReferenceFeature(FeatureKind(kind), tuple(float(c) for c in coords)) for kind, coords in items)


SQRT3_2 = math.sqrt(3.0) / 2.0

CASE_GEOMETRY = {
    # two directions + one feature point
    "case1": _features(("vector", (0, 0, 1)), ("vector", (SQRT3_2, 0.5, 0)), ("point", (1, 0, 0))),
    # one direction + two feature points
    "case2": _features(("vector", (0, 0, 1)), ("point", (1, 0, 0)), ("point", (-0.5, SQRT3_2, 0))),
    # three feature points
    "case3": _features(
        ("point", (1, 0, 0)), ("point", (-0.5, SQRT3_2, 0)), ("point", (-0.5, -SQRT3_2, 0))
    ),
}


def builtin_scenarios() -> Dict[str, Scenario]:
    """The three reference cases with their biases and gains."""
    reference_bias = BiasState(REFERENCE_BIAS_OMEGA, REFERENCE_BIAS_V)
    return {
        name: Scenario(
            name=name,
            reference_geometry=geometry,
            gains=(REFERENCE_GAIN,) * len(geometry),
            true_bias=reference_bias,
            antiwindup=REFERENCE_ANTIWINDUP,
        )
        for name, geometry in CASE_GEOMETRY.items()
    }


def without_bias(s: Scenario) -> Scenario:
    """Bias-free variant: exact velocity measurements and no bias estimator."""
    return s.replace(
        true_bias=BiasState.zero(),
        initial_bias_estimate=BiasState.zero(),
        bias_law=BiasLaw.NONE,
    )


if __name__ == "__main__":
    print("Simulator module loaded successfully")
    for name, scenario in builtin_scenarios().items():
        print(name, check_observability_a1(scenario.references()).case.value)
