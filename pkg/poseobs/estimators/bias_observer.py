"""
Velocity-bias compensation: bias laws, anti-windup integrator, Lyapunov
function and the full-rank conditions on G and H
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from estimators.observer import (
    Innovation,
    InnovationFn,
    ObserverState,
    correction_matrix,
    cost,
    innovation,
    innovation_matrix_form,
    propagate,
    reference_set,
)
from geometry.liealg import Pose, Twist, adjoint, hat3, hat_se3, pose_inverse, project_se3
from geometry.projective import MeasurementSet, ProjectivePoint

logger = logging.getLogger(__name__)

# G and H count as full rank below this condition number
MAX_CONDITION_NUMBER = 1e9


class ConfigurationError(ValueError):
    """Raised for invalid observer parameters."""


class BiasLaw(str, Enum):
    NONE = "none"
    PROPOSITION1 = "proposition1"
    DECOMPOSED = "decomposed"
    ANTIWINDUP = "antiwindup"


@dataclass(frozen=True, eq=False)
class BiasState:
    """Bias estimate (or its derivative) split into angular and linear parts."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", np.asarray(self.angular, dtype=float).reshape(3))
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3))

    @classmethod
    def adopt(cls, angular: np.ndarray, linear: np.ndarray) -> "BiasState":
        state = object.__new__(cls)
        object.__setattr__(state, "angular", angular)
        object.__setattr__(state, "linear", linear)
        return state

    @classmethod
    def zero(cls) -> "BiasState":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_twist(cls, t: Twist) -> "BiasState":
        return cls(np.array(t.angular), np.array(t.linear))

    def as_twist(self) -> Twist:
        return Twist(self.angular, self.linear)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def norm(self) -> float:
        """Frobenius norm of the se(3) matrix of the bias."""
        return math.sqrt(
            2.0 * float(self.angular @ self.angular) + float(self.linear @ self.linear)
        )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.angular).all() and np.isfinite(self.linear).all())

    def __add__(self, other: "BiasState") -> "BiasState":
        return BiasState.adopt(self.angular + other.angular, self.linear + other.linear)

    def __sub__(self, other: "BiasState") -> "BiasState":
        return BiasState.adopt(self.angular - other.angular, self.linear - other.linear)

    def __mul__(self, scalar: float) -> "BiasState":
        return BiasState.adopt(scalar * self.angular, scalar * self.linear)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"BiasState(angular={self.angular.tolist()}, linear={self.linear.tolist()})"


@dataclass(frozen=True)
class AntiWindupConfig:
    k_b: float = 1.0
    kappa_angular: float = 10.0
    kappa_linear: float = 10.0
    delta_angular: float = 0.052
    delta_linear: float = 0.346

    def __post_init__(self):
        for name in ("k_b", "kappa_angular", "kappa_linear", "delta_angular", "delta_linear"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigurationError(f"{name} must be positive, got {value}")


@dataclass(frozen=True, eq=False)
class ObservabilityMatrices:
    G: np.ndarray
    H: Optional[np.ndarray]
    rank_G: int
    rank_H: int
    cond_G: float
    cond_H: float
    full_rank: bool
    diagnostic: str = ""


def sat(x, delta: float) -> np.ndarray:
    """sat_delta(x) = x min(1, delta/|x|)."""
    if not delta > 0.0:
        raise ConfigurationError(f"Saturation radius must be positive, got {delta}")
    x = np.asarray(x, dtype=float)
    norm = float(np.linalg.norm(x))
    if norm <= delta:
        return np.array(x)
    return x * (delta / norm)


def bias_derivative_projection(Xhat: Pose, m: MeasurementSet, k_b: float) -> Twist:
    """d/dt bhat_A = -k_b P(Xhat^T M Xhat^-T) with M the correction matrix."""
    X = Xhat.matrix()
    X_inv_T = pose_inverse(Xhat).matrix().T
    return project_se3(X.T @ correction_matrix(Xhat, m) @ X_inv_T) * (-k_b)


def _decomposed(Xhat: Pose, delta: Innovation, k_b: float) -> BiasState:
    Rt = Xhat.rotation.T
    omega_rate = k_b * (Rt @ (delta.omega + 0.5 * np.cross(delta.linear, Xhat.position)))
    linear_rate = k_b * (Rt @ delta.linear)
    return BiasState.adopt(omega_rate, linear_rate)


def bias_derivative_decomposed(Xhat: Pose, m: MeasurementSet, k_b: float) -> BiasState:
    """Component form: (k_b R^T (Omega_D + 1/2 V_D x p), k_b R^T V_D)."""
    return _decomposed(Xhat, innovation_matrix_form(Xhat, m), k_b)


def _leak(b: BiasState, cfg: AntiWindupConfig) -> BiasState:
    return BiasState.adopt(
        cfg.kappa_angular * (b.angular - sat(b.angular, cfg.delta_angular)),
        cfg.kappa_linear * (b.linear - sat(b.linear, cfg.delta_linear)),
    )


def bias_derivative_antiwindup(
    Xhat: Pose, m: MeasurementSet, b: BiasState, cfg: AntiWindupConfig
) -> BiasState:
    """Decomposed law minus the leak kappa (b - sat_delta(b)) on each part."""
    return bias_derivative_decomposed(Xhat, m, cfg.k_b) - _leak(b, cfg)


def bias_rate(
    law: BiasLaw,
    Xhat: Pose,
    m: MeasurementSet,
    b: BiasState,
    cfg: AntiWindupConfig,
    delta: Optional[Innovation] = None,
) -> BiasState:
    """Bias derivative for the selected law; `delta` reuses an already computed innovation."""
    if law is BiasLaw.NONE:
        return BiasState.zero()
    if law is BiasLaw.PROPOSITION1:
        return BiasState.from_twist(bias_derivative_projection(Xhat, m, cfg.k_b))
    if delta is None:
        delta = innovation_matrix_form(Xhat, m)
    rate = _decomposed(Xhat, delta, cfg.k_b)
    if law is BiasLaw.ANTIWINDUP:
        rate = rate - _leak(b, cfg)
    return rate


def step_biased(
    s: ObserverState,
    b: BiasState,
    A_measured: Twist,
    m: MeasurementSet,
    cfg: AntiWindupConfig,
    dt: float,
    law: BiasLaw = BiasLaw.ANTIWINDUP,
    innovation_fn: InnovationFn = innovation,
    delta: Optional[Innovation] = None,
    renormalize: bool = True,
) -> Tuple[ObserverState, BiasState]:
    """One step of the biased observer.

    Xhat+ = exp(-dt Delta) Xhat exp(dt (A_y - bhat)); bhat+ = bhat + dt * rate.
    Pass `delta` when the innovation at (Xhat, Y) is already known.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if delta is None:
        delta = innovation_fn(s.estimate, m)
    rate = bias_rate(law, s.estimate, m, b, cfg, delta)
    corrected = Twist.adopt(A_measured.angular - b.angular, A_measured.linear - b.linear)
    estimate = propagate(s.estimate, delta, corrected, dt, renormalize)
    return ObserverState(estimate), b + rate * dt


def lyapunov_value(
    E: Pose,
    b_tilde: BiasState,
    references: Sequence[ProjectivePoint],
    gains: Sequence[float],
    k_b: float,
) -> float:
    """V_b = sum_i k_i/2 |E y_i/|E y_i| - y_i|^2 + |b_tilde|^2 / (2 k_b)."""
    return lyapunov_from_set(E, b_tilde, reference_set(references, gains), k_b)


def lyapunov_from_set(E: Pose, b_tilde: BiasState, ref_set: MeasurementSet, k_b: float) -> float:
    """Same as lyapunov_value, for a prebuilt reference set (see reference_set)."""
    if not k_b > 0.0:
        raise ConfigurationError(f"k_b must be positive, got {k_b}")
    bias_norm = b_tilde.norm()
    return cost(E, ref_set) + bias_norm * bias_norm / (2.0 * k_b)


def lyapunov_from_cost(output_cost: float, b_tilde: BiasState, k_b: float) -> float:
    """V_b from an already evaluated output cost.

    With exact outputs C(E, Y_ref) equals C(Xhat, Y), so the observer cost
    can stand in for the group-error term.
    """
    if not k_b > 0.0:
        raise ConfigurationError(f"k_b must be positive, got {k_b}")
    bias_norm = b_tilde.norm()
    return output_cost + bias_norm * bias_norm / (2.0 * k_b)


def biased_error_derivative(
    E: Pose, Xhat: Pose, b_tilde: BiasState, references: MeasurementSet
) -> np.ndarray:
    """dE/dt = (Ad_Xhat b_tilde - Delta(E, Y_ref)) E."""
    drift = adjoint(Xhat, b_tilde.as_twist()) - innovation(E, references).value
    return hat_se3(drift) @ E.matrix()


def _condition_number(M: np.ndarray) -> float:
    singular_values = np.linalg.svd(M, compute_uv=False)
    if singular_values[-1] <= 0.0:
        return math.inf
    return float(singular_values[0] / singular_values[-1])


def observability_matrices_a2(
    references: Sequence[ProjectivePoint], gains: Sequence[float]
) -> ObservabilityMatrices:
    """G = sum k_i (y_i x)^2 and H = S G^-1 S - sum k_i y_i4^2 (I - y_i y_i^T)
    with S = sum k_i y_i4 (y_i x); full rank when both are well conditioned.
    """
    if not references:
        raise ValueError("Reference set must not be empty")
    if len(references) != len(gains):
        raise ValueError(f"{len(references)} references but {len(gains)} gains")

    G = np.zeros((3, 3))
    S = np.zeros((3, 3))
    T = np.zeros((3, 3))
    for y, k in zip(references, gains):
        u = y.underline
        U = hat3(u)
        G += k * (U @ U)
        S += k * y.w * U
        T += k * y.w * y.w * (np.eye(3) - np.outer(u, u))

    rank_G = int(np.linalg.matrix_rank(G))
    cond_G = _condition_number(G)
    if rank_G < 3 or not cond_G < MAX_CONDITION_NUMBER:
        diagnostic = f"G is singular (rank {rank_G}, cond {cond_G:.3e}); H is undefined"
        logger.info(diagnostic)
        return ObservabilityMatrices(G, None, rank_G, 0, cond_G, math.inf, False, diagnostic)

    H = S @ np.linalg.solve(G, S) - T
    rank_H = int(np.linalg.matrix_rank(H))
    cond_H = _condition_number(H)
    full_rank = rank_H == 3 and cond_H < MAX_CONDITION_NUMBER
    diagnostic = "" if full_rank else f"H is rank deficient (rank {rank_H}, cond {cond_H:.3e})"
    if diagnostic:
        logger.info(diagnostic)
    return ObservabilityMatrices(G, H, rank_G, rank_H, cond_G, cond_H, full_rank, diagnostic)


if __name__ == "__main__":
    print("Bias observer module loaded successfully")
    print(sat(np.array([3.0, 0.0, 0.0]), 1.0))
