"""
Gradient-like pose observer on SE(3) driven by RP^3 outputs

The innovation is the right-invariant Riemannian gradient of the cost
C(Xhat, Y) = sum_i k_i/2 |Xhat y_i/|Xhat y_i| - yref_i|^2, which makes the
group error E = Xhat X^-1 evolve autonomously.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from geometry.liealg import Pose, Twist, exp_se3, hat_se3, pose_inverse, project_se3
from geometry.projective import POINT_CLASS_TOL, MeasurementSet, ProjectivePoint

logger = logging.getLogger(__name__)

# Cross-product norm above which two vectors count as non-collinear
COLLINEARITY_TOL = 1e-9

# Margins below this are reported as near-degenerate
NEAR_DEGENERATE_MARGIN = 1e-4

DEFAULT_DT = 1e-3


@dataclass(frozen=True)
class ObserverState:
    estimate: Pose


@dataclass(frozen=True)
class Innovation:
    """Delta in se(3); angular block Omega_Delta, linear block V_Delta."""

    value: Twist

    @property
    def omega(self) -> np.ndarray:
        return self.value.angular

    @property
    def linear(self) -> np.ndarray:
        return self.value.linear

    def norm(self) -> float:
        return self.value.norm()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.value.angular).all() and np.isfinite(self.value.linear).all())


InnovationFn = Callable[[Pose, MeasurementSet], Innovation]


def output_errors(Xhat: Pose, m: MeasurementSet) -> np.ndarray:
    """Rows e_i = Xhat y_i / |Xhat y_i| stacked into an (N, 4) array."""
    Y = m.measured_matrix
    raw = np.empty(Y.shape)
    raw[:, :3] = Y[:, :3] @ Xhat.rotation.T + Y[:, 3:] * Xhat.position
    raw[:, 3] = Y[:, 3]
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def cost(Xhat: Pose, m: MeasurementSet) -> float:
    """C(Xhat, Y) = sum_i k_i/2 |e_i - yref_i|^2."""
    diff = output_errors(Xhat, m) - m.reference_matrix
    return float(0.5 * np.sum(m.gain_vector * np.sum(diff * diff, axis=1)))


def correction_matrix(Xhat: Pose, m: MeasurementSet) -> np.ndarray:
    """sum_i k_i (I4 - e_i e_i^T) yref_i e_i^T, before projection onto se(3)."""
    e = output_errors(Xhat, m)
    yref = m.reference_matrix
    alignment = np.sum(e * yref, axis=1)
    tangent = yref - alignment[:, None] * e
    return (m.gain_vector[:, None] * tangent).T @ e


def innovation(Xhat: Pose, m: MeasurementSet) -> Innovation:
    """Delta = -P(sum_i k_i (I4 - e_i e_i^T) yref_i e_i^T)."""
    return Innovation(-project_se3(correction_matrix(Xhat, m)))


def cost_and_innovation(Xhat: Pose, m: MeasurementSet) -> Tuple[float, Innovation]:
    """C(Xhat, Y) and Delta(Xhat, Y) from one pass over the output errors."""
    e = output_errors(Xhat, m)
    yref = m.reference_matrix
    k = m.gain_vector
    diff = e - yref
    c = float(0.5 * np.sum(k * np.sum(diff * diff, axis=1)))
    alignment = np.sum(e * yref, axis=1)
    tangent = yref - alignment[:, None] * e
    return c, Innovation(-project_se3((k[:, None] * tangent).T @ e))


def innovation_matrix_form(Xhat: Pose, m: MeasurementSet) -> Innovation:
    """Block form of the same innovation.

    Omega_Delta = -1/2 sum_i k_i (e_i x yref_i)   (underlined parts)
    V_Delta     =  sum_i k_i e_i4 ((e_i . yref_i) e_i - yref_i)
    """
    e = output_errors(Xhat, m)
    yref = m.reference_matrix
    k = m.gain_vector
    alignment = np.sum(e * yref, axis=1)
    omega = -0.5 * np.sum(k[:, None] * np.cross(e[:, :3], yref[:, :3]), axis=0)
    linear = np.sum(
        (k * e[:, 3])[:, None] * (alignment[:, None] * e[:, :3] - yref[:, :3]), axis=0
    )
    return Innovation(Twist(omega, linear))


def observer_derivative(
    s: ObserverState,
    A: Twist,
    m: MeasurementSet,
    innovation_fn: InnovationFn = innovation,
) -> np.ndarray:
    """Tangent vector Xhat A - Delta(Xhat, Y) Xhat at Xhat (4x4)."""
    X = s.estimate.matrix()
    delta = innovation_fn(s.estimate, m)
    return X @ hat_se3(A) - hat_se3(delta.value) @ X


def propagate(
    Xhat: Pose, delta: Innovation, velocity: Twist, dt: float, renormalize: bool = True
) -> Pose:
    """Lie-group splitting Xhat+ = exp(-dt Delta) Xhat exp(dt velocity).

    With renormalize=False the drift check is left to the caller.
    """
    left = exp_se3(delta.value * (-dt))
    right = exp_se3(velocity * dt)
    out = left.compose(Xhat).compose(right)
    return out.renormalized() if renormalize else out


def step(
    s: ObserverState,
    A: Twist,
    m: MeasurementSet,
    dt: float = DEFAULT_DT,
    innovation_fn: InnovationFn = innovation,
) -> ObserverState:
    """Advance the observer by dt with Delta frozen at the step start."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    delta = innovation_fn(s.estimate, m)
    return ObserverState(propagate(s.estimate, delta, A, dt))


def group_error(Xhat: Pose, X: Pose) -> Pose:
    """E = Xhat X^-1."""
    return Xhat.compose(pose_inverse(X))


def reference_set(references: Sequence[ProjectivePoint], gains: Sequence[float]) -> MeasurementSet:
    """Measurement set whose measurements equal the references (the E-frame view)."""
    return MeasurementSet.build(references, references, gains)


def error_derivative(E: Pose, references: MeasurementSet) -> np.ndarray:
    """Autonomous error dynamics dE/dt = -Delta(E, Y_ref) E.

    `references` carries the reference elements in its measured slots
    (see reference_set).
    """
    return -hat_se3(innovation(E, references).value) @ E.matrix()


# ---------------------------------------------------------------------------
# Observability (three geometric cases)
# ---------------------------------------------------------------------------


class ObservabilityCase(str, Enum):
    CASE1 = "Case 1"
    CASE2 = "Case 2"
    CASE3 = "Case 3"
    NOT_SATISFIED = "NotSatisfied"


@dataclass(frozen=True)
class ObservabilityReport:
    case: ObservabilityCase
    margin: float
    warning: Optional[str] = None

    @property
    def satisfied(self) -> bool:
        return self.case is not ObservabilityCase.NOT_SATISFIED


def _cross_norm(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.cross(a, b)))


def _resultant(y1: ProjectivePoint, y2: ProjectivePoint) -> np.ndarray:
    # v_12 := y2_4 * underline(y1) - y1_4 * underline(y2)
    return y2.w * y1.underline - y1.w * y2.underline


def _case1_margin(directions: List[ProjectivePoint], points: List[ProjectivePoint]) -> float:
    if not points:
        return 0.0
    return max(
        (_cross_norm(a.underline, b.underline) for a, b in itertools.combinations(directions, 2)),
        default=0.0,
    )


def _case2_margin(directions: List[ProjectivePoint], points: List[ProjectivePoint]) -> float:
    best = 0.0
    for p1, p2 in itertools.combinations(points, 2):
        v12 = _resultant(p1, p2)
        for d in directions:
            best = max(best, _cross_norm(d.underline, v12))
    return best


def _case3_margin(points: List[ProjectivePoint]) -> float:
    best = 0.0
    for p1, p2, p3 in itertools.combinations(points, 3):
        v12 = _resultant(p1, p2)
        v23 = _resultant(p2, p3)
        v31 = _resultant(p3, p1)
        best = max(best, _cross_norm(v12, v23), _cross_norm(v23, v31), _cross_norm(v31, v12))
    return best


def check_observability_a1(refs: Sequence[ProjectivePoint]) -> ObservabilityReport:
    """Classify a reference set against the three observability cases.

    Cases are tried in order 1, 2, 3 and the first satisfied one is reported
    together with its margin (largest relevant cross-product norm).
    """
    if not refs:
        raise ValueError("Reference set must not be empty")

    directions = [y for y in refs if abs(y.w) <= POINT_CLASS_TOL]
    points = [y for y in refs if abs(y.w) > POINT_CLASS_TOL]

    candidates = [
        (ObservabilityCase.CASE1, _case1_margin(directions, points)),
        (ObservabilityCase.CASE2, _case2_margin(directions, points)),
        (ObservabilityCase.CASE3, _case3_margin(points)),
    ]
    for case, margin in candidates:
        if margin > COLLINEARITY_TOL:
            warning = None
            if margin < NEAR_DEGENERATE_MARGIN:
                warning = f"{case.value} holds with a small margin ({margin:.3e})"
                logger.warning(f"Near-degenerate reference geometry: {warning}")
            return ObservabilityReport(case, margin, warning)

    logger.info(
        f"Observability not satisfied ({len(directions)} directions, {len(points)} points)"
    )
    return ObservabilityReport(ObservabilityCase.NOT_SATISFIED, 0.0)


if __name__ == "__main__":
    from geometry.projective import embed_point, embed_vector

    print("Observer module loaded successfully")
    refs = [embed_vector([0, 0, 1]), embed_vector([3**0.5 / 2, 0.5, 0]), embed_point([1, 0, 0])]
    print(check_observability_a1(refs))
