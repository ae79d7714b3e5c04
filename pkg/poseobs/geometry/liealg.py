"""
Closed-form linear algebra for SO(3), SE(3) and se(3)

Poses are stored as (R, p) pairs and twists as (angular, linear) pairs; the
4x4 homogeneous forms are materialized on demand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import polar

logger = logging.getLogger(__name__)

# Below this angle the Rodrigues / Jacobian coefficients use Taylor terms
SMALL_ANGLE = 1e-7

# Tolerance for membership tests (antisymmetry, se(3) shape, orthonormality)
MEMBERSHIP_TOL = 1e-9

# Orthonormality drift that triggers re-orthonormalization
ORTHO_DRIFT_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""


def _vec3(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise GeometryError(f"Expected a 3-vector, got shape {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def _seal(arr: np.ndarray) -> np.ndarray:
    # Freezes a freshly computed array in place; no copy, no shape check
    arr.setflags(write=False)
    return arr


_I3 = _frozen(np.eye(3))
_BOTTOM_ROW = _frozen(np.array([0.0, 0.0, 0.0, 1.0]))


@dataclass(frozen=True, eq=False)
class Twist:
    """Element of se(3) as an (angular, linear) velocity pair."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _frozen(_vec3(self.angular)))
        object.__setattr__(self, "linear", _frozen(_vec3(self.linear)))

    @classmethod
    def adopt(cls, angular: np.ndarray, linear: np.ndarray) -> "Twist":
        """Adopt two freshly computed float 3-vectors without copying them."""
        twist = object.__new__(cls)
        object.__setattr__(twist, "angular", _seal(angular))
        object.__setattr__(twist, "linear", _seal(linear))
        return twist

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, values: Sequence[float]) -> "Twist":
        """Build a twist from 6 numbers (Omega then V)."""
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.shape != (6,):
            raise GeometryError(f"Twist needs 6 numbers, got {arr.size}")
        return cls(arr[:3], arr[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def hat(self) -> np.ndarray:
        return hat_se3(self)

    def norm(self) -> float:
        """Frobenius norm of the se(3) matrix: sqrt(2|Omega|^2 + |V|^2)."""
        return math.sqrt(
            2.0 * float(self.angular @ self.angular) + float(self.linear @ self.linear)
        )

    def __add__(self, other: "Twist") -> "Twist":
        return Twist.adopt(self.angular + other.angular, self.linear + other.linear)

    def __sub__(self, other: "Twist") -> "Twist":
        return Twist.adopt(self.angular - other.angular, self.linear - other.linear)

    def __neg__(self) -> "Twist":
        return Twist.adopt(-self.angular, -self.linear)

    def __mul__(self, scalar: float) -> "Twist":
        return Twist.adopt(scalar * self.angular, scalar * self.linear)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"Twist(angular={self.angular.tolist()}, linear={self.linear.tolist()})"


@dataclass(frozen=True, eq=False)
class Pose:
    """Element of SE(3): rotation R (3x3) and position p (meters)."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float)
        if rotation.shape != (3, 3):
            raise GeometryError(f"Rotation must be 3x3, got shape {rotation.shape}")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "position", _frozen(_vec3(self.position)))

    @classmethod
    def adopt(cls, rotation: np.ndarray, position: np.ndarray) -> "Pose":
        """Adopt a freshly computed (R, p) without copying or checking it."""
        pose = object.__new__(cls)
        object.__setattr__(pose, "rotation", _seal(rotation))
        object.__setattr__(pose, "position", _seal(position))
        return pose

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, tol: float = MEMBERSHIP_TOL) -> "Pose":
        """Build a pose from a 4x4 homogeneous matrix, checking SE(3) membership."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (4, 4):
            raise GeometryError(f"Homogeneous matrix must be 4x4, got {matrix.shape}")
        if np.max(np.abs(matrix[3] - [0.0, 0.0, 0.0, 1.0])) > tol:
            raise GeometryError("Last row of a homogeneous matrix must be [0 0 0 1]")
        pose = cls(matrix[:3, :3], matrix[:3, 3])
        if not pose.is_valid(tol):
            raise GeometryError("Rotation block is not a proper rotation")
        return pose

    @classmethod
    def from_vector(cls, values: Sequence[float]) -> "Pose":
        """Build a pose from 12 numbers (row-major R then p)."""
        arr = np.asarray(values, dtype=float).reshape(-1)
        if arr.shape != (12,):
            raise GeometryError(f"Pose needs 12 numbers, got {arr.size}")
        return cls(arr[:9].reshape(3, 3), arr[9:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rotation.reshape(-1), self.position])

    def matrix(self) -> np.ndarray:
        out = np.empty((4, 4))
        out[:3, :3] = self.rotation
        out[:3, 3] = self.position
        out[3] = _BOTTOM_ROW
        return out

    def inverse(self) -> "Pose":
        return pose_inverse(self)

    def compose(self, other: "Pose") -> "Pose":
        return Pose.adopt(
            self.rotation @ other.rotation,
            self.rotation @ other.position + self.position,
        )

    __matmul__ = compose

    def orthonormality_drift(self) -> float:
        return float(np.max(np.abs(self.rotation.T @ self.rotation - _I3)))

    def is_valid(self, tol: float = MEMBERSHIP_TOL) -> bool:
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.position)):
            return False
        return (
            self.orthonormality_drift() <= tol
            and abs(np.linalg.det(self.rotation) - 1.0) <= tol
        )

    def renormalized(self, tol: float = ORTHO_DRIFT_TOL) -> "Pose":
        """Return the pose with R projected back onto SO(3) if it drifted past tol."""
        if self.orthonormality_drift() <= tol:
            return self
        logger.debug(f"Re-orthonormalizing rotation (drift {self.orthonormality_drift():.3e})")
        return Pose.adopt(orthonormalize(self.rotation), self.position.copy())

    def __repr__(self) -> str:
        return f"Pose(rotation={self.rotation.tolist()}, position={self.position.tolist()})"


# ---------------------------------------------------------------------------
# so(3)
# ---------------------------------------------------------------------------


def hat3(w) -> np.ndarray:
    """Skew-symmetric matrix w_x with (w_x) v = w x v."""
    x, y, z = _vec3(w)
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def vee3(M: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    """Inverse of hat3; rejects matrices that are not antisymmetric within tol."""
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3):
        raise GeometryError(f"vee3 expects a 3x3 matrix, got shape {M.shape}")
    if np.linalg.norm(M + M.T) > tol:
        raise GeometryError("vee3 input is not antisymmetric")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def _rodrigues_coefficients(theta: float):
    # A = sin(t)/t, B = (1-cos(t))/t^2, C = (t-sin(t))/t^3
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    s = math.sin(theta)
    half = math.sin(0.5 * theta)
    t2 = theta * theta
    # 1 - cos(t) written as 2 sin^2(t/2) to avoid cancellation
    return s / theta, 2.0 * half * half / t2, (theta - s) / (t2 * theta)


def exp_so3(w) -> np.ndarray:
    """Rotation matrix exp(w_x) by the Rodrigues formula."""
    w = _vec3(w)
    theta = math.sqrt(float(w @ w))
    a, b, _ = _rodrigues_coefficients(theta)
    W = hat3(w)
    return _I3 + a * W + b * (W @ W)


def left_jacobian_so3(w) -> np.ndarray:
    """Left Jacobian J(w) of SO(3), so that exp_se3 maps (w, v) to (exp(w), J(w) v)."""
    w = _vec3(w)
    theta = math.sqrt(float(w @ w))
    _, b, c = _rodrigues_coefficients(theta)
    W = hat3(w)
    return _I3 + b * W + c * (W @ W)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R (inverse of exp_so3 on angles in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos_theta = float(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    theta = math.acos(cos_theta)
    skew_part = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta < SMALL_ANGLE:
        return skew_part
    if math.pi - theta < 1e-6:
        # Axis from the symmetric part: R + I = 2 a a^T at theta = pi
        sym = (0.5 * (R + R.T) + np.eye(3)) / 2.0
        k = int(np.argmax(np.diag(sym)))
        axis = sym[:, k] / math.sqrt(max(sym[k, k], 1e-300))
        axis = axis / np.linalg.norm(axis)
        if axis @ skew_part < 0.0:
            axis = -axis
        return theta * axis
    return skew_part * (theta / math.sin(theta))


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation to R in the Frobenius sense (polar decomposition)."""
    U, _ = polar(np.asarray(R, dtype=float))
    if np.linalg.det(U) < 0.0:
        raise GeometryError("Cannot orthonormalize a reflection")
    return U


# ---------------------------------------------------------------------------
# se(3) / SE(3)
# ---------------------------------------------------------------------------


def hat_se3(t: Twist) -> np.ndarray:
    """4x4 matrix [Omega_x V; 0 0]."""
    out = np.zeros((4, 4))
    out[:3, :3] = hat3(t.angular)
    out[:3, 3] = t.linear
    return out


def vee_se3(M: np.ndarray, tol: float = MEMBERSHIP_TOL) -> Twist:
    """Inverse of hat_se3; rejects matrices outside se(3) within tol."""
    M = np.asarray(M, dtype=float)
    if M.shape != (4, 4):
        raise GeometryError(f"vee_se3 expects a 4x4 matrix, got shape {M.shape}")
    if np.max(np.abs(M[3])) > tol:
        raise GeometryError("Last row of an se(3) matrix must be zero")
    return Twist(vee3(M[:3, :3], tol), M[:3, 3])


def exp_se3(t: Twist) -> Pose:
    """Closed-form exponential: R = exp_so3(Omega), p = J(Omega) V."""
    w = t.angular
    theta = math.sqrt(float(w @ w))
    a, b, c = _rodrigues_coefficients(theta)
    W = hat3(w)
    W2 = W @ W
    V = t.linear
    return Pose.adopt(_I3 + a * W + b * W2, V + b * (W @ V) + c * (W2 @ V))


def project_se3(M: np.ndarray) -> Twist:
    """Orthogonal projection P onto se(3) w.r.t. the Frobenius inner product.

    P([[M1, m2], [m3^T, m4]]) = [[(M1 - M1^T)/2, m2], [0, 0]].
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (4, 4):
        raise GeometryError(f"project_se3 expects a 4x4 matrix, got shape {M.shape}")
    M1 = M[:3, :3]
    antisym = 0.5 * (M1 - M1.T)
    return Twist.adopt(
        np.array([antisym[2, 1], antisym[0, 2], antisym[1, 0]]), M[:3, 3].copy()
    )


def frobenius_inner(M1: np.ndarray, M2: np.ndarray) -> float:
    """tr(M1^T M2)."""
    M1 = np.asarray(M1, dtype=float)
    M2 = np.asarray(M2, dtype=float)
    if M1.shape != M2.shape:
        raise GeometryError(f"Dimension mismatch: {M1.shape} vs {M2.shape}")
    return float(np.sum(M1 * M2))


def frobenius_norm(M: np.ndarray) -> float:
    return math.sqrt(frobenius_inner(M, M))


def twist_inner(A1: Twist, A2: Twist) -> float:
    """Frobenius inner product of the se(3) matrices: 2 Omega1.Omega2 + V1.V2."""
    return 2.0 * float(A1.angular @ A2.angular) + float(A1.linear @ A2.linear)


def right_invariant_metric(X: Pose, V1: np.ndarray, V2: np.ndarray) -> float:
    """Right-invariant metric <V1, V2>_X := <V1 X^-1, V2 X^-1> for tangent vectors at X."""
    X_inv = pose_inverse(X).matrix()
    return frobenius_inner(np.asarray(V1) @ X_inv, np.asarray(V2) @ X_inv)


def adjoint(X: Pose, A: Twist) -> Twist:
    """Ad_X A = X A X^-1, in closed form."""
    R = X.rotation
    omega = R @ A.angular
    return Twist.adopt(omega, R @ A.linear + np.cross(X.position, omega))


def pose_inverse(X: Pose) -> Pose:
    """[R^T, -R^T p; 0 1]."""
    Rt = X.rotation.T.copy()
    return Pose.adopt(Rt, -(Rt @ X.position))


if __name__ == "__main__":
    print("Lie algebra module loaded successfully")
    twist = Twist([0.0, 0.0, math.pi / 2], [1.0, 0.0, 0.0])
    print(exp_se3(twist))
