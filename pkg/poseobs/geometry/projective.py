"""
RP^3 outputs: unit 4-vector representatives, the feature-point and
vectorial embeddings, the output map h and the group actions phi/psi/rho
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence

import numpy as np

from geometry.liealg import GeometryError, Pose, Twist, adjoint, pose_inverse

logger = logging.getLogger(__name__)

# Splits point-type (y4 > tol) from direction-type (|y4| <= tol) elements
POINT_CLASS_TOL = 1e-9

UNIT_NORM_TOL = 1e-12

MIN_VECTOR_NORM = 1e-12


class MeasurementError(ValueError):
    """Raised when a measurement set violates its invariants."""


@dataclass(frozen=True, eq=False)
class ProjectivePoint:
    """Unit representative of an element of RP^3.

    The embeddings produce y4 >= 0; `negated` gives the antipodal
    representative of the same element.
    """

    rep: np.ndarray

    def __post_init__(self):
        rep = np.array(self.rep, dtype=float).reshape(-1)
        if rep.shape != (4,):
            raise GeometryError(f"A projective point needs 4 components, got {rep.size}")
        norm = float(np.linalg.norm(rep))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise GeometryError(f"Representative must be unit norm, got |rep| = {norm}")
        rep.setflags(write=False)
        object.__setattr__(self, "rep", rep)

    @classmethod
    def from_vector(cls, values: Sequence[float]) -> "ProjectivePoint":
        """Normalize an arbitrary nonzero 4-vector into a representative."""
        arr = np.asarray(values, dtype=float).reshape(-1)
        norm = float(np.linalg.norm(arr))
        if norm <= MIN_VECTOR_NORM:
            raise GeometryError("Cannot normalize a zero 4-vector")
        return cls(arr / norm)

    @property
    def underline(self) -> np.ndarray:
        return self.rep[:3]

    @property
    def w(self) -> float:
        return float(self.rep[3])

    def is_direction(self, tol: float = POINT_CLASS_TOL) -> bool:
        return abs(self.w) <= tol

    def is_point(self, tol: float = POINT_CLASS_TOL) -> bool:
        return self.w > tol

    def negated(self) -> "ProjectivePoint":
        return ProjectivePoint(-self.rep)

    def __repr__(self) -> str:
        return f"ProjectivePoint({self.rep.tolist()})"


@dataclass(frozen=True, eq=False)
class Measurement:
    reference: ProjectivePoint
    measured: ProjectivePoint
    gain: float


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Ordered (reference, measured, gain) triples; the tuples Y and Y_ref.

    Stored stacked: row i of reference_matrix / measured_matrix is the unit
    representative of the i-th reference / measured element.
    """

    reference_matrix: np.ndarray
    measured_matrix: np.ndarray
    gain_vector: np.ndarray

    def __post_init__(self):
        refs = np.array(self.reference_matrix, dtype=float)
        measured = np.array(self.measured_matrix, dtype=float)
        gains = np.array(self.gain_vector, dtype=float).reshape(-1)
        if refs.size == 0:
            raise MeasurementError("MeasurementSet must not be empty")
        if refs.ndim != 2 or refs.shape[1] != 4 or measured.shape != refs.shape:
            raise MeasurementError(
                f"Expected two (N, 4) stacks, got {refs.shape} and {measured.shape}"
            )
        if gains.shape != (refs.shape[0],):
            raise MeasurementError(f"Expected {refs.shape[0]} gains, got {gains.size}")
        for i, k in enumerate(gains):
            if not k > 0.0 or not math.isfinite(k):
                raise MeasurementError(f"Gain k_{i + 1} must be positive, got {k}")
        for stack in (refs, measured):
            norms = np.linalg.norm(stack, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise GeometryError("Representatives must be unit norm")
            stack.setflags(write=False)
        gains.setflags(write=False)
        object.__setattr__(self, "reference_matrix", refs)
        object.__setattr__(self, "measured_matrix", measured)
        object.__setattr__(self, "gain_vector", gains)

    @classmethod
    def build(
        cls,
        references: Sequence[ProjectivePoint],
        measured: Sequence[ProjectivePoint],
        gains: Sequence[float],
    ) -> "MeasurementSet":
        if not (len(references) == len(measured) == len(gains)):
            raise MeasurementError(
                f"Length mismatch: {len(references)} references, "
                f"{len(measured)} measurements, {len(gains)} gains"
            )
        if len(references) == 0:
            raise MeasurementError("MeasurementSet must not be empty")
        return cls(
            np.array([r.rep for r in references]),
            np.array([y.rep for y in measured]),
            np.asarray(gains, dtype=float),
        )

    def __len__(self) -> int:
        return self.reference_matrix.shape[0]

    def __iter__(self) -> Iterator[Measurement]:
        for ref, y, k in zip(self.reference_matrix, self.measured_matrix, self.gain_vector):
            yield Measurement(ProjectivePoint(ref), ProjectivePoint(y), float(k))

    def references(self) -> List[ProjectivePoint]:
        return [ProjectivePoint(row) for row in self.reference_matrix]

    def measurements(self) -> List[ProjectivePoint]:
        return [ProjectivePoint(row) for row in self.measured_matrix]

    def with_measured(self, measured: Sequence[ProjectivePoint]) -> "MeasurementSet":
        return MeasurementSet.build(self.references(), measured, self.gain_vector)

    def with_measured_matrix(self, measured: np.ndarray) -> "MeasurementSet":
        """Swap in a fresh (N, 4) stack of unit rows, e.g. from measure_matrix.

        Only the shape is checked; the references and gains are shared.
        """
        if measured.shape != self.reference_matrix.shape:
            raise MeasurementError(
                f"Expected a {self.reference_matrix.shape} stack, got {measured.shape}"
            )
        out = object.__new__(MeasurementSet)
        measured.setflags(write=False)
        object.__setattr__(out, "reference_matrix", self.reference_matrix)
        object.__setattr__(out, "measured_matrix", measured)
        object.__setattr__(out, "gain_vector", self.gain_vector)
        return out

    def to_rows(self) -> List[List[float]]:
        """Serialize as rows of (4 reference numbers, 4 measured numbers, gain)."""
        return np.column_stack(
            [self.reference_matrix, self.measured_matrix, self.gain_vector]
        ).tolist()

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "MeasurementSet":
        refs, measured, gains = [], [], []
        for row in rows:
            if len(row) != 9:
                raise MeasurementError(f"Measurement row needs 9 numbers, got {len(row)}")
            refs.append(ProjectivePoint.from_vector(row[:4]))
            measured.append(ProjectivePoint.from_vector(row[4:8]))
            gains.append(float(row[8]))
        return cls.build(refs, measured, gains)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


def embed_point(p: Sequence[float]) -> ProjectivePoint:
    """Feature point position (meters) -> [p; 1] / sqrt(|p|^2 + 1)."""
    p = np.asarray(p, dtype=float).reshape(3)
    scale = 1.0 / math.sqrt(float(p @ p) + 1.0)
    return ProjectivePoint(np.append(p * scale, scale))


def embed_vector(v: Sequence[float]) -> ProjectivePoint:
    """Known inertial direction -> [v/|v|; 0]."""
    v = np.asarray(v, dtype=float).reshape(3)
    norm = float(np.linalg.norm(v))
    if norm <= MIN_VECTOR_NORM:
        raise GeometryError("Cannot embed a zero vector as a direction")
    return ProjectivePoint(np.append(v / norm, 0.0))


def extract_point(y: ProjectivePoint, tol: float = POINT_CLASS_TOL) -> np.ndarray:
    """Inverse of embed_point: underline / y4 (meters)."""
    if not y.w > tol:
        raise GeometryError(f"Not a point-type element (y4 = {y.w})")
    return y.underline / y.w


def extract_direction(y: ProjectivePoint, tol: float = POINT_CLASS_TOL) -> np.ndarray:
    """Inverse of embed_vector: the unit underline part."""
    if abs(y.w) > tol:
        raise GeometryError(f"Not a direction-type element (y4 = {y.w})")
    return np.array(y.underline)


# ---------------------------------------------------------------------------
# Output map and group actions
# ---------------------------------------------------------------------------


def _apply_normalized(matrix: np.ndarray, rep: np.ndarray) -> np.ndarray:
    out = matrix @ rep
    return out / np.linalg.norm(out)


def output_map(X: Pose, yref: ProjectivePoint) -> ProjectivePoint:
    """h(X, y_ref) = X^-1 y_ref / |X^-1 y_ref|, the body-frame measurement."""
    return ProjectivePoint(_apply_normalized(pose_inverse(X).matrix(), yref.rep))


def group_action_rho(Q: Pose, y: ProjectivePoint) -> ProjectivePoint:
    """rho(Q, y) = Q^-1 y / |Q^-1 y|."""
    return output_map(Q, y)


def group_action_phi(Q: Pose, X: Pose) -> Pose:
    """phi(Q, X) = X Q."""
    return X.compose(Q)


def group_action_psi(Q: Pose, A: Twist) -> Twist:
    """psi(Q, A) = Ad_{Q^-1} A = Q^-1 A Q."""
    return adjoint(pose_inverse(Q), A)


def output_error(Xhat: Pose, y: ProjectivePoint) -> ProjectivePoint:
    """e = Xhat y / |Xhat y|, the estimate of the reference element."""
    return ProjectivePoint(_apply_normalized(Xhat.matrix(), y.rep))


def measure_matrix(X: Pose, reference_matrix: np.ndarray) -> np.ndarray:
    """Output map applied to each row of an (N, 4) reference stack."""
    R, p = X.rotation, X.position
    out = np.empty(reference_matrix.shape)
    w = reference_matrix[:, 3]
    # Row form of R^T (y_ - y4 p)
    out[:, :3] = (reference_matrix[:, :3] - w[:, None] * p) @ R
    out[:, 3] = w
    out /= np.linalg.norm(out, axis=1)[:, None]
    return out


def measure_all(X: Pose, references: Sequence[ProjectivePoint]) -> List[ProjectivePoint]:
    """Apply the output map to every reference element."""
    if not references:
        return []
    stack = measure_matrix(X, np.array([ref.rep for ref in references]))
    return [ProjectivePoint(row) for row in stack]


if __name__ == "__main__":
    print("Projective module loaded successfully")
    print(embed_point([1.0, 0.0, 0.0]))
    print(embed_vector([math.sqrt(3) / 2, 0.5, 0.0]))
