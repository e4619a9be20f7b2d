"""Planar rotations and poses.

Angles are stored as wrapped scalars; 2x2 matrices are only built on demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SQRT8 = 2.0 * math.sqrt(2.0)


def wrap_angle(a):
    """Wrap an angle (or array of angles) into (-pi, pi]."""
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot wrap non-finite angle: {a!r}")
    w = np.mod(arr + np.pi, 2.0 * np.pi) - np.pi
    # mod lands exactly on -pi for odd multiples of pi; move those to +pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    # in-range values pass through untouched so wrapping is bitwise idempotent
    w = np.where((arr > -np.pi) & (arr <= np.pi), arr, w)
    if w.ndim == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Rotation2:
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def inverse(self) -> Rotation2:
        return Rotation2(-self.theta)

    def __matmul__(self, other: Rotation2) -> Rotation2:
        return Rotation2(self.theta + other.theta)

    def rotate(self, v) -> np.ndarray:
        return self.as_matrix() @ np.asarray(v, dtype=float)


@dataclass(frozen=True)
class Pose2:
    t: np.ndarray = field(default_factory=lambda: np.zeros(2))
    R: Rotation2 = field(default_factory=Rotation2)

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(2)
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_xyt(cls, x: float, y: float, theta: float) -> Pose2:
        return cls(np.array([x, y]), Rotation2(theta))

    @property
    def theta(self) -> float:
        return self.R.theta

    def compose(self, other: Pose2) -> Pose2:
        return Pose2(self.t + self.R.rotate(other.t), self.R @ other.R)

    def inverse(self) -> Pose2:
        Rinv = self.R.inverse()
        return Pose2(-Rinv.rotate(self.t), Rinv)

    def between(self, other: Pose2) -> Pose2:
        """Relative pose ``self^-1 * other``."""
        c, s = math.cos(self.R.theta), math.sin(self.R.theta)
        dx, dy = other.t - self.t
        return Pose2(np.array([c * dx + s * dy, -s * dx + c * dy]), Rotation2(other.R.theta - self.R.theta))

    def as_xyt(self) -> np.ndarray:
        return np.array([self.t[0], self.t[1], self.R.theta])

    def __eq__(self, other):
        if not isinstance(other, Pose2):
            return NotImplemented
        return bool(np.array_equal(self.t, other.t)) and self.R == other.R

    def __hash__(self):
        return hash((float(self.t[0]), float(self.t[1]), self.R.theta))


def so2_exp(xi: float) -> Rotation2:
    return Rotation2(xi)


def so2_log(R: Rotation2) -> float:
    return R.theta


def retract(R: Rotation2, xi: float) -> Rotation2:
    """Right retraction ``R * exp(xi)``; for SO(2) this is angle addition."""
    if not math.isfinite(xi):
        raise ValueError(f"retraction increment must be finite, got {xi!r}")
    return Rotation2(R.theta + xi)


def edge_angular_residual(R_i: Rotation2, R_j: Rotation2, R_ij_meas: Rotation2) -> float:
    """Log of ``R_ij_meas^T R_i^T R_j``, i.e. wrap(theta_j - theta_i - theta_ij)."""
    return wrap_angle(R_j.theta - R_i.theta - R_ij_meas.theta)


def chordal_from_angle(delta):
    """Frobenius distance between two planar rotations that differ by ``delta``."""
    return SQRT8 * np.abs(np.sin(np.asarray(delta, dtype=float) / 2.0))


def chordal_distance(R_a: Rotation2, R_b: Rotation2) -> float:
    return float(chordal_from_angle(R_a.theta - R_b.theta))


def rot2(theta):
    """Stacked rotation matrices for an array of angles, shape (..., 2, 2)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
