"""Planar rigid-transform algebra used throughout the toolkit.

A pose is an element of SE(2) stored as (x, y, theta) with theta in radians,
always normalized to (-pi, pi].  The convention everywhere in this package is
"pose of frame a relative to frame b": given global poses Ta and Tb, the
relative pose is inverse(Tb) composed with Ta.  Its translation is the
position of a's origin expressed in b's frame and its heading is the heading
difference.

x is the longitudinal (forward) axis, y the lateral (left) axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def wrap_angle(t: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    t = t % TWO_PI
    if t > math.pi:
        t -= TWO_PI
    return t


@dataclass(frozen=True)
class Pose2:
    """An SE(2) transform (or a global planar pose): x, y in meters, theta in radians.

    theta is wrapped to (-pi, pi] on construction; components must be finite.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose components: ({self.x}, {self.y}, {self.theta})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Compose two transforms: a then b (standard SE(2) product a @ b)."""
    c = math.cos(a.theta)
    s = math.sin(a.theta)
    return Pose2(
        a.x + b.x * c - b.y * s,
        a.y + b.x * s + b.y * c,
        wrap_angle(a.theta + b.theta),
    )


def inverse(a: Pose2) -> Pose2:
    """Group inverse: compose(a, inverse(a)) is the identity."""
    c = math.cos(a.theta)
    s = math.sin(a.theta)
    return Pose2(-(a.x * c + a.y * s), a.x * s - a.y * c, wrap_angle(-a.theta))


def relative_pose(a_global: Pose2, b_global: Pose2) -> Pose2:
    """Pose of frame a relative to frame b, given both global poses."""
    return compose(inverse(b_global), a_global)


@dataclass(frozen=True)
class LossWeights:
    """Diagonal weighting for the quadratic pose loss and for pose magnitudes.

    Defaults weight heading ten times the translation components, with theta
    taken in radians.
    """

    w_x: float = 1.0
    w_y: float = 1.0
    w_theta: float = 10.0

    def __post_init__(self):
        if not (self.w_x > 0 and self.w_y > 0 and self.w_theta > 0):
            raise ValueError(
                f"loss weights must be strictly positive, got "
                f"({self.w_x}, {self.w_y}, {self.w_theta})"
            )


DEFAULT_WEIGHTS = LossWeights()


def weighted_norm(xi: Pose2, w: LossWeights = DEFAULT_WEIGHTS) -> float:
    """Weighted magnitude sqrt(w_x*x^2 + w_y*y^2 + w_theta*theta^2).

    Zero exactly when xi is the identity.  Used for "smallest relative pose"
    keyframe selection during path following.
    """
    return math.sqrt(w.w_x * xi.x**2 + w.w_y * xi.y**2 + w.w_theta * xi.theta**2)
