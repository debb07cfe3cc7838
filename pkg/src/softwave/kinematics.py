"""Planar piecewise-constant-curvature kinematics.

Each segment bends as a circular arc; ``q[i]`` is the total bending angle of
segment ``i`` (curvature ``q[i] / L``). Points are addressed by a 1-based
segment index and an arc-length fraction ``s`` in ``[0, 1]``.
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import _kernels as K


@dataclass(frozen=True)
class SegmentGeometry:
    L: float = 0.3
    d_s: float = 0.05
    n: int = 3

    def __post_init__(self):
        if not (self.L > 0 and self.d_s > 0 and self.n >= 1):
            raise ValueError(f"invalid geometry {self}")

    @property
    def cross_section(self) -> float:
        return np.pi * self.d_s**2 / 4.0

    @property
    def reach(self) -> float:
        return self.n * self.L


@dataclass(frozen=True)
class BasePose:
    """Mount point in the world frame (z = 0 at the still-water line, up positive).

    ``heading`` is the tangent direction of the arm at the mount; 0 points
    along +x, -pi/2 hangs straight down.
    """

    position: tuple = (0.0, -4.0)
    heading: float = 0.0

    def __post_init__(self):
        if not self.position[1] <= 0:
            raise ValueError("the base must be at or below the still-water line")


@dataclass
class Configuration:
    q: np.ndarray
    qdot: np.ndarray = field(default=None)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.zeros_like(self.q) if self.qdot is None else np.asarray(self.qdot, dtype=float)
        if self.q.shape != self.qdot.shape or self.q.ndim != 1:
            raise ValueError("q and qdot must be vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("configuration has non-finite entries")


def _check(q, segment, s, geom):
    q = np.asarray(q, dtype=float)
    if q.shape != (geom.n,):
        raise ValueError(f"expected {geom.n} joint angles, got shape {q.shape}")
    if not 1 <= segment <= geom.n:
        raise IndexError(f"segment {segment} out of range 1..{geom.n}")
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"arc fraction {s} outside [0, 1]")
    return q


def _eval(q, qdot, segment, s, base, geom):
    q = _check(q, segment, s, geom)
    qdot = np.zeros_like(q) if qdot is None else np.asarray(qdot, dtype=float)
    bx, bz = base.position
    return K.point_kinematics(q, qdot, segment - 1, float(s), geom.L, bx, bz, base.heading)


def forward_kinematics(q, segment, s, base=BasePose(), geom=SegmentGeometry()):
    """World position ``(x, z)`` and tangent angle of a point on the arm."""
    x, z, th, _, _ = _eval(q, None, segment, s, base, geom)
    return x, z, th


def jacobian(q, segment, s, base=BasePose(), geom=SegmentGeometry()):
    """2 x n Jacobian of the point position with respect to q."""
    return _eval(q, None, segment, s, base, geom)[3]


def jacobian_rate(q, qdot, segment, s, base=BasePose(), geom=SegmentGeometry()):
    """Time derivative of the Jacobian along the motion ``qdot``."""
    return _eval(q, qdot, segment, s, base, geom)[4]


def tip_position(q, base=BasePose(), geom=SegmentGeometry()):
    x, z, _ = forward_kinematics(q, geom.n, 1.0, base, geom)
    return np.array([x, z])


def segment_tips(q, base=BasePose(), geom=SegmentGeometry()):
    """(n, 2) array with the distal end of every segment."""
    return np.array([forward_kinematics(q, i, 1.0, base, geom)[:2] for i in range(1, geom.n + 1)])


def backbone(q, base=BasePose(), geom=SegmentGeometry(), points_per_segment=20):
    """Dense polyline along the arm, for plotting."""
    pts = [np.array(base.position, dtype=float)]
    for i in range(1, geom.n + 1):
        for s in np.linspace(0, 1, points_per_segment + 1)[1:]:
            pts.append(np.array(forward_kinematics(q, i, s, base, geom)[:2]))
    return np.array(pts)


def inverse_kinematics(x_target, base=BasePose(), geom=SegmentGeometry(), q_min=-np.pi, q_max=np.pi,
                       tol=1e-10):
    """Least-bent configuration that puts the tip on ``x_target``.

    Bounded least squares from a fixed grid of starting points; among the
    solutions that reach the target the one with the smallest |q| wins, so
    the result is deterministic. Raises ValueError if the target is out of
    reach within the bounds.
    """
    x_target = np.asarray(x_target, dtype=float)
    n = geom.n
    best = None
    for seed in itertools.product((-1.5, 1.5), repeat=n):
        sol = scipy.optimize.least_squares(
            lambda q: tip_position(q, base, geom) - x_target,
            np.clip(seed, q_min, q_max),
            jac=lambda q: jacobian(q, n, 1.0, base, geom),
            bounds=(q_min, q_max), xtol=1e-14, ftol=1e-14, gtol=1e-14,
        )
        if np.linalg.norm(sol.fun) <= tol and (best is None or np.linalg.norm(sol.x) < np.linalg.norm(best)):
            best = sol.x
    if best is None:
        raise ValueError(f"target {tuple(x_target)} is out of reach within the joint bounds")
    return best
