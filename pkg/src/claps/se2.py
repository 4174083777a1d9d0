"""Planar rigid-body group primitives.

Poses are stored as (x, y, theta) triples with theta wrapped to [-pi, pi);
rotation matrices are materialized on demand, so composition never
accumulates orthonormality drift.  Algebra vectors use the translation-first
ordering (rho_x, rho_y, theta), matching the body-twist ordering
(vx, vy, wz) used everywhere else in this package.

All module-level functions are array-based: they accept a single (3,)
vector or any batch shaped (..., 3) and return matching shapes.  The small
dataclasses below are thin value-type wrappers used at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

# Below this |theta| the sin/cos ratio pair switches to series expansions.
# 1e-3 balances the closed form's 1-cos cancellation (~eps/theta absolute
# error) against series truncation (~theta^5/720); both sit under 1e-13
# there, and continuity across the switch is covered by tests.
SMALL_ANGLE = 1e-3


def wrap_angle(theta):
    """Wrap angles into [-pi, pi)."""
    return (theta + np.pi) % TWO_PI - np.pi


@dataclass(frozen=True)
class Pose:
    """Planar rigid transform; theta is wrapped to [-pi, pi) on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float)
        return cls(a[0], a[1], a[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix form."""
        m = np.eye(3)
        m[:2, :2] = self.rotation()
        m[:2, 2] = (self.x, self.y)
        return m


@dataclass(frozen=True)
class Twist:
    """Body-frame velocity: forward, lateral, yaw rate."""

    vx: float
    vy: float
    wz: float

    @classmethod
    def zero(cls) -> "Twist":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a) -> "Twist":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.wz])


@dataclass(frozen=True)
class GeneralizedConfig:
    """Configuration (x, y, theta) with theta in [-pi, pi)."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(wrap_angle(self.theta)))

    @classmethod
    def from_array(cls, a) -> "GeneralizedConfig":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


def wedge(v) -> np.ndarray:
    """Algebra vector(s) (rho_x, rho_y, theta) -> 3x3 algebra matrix(es)."""
    v = np.asarray(v, dtype=float)
    m = np.zeros(v.shape[:-1] + (3, 3))
    m[..., 0, 1] = -v[..., 2]
    m[..., 1, 0] = v[..., 2]
    m[..., 0, 2] = v[..., 0]
    m[..., 1, 2] = v[..., 1]
    return m


def vee(m) -> np.ndarray:
    """Inverse of :func:`wedge`; exact (copies matrix entries)."""
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 0, 2], m[..., 1, 2], m[..., 1, 0]], axis=-1)


def _sinc_pair(theta):
    """Return (sin(t)/t, (1-cos(t))/t) with series fallback near zero."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SMALL_ANGLE
    t = np.where(small, 1.0, theta)  # avoid 0/0; overwritten below
    a = np.sin(t) / t
    b = (1.0 - np.cos(t)) / t
    t2 = theta * theta
    a_series = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    b_series = theta * (0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    return np.where(small, a_series, a), np.where(small, b_series, b)


def exp(v) -> np.ndarray:
    """Exponential coordinates -> pose array (x, y, theta wrapped)."""
    v = np.asarray(v, dtype=float)
    theta = v[..., 2]
    a, b = _sinc_pair(theta)
    x = a * v[..., 0] - b * v[..., 1]
    y = b * v[..., 0] + a * v[..., 1]
    return np.stack([x, y, wrap_angle(theta)], axis=-1)


def log(p) -> np.ndarray:
    """Pose array -> exponential coordinates.

    Raises ValueError when any relative angle sits on the boundary of the
    diffeomorphic domain (|theta| >= pi); poses store theta in [-pi, pi),
    so only theta == -pi can trigger this.
    """
    p = np.asarray(p, dtype=float)
    theta = wrap_angle(p[..., 2])
    if np.any(np.abs(theta) >= np.pi):
        raise ValueError("log undefined at |theta| = pi (boundary of the diffeomorphic domain)")
    a, b = _sinc_pair(theta)
    denom = a * a + b * b  # equals (2 - 2 cos t)/t^2; -> 1 as t -> 0
    c = a / denom
    d = b / denom
    rx = c * p[..., 0] + d * p[..., 1]
    ry = -d * p[..., 0] + c * p[..., 1]
    return np.stack([rx, ry, theta], axis=-1)


def compose(a, b) -> np.ndarray:
    """Group product of pose arrays: a then b (b expressed in a's frame)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ca, sa = np.cos(a[..., 2]), np.sin(a[..., 2])
    x = a[..., 0] + ca * b[..., 0] - sa * b[..., 1]
    y = a[..., 1] + sa * b[..., 0] + ca * b[..., 1]
    return np.stack([x, y, wrap_angle(a[..., 2] + b[..., 2])], axis=-1)


def inverse(p) -> np.ndarray:
    """Group inverse of pose array(s)."""
    p = np.asarray(p, dtype=float)
    c, s = np.cos(p[..., 2]), np.sin(p[..., 2])
    x = -(c * p[..., 0] + s * p[..., 1])
    y = -(-s * p[..., 0] + c * p[..., 1])
    return np.stack([x, y, wrap_angle(-p[..., 2])], axis=-1)


def ad(xi) -> np.ndarray:
    """Adjoint action matrix of twist(s) (vx, vy, wz) on the algebra."""
    xi = np.asarray(xi, dtype=float)
    m = np.zeros(xi.shape[:-1] + (3, 3))
    m[..., 0, 1] = -xi[..., 2]
    m[..., 1, 0] = xi[..., 2]
    m[..., 0, 2] = xi[..., 1]
    m[..., 1, 2] = -xi[..., 0]
    return m


def kinematics_map(q) -> np.ndarray:
    """Generalized coordinates -> pose array (numerically the same triple)."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 2] = wrap_angle(q[..., 2])
    return out


def kinematics_inv(g) -> np.ndarray:
    """Pose array -> generalized coordinates with theta in [-pi, pi)."""
    g = np.asarray(g, dtype=float)
    out = g.copy()
    out[..., 2] = wrap_angle(g[..., 2])
    return out


def relative_pose(a, b) -> np.ndarray:
    """a^-1 * b, formed from coordinate differences so identical inputs
    give the exact identity (no roundoff from the inverse-compose route)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dx = b[..., 0] - a[..., 0]
    dy = b[..., 1] - a[..., 1]
    c, s = np.cos(a[..., 2]), np.sin(a[..., 2])
    return np.stack([c * dx + s * dy, -s * dx + c * dy,
                     wrap_angle(b[..., 2] - a[..., 2])], axis=-1)


def group_error(pred, truth) -> np.ndarray:
    """Left-invariant displacement log(pred^-1 * truth) in exp coordinates."""
    return log(relative_pose(pred, truth))
