"""Camera models, Pluecker line algebra and rotation parameterizations.

Conventions used throughout the package:

* 3D quantities are in meters, image quantities in pixels.
* A 3D line is stored as a unit direction ``d`` and a moment ``m = p x d``
  where ``p`` is any point on the line.  This makes ``|m|`` the distance of
  the line from the origin.
* Extrinsics map source-camera coordinates into the target camera frame,
  ``X_t = R @ X_s + t``.
* All values are treated as immutable once constructed; stored arrays are
  marked read-only so accidental in-place edits fail loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import DegenerateLine, NearSingularRotation, RankDeficient

_UNIT_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics of one camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def camera_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project camera-frame points (n, 3) to pixel coordinates (n, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        z = pts[:, 2]
        uv = np.empty((len(pts), 2))
        uv[:, 0] = self.fx * pts[:, 0] / z + self.cx
        uv[:, 1] = self.fy * pts[:, 1] / z + self.cy
        return uv if np.asarray(points).ndim == 2 else uv[0]


@dataclass(frozen=True)
class PluckerLine:
    """Infinite 3D line in Pluecker form (unit direction, moment)."""

    d: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=float).reshape(3)
        m = np.asarray(self.m, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > _UNIT_TOL:
            raise ValueError("direction must be unit length")
        if abs(float(d @ m)) > _UNIT_TOL:
            raise ValueError("moment must be orthogonal to direction")
        object.__setattr__(self, "d", _readonly(d))
        object.__setattr__(self, "m", _readonly(m))

    def point_closest_to_origin(self) -> np.ndarray:
        return np.cross(self.d, self.m)

    def distance_to_point(self, p: np.ndarray) -> float:
        """Orthogonal distance from a point to the line."""
        p = np.asarray(p, dtype=float)
        return float(np.linalg.norm(np.cross(self.d, p) + self.m))


@dataclass(frozen=True)
class Line2D:
    """Image line ``l = (a, b, c)`` with the matched segment endpoints (px).

    Coefficients are normalized so that ``sqrt(a^2 + b^2) == 1`` and
    ``l @ (u, v, 1)`` is the signed point-line distance in pixels.
    """

    coeffs: np.ndarray
    endpoints: np.ndarray

    def __post_init__(self) -> None:
        l = np.asarray(self.coeffs, dtype=float).reshape(3)
        ep = np.asarray(self.endpoints, dtype=float).reshape(2, 2)
        n = math.hypot(l[0], l[1])
        if n < 1e-12:
            raise ValueError("line coefficients are degenerate")
        if abs(n - 1.0) > 1e-9:
            raise ValueError("line coefficients must be normalized")
        for uv in ep:
            if abs(l @ np.array([uv[0], uv[1], 1.0])) >= 0.5:
                raise ValueError("endpoints must lie on the line (within 0.5 px)")
        object.__setattr__(self, "coeffs", _readonly(l))
        object.__setattr__(self, "endpoints", _readonly(ep))

    @classmethod
    def from_endpoints(cls, p1: np.ndarray, p2: np.ndarray) -> "Line2D":
        """Build the normalized image line through two pixel points."""
        p1 = np.asarray(p1, dtype=float)
        p2 = np.asarray(p2, dtype=float)
        l = np.cross(np.array([p1[0], p1[1], 1.0]), np.array([p2[0], p2[1], 1.0]))
        n = math.hypot(l[0], l[1])
        if n < 1e-12:
            raise ValueError("endpoints coincide; no unique image line")
        return cls(l / n, np.stack([p1, p2]))


@dataclass(frozen=True)
class CGRParams:
    """Cayley-Gibbs-Rodrigues rotation parameters ``s = axis * tan(theta/2)``."""

    s: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=float).reshape(3)
        if not np.all(np.isfinite(s)):
            raise ValueError("CGR parameters must be finite")
        object.__setattr__(self, "s", _readonly(s))


@dataclass(frozen=True)
class Extrinsics:
    """Rigid transform from the source camera frame to the target frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-9:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p, dtype=float) + self.translation

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Extrinsics":
        R = self.rotation.T
        return Extrinsics(R, -R @ self.translation)

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(3), np.zeros(3))


def plucker_from_points(p1: np.ndarray, p2: np.ndarray) -> PluckerLine:
    """Line through two distinct 3D points.

    Raises DegenerateLine when the endpoints are closer than 1e-9 m.
    """
    p1 = np.asarray(p1, dtype=float).reshape(3)
    p2 = np.asarray(p2, dtype=float).reshape(3)
    diff = p2 - p1
    n = np.linalg.norm(diff)
    if n < 1e-9:
        raise DegenerateLine("endpoints are too close to define a line")
    d = diff / n
    return PluckerLine(d, np.cross(p1, d))


def transform_line(line: PluckerLine, T: Extrinsics) -> PluckerLine:
    """Map a Pluecker line through a rigid transform.

    Direction maps as ``R d`` and the moment as ``R m + t x (R d)``.
    """
    d = T.rotation @ line.d
    m = T.rotation @ line.m + np.cross(T.translation, d)
    # Clean up float drift so the type invariants keep holding under
    # repeated round trips.
    d = d / np.linalg.norm(d)
    m = m - (d @ m) * d
    return PluckerLine(d, m)


def dual_plucker_matrix(line: PluckerLine) -> np.ndarray:
    """4x4 antisymmetric matrix whose null space is the line's point set.

    ``M @ (X, 1)`` vanishes exactly when ``X`` lies on the line: the top
    block reads ``-d x X - m`` which is zero for on-line points under the
    ``m = p x d`` moment convention used in this package.
    """
    M = np.zeros((4, 4))
    M[:3, :3] = -skew(line.d)
    M[:3, 3] = -line.m
    M[3, :3] = line.m
    return M


def cgr_to_rotation(s: CGRParams | np.ndarray) -> np.ndarray:
    """Rotation matrix from CGR parameters.

    ``R = ((1 - s.s) I + 2 [s]x + 2 s s^T) / (1 + s.s)``; exact for every
    finite ``s`` and singular only at 180 degrees (which no finite ``s``
    reaches).
    """
    v = s.s if isinstance(s, CGRParams) else np.asarray(s, dtype=float).reshape(3)
    ss = float(v @ v)
    rbar = (1.0 - ss) * np.eye(3) + 2.0 * skew(v) + 2.0 * np.outer(v, v)
    return rbar / (1.0 + ss)


def rotation_to_cgr(R: np.ndarray) -> CGRParams:
    """Invert :func:`cgr_to_rotation`.

    Raises NearSingularRotation when the rotation angle is within 1e-3 rad
    of 180 degrees, where ``tan(theta/2)`` blows up.
    """
    R = np.asarray(R, dtype=float)
    q = _ScipyRotation.from_matrix(R).as_quat()  # (x, y, z, w)
    if q[3] < 0.0:
        q = -q
    angle = 2.0 * math.atan2(float(np.linalg.norm(q[:3])), float(q[3]))
    if angle >= math.pi - 1e-3:
        raise NearSingularRotation(
            f"rotation angle {math.degrees(angle):.4f} deg is too close to 180"
        )
    return CGRParams(q[:3] / q[3])


def rotation_angle(R: np.ndarray) -> float:
    """Rotation angle of ``R`` in radians."""
    c = (float(np.trace(R)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def line_projection_matrix(K: CameraIntrinsics) -> np.ndarray:
    """3x3 matrix mapping a camera-frame line moment to image line coefficients.

    For a line with moment ``m`` (convention ``m = p x d``), ``l = P @ m``
    contains the pixels of every projected point of the line:
    ``l @ (u, v, 1) == 0``.  Algebraically ``P = det(K) K^{-T}``.
    """
    return np.array(
        [
            [K.fy, 0.0, 0.0],
            [0.0, K.fx, 0.0],
            [-K.fy * K.cx, -K.fx * K.cy, K.fx * K.fy],
        ]
    )


def project_so3(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthogonally project a 3x3 matrix onto SO(3).

    Returns ``(R, sigma, sigma_target)`` where ``sigma`` holds the singular
    values of ``M`` and ``sigma_target = (1, 1, det(U V^T))`` is the spectrum
    of the projection.  Raises RankDeficient when the two smallest singular
    values vanish (the projection is then not unique).
    """
    M = np.asarray(M, dtype=float).reshape(3, 3)
    U, sigma, Vt = np.linalg.svd(M)
    if sigma[1] <= 1e-12 and sigma[2] <= 1e-12:
        raise RankDeficient("two smallest singular values are zero")
    sign = float(np.linalg.det(U @ Vt))
    sigma_target = np.array([1.0, 1.0, math.copysign(1.0, sign)])
    R = U @ np.diag(sigma_target) @ Vt
    return R, sigma, sigma_target


def so3_distance(sigma: np.ndarray, sigma_target: np.ndarray) -> float:
    """Frobenius-type distance between a matrix spectrum and its SO(3) projection."""
    diff = np.asarray(sigma, dtype=float) - np.asarray(sigma_target, dtype=float)
    return float(np.linalg.norm(diff))
