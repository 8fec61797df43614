"""Rotations, direction vectors, and angle conversions.

Pure functions on value types shared by the simulator, the bound toolkit,
and the estimator.  All angles are radians.  Azimuth lives on (-pi, pi],
elevation on [0, pi].  A direction's azimuth is measured in the x-y plane
(atan2 of the y and x components) and its elevation from the +z axis
(acos of the z component).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoincidentPoints, NotUnit

COINCIDENT_TOL = 1e-9
UNIT_TOL = 1e-9


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to the canonical interval (-pi, pi]."""
    wrapped = np.mod(angle + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(angle) == 0 else wrapped


@dataclass(frozen=True)
class RotationAngles:
    """Euler angles of the z-y-x factorization: alpha about z, beta about y,
    gamma about x.  Stored wrapped to (-pi, pi]."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, wrap_angle(float(value)))


@dataclass(frozen=True)
class AnglePair:
    """Azimuth/elevation pair; azimuth wrapped to (-pi, pi], elevation
    clipped into [0, pi] (tolerating sub-1e-9 numerical overshoot)."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        az = wrap_angle(float(self.azimuth))
        el = float(self.elevation)
        if not (np.isfinite(az) and np.isfinite(el)):
            raise ValueError("angles must be finite")
        if el < -UNIT_TOL or el > np.pi + UNIT_TOL:
            raise ValueError(f"elevation {el!r} outside [0, pi]")
        object.__setattr__(self, "azimuth", az)
        object.__setattr__(self, "elevation", float(np.clip(el, 0.0, np.pi)))

    def as_array(self):
        return np.array([self.azimuth, self.elevation])


@dataclass(frozen=True)
class Rotation:
    """Proper rotation matrix (orthogonal, determinant +1 within 1e-12)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-12:
            raise ValueError("matrix is not orthogonal within 1e-12")
        if abs(np.linalg.det(m) - 1.0) > 1e-12:
            raise ValueError("determinant differs from 1 by more than 1e-12")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def columns(self):
        """The three column vectors of the matrix."""
        return self.matrix[:, 0], self.matrix[:, 1], self.matrix[:, 2]

    def as_vector(self):
        """Column-stacked 9-vector (first column first)."""
        return self.matrix.ravel(order="F").copy()

    @classmethod
    def from_vector(cls, vec):
        return cls(np.asarray(vec, dtype=float).reshape(3, 3, order="F"))


def rotation_from_angles(angles: RotationAngles) -> Rotation:
    """Compose the z, y, and x factor rotations into one matrix.

    The z-factor carries +sin(alpha) in row 1, column 2 (and -sin(alpha)
    below the diagonal); the y and x factors use the opposite sign layout.
    The product is z @ y @ x.
    """
    ca, sa = np.cos(angles.alpha), np.sin(angles.alpha)
    cb, sb = np.cos(angles.beta), np.sin(angles.beta)
    cg, sg = np.cos(angles.gamma), np.sin(angles.gamma)
    rz = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cg, -sg], [0.0, sg, cg]])
    return Rotation(rz @ ry @ rx)


def direction_local(rotation: Rotation, source, target) -> np.ndarray:
    """Unit vector from ``source`` toward ``target`` expressed in the frame
    of ``rotation`` (i.e. R^T applied to the global direction).

    Raises CoincidentPoints when the two points are closer than 1e-9 m.
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    diff = target - source
    dist = np.linalg.norm(diff)
    if dist < COINCIDENT_TOL:
        raise CoincidentPoints(f"points are {dist:.3e} m apart")
    return rotation.matrix.T @ (diff / dist)


IDENTITY_ROTATION = Rotation(np.eye(3))


def direction_global(source, target) -> np.ndarray:
    """Unit vector from ``source`` toward ``target`` in the global frame."""
    return direction_local(IDENTITY_ROTATION, source, target)


def angles_from_direction(q) -> AnglePair:
    """Azimuth/elevation of a unit direction vector.

    At the poles (|q_z| = 1) the azimuth is undefined; by convention it is
    set to zero.  Raises NotUnit if the norm deviates from 1 by more than
    1e-9.
    """
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > UNIT_TOL:
        raise NotUnit(f"norm is {norm!r}")
    azimuth = np.arctan2(q[1], q[0])  # atan2(0, 0) == 0 covers the poles
    elevation = np.arccos(np.clip(q[2], -1.0, 1.0))
    return AnglePair(azimuth=float(azimuth), elevation=float(elevation))


def unit_from_angles(angles: AnglePair) -> np.ndarray:
    """Unit direction vector for an azimuth/elevation pair (inverse of
    :func:`angles_from_direction` away from the poles)."""
    sin_el = np.sin(angles.elevation)
    return np.array(
        [
            np.cos(angles.azimuth) * sin_el,
            np.sin(angles.azimuth) * sin_el,
            np.cos(angles.elevation),
        ]
    )
