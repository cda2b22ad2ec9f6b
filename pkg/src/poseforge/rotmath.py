"""Quaternion and rotation algebra.

Quaternions are scalar-first ``[s, vx, vy, vz]`` with the Hamilton product.
Every :class:`Quaternion` is unit norm and carries a canonical sign
(``s >= 0``; when ``s == 0`` the first non-zero vector component is made
positive), so ``q`` and ``-q`` always map to the same stored value.

Rotation matrices are plain ``(3, 3)`` numpy arrays acting on column
vectors: ``quat_to_rotmat(q) @ v`` rotates ``v`` by ``q``.  For a camera
attitude ``q(R_BC)`` the columns of that matrix are the camera axes
expressed in the target body frame.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

UNIT_TOL = 1e-6

__all__ = [
    "AxisAngle",
    "Quaternion",
    "angular_distance",
    "hamilton_product",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_mult",
    "quat_to_axis_angle",
    "quat_to_rotmat",
    "rotate_vector",
    "rotmat_to_quat",
    "random_quaternions",
]


def _canonical(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    # skip sub-ulp rescaling so stored values survive a text round-trip bit-for-bit
    if abs(n - 1.0) > 1e-15:
        q = q / n
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        nz = np.flatnonzero(q[1:])
        if nz.size and q[1 + nz[0]] < 0.0:
            return -q
    return q


class Quaternion:
    """Unit rotation quaternion, scalar first.

    The constructor rejects inputs whose norm is off by more than
    ``UNIT_TOL`` and then renormalizes, so the stored value is unit to
    machine precision.  Instances are immutable.
    """

    __slots__ = ("_q",)

    def __init__(self, s: float = 1.0, v=(0.0, 0.0, 0.0)):
        q = np.array([s, *np.asarray(v, dtype=float).ravel()], dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError(f"quaternion needs 1 scalar and 3 vector parts, got {q!r}")
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > UNIT_TOL:
            raise ValueError(f"quaternion is not unit norm (|q| = {norm:.9g})")
        q = _canonical(q)
        q.flags.writeable = False
        self._q = q

    @classmethod
    def from_array(cls, arr, normalize: bool = False) -> "Quaternion":
        """Build from a length-4 ``[s, vx, vy, vz]`` sequence.

        With ``normalize=True`` any non-zero 4-vector is accepted.
        """
        a = np.asarray(arr, dtype=float)
        if normalize:
            n = np.linalg.norm(a)
            if n < 1e-300:
                raise ValueError("cannot normalize a zero quaternion")
            a = a / n
        return cls(a[0], a[1:])

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, (0.0, 0.0, 0.0))

    @property
    def s(self) -> float:
        return float(self._q[0])

    @property
    def v(self) -> np.ndarray:
        return self._q[1:].copy()

    def as_array(self) -> np.ndarray:
        return self._q.copy()

    def as_list(self) -> list[float]:
        return [float(x) for x in self._q]

    def __iter__(self):
        return iter(self.as_list())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Quaternion):
            return NotImplemented
        return bool(np.array_equal(self._q, other._q))

    def __hash__(self) -> int:
        return hash(self._q.tobytes())

    def isclose(self, other: "Quaternion", atol: float = 1e-9) -> bool:
        """True if both represent the same rotation within ``atol``."""
        d = abs(float(np.dot(self._q, other._q)))
        return 1.0 - d <= atol

    def __repr__(self) -> str:
        s, x, y, z = self._q
        return f"Quaternion(s={s:.12g}, v=({x:.12g}, {y:.12g}, {z:.12g}))"


class AxisAngle(NamedTuple):
    """Rotation as a unit axis and an angle in degrees, ``0 <= angle < 360``."""

    axis: np.ndarray
    angle: float


def hamilton_product(a, b) -> np.ndarray:
    """Raw Hamilton product of quaternion arrays, broadcasting over leading axes.

    No normalization and no sign canonicalization; the eval module relies on
    that to keep the scalar part's sign.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def quat_mult(a: Quaternion, b: Quaternion) -> Quaternion:
    """Hamilton product ``a ⊗ b``, renormalized, canonical sign."""
    return Quaternion.from_array(hamilton_product(a.as_array(), b.as_array()), normalize=True)


def quat_conj(q: Quaternion) -> Quaternion:
    """Conjugate ``(s, -v)``; the inverse of a unit quaternion."""
    return Quaternion(q.s, -q.v)


def quat_to_axis_angle(q: Quaternion) -> AxisAngle:
    """Axis and angle (degrees) of ``q``.

    The angle is ``2*acos(s)``, evaluated as ``2*atan2(|v|, s)`` which is the
    same quantity but keeps full precision near 0 and 180 degrees.  Because
    ``s >= 0`` the result lies in ``[0, 180]``.  A null rotation reports the
    +x axis.
    """
    v = q.v
    vn = float(np.linalg.norm(v))
    angle = math.degrees(2.0 * math.atan2(vn, q.s))
    if vn <= 1e-9:
        return AxisAngle(np.array([1.0, 0.0, 0.0]), angle)
    return AxisAngle(v / vn, angle)


def quat_from_axis_angle(aa) -> Quaternion:
    """Quaternion of a rotation by ``aa.angle`` degrees about ``aa.axis``.

    Angles above 180 degrees come back through :func:`quat_to_axis_angle` as
    the equivalent ``(-axis, 360 - angle)`` because of the canonical sign.
    """
    axis, angle = aa
    axis = np.asarray(axis, dtype=float)
    half = math.radians(float(angle)) / 2.0
    if abs(float(angle)) <= 1e-9:
        return Quaternion.identity()
    n = float(np.linalg.norm(axis))
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be unit length, |axis| = {n:.12g}")
    return Quaternion.from_array(
        [math.cos(half), *(math.sin(half) * axis / n)], normalize=True
    )


def angular_distance(a: Quaternion, b: Quaternion) -> float:
    """Rotation angle in degrees taking ``b`` to ``a``, folded to ``[0, 180]``."""
    theta = quat_to_axis_angle(quat_mult(a, quat_conj(b))).angle
    return min(theta, 360.0 - theta)


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    """3x3 rotation matrix ``R`` with ``R @ v == q v q*``."""
    s, x, y, z = q.as_array()
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - s * z), 2 * (x * z + s * y)],
            [2 * (x * y + s * z), 1 - 2 * (x * x + z * z), 2 * (y * z - s * x)],
            [2 * (x * z - s * y), 2 * (y * z + s * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(R, tol: float = 1e-6) -> Quaternion:
    """Quaternion of a proper rotation matrix (Shepperd's largest-diagonal branch).

    Raises
    ------
    ValueError
        If ``R`` is not orthonormal with determinant +1 within ``tol``.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation matrix must be 3x3, got shape {R.shape}")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError(
            f"not a proper rotation matrix (orthonormality error {err:.3g}, det {np.linalg.det(R):.9g})"
        )
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    choice = int(np.argmax([tr, R[0, 0], R[1, 1], R[2, 2]]))
    if choice == 0:
        t = math.sqrt(1.0 + tr) * 2.0
        q = [0.25 * t, (R[2, 1] - R[1, 2]) / t, (R[0, 2] - R[2, 0]) / t, (R[1, 0] - R[0, 1]) / t]
    elif choice == 1:
        t = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = [(R[2, 1] - R[1, 2]) / t, 0.25 * t, (R[0, 1] + R[1, 0]) / t, (R[0, 2] + R[2, 0]) / t]
    elif choice == 2:
        t = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = [(R[0, 2] - R[2, 0]) / t, (R[0, 1] + R[1, 0]) / t, 0.25 * t, (R[1, 2] + R[2, 1]) / t]
    else:
        t = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = [(R[1, 0] - R[0, 1]) / t, (R[0, 2] + R[2, 0]) / t, (R[1, 2] + R[2, 1]) / t, 0.25 * t]
    return Quaternion.from_array(q, normalize=True)


def rotate_vector(q: Quaternion, v) -> np.ndarray:
    return quat_to_rotmat(q) @ np.asarray(v, dtype=float)


def random_quaternions(n: int, rng: np.random.Generator) -> list[Quaternion]:
    """``n`` rotations drawn uniformly from SO(3)."""
    g = rng.normal(size=(n, 4))
    return [Quaternion.from_array(row, normalize=True) for row in g]
