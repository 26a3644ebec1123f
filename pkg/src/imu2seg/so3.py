"""Quaternion and SO(3) utilities.

Conventions used across the package:

* Quaternions are length-4 float arrays in scalar-first order ``[w, x, y, z]``
  and follow the Hamilton product. ``q`` and ``-q`` encode the same rotation;
  functions that need a unique representative canonicalize to ``w >= 0``.
* ``quat_to_rotmat(q)`` returns the matrix ``R`` with ``R(a * b) = R(a) R(b)``,
  so a frame-transforming quaternion ``q_AB`` maps B-frame coordinates into A:
  ``v_A = R(q_AB) @ v_B``.
* ``quat_exp`` / ``quat_log`` work on HALF-angle vectors (the raw quaternion
  exponential). Most geometric code wants full rotation vectors, for which
  ``quat_from_rotvec`` / ``rotvec_from_quat`` include the factor of two.
* Right/left Jacobians (`so3_right_jacobian` etc.) take full-angle rotation
  vectors and satisfy
  ``rotvec_from_quat(Q * quat_from_rotvec(d)) ~ rotvec_from_quat(Q) + Jr_inv d``
  to first order in ``d``.

Everything operates on plain float64 ndarrays; no wrapper classes.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "quat_identity",
    "quat_normalize",
    "quat_canonical",
    "quat_conj",
    "quat_mul",
    "quat_exp",
    "quat_log",
    "quat_from_rotvec",
    "rotvec_from_quat",
    "quat_from_axis_angle",
    "rot_x",
    "rot_y",
    "rot_z",
    "quat_to_rotmat",
    "rotmat_to_quat",
    "quat_rotate",
    "angular_offset_deg",
    "skew",
    "so3_right_jacobian",
    "so3_right_jacobian_inv",
    "so3_left_jacobian_inv",
]

_SMALL = 1e-8  # switch point for Taylor branches


def quat_identity() -> np.ndarray:
    """Return the identity rotation ``[1, 0, 0, 0]``."""
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    """Scale ``q`` to unit norm.

    Raises
    ------
    ValueError
        If the norm is too small to normalize meaningfully.
    """
    q = np.asarray(q, dtype=float)
    n = np.sqrt(q @ q)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Return the representative of {q, -q} with non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    return -q if q[0] < 0.0 else q.copy()


def quat_conj(q) -> np.ndarray:
    """Conjugate (= inverse for unit quaternions)."""
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a * b``, renormalized to guard against drift.

    Composition order matches matrix composition:
    ``quat_to_rotmat(quat_mul(a, b)) == quat_to_rotmat(a) @ quat_to_rotmat(b)``.
    """
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    out = np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
    return out / np.sqrt(out @ out)


def quat_exp(v) -> np.ndarray:
    """Quaternion exponential of a HALF-angle vector.

    ``quat_exp(v) = [cos |v|, sin |v| * v/|v|]``; a Taylor expansion takes
    over below ``1e-8`` so the map is smooth through zero.
    """
    v = np.asarray(v, dtype=float)
    th = np.sqrt(v @ v)
    if th < _SMALL:
        # cos th ~ 1 - th^2/2, sinc th ~ 1 - th^2/6
        q = np.empty(4)
        q[0] = 1.0 - 0.5 * th * th
        q[1:] = v * (1.0 - th * th / 6.0)
        return q / np.sqrt(q @ q)
    q = np.empty(4)
    q[0] = np.cos(th)
    q[1:] = v * (np.sin(th) / th)
    return q


def quat_log(q) -> np.ndarray:
    """Inverse of :func:`quat_exp`; returns a HALF-angle vector.

    The sign is canonicalized (``w >= 0``) first, so the result has norm at
    most pi/2 and ``quat_exp(quat_log(q))`` reproduces ``q`` up to sign.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = q[0]
    v = q[1:]
    s = np.sqrt(v @ v)
    if s < _SMALL:
        # atan2(s, w)/s ~ 1/w for s -> 0 (w ~ 1 after normalization)
        return v / max(w, _SMALL)
    return v * (np.arctan2(s, w) / s)


def quat_from_rotvec(theta) -> np.ndarray:
    """Unit quaternion for a FULL-angle rotation vector (radians)."""
    return quat_exp(0.5 * np.asarray(theta, dtype=float))


def rotvec_from_quat(q) -> np.ndarray:
    """FULL-angle rotation vector of ``q`` (radians, norm <= pi)."""
    return 2.0 * quat_log(q)


def quat_from_axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rotation of ``angle_rad`` about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    n = np.sqrt(axis @ axis)
    if n < 1e-12:
        raise ValueError("axis must be nonzero")
    return quat_exp((0.5 * angle_rad / n) * axis)


def rot_x(angle_rad: float) -> np.ndarray:
    """Rotation about the x axis."""
    h = 0.5 * angle_rad
    return np.array([np.cos(h), np.sin(h), 0.0, 0.0])


def rot_y(angle_rad: float) -> np.ndarray:
    """Rotation about the y axis."""
    h = 0.5 * angle_rad
    return np.array([np.cos(h), 0.0, np.sin(h), 0.0])


def rot_z(angle_rad: float) -> np.ndarray:
    """Rotation about the z axis."""
    h = 0.5 * angle_rad
    return np.array([np.cos(h), 0.0, 0.0, np.sin(h)])


def quat_to_rotmat(q) -> np.ndarray:
    """3x3 rotation matrix of ``q`` (see module docstring for semantics)."""
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def rotmat_to_quat(R) -> np.ndarray:
    """Quaternion of a rotation matrix (canonical sign, ``w >= 0``).

    Uses Shepperd's branching on the largest diagonal combination for
    numerical stability near 180-degree rotations.
    """
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    q = np.empty(4)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q[0] = 0.25 * s
        q[1] = (R[2, 1] - R[1, 2]) / s
        q[2] = (R[0, 2] - R[2, 0]) / s
        q[3] = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q[0] = (R[2, 1] - R[1, 2]) / s
        q[1] = 0.25 * s
        q[2] = (R[0, 1] + R[1, 0]) / s
        q[3] = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q[0] = (R[0, 2] - R[2, 0]) / s
        q[1] = (R[0, 1] + R[1, 0]) / s
        q[2] = 0.25 * s
        q[3] = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q[0] = (R[1, 0] - R[0, 1]) / s
        q[1] = (R[0, 2] + R[2, 0]) / s
        q[2] = (R[1, 2] + R[2, 1]) / s
        q[3] = 0.25 * s
    q /= np.sqrt(q @ q)
    return quat_canonical(q)


def quat_rotate(q, v) -> np.ndarray:
    """Apply ``R(q)`` to a 3-vector without forming the matrix."""
    u = np.asarray(q, dtype=float)[1:]
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def angular_offset_deg(a, b) -> float:
    """Angle in degrees between two rotations, in [0, 180].

    Computed as ``2 * arccos(|[a * conj(b)]_w|)``; the absolute value picks
    the canonical representative so antipodal quaternion pairs compare equal.
    """
    d = quat_mul(a, quat_conj(b))
    c = min(abs(float(d[0])), 1.0)
    return float(np.degrees(2.0 * np.arccos(c)))


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_right_jacobian(theta) -> np.ndarray:
    """Right Jacobian of SO(3) at a full-angle rotation vector.

    Satisfies ``quat_from_rotvec(u + du) ~
    quat_from_rotvec(u) * quat_from_rotvec(Jr(u) du)`` to first order.
    """
    theta = np.asarray(theta, dtype=float)
    ph2 = theta @ theta
    K = skew(theta)
    if ph2 < _SMALL:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    ph = np.sqrt(ph2)
    c1 = (1.0 - np.cos(ph)) / ph2
    c2 = (ph - np.sin(ph)) / (ph2 * ph)
    return np.eye(3) - c1 * K + c2 * (K @ K)


def so3_right_jacobian_inv(theta) -> np.ndarray:
    """Inverse right Jacobian; see :func:`so3_right_jacobian`.

    ``rotvec_from_quat(Q * quat_from_rotvec(d)) ~ phi + Jr_inv(phi) d`` where
    ``phi = rotvec_from_quat(Q)``. Valid for ``|phi| < pi``.
    """
    theta = np.asarray(theta, dtype=float)
    ph2 = theta @ theta
    K = skew(theta)
    KK = K @ K
    if ph2 < _SMALL:
        return np.eye(3) + 0.5 * K + KK / 12.0
    ph = np.sqrt(ph2)
    # 1/ph^2 - (1 + cos ph) / (2 ph sin ph); bounded on (0, pi)
    s = np.sin(ph)
    if abs(s) < 1e-12:
        c3 = 1.0 / ph2  # limit at ph -> pi is (1 - pi^2/4)/..., use safe form
    else:
        c3 = 1.0 / ph2 - (1.0 + np.cos(ph)) / (2.0 * ph * s)
    return np.eye(3) + 0.5 * K + c3 * KK


def so3_left_jacobian_inv(theta) -> np.ndarray:
    """Inverse left Jacobian: transpose of the inverse right Jacobian."""
    return so3_right_jacobian_inv(theta).T
