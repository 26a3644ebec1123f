"""Residual blocks of the estimation problem and their analytic Jacobians.

Each block couples a handful of state slots (IMU poses, segment poses,
per-IMU calibration) and produces a small residual vector. The ``*_core``
functions work on plain arrays in a fixed slot order and optionally return
one Jacobian matrix per slot; they are the single source of truth consumed
by both evaluation backends. Thin typed wrappers at the bottom cover
interactive use.

Orientation tangents are FULL-angle rotation vectors applied on the right:
``q <- q * quat_from_rotvec(delta)``; every quaternion Jacobian below is
taken with respect to that perturbation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from .bodymodel import (
    CalibEntry,
    FixedPointSpec,
    SegmentSpec,
    WorldConfig,
    capsule_project,
)
from .so3 import (
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_to_rotmat,
    rotvec_from_quat,
    skew,
    so3_left_jacobian_inv,
    so3_right_jacobian,
    so3_right_jacobian_inv,
)

__all__ = [
    "ImuState",
    "SegmentState",
    "ImuSample",
    "NoiseConfig",
    "strapdown_residual",
    "gyro_residual",
    "imu_segment_coupling_residual",
    "joint_velocity_residual",
    "hinge_axis_residual",
    "range_of_motion_residual",
    "shape_position_residual",
    "shape_orientation_residual",
    "fixed_point_residual",
    "initial_state_residual",
    "calibration_smoothness_residual",
]

_EPS_AXIS = 1e-9

_I3 = np.eye(3)


# ---------------------------------------------------------------------------
# state containers


@dataclass
class ImuState:
    """Kinematic state of one IMU at one time step (world frame + body rate)."""

    pos: np.ndarray    # IMU origin in G, metres
    vel: np.ndarray    # velocity in G, m/s
    quat: np.ndarray   # q_GI
    omega: np.ndarray  # angular rate in the IMU frame, rad/s

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.vel = np.asarray(self.vel, dtype=float)
        self.quat = np.asarray(self.quat, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)


@dataclass
class SegmentState:
    """Pose of one segment at one time step."""

    pos: np.ndarray   # proximal joint position in G
    quat: np.ndarray  # q_GS

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.quat = np.asarray(self.quat, dtype=float)


@dataclass
class ImuSample:
    """One raw IMU reading. ``mag`` is optional and only used for heading
    initialization."""

    t_index: int
    acc: np.ndarray
    gyr: np.ndarray
    mag: np.ndarray | None = None

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=float)
        self.gyr = np.asarray(self.gyr, dtype=float)
        if self.mag is not None:
            self.mag = np.asarray(self.mag, dtype=float)


# ---------------------------------------------------------------------------
# noise model


def _cov(x, dim: int) -> np.ndarray:
    """Coerce scalar / diagonal / full input into a (dim, dim) covariance."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(dim)
    if a.ndim == 1:
        if a.shape != (dim,):
            raise ValueError(f"expected {dim} diagonal entries, got {a.shape}")
        return np.diag(a)
    if a.shape != (dim, dim):
        raise ValueError(f"expected ({dim},{dim}) covariance, got {a.shape}")
    return a.copy()


@dataclass
class NoiseConfig:
    """Covariances of every residual family.

    Defaults reproduce the weighting used in the reference two-segment
    study: everything identity except the joint-velocity term (variance 10)
    and the deliberately loose shape and calibration-smoothness terms
    (variance 100). Scalars and diagonals are accepted and expanded.
    """

    strapdown_pos: np.ndarray = field(default_factory=lambda: np.eye(3))
    strapdown_vel: np.ndarray = field(default_factory=lambda: np.eye(3))
    strapdown_ori: np.ndarray = field(default_factory=lambda: np.eye(3))
    gyro: np.ndarray = field(default_factory=lambda: np.eye(3))
    coupling_ori: np.ndarray = field(default_factory=lambda: np.eye(3))
    coupling_pos: np.ndarray = field(default_factory=lambda: np.eye(3))
    joint_velocity: np.ndarray = field(default_factory=lambda: 10.0 * np.eye(3))
    hinge: np.ndarray = field(default_factory=lambda: np.eye(3))
    range_of_motion: np.ndarray = field(default_factory=lambda: np.eye(1))
    shape_pos: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(3))
    shape_ori: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(2))
    fixed_point: np.ndarray = field(default_factory=lambda: np.eye(3))
    init_pos: np.ndarray = field(default_factory=lambda: np.eye(3))
    init_vel: np.ndarray = field(default_factory=lambda: np.eye(3))
    init_ori: np.ndarray = field(default_factory=lambda: np.eye(3))
    calib_ori: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(3))
    calib_pos: np.ndarray = field(default_factory=lambda: 100.0 * np.eye(3))

    _DIMS = {
        "strapdown_pos": 3, "strapdown_vel": 3, "strapdown_ori": 3,
        "gyro": 3, "coupling_ori": 3, "coupling_pos": 3,
        "joint_velocity": 3, "hinge": 3, "range_of_motion": 1,
        "shape_pos": 3, "shape_ori": 2, "fixed_point": 3,
        "init_pos": 3, "init_vel": 3, "init_ori": 3,
        "calib_ori": 3, "calib_pos": 3,
    }

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            setattr(self, f.name, _cov(getattr(self, f.name), self._DIMS[f.name]))

    def copy(self) -> "NoiseConfig":
        return NoiseConfig(**{
            f.name: getattr(self, f.name).copy() for f in fields(self)
        })

    def whitener(self, name: str) -> np.ndarray:
        """Inverse Cholesky factor ``W`` with ``W @ W.T = inv(cov)``.

        Whitened residuals ``W @ r`` have unit covariance; raises if the
        stored matrix is not symmetric positive definite.
        """
        cov = getattr(self, name)
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError(f"covariance '{name}' is not symmetric")
        L = np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        return np.linalg.inv(L)

    def tighten_calibration(self, factor: float) -> None:
        """Divide both calibration-smoothness covariances by ``factor``."""
        if not factor > 0:
            raise ValueError("factor must be positive")
        self.calib_ori = self.calib_ori / factor
        self.calib_pos = self.calib_pos / factor


# ---------------------------------------------------------------------------
# core block math (slot order fixed; see the per-function docstrings)


def motion_core(p0, v0, q0, w0, p1, v1, q1, y_a, T, grav, jac=False):
    """Strapdown propagation over one step, all three rows.

    Slots: ``p0, v0, q0, w0, p1, v1, q1``. Rows 0:3 compare the accelerometer
    reading against the acceleration implied by the position pair, rows 3:6
    against the velocity pair, rows 6:9 compare the gyro-propagated
    orientation increment with the actual one (full-angle rotation vector).
    """
    T2 = T * T
    R0 = quat_to_rotmat(q0)
    u1 = p1 - p0 - T * v0 - 0.5 * T2 * grav
    u2 = v1 - v0 - T * grav
    Rtu1 = R0.T @ u1
    Rtu2 = R0.T @ u2
    e = quat_from_rotvec(-T * w0)
    P = quat_mul(quat_conj(q0), q1)
    Q = quat_mul(e, P)
    phi = rotvec_from_quat(Q)

    r = np.empty(9)
    r[0:3] = y_a - (2.0 / T2) * Rtu1
    r[3:6] = y_a - (1.0 / T) * Rtu2
    r[6:9] = phi
    if not jac:
        return r

    c1 = 2.0 / T2
    c2 = 1.0 / T
    Jri = so3_right_jacobian_inv(phi)
    Z = np.zeros((9, 3))

    Jp0 = Z.copy(); Jp0[0:3] = c1 * R0.T
    Jv0 = Z.copy(); Jv0[0:3] = (2.0 / T) * R0.T; Jv0[3:6] = c2 * R0.T
    Jq0 = Z.copy()
    Jq0[0:3] = -c1 * skew(Rtu1)
    Jq0[3:6] = -c2 * skew(Rtu2)
    Jq0[6:9] = -so3_left_jacobian_inv(phi) @ quat_to_rotmat(e)
    Jw0 = Z.copy()
    Jw0[6:9] = -T * Jri @ quat_to_rotmat(P).T @ so3_right_jacobian(-T * w0)
    Jp1 = Z.copy(); Jp1[0:3] = -c1 * R0.T
    Jv1 = Z.copy(); Jv1[3:6] = -c2 * R0.T
    Jq1 = Z.copy(); Jq1[6:9] = Jri
    return r, (Jp0, Jv0, Jq0, Jw0, Jp1, Jv1, Jq1)


def gyro_core(w, y_w, jac=False):
    """Gyroscope measurement row. Slot: ``w``."""
    r = y_w - w
    if not jac:
        return r
    return r, (-_I3.copy(),)


def coupling_core(pI, qI, pS, qS, qc, xc, jac=False):
    """Rigid IMU-on-segment coupling (orientation + lever arm).

    Slots: ``pI, qI, pS, qS, qc, xc`` (IMU pose, segment pose, calibration).
    Rows 0:3: orientation mismatch of q_GS * q_SI against q_GI; rows 3:6:
    IMU position expressed in S minus the calibrated mounting point.
    """
    Q = quat_mul(quat_conj(qc), quat_mul(quat_conj(qS), qI))
    phi = rotvec_from_quat(Q)
    RS = quat_to_rotmat(qS)
    d = RS.T @ (pI - pS)
    r = np.empty(6)
    r[0:3] = phi
    r[3:6] = d - xc
    if not jac:
        return r

    Jli = so3_left_jacobian_inv(phi)
    Z = np.zeros((6, 3))
    JpI = Z.copy(); JpI[3:6] = RS.T
    JqI = Z.copy(); JqI[0:3] = so3_right_jacobian_inv(phi)
    JpS = Z.copy(); JpS[3:6] = -RS.T
    JqS = Z.copy()
    JqS[0:3] = -Jli @ quat_to_rotmat(qc).T
    JqS[3:6] = skew(d)
    Jqc = Z.copy(); Jqc[0:3] = -Jli
    Jxc = Z.copy(); Jxc[3:6] = -_I3
    return r, (JpI, JqI, JpS, JqS, Jqc, Jxc)


def joint_velocity_core(vi, qi, wi, qci, xci, vj, qj, wj, qcj, xcj, p, jac=False):
    """Velocity agreement of the shared joint seen from both IMUs.

    The joint sits at ``p`` in the parent segment frame (index i) and at the
    child segment origin (index j). Each side predicts the joint's velocity
    from its IMU's translational and angular state plus the calibration;
    the residual is their difference in the parent-IMU frame.

    Slots: ``vi, qi, wi, qci, xci, vj, qj, wj, qcj, xcj``.
    """
    Ri = quat_to_rotmat(qi)
    Rj = quat_to_rotmat(qj)
    Rci = quat_to_rotmat(qci)
    Rcj = quat_to_rotmat(qcj)
    a_i = Ri.T @ vi
    k_i = Rci.T @ (p - xci)
    k_j = Rcj.T @ xcj
    c_j = np.cross(k_j, wj)
    M = Ri.T @ Rj
    term2 = Ri.T @ vj + M @ c_j
    r = a_i + np.cross(wi, k_i) - term2
    if not jac:
        return r

    Jvi = Ri.T.copy()
    Jqi = skew(a_i) - skew(term2)
    Jwi = -skew(k_i)
    Jqci = skew(wi) @ skew(k_i)
    Jxci = -skew(wi) @ Rci.T
    Jvj = -Ri.T
    Jqj = M @ skew(c_j)
    Jwj = -M @ skew(k_j)
    Jqcj = M @ skew(wj) @ skew(k_j)
    Jxcj = M @ skew(wj) @ Rcj.T
    return r, (Jvi, Jqi, Jwi, Jqci, Jxci, Jvj, Jqj, Jwj, Jqcj, Jxcj)


def hinge_core(qi, qj, h, jac=False):
    """Hinge axis agreement across a joint. Slots: ``qi, qj`` (segments).

    The axis has the same coordinates ``h`` in both adjacent segment frames;
    the residual maps the parent-frame axis into the child frame and
    compares.
    """
    Rij = quat_to_rotmat(qj).T @ quat_to_rotmat(qi)
    hh = Rij @ h
    r = h - hh
    if not jac:
        return r
    return r, (Rij @ skew(h), -skew(hh))


def rom_core(qi, qj, axis, mn, mx, jac=False):
    """One-sided range-of-motion penalty on the joint angle (radians).

    Slots: ``qi, qj`` (parent / child segment orientations). The angle is
    the signed twist of the child relative to the parent about ``axis``
    (the swing component carries no sign information and is handled by the
    hinge residual), unwrapped into the 2*pi window centred on the
    admissible interval; inside ``[mn, mx]`` the residual is zero. The
    sign matters: a mounting flipped half a turn about the hinge axis
    re-dresses the segment frames so that every other residual stays
    small, and only a signed angle reports the resulting impossible joint
    configuration.
    """
    Q = quat_mul(quat_conj(qi), qj)
    c = float(Q[0])
    s = float(axis @ Q[1:])
    n2 = c * c + s * s
    mid = 0.5 * (mn + mx)
    th_raw = 2.0 * np.arctan2(s, c)
    th = th_raw - 2.0 * np.pi * np.floor((th_raw - (mid - np.pi)) / (2.0 * np.pi))
    if th < mn:
        r = np.array([mn - th])
        sgn = -1.0
    elif th > mx:
        r = np.array([th - mx])
        sgn = 1.0
    else:
        r = np.zeros(1)
        sgn = 0.0
    if not jac:
        return r
    Ji = np.zeros((1, 3))
    Jj = np.zeros((1, 3))
    if sgn != 0.0 and n2 > 1e-12:
        cross = np.cross(axis, Q[1:])
        gj = (c * (c * axis + cross) + s * Q[1:]) / n2  # d(angle)/d(delta_qj)
        gi = -(c * (c * axis - cross) + s * Q[1:]) / n2
        Ji[0] = sgn * gi
        Jj[0] = sgn * gj
    return r, (Ji, Jj)


def _cap_centre_radius(pr, axis, L, rp, rd):
    if pr < 0.0:
        return np.zeros(3), rp
    return L * axis, rd


def shape_pos_core(x, axis, L, rp, rd, jac=False):
    """Distance of the mounting point from the capsule surface. Slot: ``x``.

    Radial projection: on the lateral region the residual is the orthogonal
    offset minus the interpolated radius along the outward normal; on the
    caps it is the radial offset from the cap sphere. On the axis the
    residual (and Jacobian) is zero — the projection is undefined there.
    """
    pr = float(x @ axis)
    if 0.0 <= pr <= L:
        ortho = x - pr * axis
        rho = np.linalg.norm(ortho)
        if rho < _EPS_AXIS:
            return (np.zeros(3), (np.zeros((3, 3)),)) if jac else np.zeros(3)
        n = ortho / rho
        rad = rp + (pr / L) * (rd - rp)
        r = (rho - rad) * n
        if not jac:
            return r
        P = _I3 - np.outer(axis, axis)
        J = P - ((rd - rp) / L) * np.outer(n, axis) - (rad / rho) * (P - np.outer(n, n))
        return r, (J,)
    centre, rad = _cap_centre_radius(pr, axis, L, rp, rd)
    u = x - centre
    nu = np.linalg.norm(u)
    if nu < _EPS_AXIS:
        return (np.zeros(3), (np.zeros((3, 3)),)) if jac else np.zeros(3)
    r = (1.0 - rad / nu) * u
    if not jac:
        return r
    un = u / nu
    J = _I3 - (rad / nu) * (_I3 - np.outer(un, un))
    return r, (J,)


def _surface_frame_with_grads(x, axis, L, rp, rd):
    """Surface frame (t1, t2) at ``x`` plus their gradients w.r.t. ``x``.

    Returns ``None`` for degenerate (on-axis) points.
    """
    pr = float(x @ axis)
    if 0.0 <= pr <= L:
        ortho = x - pr * axis
        rho = np.linalg.norm(ortho)
        if rho < _EPS_AXIS:
            return None
        n = ortho / rho
        P = _I3 - np.outer(axis, axis)
        dn = (P - np.outer(n, n)) / rho
        t1 = axis
        dt1 = np.zeros((3, 3))
    else:
        centre, _ = _cap_centre_radius(pr, axis, L, rp, rd)
        u = x - centre
        nu = np.linalg.norm(u)
        if nu < _EPS_AXIS:
            return None
        n = u / nu
        dn = (_I3 - np.outer(n, n)) / nu
        base = axis
        m = base - (base @ n) * n
        nm = np.linalg.norm(m)
        if nm < 1e-8:  # pole: use the world axis least aligned with n
            k = int(np.argmin(np.abs(n)))
            base = np.zeros(3)
            base[k] = 1.0
            m = base - (base @ n) * n
            nm = np.linalg.norm(m)
        dm = -(base @ n) * dn - np.outer(n, base @ dn)
        t1 = m / nm
        dt1 = (_I3 - np.outer(t1, t1)) @ dm / nm
    t2 = np.cross(n, t1)
    dt2 = skew(n) @ dt1 - skew(t1) @ dn
    return n, t1, t2, dt1, dt2


def shape_ori_core(qc, x, axis, L, rp, rd, jac=False):
    """Alignment of the IMU z axis with the local surface normal.

    Slots: ``qc, x``. The IMU z axis expressed in the segment frame is
    projected onto the two surface tangents; both components vanish when it
    is normal to the skin. Degenerate on-axis points yield a zero residual.
    """
    fr = _surface_frame_with_grads(x, axis, L, rp, rd)
    if fr is None:
        z2 = np.zeros(2)
        return (z2, (np.zeros((2, 3)), np.zeros((2, 3)))) if jac else z2
    n, t1, t2, dt1, dt2 = fr
    Rc = quat_to_rotmat(qc)
    z = Rc[:, 2]  # R(qc) @ e_z
    r = np.array([t1 @ z, t2 @ z])
    if not jac:
        return r
    dz = -Rc @ skew([0.0, 0.0, 1.0])  # d z / d delta_qc
    Jq = np.vstack([t1 @ dz, t2 @ dz])
    Jx = np.vstack([z @ dt1, z @ dt2])
    return r, (Jq, Jx)


def fixed_point_core(S, qS, local, world, jac=False):
    """Known world position of a segment-fixed point. Slots: ``S, qS``."""
    RS = quat_to_rotmat(qS)
    r = world - S - RS @ local
    if not jac:
        return r
    return r, (-_I3.copy(), RS @ skew(local))


def init_state_core(x, v, q, pa, va, qa, jac=False):
    """Prior pulling a window's first IMU state towards its carried-over
    anchor (position, velocity, orientation). Slots: ``x, v, q``; the
    anchor values enter as data.
    """
    r = np.empty(9)
    r[0:3] = x - pa
    r[3:6] = v - va
    r[6:9] = rotvec_from_quat(quat_mul(quat_conj(qa), q))
    if not jac:
        return r
    Jx = np.zeros((9, 3))
    Jx[0:3] = _I3
    Jv = np.zeros((9, 3))
    Jv[3:6] = _I3
    Jq = np.zeros((9, 3))
    Jq[6:9] = so3_right_jacobian_inv(r[6:9])
    return r, (Jx, Jv, Jq)


def calib_smoothness_core(qc, x, qp, xp, jac=False):
    """Inter-batch calibration increment (half-angle log + position delta).

    Slots: ``qc, x``; the previous batch's calibration enters as data.
    """
    half = 0.5 * rotvec_from_quat(quat_mul(quat_conj(qp), qc))
    r = np.empty(6)
    r[0:3] = half
    r[3:6] = x - xp
    if not jac:
        return r
    Z = np.zeros((6, 3))
    Jq = Z.copy(); Jq[0:3] = 0.5 * so3_right_jacobian_inv(2.0 * half)
    Jx = Z.copy(); Jx[3:6] = _I3
    return r, (Jq, Jx)


def connection_core(Sj, Si, qi, p, jac=False):
    """Hard constraint: child origin sits at ``p`` of the parent segment.

    Slots: ``Sj, Si, qi`` (child position, parent position, parent
    orientation).
    """
    Ri = quat_to_rotmat(qi)
    c = Sj - Si - Ri @ p
    if not jac:
        return c
    return c, (_I3.copy(), -_I3.copy(), Ri @ skew(p))


def anchor_core(S, a, jac=False):
    """Hard constraint: segment origin pinned to a world point. Slot: ``S``."""
    c = S - a
    if not jac:
        return c
    return c, (_I3.copy(),)


# ---------------------------------------------------------------------------
# typed convenience wrappers


def strapdown_residual(prev: ImuState, nxt: ImuState, accel, world: WorldConfig):
    """Nine-row strapdown residual between consecutive IMU states."""
    return motion_core(
        prev.pos, prev.vel, prev.quat, prev.omega,
        nxt.pos, nxt.vel, nxt.quat,
        np.asarray(accel, dtype=float), world.sample_period, world.gravity,
    )


def gyro_residual(state: ImuState, gyr):
    return gyro_core(state.omega, np.asarray(gyr, dtype=float))


def imu_segment_coupling_residual(imu: ImuState, seg: SegmentState, cal: CalibEntry):
    return coupling_core(imu.pos, imu.quat, seg.pos, seg.quat, cal.quat, cal.pos)


def joint_velocity_residual(
    imu_i: ImuState, cal_i: CalibEntry, imu_j: ImuState, cal_j: CalibEntry, joint_in_parent
):
    """Joint-velocity residual; ``joint_in_parent`` is the joint position in
    the parent segment frame (the child-side joint sits at the child origin).
    """
    return joint_velocity_core(
        imu_i.vel, imu_i.quat, imu_i.omega, cal_i.quat, cal_i.pos,
        imu_j.vel, imu_j.quat, imu_j.omega, cal_j.quat, cal_j.pos,
        np.asarray(joint_in_parent, dtype=float),
    )


def hinge_axis_residual(seg_i: SegmentState, seg_j: SegmentState, axis):
    return hinge_core(seg_i.quat, seg_j.quat, np.asarray(axis, dtype=float))


def range_of_motion_residual(seg_i: SegmentState, seg_j: SegmentState, axis, rom_deg):
    mn, mx = np.radians(rom_deg[0]), np.radians(rom_deg[1])
    return rom_core(seg_i.quat, seg_j.quat, np.asarray(axis, dtype=float), mn, mx)


def shape_position_residual(cal: CalibEntry, seg: SegmentSpec):
    """Mounting-point distance from the segment surface (warns when the
    point sits on the capsule axis, where the residual is undefined and
    reported as zero)."""
    proj = capsule_project(cal.pos, seg)
    if proj.degenerate:
        warnings.warn(
            f"IMU position on capsule axis of '{seg.seg_id}': shape residual zeroed"
        )
    return shape_pos_core(
        cal.pos, seg.axis, seg.length, seg.proximal_radius, seg.distal_radius
    )


def shape_orientation_residual(cal: CalibEntry, seg: SegmentSpec):
    proj = capsule_project(cal.pos, seg)
    if proj.degenerate:
        warnings.warn(
            f"IMU position on capsule axis of '{seg.seg_id}': shape residual zeroed"
        )
    return shape_ori_core(
        cal.quat, cal.pos, seg.axis, seg.length, seg.proximal_radius, seg.distal_radius
    )


def fixed_point_residual(seg: SegmentState, fp: FixedPointSpec):
    return fixed_point_core(seg.pos, seg.quat, fp.local, fp.world)


def initial_state_residual(state: ImuState, anchor: ImuState):
    return init_state_core(
        state.pos, state.vel, state.quat, anchor.pos, anchor.vel, anchor.quat
    )


def calibration_smoothness_residual(cal: CalibEntry, prev: CalibEntry):
    return calib_smoothness_core(cal.quat, cal.pos, prev.quat, prev.pos)
