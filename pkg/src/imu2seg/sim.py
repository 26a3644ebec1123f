"""Synthetic data generation and the reference two-segment scenario.

The generator builds motion that is exactly consistent with the discrete
measurement model used by the estimator: orientations come from forward
kinematics, angular rates are the exact per-step orientation increments,
velocities satisfy the trapezoidal position/velocity identity, and the
accelerometer stream is back-computed from the velocity differences. With
those choices all residual blocks vanish at the true trajectory up to
floating-point noise — except the joint-velocity block, which compares
instantaneous point velocities and is inherently O(T) away from any
discrete trajectory during accelerated motion.

The reference scenario is a chain of two 0.3 m segments: a ball joint pins
the lower segment to the world origin, a hinge (x axis, range 0..162 deg)
connects the upper one, and each segment carries one IMU on the lateral
capsule surface. All four rotational degrees of freedom follow the same
smooth angle profile.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bodymodel import (
    BodyModel,
    CalibEntry,
    FixedPointSpec,
    I2SCalibration,
    ImuAttachment,
    JointSpec,
    SegmentSpec,
    WorldConfig,
)
from .residuals import ImuSample, ImuState, SegmentState
from .so3 import (
    angular_offset_deg,
    quat_conj,
    quat_from_axis_angle,
    quat_identity,
    quat_log,
    quat_mul,
    quat_rotate,
    quat_to_rotmat,
    rot_x,
    rot_y,
    rot_z,
)

__all__ = [
    "MotionProfile",
    "SimResult",
    "reference_model",
    "reference_calibration",
    "reference_joint_rotations",
    "forward_kinematics",
    "synthesize",
    "reference_dataset",
    "apply_heading_offset",
    "calibration_offset_deg",
]


@dataclass
class MotionProfile:
    """Shared single-DoF angle profile: ``sin(a/2) sin(a) * amplitude`` with
    ``a`` sweeping 0..2*pi over the stream."""

    n_steps: int = 629
    amplitude_rad: float = np.pi

    def angle(self, t: int) -> float:
        a = 2.0 * np.pi * t / self.n_steps
        return float(np.sin(0.5 * a) * np.sin(a) * self.amplitude_rad)


def reference_model(sample_period: float = 0.01) -> BodyModel:
    """Two-segment chain (ball root + hinge) with one IMU per segment."""
    segments = {
        "seg0": SegmentSpec("seg0", [0.0, 0.0, 0.3], 0.1, 0.1),
        "seg1": SegmentSpec("seg1", [0.0, 0.0, 0.3], 0.1, 0.1),
    }
    joints = [
        JointSpec("j0", None, "seg0", kind="ball"),
        JointSpec("j1", "seg0", "seg1", kind="hinge",
                  axis=[1.0, 0.0, 0.0], rom_deg=(0.0, 162.0)),
    ]
    imus = [ImuAttachment("imu0", "seg0"), ImuAttachment("imu1", "seg1")]
    fixed = [FixedPointSpec("seg0", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])]
    world = WorldConfig(sample_period=sample_period)
    return BodyModel(segments, joints, imus, fixed, world)


def reference_calibration(model: BodyModel) -> I2SCalibration:
    """True mounting of the reference IMUs: on the lateral surface at
    mid-height, z axis along the outward normal (+x of the segment)."""
    cal = I2SCalibration()
    for imu_id in model.imu_ids:
        cal[imu_id] = CalibEntry(rot_y(np.pi / 2), [0.1, 0.0, 0.15])
    return cal


def reference_joint_rotations(
    model: BodyModel, profile: MotionProfile
) -> dict[str, list[np.ndarray]]:
    """Per-joint rotation streams for the shared angle profile.

    Ball joints rotate about x, y and z by the same angle; hinge joints
    rotate about their axis by the angle clipped into the allowed range.
    """
    out: dict[str, list[np.ndarray]] = {}
    for j in model.joints:
        qs = []
        for t in range(profile.n_steps):
            phi = profile.angle(t)
            if j.kind == "hinge":
                if j.rom_deg is not None:
                    lo, hi = np.radians(j.rom_deg[0]), np.radians(j.rom_deg[1])
                    phi = min(max(phi, lo), hi)
                qs.append(quat_from_axis_angle(j.axis, phi))
            else:
                qs.append(
                    quat_mul(rot_x(phi), quat_mul(rot_y(phi), rot_z(phi)))
                )
        out[j.joint_id] = qs
    return out


def forward_kinematics(
    model: BodyModel, joint_rotation: dict[str, np.ndarray]
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Segment poses for one set of per-joint relative rotations."""
    pos: dict[str, np.ndarray] = {}
    quat: dict[str, np.ndarray] = {}
    for sid in model.topological_segments():
        j = model.parent_joint_of(sid)
        q_rel = joint_rotation.get(j.joint_id, quat_identity())
        if j.parent is None:
            pos[sid] = j.world_anchor.copy()
            quat[sid] = q_rel
        else:
            pos[sid] = pos[j.parent] + quat_rotate(
                quat[j.parent], model.segments[j.parent].vector
            )
            quat[sid] = quat_mul(quat[j.parent], q_rel)
    return pos, quat


@dataclass
class SimResult:
    """Ground-truth trajectory plus the synthetic measurement streams."""

    model: BodyModel
    calib: I2SCalibration
    seg_pos: np.ndarray    # (N, n_seg, 3)
    seg_quat: np.ndarray   # (N, n_seg, 4)
    imu_pos: np.ndarray    # (N, n_imu, 3)
    imu_vel: np.ndarray
    imu_quat: np.ndarray
    imu_omega: np.ndarray
    acc: np.ndarray        # (N, n_imu, 3) accelerometer readings
    gyr: np.ndarray
    mag: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.acc.shape[0]

    @property
    def imu_ids(self) -> list[str]:
        return self.model.imu_ids

    @property
    def seg_ids(self) -> list[str]:
        return self.model.segment_ids

    def imu_index(self, imu_id: str) -> int:
        return self.imu_ids.index(imu_id)

    def seg_index(self, seg_id: str) -> int:
        return self.seg_ids.index(seg_id)

    def samples_for(self, imu_id: str, lo: int = 0, hi: int | None = None) -> list[ImuSample]:
        k = self.imu_index(imu_id)
        hi = self.n_steps if hi is None else hi
        return [
            ImuSample(t, self.acc[t, k], self.gyr[t, k], self.mag[t, k])
            for t in range(lo, hi)
        ]

    def imu_state(self, t: int, imu_id: str) -> ImuState:
        k = self.imu_index(imu_id)
        return ImuState(
            self.imu_pos[t, k], self.imu_vel[t, k],
            self.imu_quat[t, k], self.imu_omega[t, k],
        )

    def seg_state(self, t: int, seg_id: str) -> SegmentState:
        s = self.seg_index(seg_id)
        return SegmentState(self.seg_pos[t, s], self.seg_quat[t, s])


def synthesize(
    model: BodyModel,
    calib: I2SCalibration,
    joint_rotations: dict[str, list[np.ndarray]],
    *,
    gyro_noise_std: float = 0.0,
    accel_noise_std: float = 0.0,
    seed: int | None = None,
) -> SimResult:
    """Generate a consistent trajectory + measurements for given joint motion.

    See the module docstring for the consistency construction. Optional
    white noise (standard deviations in rad/s and m/s^2) is added to the
    measurement streams only; the ground-truth states stay exact.
    """
    n_steps = {len(v) for v in joint_rotations.values()}
    if len(n_steps) != 1:
        raise ValueError("all joint rotation streams must share one length")
    N = n_steps.pop()
    if N < 4:
        raise ValueError("need at least 4 steps")
    T = model.world.sample_period
    grav = model.world.gravity
    mag_ref = model.world.magnetic_field
    seg_ids = model.segment_ids
    imu_ids = model.imu_ids
    nS, nI = len(seg_ids), len(imu_ids)

    seg_pos = np.zeros((N, nS, 3))
    seg_quat = np.zeros((N, nS, 4))
    imu_pos = np.zeros((N, nI, 3))
    imu_quat = np.zeros((N, nI, 4))

    for t in range(N):
        rot_t = {jid: joint_rotations[jid][t] for jid in joint_rotations}
        pos, quat = forward_kinematics(model, rot_t)
        for s, sid in enumerate(seg_ids):
            seg_pos[t, s] = pos[sid]
            seg_quat[t, s] = quat[sid]
        for k, iid in enumerate(imu_ids):
            sid = model.segment_of_imu(iid)
            entry = calib[iid]
            imu_quat[t, k] = quat_mul(quat[sid], entry.quat)
            imu_pos[t, k] = pos[sid] + quat_rotate(quat[sid], entry.pos)

    # exact per-step angular rate: the orientation increment over T
    imu_omega = np.zeros((N, nI, 3))
    for k in range(nI):
        for t in range(N - 1):
            d = quat_mul(quat_conj(imu_quat[t, k]), imu_quat[t + 1, k])
            imu_omega[t, k] = (2.0 / T) * quat_log(d)
        imu_omega[N - 1, k] = imu_omega[N - 2, k]

    # velocities: zigzag recursion consistent with the trapezoid identity,
    # seeded so the alternating homogeneous mode is removed
    imu_vel = np.zeros((N, nI, 3))
    for k in range(nI):
        d = (imu_pos[1:, k] - imu_pos[:-1, k]) / T          # (N-1, 3)
        central = (imu_pos[2:, k] - imu_pos[:-2, k]) / (2 * T)  # t = 1..N-2
        v = np.zeros((N, 3))
        v[0] = d[0]
        for t in range(N - 1):
            v[t + 1] = 2.0 * d[t] - v[t]
        signs = np.array([(-1.0) ** t for t in range(1, N - 1)])[:, None]
        err = np.mean(signs * (v[1:N - 1] - central), axis=0)
        v[0] = d[0] - err
        for t in range(N - 1):
            v[t + 1] = 2.0 * d[t] - v[t]
        imu_vel[:, k] = v

    acc = np.zeros((N, nI, 3))
    gyr = imu_omega.copy()
    mag = np.zeros((N, nI, 3))
    for k in range(nI):
        for t in range(N):
            R = quat_to_rotmat(imu_quat[t, k])
            if t < N - 1:
                a_world = (imu_vel[t + 1, k] - imu_vel[t, k]) / T
                acc[t, k] = R.T @ (a_world - grav)
            else:
                acc[t, k] = acc[t - 1, k]
            mag[t, k] = R.T @ mag_ref

    if gyro_noise_std > 0.0 or accel_noise_std > 0.0:
        rng = np.random.default_rng(seed)
        if gyro_noise_std > 0.0:
            gyr = gyr + rng.normal(0.0, gyro_noise_std, gyr.shape)
        if accel_noise_std > 0.0:
            acc = acc + rng.normal(0.0, accel_noise_std, acc.shape)

    return SimResult(
        model, calib.copy(), seg_pos, seg_quat,
        imu_pos, imu_vel, imu_quat, imu_omega, acc, gyr, mag,
    )


def reference_dataset(
    n_steps: int = 629,
    *,
    sample_period: float = 0.01,
    amplitude_rad: float = np.pi,
    gyro_noise_std: float = 0.0,
    accel_noise_std: float = 0.0,
    seed: int | None = None,
) -> SimResult:
    """The full reference study input: model, true calibration and motion."""
    model = reference_model(sample_period)
    calib = reference_calibration(model)
    profile = MotionProfile(n_steps, amplitude_rad)
    rots = reference_joint_rotations(model, profile)
    return synthesize(
        model, calib, rots,
        gyro_noise_std=gyro_noise_std,
        accel_noise_std=accel_noise_std,
        seed=seed,
    )


def apply_heading_offset(
    entry: CalibEntry, imu_z_deg: float, seg_z_deg: float
) -> CalibEntry:
    """Disturb a calibration entry by heading rotations on both sides.

    ``imu_z_deg`` rotates about the IMU's own z axis (right factor),
    ``seg_z_deg`` about the segment's z axis (left factor, also moving the
    mounting point). Both leave a z-normal surface mount on the surface.
    """
    b = np.radians(imu_z_deg)
    g = np.radians(seg_z_deg)
    q = quat_mul(rot_z(g), quat_mul(entry.quat, rot_z(b)))
    p = quat_rotate(rot_z(g), entry.pos)
    return CalibEntry(q, p)


def calibration_offset_deg(a: CalibEntry, b: CalibEntry) -> tuple[float, float]:
    """(orientation offset in degrees, position offset in metres)."""
    return (
        angular_offset_deg(a.quat, b.quat),
        float(np.linalg.norm(a.pos - b.pos)),
    )
