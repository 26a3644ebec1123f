"""Residual definitions: zero cases, frozen values, noise handling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_unit_quat
from imu2seg.bodymodel import (
    CalibEntry,
    FixedPointSpec,
    SegmentSpec,
    WorldConfig,
)
from imu2seg.residuals import (
    ImuSample,
    ImuState,
    NoiseConfig,
    SegmentState,
    calibration_smoothness_residual,
    fixed_point_residual,
    gyro_residual,
    hinge_axis_residual,
    imu_segment_coupling_residual,
    initial_state_residual,
    joint_velocity_residual,
    range_of_motion_residual,
    shape_orientation_residual,
    shape_position_residual,
    strapdown_residual,
)
from imu2seg.so3 import (
    quat_conj,
    quat_identity,
    quat_mul,
    quat_rotate,
    rot_x,
    rot_y,
    rot_z,
)

WORLD = WorldConfig()
SEG = SegmentSpec("s", [0.0, 0.0, 0.3], 0.1, 0.1)


def _state(pos=(0, 0, 0), vel=(0, 0, 0), quat=None, omega=(0, 0, 0)):
    return ImuState(
        np.asarray(pos, float), np.asarray(vel, float),
        quat_identity() if quat is None else quat, np.asarray(omega, float),
    )


# -- strapdown ---------------------------------------------------------------


def test_strapdown_zero_constant_velocity():
    T = WORLD.sample_period
    v = np.array([1.0, -0.5, 0.25])
    prev = _state(pos=(0, 0, 0), vel=v)
    nxt = _state(pos=T * v, vel=v)
    accel = -WORLD.gravity  # reads +9.81 on z while not accelerating
    r = strapdown_residual(prev, nxt, accel, WORLD)
    assert np.max(np.abs(r)) < 1e-12


def test_strapdown_zero_with_acceleration_and_rotation():
    T = WORLD.sample_period
    q0 = quat_mul(rot_z(0.3), rot_x(-0.2))
    omega = np.array([0.0, 0.0, 2.0])
    q1 = quat_mul(q0, rot_z(2.0 * T))
    y_a = np.array([1.0, 0.0, 0.0])
    a_world = quat_rotate(q0, y_a) + WORLD.gravity
    v0 = np.array([0.2, 0.0, -0.1])
    v1 = v0 + T * a_world
    p0 = np.array([1.0, 2.0, 3.0])
    p1 = p0 + 0.5 * T * (v0 + v1)
    r = strapdown_residual(
        _state(p0, v0, q0, omega), _state(p1, v1, q1, omega), y_a, WORLD
    )
    assert np.max(np.abs(r)) < 1e-10


def test_strapdown_position_row_scale():
    # a position inconsistency of e shows up as (2/T^2) * e in the first rows
    T = WORLD.sample_period
    v = np.zeros(3)
    prev = _state(vel=v)
    nxt = _state(pos=(1e-4, 0, 0), vel=v)
    r = strapdown_residual(prev, nxt, -WORLD.gravity, WORLD)
    assert abs(r[0] + (2.0 / T**2) * 1e-4) < 1e-9
    assert np.max(np.abs(r[3:])) < 1e-12


# -- gyro --------------------------------------------------------------------


def test_gyro_residual_is_difference():
    st_ = _state(omega=(0.1, 0.2, 0.3))
    r = gyro_residual(st_, [0.1, 0.25, 0.3])
    np.testing.assert_allclose(r, [0.0, 0.05, 0.0], atol=1e-15)


# -- coupling ----------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_coupling_zero_when_consistent(seed):
    rng = np.random.default_rng(seed)
    qS = random_unit_quat(rng)
    qc = random_unit_quat(rng)
    xc = rng.normal(0, 0.3, 3)
    S = rng.normal(0, 1, 3)
    imu = _state(pos=S + quat_rotate(qS, xc), quat=quat_mul(qS, qc))
    seg = SegmentState(S, qS)
    r = imu_segment_coupling_residual(imu, seg, CalibEntry(qc, xc))
    assert np.max(np.abs(r)) < 1e-9


def test_coupling_orientation_rows_measure_mismatch():
    qS = rot_z(0.4)
    qc = rot_y(0.7)
    delta = 0.01
    imu = _state(quat=quat_mul(quat_mul(qS, qc), rot_x(delta)))
    seg = SegmentState(np.zeros(3), qS)
    r = imu_segment_coupling_residual(imu, seg, CalibEntry(qc, np.zeros(3)))
    np.testing.assert_allclose(r[:3], [delta, 0, 0], atol=1e-12)
    np.testing.assert_allclose(r[3:], 0, atol=1e-12)


# -- joint velocity ----------------------------------------------------------


def test_joint_velocity_zero_for_consistent_rates():
    rng = np.random.default_rng(7)
    p = np.array([0.0, 0.0, 0.3])      # joint in the parent frame
    cal_i = CalibEntry(random_unit_quat(rng), rng.normal(0, 0.2, 3))
    cal_j = CalibEntry(random_unit_quat(rng), rng.normal(0, 0.2, 3))
    qi, qj = random_unit_quat(rng), random_unit_quat(rng)
    wi, wj = rng.normal(0, 2, 3), rng.normal(0, 2, 3)
    vi = rng.normal(0, 1, 3)
    # the joint's world velocity as seen from the parent IMU, then the child
    # IMU velocity that makes both sides agree exactly
    k_i = quat_rotate(quat_conj(cal_i.quat), p - cal_i.pos)
    k_j = quat_rotate(quat_conj(cal_j.quat), cal_j.pos)
    v_joint = vi + quat_rotate(qi, np.cross(wi, k_i))
    vj = v_joint + quat_rotate(qj, np.cross(wj, k_j))
    r = joint_velocity_residual(
        _state(vel=vi, quat=qi, omega=wi), cal_i,
        _state(vel=vj, quat=qj, omega=wj), cal_j, p,
    )
    assert np.max(np.abs(r)) < 1e-10


def test_joint_velocity_nonzero_for_mismatched_rates():
    cal = CalibEntry(quat_identity(), np.zeros(3))
    r = joint_velocity_residual(
        _state(vel=(1, 0, 0)), cal, _state(vel=(0, 0, 0)), cal, [0, 0, 0.3]
    )
    np.testing.assert_allclose(r, [1, 0, 0], atol=1e-12)


# -- hinge / range of motion -------------------------------------------------


def test_hinge_zero_for_axis_rotation():
    qi = quat_mul(rot_y(0.3), rot_z(-0.8))
    qj = quat_mul(qi, rot_x(1.2))  # hinge axis x
    r = hinge_axis_residual(SegmentState(np.zeros(3), qi),
                            SegmentState(np.zeros(3), qj), [1, 0, 0])
    assert np.max(np.abs(r)) < 1e-12


def test_hinge_frozen_off_axis():
    qi = quat_identity()
    qj = quat_mul(qi, rot_z(np.pi / 2))
    r = hinge_axis_residual(SegmentState(np.zeros(3), qi),
                            SegmentState(np.zeros(3), qj), [1, 0, 0])
    np.testing.assert_allclose(r, [1.0, 1.0, 0.0], atol=1e-12)


def test_rom_returns_single_row():
    qi = rot_x(np.radians(45.0))
    r = range_of_motion_residual(
        SegmentState(np.zeros(3), quat_identity()),
        SegmentState(np.zeros(3), qi),
        [1, 0, 0],
        (0.0, 90.0),
    )
    assert r.shape == (1,)


def test_rom_penalties():
    z = np.zeros(3)
    ident = SegmentState(z, quat_identity())

    def rom(theta_deg, lo, hi):
        seg_j = SegmentState(z, rot_x(np.radians(theta_deg)))
        return range_of_motion_residual(ident, seg_j, [1, 0, 0], (lo, hi))[0]

    assert rom(45, 0, 90) == 0.0
    assert abs(rom(120, 0, 90) - np.radians(30)) < 1e-12
    # violations are reported as positive magnitudes on either side
    assert abs(rom(20, 30, 90) - np.radians(10)) < 1e-12
    # the angle is signed: a -30 degree twist about the axis violates a
    # lower bound of zero by 30 degrees instead of reading as +30
    assert abs(rom(-30, 0, 90) - np.radians(30)) < 1e-12
    # boundary inclusive on both sides
    assert rom(0, 0, 90) == 0.0
    assert rom(90, 0, 90) == 0.0
    # a mounting flipped half a turn shows up as a gross violation (the
    # wrap centred on the admissible interval caps it at 99 degrees here)
    assert rom(72 - 180, 0, 162) > np.radians(80)


# -- shape prior -------------------------------------------------------------


def test_shape_position_zero_on_surface():
    r = shape_position_residual(CalibEntry(quat_identity(), [0.1, 0, 0.15]), SEG)
    assert np.max(np.abs(r)) < 1e-12


def test_shape_position_lateral_frozen():
    r = shape_position_residual(CalibEntry(quat_identity(), [0.2, 0, 0.15]), SEG)
    np.testing.assert_allclose(r, [0.1, 0, 0], atol=1e-12)


def test_shape_position_beyond_distal_frozen():
    r = shape_position_residual(CalibEntry(quat_identity(), [0.0, 0, 0.45]), SEG)
    np.testing.assert_allclose(r, [0, 0, 0.05], atol=1e-12)


def test_shape_orientation_aligned_is_zero():
    r = shape_orientation_residual(CalibEntry(rot_y(np.pi / 2), [0.1, 0, 0.15]), SEG)
    assert np.max(np.abs(r)) < 1e-12


def test_shape_orientation_tilt_frozen():
    q = quat_mul(rot_y(np.pi / 2), rot_x(0.1))
    r = shape_orientation_residual(CalibEntry(q, [0.1, 0, 0.15]), SEG)
    np.testing.assert_allclose(sorted(np.abs(r)), [0.0, np.sin(0.1)], atol=1e-12)


def test_shape_degenerate_position_warns_and_zeroes():
    with pytest.warns(UserWarning):
        r = shape_position_residual(CalibEntry(quat_identity(), [0, 0, 0.15]), SEG)
    np.testing.assert_allclose(r, 0, atol=1e-15)


# -- remaining priors --------------------------------------------------------


def test_fixed_point_residual():
    fp = FixedPointSpec("s", [0, 0, 0.3], [0, 0, 1])
    seg = SegmentState(np.array([0.0, 0.0, 0.7]), quat_identity())
    r = fixed_point_residual(seg, fp)
    np.testing.assert_allclose(r, 0, atol=1e-12)
    seg2 = SegmentState(np.array([0.0, 0.0, 0.7]), rot_x(np.pi / 2))
    r2 = fixed_point_residual(seg2, fp)
    # local +z now points along -y in the world
    np.testing.assert_allclose(r2, [0, 0.3, 0.3], atol=1e-12)


def test_initial_state_residual():
    qa = rot_y(0.5)
    anchor = _state(quat=qa)
    st_ = _state(quat=quat_mul(qa, rot_z(0.2)))
    st_.pos = anchor.pos + np.array([0.1, 0.0, 0.0])
    st_.vel = anchor.vel + np.array([0.0, -0.2, 0.0])
    r = initial_state_residual(st_, anchor)
    np.testing.assert_allclose(r[0:3], [0.1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(r[3:6], [0, -0.2, 0], atol=1e-12)
    np.testing.assert_allclose(r[6:9], [0, 0, 0.2], atol=1e-12)


def test_calibration_smoothness_halves_rotation():
    prev = CalibEntry(quat_identity(), [0.1, 0, 0.15])
    cal = CalibEntry(rot_x(np.radians(5.0)), [0.1, 0.02, 0.15])
    r = calibration_smoothness_residual(cal, prev)
    assert abs(2.0 * np.linalg.norm(r[:3]) - np.radians(5.0)) < 1e-12
    np.testing.assert_allclose(r[3:], [0, 0.02, 0], atol=1e-12)


# -- noise configuration -----------------------------------------------------


def test_whitener_inverse_sqrt_of_covariance():
    cfg = NoiseConfig(gyro=4.0)
    W = cfg.whitener("gyro")
    np.testing.assert_allclose(W, 0.5 * np.eye(3), atol=1e-12)


def test_tighten_calibration_scales_only_calib_terms():
    cfg = NoiseConfig()
    before_cal = cfg.whitener("calib_ori")
    before_gyro = cfg.whitener("gyro")
    cfg.tighten_calibration(10.0)
    np.testing.assert_allclose(
        cfg.whitener("calib_ori"), np.sqrt(10.0) * before_cal, atol=1e-12
    )
    np.testing.assert_allclose(cfg.whitener("gyro"), before_gyro, atol=1e-12)


def test_noise_copy_is_independent():
    cfg = NoiseConfig()
    cp = cfg.copy()
    cp.tighten_calibration(10.0)
    np.testing.assert_allclose(cfg.whitener("calib_ori"),
                               NoiseConfig().whitener("calib_ori"))


def test_imu_sample_holds_arrays():
    s = ImuSample(3, [1, 2, 3], [4, 5, 6])
    assert s.t_index == 3
    assert s.mag is None
    np.testing.assert_allclose(s.acc, [1, 2, 3])
