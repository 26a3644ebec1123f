"""Batch layout, tape assembly, packing and retraction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    full_problem,
    random_samples,
    random_state,
    reference_problem_w10,
)
from imu2seg.bodymodel import I2SCalibration
from imu2seg.problem import BatchLayout, TermMask, build_problem
from imu2seg.sim import reference_model


def test_reference_dimensions():
    pb = reference_problem_w10()
    assert pb.n_raw == 414
    assert pb.n_tan == 372
    assert pb.n_con == 60


def test_reference_block_counts():
    pb = reference_problem_w10()
    assert pb.block_counts() == {
        "strapdown": 18,
        "gyro": 20,
        "coupling": 20,
        "joint_velocity": 10,
        "hinge": 10,
        "range_of_motion": 10,
        "fixed_point": 10,
        "init_state": 2,
        "shape_pos": 2,
        "shape_ori": 2,
        "calib_smooth": 2,
        "connection": 10,
        "anchor": 10,
    }


def test_soft_and_hard_rows_partition():
    pb = reference_problem_w10()
    soft = sorted(
        (b.row_offset, b.rows) for b in pb.blocks if not b.hard
    )
    hard = sorted((b.row_offset, b.rows) for b in pb.blocks if b.hard)
    # contiguous non-overlapping coverage of both stacks
    off = 0
    for ro, rows in soft:
        assert ro == off
        off += rows
    assert off == pb.n_res
    off = 0
    for ro, rows in hard:
        assert ro == off
        off += rows
    assert off == pb.n_con


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(3)
    pb = full_problem(rng, w=3)
    x = random_state(pb, rng)
    imu_states, seg_states, calib = pb.unpack(x)
    x2 = pb.pack(imu_states, seg_states, calib)
    # CalibEntry renormalizes its quaternion, so allow last-bit drift there
    np.testing.assert_allclose(x2, x, rtol=0, atol=1e-15)


def test_retract_keeps_quaternions_unit():
    rng = np.random.default_rng(4)
    pb = full_problem(rng, w=3)
    x = random_state(pb, rng)
    delta = rng.normal(0, 0.5, pb.n_tan)
    x2 = pb.retract(x, delta)
    for ro, _ in pb.layout.quat_slots():
        assert abs(np.linalg.norm(x2[ro:ro + 4]) - 1.0) < 1e-9


def test_retract_zero_is_identity():
    rng = np.random.default_rng(5)
    pb = full_problem(rng, w=3)
    x = random_state(pb, rng)
    np.testing.assert_allclose(pb.retract(x, np.zeros(pb.n_tan)), x, atol=1e-15)


def test_mask_disables_families():
    model = reference_model()
    rng = np.random.default_rng(6)
    samples = random_samples(model, rng, 5)
    pb = build_problem(
        model, samples,
        mask=TermMask(joint_velocity=False, hinge=False, shape=False),
    )
    counts = pb.block_counts()
    for name in ("joint_velocity", "hinge", "range_of_motion",
                 "shape_pos", "shape_ori"):
        assert name not in counts
    assert counts["connection"] == 5
    pb2 = build_problem(model, samples, mask=TermMask(connection=False))
    assert pb2.n_con == 0


def test_no_anchors_no_smoothness_blocks():
    model = reference_model()
    rng = np.random.default_rng(7)
    pb = build_problem(model, random_samples(model, rng, 4))
    counts = pb.block_counts()
    assert "init_state" not in counts
    assert "calib_smooth" not in counts


def test_unequal_stream_lengths_rejected():
    model = reference_model()
    rng = np.random.default_rng(8)
    samples = random_samples(model, rng, 4)
    samples["imu1"] = samples["imu1"][:3]
    with pytest.raises(ValueError):
        build_problem(model, samples)


def test_missing_imu_stream_rejected():
    model = reference_model()
    rng = np.random.default_rng(9)
    samples = random_samples(model, rng, 4)
    del samples["imu0"]
    with pytest.raises(ValueError):
        build_problem(model, samples)


def test_window_of_one_rejected():
    with pytest.raises(ValueError):
        BatchLayout(1, ["a"], ["s"])


@settings(max_examples=20, deadline=None)
@given(w=st.integers(min_value=2, max_value=12))
def test_tangent_dimension_formula(w):
    lay = BatchLayout(w, ["a", "b"], ["s0", "s1", "s2"])
    assert lay.n_tan == w * (12 * 2 + 6 * 3) + 6 * 2
    assert lay.n_raw == w * (13 * 2 + 7 * 3) + 7 * 2


def test_calibration_slots_shared_across_steps():
    # the same calibration tangent offsets must appear in blocks of every step
    pb = reference_problem_w10()
    offs = set()
    for b in pb.blocks:
        if b.kind.name == "COUPLING":
            offs.add(b.slots_tan[4])
    assert len(offs) == 2  # one per IMU, shared by all ten steps


def test_unpack_returns_calibration_object():
    rng = np.random.default_rng(11)
    pb = full_problem(rng, w=3)
    x = random_state(pb, rng)
    _, _, calib = pb.unpack(x)
    assert isinstance(calib, I2SCalibration)
    assert set(iter(calib)) == {"imu0", "imu1"}
