"""Shared builders for the test suite."""

import numpy as np

from imu2seg.bodymodel import CalibEntry, I2SCalibration
from imu2seg.problem import BatchProblem, build_problem
from imu2seg.residuals import ImuSample, ImuState
from imu2seg.sim import reference_calibration, reference_model
from imu2seg.so3 import quat_normalize


def random_unit_quat(rng) -> np.ndarray:
    return quat_normalize(rng.normal(size=4))


def random_anchor_state(rng) -> ImuState:
    return ImuState(
        rng.normal(0, 0.5, 3), rng.normal(0, 0.5, 3),
        random_unit_quat(rng), rng.normal(0, 2, 3),
    )


def random_samples(model, rng, w):
    out = {}
    for iid in model.imu_ids:
        out[iid] = [
            ImuSample(t, rng.normal(0, 5, 3), rng.normal(0, 2, 3), rng.normal(0, 1, 3))
            for t in range(w)
        ]
    return out


def random_calibration(model, rng) -> I2SCalibration:
    cal = I2SCalibration()
    for iid in model.imu_ids:
        cal[iid] = CalibEntry(
            random_unit_quat(rng),
            np.array([0.1, 0.0, 0.15]) + rng.normal(0, 0.08, 3),
        )
    return cal


def full_problem(rng, w: int = 4) -> BatchProblem:
    """A problem containing at least one block of every kind."""
    model = reference_model()
    samples = random_samples(model, rng, w)
    anchors = {iid: random_anchor_state(rng) for iid in model.imu_ids}
    prev = random_calibration(model, rng)
    return build_problem(model, samples, anchors=anchors, prev_calib=prev)


def random_state(pb: BatchProblem, rng) -> np.ndarray:
    """A generic random point on the state manifold."""
    x = np.zeros(pb.n_raw)
    for ro, _, n in pb.layout.vector_slots():
        x[ro:ro + n] = rng.normal(0, 0.6, n)
    for ro, _ in pb.layout.quat_slots():
        x[ro:ro + 4] = random_unit_quat(rng)
    # keep calibration positions away from the capsule axis so the shape
    # blocks stay well off their degenerate configuration
    for iid in pb.layout.imu_ids:
        o = pb.layout.calib_raw(iid)
        p = np.array([0.1, 0.0, 0.15]) + rng.normal(0, 0.05, 3)
        if np.linalg.norm(p[:2]) < 0.02:
            p[0] += 0.05
        x[o + 4:o + 7] = p
    return x


def truth_state(pb: BatchProblem, sim_result, lo: int) -> np.ndarray:
    """Pack the simulator's ground truth for steps [lo, lo+w)."""
    w = pb.layout.w
    imu_states = {
        i: [sim_result.imu_state(t, i) for t in range(lo, lo + w)]
        for i in sim_result.imu_ids
    }
    seg_states = {
        s: [sim_result.seg_state(t, s) for t in range(lo, lo + w)]
        for s in sim_result.seg_ids
    }
    return pb.pack(imu_states, seg_states, sim_result.calib)


def reference_problem_w10(rng=None):
    model = reference_model()
    rng = rng or np.random.default_rng(0)
    samples = random_samples(model, rng, 10)
    anchors = {iid: random_anchor_state(rng) for iid in model.imu_ids}
    prev = reference_calibration(model)
    return build_problem(model, samples, anchors=anchors, prev_calib=prev)
