"""Finite-difference verification of every analytic residual Jacobian.

Each residual block is differentiated numerically on the state manifold:
one tangent coordinate at a time is perturbed through the same retraction
the solver uses (additive on vectors, right-multiplied exponential on
quaternions) and compared column-by-column against the analytic Jacobians
returned by the block evaluator.
"""

import numpy as np
import pytest

from helpers import full_problem, random_state
from imu2seg.backend import evaluate_block
from imu2seg.problem import MAX_SLOTS, QUAT_SLOTS, BlockKind
from imu2seg.so3 import quat_from_rotvec, quat_mul

FD_STEP = 1e-6


def fd_block_jacobians(pb, index, x):
    """Central-difference Jacobians of one block, per slot, (rows, 3) each."""
    blk = pb.blocks[index]
    quat_slots = set(QUAT_SLOTS[blk.kind])
    out = []
    for s, ro in enumerate(blk.slots_raw):
        cols = []
        for j in range(3):
            plus = x.copy()
            minus = x.copy()
            if s in quat_slots:
                step = np.zeros(3)
                step[j] = FD_STEP
                plus[ro:ro + 4] = quat_mul(x[ro:ro + 4], quat_from_rotvec(step))
                minus[ro:ro + 4] = quat_mul(x[ro:ro + 4], quat_from_rotvec(-step))
            else:
                plus[ro + j] += FD_STEP
                minus[ro + j] -= FD_STEP
            rp = evaluate_block(pb, index, plus)
            rm = evaluate_block(pb, index, minus)
            cols.append((rp - rm) / (2.0 * FD_STEP))
        out.append(np.stack(cols, axis=1))
    return out


def max_relative_error(pb, index, x):
    r, jacs = evaluate_block(pb, index, x, jac=True)
    fd = fd_block_jacobians(pb, index, x)
    assert len(jacs) == len(fd)
    worst = 0.0
    for J_an, J_fd in zip(jacs, fd):
        scale = max(1.0, float(np.max(np.abs(J_an))))
        worst = max(worst, float(np.max(np.abs(J_an - J_fd))) / scale)
    return worst


def blocks_of_kind(pb, kind, limit=3):
    idx = [i for i, b in enumerate(pb.blocks) if b.kind == kind]
    assert idx, f"problem contains no {kind.name} block"
    return idx[:limit]


@pytest.fixture(scope="module")
def problem():
    return full_problem(np.random.default_rng(42), w=4)


@pytest.mark.parametrize("kind", list(BlockKind), ids=lambda k: k.name.lower())
def test_jacobian_matches_finite_differences(problem, kind):
    rng = np.random.default_rng(100 + int(kind))
    for index in blocks_of_kind(problem, kind):
        for _ in range(5):
            x = random_state(problem, rng)
            err = max_relative_error(problem, index, x)
            assert err < 1e-5, f"{kind.name} block {index}: rel err {err:.2e}"


def test_slot_count_fits_tape():
    pb = full_problem(np.random.default_rng(1), w=3)
    for b in pb.blocks:
        assert len(b.slots_raw) <= MAX_SLOTS


def test_jacobian_shapes(problem):
    x = random_state(problem, np.random.default_rng(2))
    for i, b in enumerate(problem.blocks):
        r, jacs = evaluate_block(problem, i, x, jac=True)
        assert r.shape == (b.rows,)
        assert len(jacs) == len(b.slots_raw)
        for J in jacs:
            assert J.shape == (b.rows, 3)
