"""Pure-numpy evaluation backend: walks the block tape of a BatchProblem.

This is the reference implementation; ``_fastkern`` is its compiled twin.
Both produce, for a given raw state vector:

* the weighted objective ``sum ||W r||^2`` over all soft blocks,
* gradient ``g = sum J^T W^T W r`` and Gauss-Newton Hessian
  ``H = sum J^T W^T W J`` on the tangent space,
* the stacked hard-constraint values ``c`` and Jacobian ``A``,
* the per-block infinity norm of the raw (unweighted) residuals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import residuals as rs
from .problem import BatchProblem, BlockKind

__all__ = ["LinearizeResult", "linearize", "evaluate_block"]


@dataclass
class LinearizeResult:
    obj: float                      # sum of squared whitened residuals
    grad: np.ndarray | None         # d(obj/2)/d(tangent)
    hess: np.ndarray | None         # Gauss-Newton approximation for obj/2
    con: np.ndarray                 # hard constraint values
    con_jac: np.ndarray | None
    block_inf: np.ndarray           # per-block max |raw residual|


def _ev_strapdown(v, p, jac):
    return rs.motion_core(v[0], v[1], v[2], v[3], v[4], v[5], v[6],
                          p[0:3], p[3], p[4:7], jac=jac)


def _ev_gyro(v, p, jac):
    return rs.gyro_core(v[0], p, jac=jac)


def _ev_coupling(v, p, jac):
    return rs.coupling_core(v[0], v[1], v[2], v[3], v[4], v[5], jac=jac)


def _ev_joint_velocity(v, p, jac):
    return rs.joint_velocity_core(*v, p, jac=jac)


def _ev_hinge(v, p, jac):
    return rs.hinge_core(v[0], v[1], p, jac=jac)


def _ev_rom(v, p, jac):
    return rs.rom_core(v[0], v[1], p[0:3], p[3], p[4], jac=jac)


def _ev_shape_pos(v, p, jac):
    return rs.shape_pos_core(v[0], p[0:3], p[3], p[4], p[5], jac=jac)


def _ev_shape_ori(v, p, jac):
    return rs.shape_ori_core(v[0], v[1], p[0:3], p[3], p[4], p[5], jac=jac)


def _ev_fixed(v, p, jac):
    return rs.fixed_point_core(v[0], v[1], p[0:3], p[3:6], jac=jac)


def _ev_init(v, p, jac):
    return rs.init_state_core(v[0], v[1], v[2], p[0:3], p[3:6], p[6:10], jac=jac)


def _ev_smooth(v, p, jac):
    return rs.calib_smoothness_core(v[0], v[1], p[0:4], p[4:7], jac=jac)


def _ev_connection(v, p, jac):
    return rs.connection_core(v[0], v[1], v[2], p, jac=jac)


def _ev_anchor(v, p, jac):
    return rs.anchor_core(v[0], p, jac=jac)


_DISPATCH = {
    BlockKind.STRAPDOWN: _ev_strapdown,
    BlockKind.GYRO: _ev_gyro,
    BlockKind.COUPLING: _ev_coupling,
    BlockKind.JOINT_VELOCITY: _ev_joint_velocity,
    BlockKind.HINGE: _ev_hinge,
    BlockKind.RANGE_OF_MOTION: _ev_rom,
    BlockKind.SHAPE_POS: _ev_shape_pos,
    BlockKind.SHAPE_ORI: _ev_shape_ori,
    BlockKind.FIXED_POINT: _ev_fixed,
    BlockKind.INIT_STATE: _ev_init,
    BlockKind.CALIB_SMOOTH: _ev_smooth,
    BlockKind.CONNECTION: _ev_connection,
    BlockKind.ANCHOR: _ev_anchor,
}


def _gather(pb: BatchProblem, x: np.ndarray, blk) -> list[np.ndarray]:
    quat = pb.quat_mask[int(blk.kind)]
    vals = []
    for s, ro in enumerate(blk.slots_raw):
        width = 4 if quat[s] else 3
        vals.append(x[ro:ro + width])
    return vals


def evaluate_block(pb: BatchProblem, index: int, x: np.ndarray, jac: bool = False):
    """Raw residual (and per-slot Jacobians) of one block at state ``x``."""
    blk = pb.blocks[index]
    vals = _gather(pb, x, blk)
    return _DISPATCH[blk.kind](vals, blk.params, jac)


def linearize(pb: BatchProblem, x: np.ndarray, jac: bool = True) -> LinearizeResult:
    n = pb.n_tan
    H = np.zeros((n, n)) if jac else None
    g = np.zeros(n) if jac else None
    A = np.zeros((pb.n_con, n)) if jac else None
    c = np.zeros(pb.n_con)
    obj = 0.0
    binf = np.zeros(len(pb.blocks))

    for bi, blk in enumerate(pb.blocks):
        vals = _gather(pb, x, blk)
        out = _DISPATCH[blk.kind](vals, blk.params, jac)
        if jac:
            r, Js = out
        else:
            r, Js = out, None
        binf[bi] = float(np.max(np.abs(r))) if r.size else 0.0

        if blk.hard:
            o = blk.row_offset
            c[o:o + blk.rows] = r
            if jac:
                for s, to in enumerate(blk.slots_tan):
                    A[o:o + blk.rows, to:to + 3] += Js[s]
            continue

        W = pb.whiteners[blk.kind]
        rw = W @ r
        obj += float(rw @ rw)
        if not jac:
            continue
        Jw = [W @ J for J in Js]
        ns = len(blk.slots_tan)
        for a in range(ns):
            ta = blk.slots_tan[a]
            Ja = Jw[a]
            g[ta:ta + 3] += Ja.T @ rw
            for b in range(a, ns):
                tb = blk.slots_tan[b]
                Hab = Ja.T @ Jw[b]
                H[ta:ta + 3, tb:tb + 3] += Hab
                if b != a:
                    H[tb:tb + 3, ta:ta + 3] += Hab.T
    return LinearizeResult(obj, g, H, c, A, binf)
