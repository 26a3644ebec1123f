"""Batch problem assembly: state layout, residual block tape, retraction.

One batch covers ``w`` consecutive time steps. The raw state vector packs,
per step, the full kinematic state of every IMU and every segment, followed
by one calibration entry per IMU (shared across the steps of the batch):

====================  ==========================  =====
chunk                 raw fields                  width
====================  ==========================  =====
IMU at step t         pos(3) vel(3) quat(4) omega(3)  13
segment at step t     pos(3) quat(4)                   7
calibration per IMU   quat(4) pos(3)                   7
====================  ==========================  =====

The tangent space replaces every quaternion by a 3-dof rotation vector
(applied on the right), so the tangent dimension is
``w * (12 * n_imu + 6 * n_seg) + 6 * n_imu``.

The block tape is a flat, kind-tagged list of residual blocks with
precomputed raw/tangent slot offsets, parameters and per-kind whitening
matrices; both evaluation backends consume it directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .bodymodel import BodyModel, CalibEntry, I2SCalibration
from .residuals import ImuSample, ImuState, NoiseConfig, SegmentState
from .so3 import quat_from_rotvec, quat_mul

__all__ = [
    "BlockKind",
    "TermMask",
    "Block",
    "BatchLayout",
    "BatchProblem",
    "build_problem",
    "MAX_SLOTS",
]

MAX_SLOTS = 10


class BlockKind(IntEnum):
    STRAPDOWN = 0
    GYRO = 1
    COUPLING = 2
    JOINT_VELOCITY = 3
    HINGE = 4
    RANGE_OF_MOTION = 5
    SHAPE_POS = 6
    SHAPE_ORI = 7
    FIXED_POINT = 8
    INIT_STATE = 9
    CALIB_SMOOTH = 10
    CONNECTION = 11
    ANCHOR = 12


BLOCK_ROWS = {
    BlockKind.STRAPDOWN: 9,
    BlockKind.GYRO: 3,
    BlockKind.COUPLING: 6,
    BlockKind.JOINT_VELOCITY: 3,
    BlockKind.HINGE: 3,
    BlockKind.RANGE_OF_MOTION: 1,
    BlockKind.SHAPE_POS: 3,
    BlockKind.SHAPE_ORI: 2,
    BlockKind.FIXED_POINT: 3,
    BlockKind.INIT_STATE: 9,
    BlockKind.CALIB_SMOOTH: 6,
    BlockKind.CONNECTION: 3,
    BlockKind.ANCHOR: 3,
}

# which slots hold quaternions (raw width 4, tangent width 3); all others 3/3
QUAT_SLOTS = {
    BlockKind.STRAPDOWN: (2, 6),
    BlockKind.GYRO: (),
    BlockKind.COUPLING: (1, 3, 4),
    BlockKind.JOINT_VELOCITY: (1, 3, 6, 8),
    BlockKind.HINGE: (0, 1),
    BlockKind.RANGE_OF_MOTION: (0, 1),
    BlockKind.SHAPE_POS: (),
    BlockKind.SHAPE_ORI: (0,),
    BlockKind.FIXED_POINT: (1,),
    BlockKind.INIT_STATE: (2,),
    BlockKind.CALIB_SMOOTH: (0,),
    BlockKind.CONNECTION: (2,),
    BlockKind.ANCHOR: (),
}

# covariance names (see NoiseConfig) stacked into each kind's whitener
KIND_COVS = {
    BlockKind.STRAPDOWN: ("strapdown_pos", "strapdown_vel", "strapdown_ori"),
    BlockKind.GYRO: ("gyro",),
    BlockKind.COUPLING: ("coupling_ori", "coupling_pos"),
    BlockKind.JOINT_VELOCITY: ("joint_velocity",),
    BlockKind.HINGE: ("hinge",),
    BlockKind.RANGE_OF_MOTION: ("range_of_motion",),
    BlockKind.SHAPE_POS: ("shape_pos",),
    BlockKind.SHAPE_ORI: ("shape_ori",),
    BlockKind.FIXED_POINT: ("fixed_point",),
    BlockKind.INIT_STATE: ("init_pos", "init_vel", "init_ori"),
    BlockKind.CALIB_SMOOTH: ("calib_ori", "calib_pos"),
}

HARD_KINDS = frozenset({BlockKind.CONNECTION, BlockKind.ANCHOR})


@dataclass
class TermMask:
    """Switches for the optional cost terms (used by the ablation study)."""

    joint_velocity: bool = True
    hinge: bool = True          # also controls the range-of-motion penalty
    shape: bool = True
    connection: bool = True     # hard kinematic constraints


@dataclass
class Block:
    kind: BlockKind
    label: str
    slots_raw: tuple[int, ...]
    slots_tan: tuple[int, ...]
    params: np.ndarray
    hard: bool
    rows: int
    row_offset: int = -1  # into the soft residual stack, or the constraint stack


class BatchLayout:
    """Index arithmetic for the packed state vector of one batch."""

    IMU_RAW = 13
    SEG_RAW = 7
    CAL_RAW = 7
    IMU_TAN = 12
    SEG_TAN = 6
    CAL_TAN = 6

    def __init__(self, w: int, imu_ids: list[str], seg_ids: list[str]):
        if w < 2:
            raise ValueError("a batch needs at least two steps")
        self.w = w
        self.imu_ids = list(imu_ids)
        self.seg_ids = list(seg_ids)
        self.n_imu = len(imu_ids)
        self.n_seg = len(seg_ids)
        self._raw_step = self.IMU_RAW * self.n_imu + self.SEG_RAW * self.n_seg
        self._tan_step = self.IMU_TAN * self.n_imu + self.SEG_TAN * self.n_seg
        self.n_raw = w * self._raw_step + self.CAL_RAW * self.n_imu
        self.n_tan = w * self._tan_step + self.CAL_TAN * self.n_imu
        self._imu_index = {iid: k for k, iid in enumerate(self.imu_ids)}
        self._seg_index = {sid: s for s, sid in enumerate(self.seg_ids)}

    # raw offsets ---------------------------------------------------------

    def imu_raw(self, t: int, imu_id: str) -> int:
        return t * self._raw_step + self.IMU_RAW * self._imu_index[imu_id]

    def seg_raw(self, t: int, seg_id: str) -> int:
        return (
            t * self._raw_step
            + self.IMU_RAW * self.n_imu
            + self.SEG_RAW * self._seg_index[seg_id]
        )

    def calib_raw(self, imu_id: str) -> int:
        return self.w * self._raw_step + self.CAL_RAW * self._imu_index[imu_id]

    # tangent offsets -----------------------------------------------------

    def imu_tan(self, t: int, imu_id: str) -> int:
        return t * self._tan_step + self.IMU_TAN * self._imu_index[imu_id]

    def seg_tan(self, t: int, seg_id: str) -> int:
        return (
            t * self._tan_step
            + self.IMU_TAN * self.n_imu
            + self.SEG_TAN * self._seg_index[seg_id]
        )

    def calib_tan(self, imu_id: str) -> int:
        return self.w * self._tan_step + self.CAL_TAN * self._imu_index[imu_id]

    # quaternion slot table (raw offset, tangent offset) for retraction

    def quat_slots(self) -> list[tuple[int, int]]:
        out = []
        for t in range(self.w):
            for iid in self.imu_ids:
                out.append((self.imu_raw(t, iid) + 6, self.imu_tan(t, iid) + 6))
            for sid in self.seg_ids:
                out.append((self.seg_raw(t, sid) + 3, self.seg_tan(t, sid) + 3))
        for iid in self.imu_ids:
            out.append((self.calib_raw(iid), self.calib_tan(iid)))
        return out

    def vector_slots(self) -> list[tuple[int, int, int]]:
        """(raw offset, tangent offset, length) of all additive chunks."""
        out = []
        for t in range(self.w):
            for iid in self.imu_ids:
                r, u = self.imu_raw(t, iid), self.imu_tan(t, iid)
                out.append((r, u, 6))          # pos + vel
                out.append((r + 10, u + 9, 3))  # omega
            for sid in self.seg_ids:
                out.append((self.seg_raw(t, sid), self.seg_tan(t, sid), 3))
        for iid in self.imu_ids:
            out.append((self.calib_raw(iid) + 4, self.calib_tan(iid) + 3, 3))
        return out


class BatchProblem:
    """One batch's residual blocks plus the flat tape both backends consume."""

    def __init__(
        self,
        layout: BatchLayout,
        blocks: list[Block],
        whiteners: dict[BlockKind, np.ndarray],
    ):
        self.layout = layout
        self.blocks = blocks
        self.whiteners = whiteners
        self.n_tan = layout.n_tan
        self.n_raw = layout.n_raw

        soft_off = hard_off = 0
        for blk in blocks:
            if blk.hard:
                blk.row_offset = hard_off
                hard_off += blk.rows
            else:
                blk.row_offset = soft_off
                soft_off += blk.rows
        self.n_res = soft_off
        self.n_con = hard_off

        self._quat_slots = layout.quat_slots()
        self._vector_slots = layout.vector_slots()
        self._build_tape()

    # -- tape -------------------------------------------------------------

    def _build_tape(self):
        nb = len(self.blocks)
        self.tape_kind = np.empty(nb, dtype=np.int32)
        self.tape_hard = np.empty(nb, dtype=np.int32)
        self.tape_rows = np.empty(nb, dtype=np.int32)
        self.tape_row_off = np.empty(nb, dtype=np.int32)
        self.tape_nslots = np.empty(nb, dtype=np.int32)
        self.tape_slot_raw = np.full((nb, MAX_SLOTS), -1, dtype=np.int32)
        self.tape_slot_tan = np.full((nb, MAX_SLOTS), -1, dtype=np.int32)
        self.tape_param_off = np.empty(nb, dtype=np.int32)
        self.tape_param_len = np.empty(nb, dtype=np.int32)
        params: list[float] = []
        for i, blk in enumerate(self.blocks):
            self.tape_kind[i] = int(blk.kind)
            self.tape_hard[i] = 1 if blk.hard else 0
            self.tape_rows[i] = blk.rows
            self.tape_row_off[i] = blk.row_offset
            ns = len(blk.slots_raw)
            self.tape_nslots[i] = ns
            self.tape_slot_raw[i, :ns] = blk.slots_raw
            self.tape_slot_tan[i, :ns] = blk.slots_tan
            self.tape_param_off[i] = len(params)
            self.tape_param_len[i] = blk.params.size
            params.extend(map(float, blk.params))
        self.tape_params = np.asarray(params, dtype=float)

        # whiteners flattened for the compiled backend: offset/dim per kind
        self.wht_off = np.full(len(BlockKind), -1, dtype=np.int32)
        self.wht_dim = np.zeros(len(BlockKind), dtype=np.int32)
        flat: list[float] = []
        for kind, W in self.whiteners.items():
            self.wht_off[int(kind)] = len(flat)
            self.wht_dim[int(kind)] = W.shape[0]
            flat.extend(W.ravel())
        self.wht_flat = np.asarray(flat, dtype=float)

        # quaternion slot mask per kind for the gather step
        self.quat_mask = np.zeros((len(BlockKind), MAX_SLOTS), dtype=np.int32)
        for kind, slots in QUAT_SLOTS.items():
            for s in slots:
                self.quat_mask[int(kind), s] = 1

        self.retract_quat = np.asarray(self._quat_slots, dtype=np.int32)
        self.retract_vec = np.asarray(self._vector_slots, dtype=np.int32)

    # -- counting / reporting --------------------------------------------

    def block_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for blk in self.blocks:
            out[blk.kind.name.lower()] = out.get(blk.kind.name.lower(), 0) + 1
        return out

    # -- manifold ---------------------------------------------------------

    def retract(self, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Apply a tangent step: additive on vectors, exponential on quats."""
        out = x.copy()
        for ro, to, n in self._vector_slots:
            out[ro:ro + n] += delta[to:to + n]
        for ro, to in self._quat_slots:
            out[ro:ro + 4] = quat_mul(
                x[ro:ro + 4], quat_from_rotvec(delta[to:to + 3])
            )
        return out

    # -- packing ----------------------------------------------------------

    def pack(
        self,
        imu_states: dict[str, list[ImuState]],
        seg_states: dict[str, list[SegmentState]],
        calib: I2SCalibration,
    ) -> np.ndarray:
        lay = self.layout
        x = np.zeros(self.n_raw)
        for t in range(lay.w):
            for iid in lay.imu_ids:
                st = imu_states[iid][t]
                o = lay.imu_raw(t, iid)
                x[o:o + 3] = st.pos
                x[o + 3:o + 6] = st.vel
                x[o + 6:o + 10] = st.quat
                x[o + 10:o + 13] = st.omega
            for sid in lay.seg_ids:
                st = seg_states[sid][t]
                o = lay.seg_raw(t, sid)
                x[o:o + 3] = st.pos
                x[o + 3:o + 7] = st.quat
        for iid in lay.imu_ids:
            o = lay.calib_raw(iid)
            x[o:o + 4] = calib[iid].quat
            x[o + 4:o + 7] = calib[iid].pos
        return x

    def unpack(
        self, x: np.ndarray
    ) -> tuple[dict[str, list[ImuState]], dict[str, list[SegmentState]], I2SCalibration]:
        lay = self.layout
        imu_states = {iid: [] for iid in lay.imu_ids}
        seg_states = {sid: [] for sid in lay.seg_ids}
        for t in range(lay.w):
            for iid in lay.imu_ids:
                o = lay.imu_raw(t, iid)
                imu_states[iid].append(
                    ImuState(
                        x[o:o + 3].copy(), x[o + 3:o + 6].copy(),
                        x[o + 6:o + 10].copy(), x[o + 10:o + 13].copy(),
                    )
                )
            for sid in lay.seg_ids:
                o = lay.seg_raw(t, sid)
                seg_states[sid].append(
                    SegmentState(x[o:o + 3].copy(), x[o + 3:o + 7].copy())
                )
        calib = I2SCalibration()
        for iid in lay.imu_ids:
            o = lay.calib_raw(iid)
            calib[iid] = CalibEntry(x[o:o + 4].copy(), x[o + 4:o + 7].copy())
        return imu_states, seg_states, calib


def _block_diag(mats) -> np.ndarray:
    n = sum(m.shape[0] for m in mats)
    out = np.zeros((n, n))
    o = 0
    for m in mats:
        k = m.shape[0]
        out[o:o + k, o:o + k] = m
        o += k
    return out


def build_problem(
    model: BodyModel,
    samples: dict[str, list[ImuSample]],
    noise: NoiseConfig | None = None,
    *,
    anchors: dict[str, np.ndarray] | None = None,
    prev_calib: I2SCalibration | None = None,
    mask: TermMask | None = None,
) -> BatchProblem:
    """Assemble the residual blocks of one batch.

    Parameters
    ----------
    model : BodyModel
    samples : dict
        ``imu_id -> list[ImuSample]``; all lists must share one length
        ``w >= 2``. Every IMU of the model must be present.
    noise : NoiseConfig, optional
    anchors : dict, optional
        ``imu_id -> ImuState`` priors for the first step (bootstrap
        attitude and chain-consistent positions at the first batch, the
        previous batch's last state afterwards); position, velocity and
        orientation are anchored, the body rate is ignored. Omitted =>
        no first-step priors.
    prev_calib : I2SCalibration, optional
        Previous batch's calibration; enables the smoothness blocks.
    mask : TermMask, optional
        Disables optional term families (ablation support).
    """
    noise = noise or NoiseConfig()
    mask = mask or TermMask()
    lay_w = {len(v) for v in samples.values()}
    if len(lay_w) != 1:
        raise ValueError("all IMU streams in a batch must have equal length")
    w = lay_w.pop()
    for imu in model.imus:
        if imu.imu_id not in samples:
            raise ValueError(f"missing samples for IMU '{imu.imu_id}'")

    lay = BatchLayout(w, model.imu_ids, model.segment_ids)
    T = model.world.sample_period
    grav = model.world.gravity
    blocks: list[Block] = []

    whiteners = {
        kind: _block_diag([noise.whitener(name) for name in names])
        for kind, names in KIND_COVS.items()
    }

    def imu_f(t, iid):
        o = lay.imu_raw(t, iid)
        u = lay.imu_tan(t, iid)
        return {
            "pos": (o, u), "vel": (o + 3, u + 3),
            "quat": (o + 6, u + 6), "omega": (o + 10, u + 9),
        }

    def seg_f(t, sid):
        o = lay.seg_raw(t, sid)
        u = lay.seg_tan(t, sid)
        return {"pos": (o, u), "quat": (o + 3, u + 3)}

    def cal_f(iid):
        o = lay.calib_raw(iid)
        u = lay.calib_tan(iid)
        return {"quat": (o, u), "pos": (o + 4, u + 3)}

    def add(kind, label, slots, params, hard=False):
        raws = tuple(s[0] for s in slots)
        tans = tuple(s[1] for s in slots)
        blocks.append(
            Block(kind, label, raws, tans, np.asarray(params, dtype=float),
                  hard, BLOCK_ROWS[kind])
        )

    # strapdown + gyro + coupling, per IMU
    for t in range(w - 1):
        for imu in model.imus:
            iid = imu.imu_id
            f0, f1 = imu_f(t, iid), imu_f(t + 1, iid)
            add(
                BlockKind.STRAPDOWN, f"{iid}/t{t}",
                [f0["pos"], f0["vel"], f0["quat"], f0["omega"],
                 f1["pos"], f1["vel"], f1["quat"]],
                np.concatenate([samples[iid][t].acc, [T], grav]),
            )
    for t in range(w):
        for imu in model.imus:
            iid = imu.imu_id
            f = imu_f(t, iid)
            add(BlockKind.GYRO, f"{iid}/t{t}", [f["omega"]], samples[iid][t].gyr)
    for t in range(w):
        for imu in model.imus:
            iid = imu.imu_id
            f = imu_f(t, iid)
            s = seg_f(t, imu.segment)
            cf = cal_f(iid)
            add(
                BlockKind.COUPLING, f"{iid}/t{t}",
                [f["pos"], f["quat"], s["pos"], s["quat"], cf["quat"], cf["pos"]],
                [],
            )

    # joint terms
    for j in model.joints:
        if j.parent is None:
            continue
        imu_i = model.imu_on_segment(j.parent)
        imu_j = model.imu_on_segment(j.child)
        pvec = model.segments[j.parent].vector
        if mask.joint_velocity and imu_i is not None and imu_j is not None:
            for t in range(w):
                fi, fj = imu_f(t, imu_i), imu_f(t, imu_j)
                ci, cj = cal_f(imu_i), cal_f(imu_j)
                add(
                    BlockKind.JOINT_VELOCITY, f"{j.joint_id}/t{t}",
                    [fi["vel"], fi["quat"], fi["omega"], ci["quat"], ci["pos"],
                     fj["vel"], fj["quat"], fj["omega"], cj["quat"], cj["pos"]],
                    pvec,
                )
        if mask.hinge and j.kind == "hinge":
            for t in range(w):
                si, sj = seg_f(t, j.parent), seg_f(t, j.child)
                add(BlockKind.HINGE, f"{j.joint_id}/t{t}",
                    [si["quat"], sj["quat"]], j.axis)
            if j.rom_deg is not None:
                for t in range(w):
                    si, sj = seg_f(t, j.parent), seg_f(t, j.child)
                    add(
                        BlockKind.RANGE_OF_MOTION, f"{j.joint_id}/t{t}",
                        [si["quat"], sj["quat"]],
                        np.concatenate([j.axis, np.radians(j.rom_deg)]),
                    )

    # fixed points
    for k, fp in enumerate(model.fixed_points):
        for t in range(w):
            s = seg_f(t, fp.segment)
            add(
                BlockKind.FIXED_POINT, f"fix{k}/t{t}",
                [s["pos"], s["quat"]],
                np.concatenate([fp.local, fp.world]),
            )

    # carried-over priors at the first step
    if anchors is not None:
        for imu in model.imus:
            iid = imu.imu_id
            if iid not in anchors:
                continue
            a = anchors[iid]
            f = imu_f(0, iid)
            add(
                BlockKind.INIT_STATE, f"{iid}/init",
                [f["pos"], f["vel"], f["quat"]],
                np.concatenate([a.pos, a.vel, a.quat]),
            )

    # shape prior, once per IMU per batch
    if mask.shape:
        for imu in model.imus:
            iid = imu.imu_id
            seg = model.segments[imu.segment]
            geo = np.concatenate(
                [seg.axis, [seg.length, seg.proximal_radius, seg.distal_radius]]
            )
            cf = cal_f(iid)
            add(BlockKind.SHAPE_POS, f"{iid}/shape", [cf["pos"]], geo)
            add(BlockKind.SHAPE_ORI, f"{iid}/shape", [cf["quat"], cf["pos"]], geo)

    # calibration smoothness towards the previous batch
    if prev_calib is not None:
        for imu in model.imus:
            iid = imu.imu_id
            if iid not in prev_calib:
                continue
            cf = cal_f(iid)
            prev = prev_calib[iid]
            add(
                BlockKind.CALIB_SMOOTH, f"{iid}/smooth",
                [cf["quat"], cf["pos"]],
                np.concatenate([prev.quat, prev.pos]),
            )

    # hard kinematic constraints
    if mask.connection:
        for j in model.joints:
            if j.parent is None:
                for t in range(w):
                    s = seg_f(t, j.child)
                    add(BlockKind.ANCHOR, f"{j.joint_id}/t{t}",
                        [s["pos"]], j.world_anchor, hard=True)
            else:
                pvec = model.segments[j.parent].vector
                for t in range(w):
                    si, sj = seg_f(t, j.parent), seg_f(t, j.child)
                    add(
                        BlockKind.CONNECTION, f"{j.joint_id}/t{t}",
                        [sj["pos"], si["pos"], si["quat"]], pvec, hard=True,
                    )

    return BatchProblem(lay, blocks, whiteners)
