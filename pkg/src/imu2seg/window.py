"""Sliding-window estimation loop.

The stream is processed in overlapping batches that share exactly one time
step.  The very first batch bootstraps its orientations from a two-vector
TRIAD fix; every later batch is seeded with the previous batch's last state
and tied to it through the first-step orientation prior and the
calibration-smoothness prior.  Three averaged statistics — the
joint-velocity inconsistency of the incoming window and the
orientation/position calibration changes over a history of batches —
decide when the mounting calibration has settled; at the first detection
the calibration-smoothness covariances are tightened once by a fixed
factor, which freezes the calibration for the rest of the stream.

The calibration-change statistics carry the actual evidence: the
calibration-smoothness covariances are deliberately loose, so the
estimate moves freely wherever a window's data pushes it, and staying
put over a whole history of windows means the data itself — not the
prior — is pinning the mounting.  The joint-velocity statistic guards
the complementary failure of a window that was never solved to
consistency.  Because a motion-free window is explained by any mounting
whatsoever (the estimate then sits still for lack of evidence, not
because the evidence agrees), the detector additionally requires a
minimum level of angular excitation before it may fire.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._kernels_py import evaluate_block
from .bodymodel import BodyModel, CalibEntry, I2SCalibration, WorldConfig
from .problem import BatchProblem, BlockKind, TermMask, build_problem
from .residuals import ImuSample, ImuState, NoiseConfig, SegmentState
from .so3 import (
    quat_conj,
    quat_from_rotvec,
    quat_mul,
    quat_rotate,
    rot_z,
    rotmat_to_quat,
    rotvec_from_quat,
)
from .solver import SolveReport, SolverConfig, solve

__all__ = [
    "WindowConfig",
    "WindowState",
    "BatchRecord",
    "WindowRunResult",
    "SlidingWindowEstimator",
    "triad_init",
    "seed_calibration",
    "detector_terms",
    "convergence_indicator",
]


# ---------------------------------------------------------------------------
# configuration


@dataclass
class WindowConfig:
    """Settings of the sliding-window loop.

    ``batch_size`` steps form one window and consecutive windows share one
    step; ``overlap`` is validated, not free.  The convergence test looks
    back ``history`` batches and fires when the averaged joint-velocity
    residual and the averaged calibration changes all drop below their
    thresholds, upon which the calibration-smoothness covariances are
    divided by ``tighten_factor`` (once per run).

    ``motion_threshold`` is the excitation gate: the window-mean gyroscope
    magnitude must reach it before a detection may fire, so a motion-free
    stream — which any mounting explains equally well — can never be
    declared converged (0 disables the gate).

    ``triad_samples`` accelerometer/magnetometer samples are averaged for
    the initial TRIAD fix.  ``fallback_yaw_deg`` supplies the heading when
    the stream carries no magnetometer data.  ``moving_horizon`` marks the
    receding-horizon reading of the loop: the one-step overlap already
    carries each window's information forward through the first-step
    orientation prior, so both settings share this code path.
    """

    batch_size: int = 10
    overlap: int = 1
    history: int = 10
    velocity_threshold: float = 0.01     # m/s
    calib_ori_threshold: float = 0.01    # rad
    calib_pos_threshold: float = 0.05    # m
    motion_threshold: float = 0.05       # rad/s, window-mean gyro magnitude
    tighten_factor: float = 10.0
    triad_samples: int = 1
    fallback_yaw_deg: float = 0.0
    moving_horizon: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.overlap != 1:
            raise ValueError("only an overlap of one step is supported")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        for name in (
            "velocity_threshold",
            "calib_ori_threshold",
            "calib_pos_threshold",
        ):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not self.motion_threshold >= 0.0:
            raise ValueError("motion_threshold must be >= 0")
        if not self.tighten_factor > 1.0:
            raise ValueError("tighten_factor must be > 1")
        if self.triad_samples < 1:
            raise ValueError("triad_samples must be >= 1")


# ---------------------------------------------------------------------------
# initial attitude


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError(f"{what} vector is zero")
    return v / n


def triad_init(acc: np.ndarray, mag: np.ndarray, world: WorldConfig) -> np.ndarray:
    """Attitude of a static sensor from one accelerometer/magnetometer pair.

    Builds orthonormal triads from the measured directions and from the
    world references and matches them: the returned quaternion ``q``
    satisfies ``R(q) @ acc ∝ -gravity`` exactly and aligns ``mag`` with the
    reference field as far as orthogonality allows.

    Raises
    ------
    ValueError
        If either vector is (near) zero or the pair is (near) parallel.
    """
    b1 = _unit(acc, "accelerometer")
    b2 = _unit(mag, "magnetometer")
    w1 = _unit(-world.gravity, "gravity reference")
    w2 = _unit(world.magnetic_field, "magnetic reference")
    bx = np.cross(b1, b2)
    wx = np.cross(w1, w2)
    if np.linalg.norm(bx) < 1e-8 or np.linalg.norm(wx) < 1e-8:
        raise ValueError("accelerometer and magnetometer directions are parallel")
    t2b = bx / np.linalg.norm(bx)
    t2w = wx / np.linalg.norm(wx)
    body = np.column_stack([b1, t2b, np.cross(b1, t2b)])
    ref = np.column_stack([w1, t2w, np.cross(w1, t2w)])
    return rotmat_to_quat(ref @ body.T)


def _gravity_attitude(acc: np.ndarray, world: WorldConfig, yaw_deg: float) -> np.ndarray:
    """Attitude from the accelerometer alone plus a user-chosen heading."""
    b = _unit(acc, "accelerometer")
    up = _unit(-world.gravity, "gravity reference")
    axis = np.cross(b, up)
    s = np.linalg.norm(axis)
    c = float(np.dot(b, up))
    if s < 1e-12:
        if c > 0.0:
            tilt = np.array([1.0, 0.0, 0.0, 0.0])
        else:
            # upside down: flip about any horizontal axis
            horiz = np.array([1.0, 0.0, 0.0])
            if abs(np.dot(horiz, up)) > 0.9:
                horiz = np.array([0.0, 1.0, 0.0])
            horiz -= np.dot(horiz, up) * up
            tilt = quat_from_rotvec(math.pi * horiz / np.linalg.norm(horiz))
    else:
        tilt = quat_from_rotvec(axis / s * math.atan2(s, c))
    return quat_mul(rot_z(math.radians(yaw_deg)), tilt)


def seed_calibration(model: BodyModel) -> I2SCalibration:
    """Neutral mounting guess: identity orientation, sensor on the skin.

    Each IMU is placed on the lateral capsule surface halfway along its
    segment, offset in a direction orthogonal to the segment axis (x-ish
    when possible).  Used when no initial calibration is supplied.
    """
    calib = I2SCalibration()
    for imu in model.imus:
        seg = model.segments[imu.segment]
        axis = _unit(seg.vector, "segment axis")
        lateral = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(lateral, axis)) > 0.9:
            lateral = np.array([0.0, 1.0, 0.0])
        lateral -= np.dot(lateral, axis) * axis
        lateral /= np.linalg.norm(lateral)
        radius = 0.5 * (seg.proximal_radius + seg.distal_radius)
        pos = 0.5 * seg.vector + radius * lateral
        calib[imu.imu_id] = CalibEntry(np.array([1.0, 0.0, 0.0, 0.0]), pos)
    return calib


# ---------------------------------------------------------------------------
# cross-batch state and the convergence test


@dataclass
class WindowState:
    """Mutable cross-batch state of one estimation run.

    ``ori_deltas`` and ``pos_deltas`` hold, per solved batch, the
    calibration change summed over all IMUs (full-angle rotation vector
    and position difference respectively); the ring buffers keep the
    ``history + 1`` most recent changes.
    """

    n_imus: int
    n_joints: int
    history: int
    batch_index: int = -1                 # last completed batch
    anchors: dict[str, ImuState] | None = None
    calibration: I2SCalibration | None = None
    velocity_term: float = math.nan       # latest window's mean joint-velocity residual
    motion_level: float = math.nan        # latest window's mean gyro magnitude
    converged: bool = False
    detection_batch: int | None = None
    detection_step: int | None = None
    ori_deltas: deque = field(init=False)
    pos_deltas: deque = field(init=False)

    def __post_init__(self):
        if self.history < 1:
            raise ValueError("history must be >= 1")
        self.ori_deltas = deque(maxlen=self.history + 1)
        self.pos_deltas = deque(maxlen=self.history + 1)


def detector_terms(state: WindowState) -> tuple[float, float, float]:
    """The three averaged statistics watched by the convergence test.

    Returns ``(velocity, orientation, position)``: the norm of the mean
    joint-velocity residual of the latest solved window, and the norms of
    the mean per-batch calibration changes over the stored history
    (radians and metres), each averaged over all sensors.  Entries that
    cannot be formed yet — not enough history, or no joint-velocity
    residuals in the problem — come back as ``nan``.
    """
    if len(state.ori_deltas) < state.history + 1:
        return state.velocity_term, math.nan, math.nan
    denom = state.history * state.n_imus
    ori = float(np.linalg.norm(np.sum(state.ori_deltas, axis=0))) / denom
    pos = float(np.linalg.norm(np.sum(state.pos_deltas, axis=0))) / denom
    return state.velocity_term, ori, pos


def convergence_indicator(state: WindowState, config: WindowConfig) -> bool:
    """True when every averaged statistic sits below its threshold.

    Ineligible until more than ``history`` batches are solved and the
    change buffers are full; a ``nan`` term (e.g. the joint-velocity
    statistic of a problem without that residual family) never passes, so
    an estimate that merely sits still proves nothing without the motion
    evidence.  The excitation gate likewise blocks windows whose mean
    gyroscope magnitude falls short of ``config.motion_threshold``: with
    nothing moving, a small innovation confirms nothing.
    """
    if state.batch_index <= config.history:
        return False
    if not (
        math.isfinite(state.motion_level)
        and state.motion_level >= config.motion_threshold
    ):
        return False
    vel, ori, pos = detector_terms(state)
    if not (math.isfinite(vel) and math.isfinite(ori) and math.isfinite(pos)):
        return False
    return (
        vel < config.velocity_threshold
        and ori < config.calib_ori_threshold
        and pos < config.calib_pos_threshold
    )


# ---------------------------------------------------------------------------
# per-batch record and run result


@dataclass
class BatchRecord:
    """Everything retained from one solved window."""

    index: int
    start: int                       # first global step covered (the shared one)
    stop: int                        # one past the last global step
    calibration: I2SCalibration
    imu_states: dict[str, list[ImuState]]
    seg_states: dict[str, list[SegmentState]]
    report: SolveReport
    velocity_term: float
    ori_term: float
    pos_term: float
    motion_level: float
    fired: bool                      # the first detection happened here


@dataclass
class WindowRunResult:
    """Stream-level output of :meth:`SlidingWindowEstimator.run`.

    The per-step arrays are indexed ``[t, sensor_or_segment, component]``
    in model order; the shared step between two windows carries the later
    window's estimate.  ``step_batch[t]`` is the index of the batch that
    produced step ``t``.
    """

    records: list[BatchRecord]
    calibration: I2SCalibration
    converged: bool
    detection_batch: int | None
    detection_step: int | None
    imu_ids: list[str]
    seg_ids: list[str]
    n_steps: int
    imu_pos: np.ndarray
    imu_vel: np.ndarray
    imu_quat: np.ndarray
    imu_omega: np.ndarray
    seg_pos: np.ndarray
    seg_quat: np.ndarray
    step_batch: np.ndarray

    def calibration_at_step(self, t: int) -> I2SCalibration:
        """Calibration estimate of the batch that produced step ``t``."""
        return self.records[int(self.step_batch[t])].calibration


# ---------------------------------------------------------------------------
# the estimator


class SlidingWindowEstimator:
    """Drives the batch solver over a full IMU stream.

    Parameters
    ----------
    model : BodyModel
    initial_calibration : I2SCalibration, optional
        Mounting guess for the first batch; :func:`seed_calibration` when
        omitted.
    config : WindowConfig, optional
    noise : NoiseConfig, optional
        Copied; the copy is tightened in place at convergence detection.
    solver_config : SolverConfig, optional
    mask : TermMask, optional
        Disables optional residual families.  Without the joint-velocity
        family the convergence test never fires (its statistic is the only
        one grounded in the motion data).

    Magnetometer data is consumed only by the first batch's TRIAD fix;
    streams without it fall back to a gravity-only attitude plus
    ``config.fallback_yaw_deg`` and emit a warning, heading being a pure
    convention in that case.
    """

    def __init__(
        self,
        model: BodyModel,
        initial_calibration: I2SCalibration | None = None,
        *,
        config: WindowConfig | None = None,
        noise: NoiseConfig | None = None,
        solver_config: SolverConfig | None = None,
        mask: TermMask | None = None,
    ):
        self.model = model
        self.config = config or WindowConfig()
        self.noise = (noise or NoiseConfig()).copy()
        self.solver_config = solver_config or SolverConfig()
        self.mask = mask or TermMask()
        self._init_calib = (initial_calibration or seed_calibration(model)).copy()
        self.state = WindowState(
            n_imus=len(model.imus),
            n_joints=len(model.joints),
            history=self.config.history,
        )
        self.records: list[BatchRecord] = []
        self._last_states: tuple[dict, dict] | None = None

    # -- batch slicing ----------------------------------------------------

    def batch_bounds(self, n_steps: int) -> list[tuple[int, int]]:
        """Half-open step ranges of the windows covering ``n_steps``.

        Consecutive ranges share one step; the final window may be shorter
        than ``batch_size`` but never shorter than two steps.
        """
        w = self.config.batch_size
        out: list[tuple[int, int]] = []
        lo = 0
        while n_steps - lo >= 2:
            hi = min(lo + w, n_steps)
            out.append((lo, hi))
            if hi == n_steps:
                break
            lo = hi - 1
        return out

    # -- one batch --------------------------------------------------------

    def step(self, samples: dict[str, list[ImuSample]], start: int) -> BatchRecord:
        """Solve one window whose samples cover global steps ``[start, stop)``.

        ``samples`` maps every model IMU to the window's sample list; all
        lists must share one length ``>= 2``.  The first call bootstraps
        orientations and anchors, later calls warm-start from the previous
        window.  Returns the :class:`BatchRecord` (also appended to
        ``self.records``).
        """
        b = self.state.batch_index + 1
        if b == 0:
            triad = self._triad_anchors(samples)
            imu0, seg0 = self._bootstrap_start(samples, triad, self._init_calib)
            self._last_states = (
                {iid: [s] for iid, s in imu0.items()},
                {sid: [s] for sid, s in seg0.items()},
            )
            anchors = imu0
            prev_calib = None
            calib_seed = self._init_calib
        else:
            anchors = self.state.anchors
            prev_calib = self.state.calibration
            calib_seed = prev_calib
        pb = build_problem(
            self.model,
            samples,
            self.noise,
            anchors=anchors,
            prev_calib=prev_calib,
            mask=self.mask,
        )
        x0 = self._initial_state(pb, samples, calib_seed)
        x, report = solve(pb, x0, self.solver_config)
        imu_states, seg_states, calib = pb.unpack(x)
        velocity_term = self._velocity_term(pb, x)

        st = self.state
        if b > 0:
            prev = st.calibration
            dq = np.zeros(3)
            dp = np.zeros(3)
            for iid in pb.layout.imu_ids:
                rel = quat_mul(quat_conj(prev[iid].quat), calib[iid].quat)
                dq += rotvec_from_quat(rel)
                dp += calib[iid].pos - prev[iid].pos
            st.ori_deltas.append(dq)
            st.pos_deltas.append(dp)
        st.batch_index = b
        st.velocity_term = velocity_term
        st.motion_level = float(
            np.mean(
                [
                    np.linalg.norm(s.gyr)
                    for iid in pb.layout.imu_ids
                    for s in samples[iid]
                ]
            )
        )
        vel, ori, pos = detector_terms(st)

        fired = False
        if not st.converged and convergence_indicator(st, self.config):
            st.converged = True
            st.detection_batch = b
            st.detection_step = start + pb.layout.w - 1
            self.noise.tighten_calibration(self.config.tighten_factor)
            fired = True

        st.anchors = {
            iid: ImuState(
                imu_states[iid][-1].pos.copy(),
                imu_states[iid][-1].vel.copy(),
                imu_states[iid][-1].quat.copy(),
                imu_states[iid][-1].omega.copy(),
            )
            for iid in pb.layout.imu_ids
        }
        st.calibration = calib
        self._last_states = (imu_states, seg_states)

        rec = BatchRecord(
            index=b,
            start=start,
            stop=start + pb.layout.w,
            calibration=calib,
            imu_states=imu_states,
            seg_states=seg_states,
            report=report,
            velocity_term=vel,
            ori_term=ori,
            pos_term=pos,
            motion_level=st.motion_level,
            fired=fired,
        )
        self.records.append(rec)
        return rec

    # -- full stream ------------------------------------------------------

    def run(self, samples_by_imu: dict[str, list[ImuSample]]) -> WindowRunResult:
        """Process a whole stream batch by batch.

        ``samples_by_imu`` maps every model IMU id to an equal-length
        sample list; index ``t`` of each list is one stream step.
        """
        lengths = {len(v) for v in samples_by_imu.values()}
        if len(lengths) != 1:
            raise ValueError("all IMU streams must share one length")
        n = lengths.pop()
        if n < 2:
            raise ValueError("a stream needs at least two steps")
        for imu in self.model.imus:
            if imu.imu_id not in samples_by_imu:
                raise ValueError(f"missing stream for IMU '{imu.imu_id}'")
        for lo, hi in self.batch_bounds(n):
            window = {iid: s[lo:hi] for iid, s in samples_by_imu.items()}
            self.step(window, lo)
        return self._assemble(n)

    # -- internals --------------------------------------------------------

    def _triad_anchors(self, samples: dict[str, list[ImuSample]]) -> dict[str, np.ndarray]:
        k = min(self.config.triad_samples, len(next(iter(samples.values()))))
        anchors: dict[str, np.ndarray] = {}
        missing_mag = False
        for imu in self.model.imus:
            first = samples[imu.imu_id][:k]
            acc = np.mean([s.acc for s in first], axis=0)
            if any(s.mag is None for s in first):
                missing_mag = True
                anchors[imu.imu_id] = _gravity_attitude(
                    acc, self.model.world, self.config.fallback_yaw_deg
                )
            else:
                mag = np.mean([s.mag for s in first], axis=0)
                anchors[imu.imu_id] = triad_init(acc, mag, self.model.world)
        if missing_mag:
            warnings.warn(
                "no magnetometer data: initial heading taken from "
                "fallback_yaw_deg, absolute yaw is a convention",
                stacklevel=3,
            )
        return anchors

    def _initial_state(
        self,
        pb: BatchProblem,
        samples: dict[str, list[ImuSample]],
        calib: I2SCalibration,
    ) -> np.ndarray:
        # The seed is dead-reckoned through the window so the stiff motion
        # rows start near zero: a constant seed leaves residuals of order
        # 1/T^2 whose transient gradients drag the weakly determined
        # calibration directions off along their valley before the
        # trajectory settles.
        lay = pb.layout
        imu_prev, seg_prev = self._last_states
        imu_start = {
            iid: ImuState(
                imu_prev[iid][-1].pos.copy(),
                imu_prev[iid][-1].vel.copy(),
                imu_prev[iid][-1].quat.copy(),
                samples[iid][0].gyr.copy(),
            )
            for iid in lay.imu_ids
        }
        seg_start = {
            sid: SegmentState(
                seg_prev[sid][-1].pos.copy(), seg_prev[sid][-1].quat.copy()
            )
            for sid in lay.seg_ids
        }
        T = self.model.world.sample_period
        grav = self.model.world.gravity
        imu_states = {iid: [imu_start[iid]] for iid in lay.imu_ids}
        for t in range(lay.w - 1):
            for iid in lay.imu_ids:
                cur = imu_states[iid][-1]
                s = samples[iid][t]
                acc_world = quat_rotate(cur.quat, s.acc) + grav
                vel = cur.vel + T * acc_world
                pos = cur.pos + T * cur.vel + 0.5 * T * T * acc_world
                quat = quat_mul(cur.quat, quat_from_rotvec(T * s.gyr))
                imu_states[iid].append(
                    ImuState(pos, vel, quat, samples[iid][t + 1].gyr.copy())
                )
        seg_states: dict[str, list[SegmentState]] = {sid: [] for sid in lay.seg_ids}
        for t in range(lay.w):
            for sid in lay.seg_ids:
                iid = self.model.imu_on_segment(sid)
                if iid is None:
                    seg_states[sid].append(
                        SegmentState(
                            seg_start[sid].pos.copy(), seg_start[sid].quat.copy()
                        )
                    )
                else:
                    ist = imu_states[iid][t]
                    q = quat_mul(ist.quat, quat_conj(calib[iid].quat))
                    pos = ist.pos - quat_rotate(q, calib[iid].pos)
                    seg_states[sid].append(SegmentState(pos, q))
        return pb.pack(imu_states, seg_states, calib)

    def _bootstrap_start(
        self,
        samples: dict[str, list[ImuSample]],
        quats: dict[str, np.ndarray],
        calib: I2SCalibration,
    ) -> tuple[dict[str, ImuState], dict[str, SegmentState]]:
        """First-batch start: TRIAD orientations, chain-consistent positions."""
        identity = np.array([1.0, 0.0, 0.0, 0.0])
        seg_quat: dict[str, np.ndarray] = {}
        for sid in self.model.segment_ids:
            iid = self.model.imu_on_segment(sid)
            if iid is None:
                seg_quat[sid] = identity.copy()
            else:
                seg_quat[sid] = quat_mul(quats[iid], quat_conj(calib[iid].quat))
        seg_pos = {sid: np.zeros(3) for sid in self.model.segment_ids}
        for joint in self.model.joints:
            if joint.parent is None:
                seg_pos[joint.child] = joint.world_anchor.astype(float).copy()
            else:
                parent = self.model.segments[joint.parent]
                seg_pos[joint.child] = seg_pos[joint.parent] + quat_rotate(
                    seg_quat[joint.parent], parent.vector
                )
        seg_start = {
            sid: SegmentState(seg_pos[sid], seg_quat[sid])
            for sid in self.model.segment_ids
        }
        imu_start = {}
        for iid in self.model.imu_ids:
            sid = self.model.segment_of_imu(iid)
            pos = seg_start[sid].pos + quat_rotate(seg_start[sid].quat, calib[iid].pos)
            imu_start[iid] = ImuState(
                pos, np.zeros(3), quats[iid].copy(), samples[iid][0].gyr.copy()
            )
        return imu_start, seg_start

    def _velocity_term(self, pb: BatchProblem, x: np.ndarray) -> float:
        """Norm of the mean joint-velocity residual of the window at ``x``.

        The residual vectors are summed over every step and joint before
        the norm is taken and the count divided out, so the statistic
        reads the coherent part of the velocity mismatch; the sign-
        alternating discretisation jitter of a well-solved window largely
        cancels in the sum.
        """
        total = np.zeros(3)
        found = False
        for i, blk in enumerate(pb.blocks):
            if blk.kind == BlockKind.JOINT_VELOCITY:
                total += evaluate_block(pb, i, x)
                found = True
        if not found:
            return math.nan
        return float(np.linalg.norm(total)) / (pb.layout.w * self.state.n_joints)

    def _assemble(self, n: int) -> WindowRunResult:
        imu_ids = self.model.imu_ids
        seg_ids = self.model.segment_ids
        ni, ns = len(imu_ids), len(seg_ids)
        imu_pos = np.zeros((n, ni, 3))
        imu_vel = np.zeros((n, ni, 3))
        imu_quat = np.zeros((n, ni, 4))
        imu_omega = np.zeros((n, ni, 3))
        seg_pos = np.zeros((n, ns, 3))
        seg_quat = np.zeros((n, ns, 4))
        step_batch = np.full(n, -1, dtype=int)
        for rec in self.records:
            for k, t in enumerate(range(rec.start, rec.stop)):
                for a, iid in enumerate(imu_ids):
                    stt = rec.imu_states[iid][k]
                    imu_pos[t, a] = stt.pos
                    imu_vel[t, a] = stt.vel
                    imu_quat[t, a] = stt.quat
                    imu_omega[t, a] = stt.omega
                for a, sid in enumerate(seg_ids):
                    stt = rec.seg_states[sid][k]
                    seg_pos[t, a] = stt.pos
                    seg_quat[t, a] = stt.quat
                step_batch[t] = rec.index
        st = self.state
        return WindowRunResult(
            records=self.records,
            calibration=st.calibration,
            converged=st.converged,
            detection_batch=st.detection_batch,
            detection_step=st.detection_step,
            imu_ids=imu_ids,
            seg_ids=seg_ids,
            n_steps=n,
            imu_pos=imu_pos,
            imu_vel=imu_vel,
            imu_quat=imu_quat,
            imu_omega=imu_omega,
            seg_pos=seg_pos,
            seg_quat=seg_quat,
            step_batch=step_batch,
        )
