"""Articulated body model: segments, joints, attached IMUs and capsule shape.

A segment's frame S sits at its proximal joint; the distal joint lies at
``vector`` (conventionally ``[0, 0, L]``). The body shape of a segment is a
capsule around that axis with linearly interpolated radius between the
proximal and distal ends, closed by spherical caps.

Frames: G is the common world frame, S a segment frame, I an IMU frame.
``q_GS`` maps S-coordinates into G (see :mod:`imu2seg.so3`). A calibration
entry per IMU holds ``quat`` = q_SI and ``pos`` = the IMU origin expressed
in S.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import so3

__all__ = [
    "SegmentSpec",
    "JointSpec",
    "ImuAttachment",
    "FixedPointSpec",
    "WorldConfig",
    "CalibEntry",
    "I2SCalibration",
    "CapsuleProjection",
    "SurfaceFrame",
    "BodyModel",
    "capsule_project",
    "capsule_radius_at",
    "capsule_surface_point",
    "surface_frame",
    "validate_model",
    "load_body_model",
    "save_body_model",
]

REGION_BELOW_PROXIMAL = "below-proximal"
REGION_LATERAL = "lateral"
REGION_BEYOND_DISTAL = "beyond-distal"

_AXIS_TOL = 1e-9  # below this orthogonal distance the surface normal is undefined


def _vec3(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
    return v.copy()


@dataclass
class SegmentSpec:
    """One rigid segment.

    Parameters
    ----------
    seg_id : str
        Unique name.
    vector : array_like, shape (3,)
        Distal joint position in the segment frame, metres. Convention is
        ``[0, 0, L]`` but any nonzero vector defines the capsule axis.
    proximal_radius, distal_radius : float
        Capsule radii at the proximal / distal end, metres.
    """

    seg_id: str
    vector: np.ndarray
    proximal_radius: float
    distal_radius: float

    def __post_init__(self):
        self.vector = _vec3(self.vector, "segment vector")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.vector))

    @property
    def axis(self) -> np.ndarray:
        """Unit vector along the capsule axis."""
        return self.vector / self.length


@dataclass
class JointSpec:
    """Connection between a parent segment (or the world) and a child segment.

    ``parent=None`` pins the child's proximal point to ``world_anchor`` in G.
    ``kind`` is ``"ball"`` (free relative orientation) or ``"hinge"``
    (rotation about ``axis``, given in both adjacent segment frames, with an
    allowed range ``rom_deg``).
    """

    joint_id: str
    parent: str | None
    child: str
    kind: str = "ball"
    axis: np.ndarray | None = None
    rom_deg: tuple[float, float] | None = None
    world_anchor: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.axis is not None:
            self.axis = _vec3(self.axis, "hinge axis")
        if self.rom_deg is not None:
            self.rom_deg = (float(self.rom_deg[0]), float(self.rom_deg[1]))
        self.world_anchor = _vec3(self.world_anchor, "world anchor")


@dataclass
class ImuAttachment:
    imu_id: str
    segment: str


@dataclass
class FixedPointSpec:
    """A known correspondence: ``local`` on ``segment`` sits at ``world`` in G."""

    segment: str
    local: np.ndarray
    world: np.ndarray

    def __post_init__(self):
        self.local = _vec3(self.local, "fixed point (local)")
        self.world = _vec3(self.world, "fixed point (world)")


@dataclass
class WorldConfig:
    """Global constants: gravity, magnetic reference and the sample period."""

    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    magnetic_field: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    sample_period: float = 0.01  # seconds

    def __post_init__(self):
        self.gravity = _vec3(self.gravity, "gravity")
        self.magnetic_field = _vec3(self.magnetic_field, "magnetic field")
        if not self.sample_period > 0.0:
            raise ValueError("sample_period must be positive")


@dataclass
class CalibEntry:
    """Pose of one IMU in its segment frame: ``quat`` = q_SI, ``pos`` in S."""

    quat: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        self.quat = so3.quat_normalize(np.asarray(self.quat, dtype=float))
        self.pos = _vec3(self.pos, "imu position")

    def copy(self) -> "CalibEntry":
        return CalibEntry(self.quat.copy(), self.pos.copy())


class I2SCalibration:
    """IMU-to-segment calibration set, keyed by IMU id."""

    def __init__(self, entries: dict[str, CalibEntry] | None = None):
        self.entries: dict[str, CalibEntry] = dict(entries or {})

    def __getitem__(self, imu_id: str) -> CalibEntry:
        return self.entries[imu_id]

    def __setitem__(self, imu_id: str, entry: CalibEntry):
        self.entries[imu_id] = entry

    def __contains__(self, imu_id: str) -> bool:
        return imu_id in self.entries

    def __iter__(self):
        return iter(self.entries)

    def copy(self) -> "I2SCalibration":
        return I2SCalibration({k: v.copy() for k, v in self.entries.items()})

    def to_dict(self) -> dict:
        return {
            k: {"quat": list(map(float, v.quat)), "pos": list(map(float, v.pos))}
            for k, v in self.entries.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "I2SCalibration":
        return cls(
            {k: CalibEntry(np.asarray(v["quat"]), np.asarray(v["pos"])) for k, v in d.items()}
        )


@dataclass
class CapsuleProjection:
    """Decomposition of a point relative to a segment's capsule axis."""

    axial: float          # coordinate along the unit axis, metres
    ortho: np.ndarray     # component orthogonal to the axis
    region: str           # one of the REGION_* constants
    degenerate: bool      # True when the surface normal is undefined


@dataclass
class SurfaceFrame:
    """Orthonormal frame on the capsule surface near a point.

    ``normal`` points out of the surface; ``t1`` and ``t2`` span the tangent
    plane with ``t2 = normal x t1``. On the lateral region ``t1`` is the
    segment axis; on the caps it is the meridian direction.
    """

    normal: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    region: str
    degenerate: bool


def capsule_project(pos, seg: SegmentSpec) -> CapsuleProjection:
    """Project a segment-frame point onto the capsule axis.

    Parameters
    ----------
    pos : array_like, shape (3,)
        Point in the segment frame.
    seg : SegmentSpec

    Returns
    -------
    CapsuleProjection
        Axial coordinate, orthogonal component, region and degeneracy flag.
        The region is lateral for axial coordinates in ``[0, L]``, otherwise
        one of the two cap regions. Degenerate means the point lies on the
        axis (lateral) or at a cap centre, where no outward normal exists.
    """
    pos = np.asarray(pos, dtype=float)
    a = seg.axis
    pr = float(pos @ a)
    ortho = pos - pr * a
    L = seg.length
    if pr < 0.0:
        region = REGION_BELOW_PROXIMAL
        degenerate = bool(np.linalg.norm(pos) < _AXIS_TOL)
    elif pr > L:
        region = REGION_BEYOND_DISTAL
        degenerate = bool(np.linalg.norm(pos - seg.vector) < _AXIS_TOL)
    else:
        region = REGION_LATERAL
        degenerate = bool(np.linalg.norm(ortho) < _AXIS_TOL)
    return CapsuleProjection(pr, ortho, region, degenerate)


def capsule_radius_at(seg: SegmentSpec, axial: float) -> float:
    """Lateral capsule radius at an axial coordinate (linear interpolation).

    ``r(a) = r_p + (a / L) * (r_d - r_p)``; no clamping is applied.
    """
    return seg.proximal_radius + (axial / seg.length) * (
        seg.distal_radius - seg.proximal_radius
    )


def capsule_surface_point(pos, seg: SegmentSpec) -> tuple[np.ndarray, CapsuleProjection]:
    """Radially project a point onto the capsule surface.

    For lateral points this moves along the outward normal to the
    interpolated radius; for cap regions it moves radially from the cap
    centre to the cap sphere. Degenerate points are returned unchanged with
    a warning (the caller is expected to skip/zero the associated residual).
    """
    pos = np.asarray(pos, dtype=float)
    proj = capsule_project(pos, seg)
    if proj.degenerate:
        warnings.warn(
            f"point on capsule axis of segment '{seg.seg_id}': "
            "surface projection undefined"
        )
        return pos.copy(), proj
    if proj.region == REGION_LATERAL:
        n = proj.ortho / np.linalg.norm(proj.ortho)
        r = capsule_radius_at(seg, proj.axial)
        return proj.axial * seg.axis + r * n, proj
    if proj.region == REGION_BELOW_PROXIMAL:
        centre, r = np.zeros(3), seg.proximal_radius
    else:
        centre, r = seg.vector, seg.distal_radius
    u = pos - centre
    return centre + (r / np.linalg.norm(u)) * u, proj


def surface_frame(pos, seg: SegmentSpec) -> SurfaceFrame:
    """Outward normal and tangent pair of the capsule surface near ``pos``.

    See :class:`SurfaceFrame`. On the spherical caps the first tangent is
    the meridian (the segment axis projected into the tangent plane), which
    matches the lateral frame where the regions meet; exactly at the poles,
    where no meridian exists, the world axis least aligned with the normal
    is projected instead.
    """
    pos = np.asarray(pos, dtype=float)
    proj = capsule_project(pos, seg)
    if proj.degenerate:
        warnings.warn(
            f"point on capsule axis of segment '{seg.seg_id}': surface frame undefined"
        )
        z = np.zeros(3)
        return SurfaceFrame(z, z, z, proj.region, True)
    if proj.region == REGION_LATERAL:
        n = proj.ortho / np.linalg.norm(proj.ortho)
        t1 = seg.axis.copy()
    else:
        centre = np.zeros(3) if proj.region == REGION_BELOW_PROXIMAL else seg.vector
        u = pos - centre
        n = u / np.linalg.norm(u)
        m = seg.axis - (seg.axis @ n) * n
        nm = np.linalg.norm(m)
        if nm < 1e-8:  # at a pole: fall back to the least-aligned world axis
            k = int(np.argmin(np.abs(n)))
            e = np.zeros(3)
            e[k] = 1.0
            m = e - (e @ n) * n
            nm = np.linalg.norm(m)
        t1 = m / nm
    t2 = np.cross(n, t1)
    return SurfaceFrame(n, t1, t2, proj.region, False)


@dataclass
class BodyModel:
    """A kinematic tree with shape, IMUs and known fixed points."""

    segments: dict[str, SegmentSpec]
    joints: list[JointSpec]
    imus: list[ImuAttachment]
    fixed_points: list[FixedPointSpec]
    world: WorldConfig = field(default_factory=WorldConfig)

    # -- lookups ---------------------------------------------------------

    @property
    def segment_ids(self) -> list[str]:
        return list(self.segments)

    @property
    def imu_ids(self) -> list[str]:
        return [imu.imu_id for imu in self.imus]

    def segment_of_imu(self, imu_id: str) -> str:
        for imu in self.imus:
            if imu.imu_id == imu_id:
                return imu.segment
        raise KeyError(imu_id)

    def imu_on_segment(self, seg_id: str) -> str | None:
        for imu in self.imus:
            if imu.segment == seg_id:
                return imu.imu_id
        return None

    def joint_by_id(self, joint_id: str) -> JointSpec:
        for j in self.joints:
            if j.joint_id == joint_id:
                return j
        raise KeyError(joint_id)

    def parent_joint_of(self, seg_id: str) -> JointSpec | None:
        for j in self.joints:
            if j.child == seg_id:
                return j
        return None

    def topological_segments(self) -> list[str]:
        """Segment ids ordered so parents precede children."""
        children: dict[str | None, list[str]] = {}
        for j in self.joints:
            children.setdefault(j.parent, []).append(j.child)
        order: list[str] = []
        stack = list(reversed(children.get(None, [])))
        while stack:
            sid = stack.pop()
            order.append(sid)
            stack.extend(reversed(children.get(sid, [])))
        return order

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "world": {
                "gravity": list(map(float, self.world.gravity)),
                "magnetic_field": list(map(float, self.world.magnetic_field)),
                "sample_period": self.world.sample_period,
            },
            "segments": [
                {
                    "id": s.seg_id,
                    "vector": list(map(float, s.vector)),
                    "proximal_radius": s.proximal_radius,
                    "distal_radius": s.distal_radius,
                }
                for s in self.segments.values()
            ],
            "joints": [
                {
                    "id": j.joint_id,
                    "parent": j.parent,
                    "child": j.child,
                    "kind": j.kind,
                    "axis": None if j.axis is None else list(map(float, j.axis)),
                    "rom_deg": None if j.rom_deg is None else list(j.rom_deg),
                    "world_anchor": list(map(float, j.world_anchor)),
                }
                for j in self.joints
            ],
            "imus": [{"id": i.imu_id, "segment": i.segment} for i in self.imus],
            "fixed_points": [
                {
                    "segment": f.segment,
                    "local": list(map(float, f.local)),
                    "world": list(map(float, f.world)),
                }
                for f in self.fixed_points
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BodyModel":
        world = WorldConfig(
            gravity=np.asarray(d["world"]["gravity"]),
            magnetic_field=np.asarray(d["world"].get("magnetic_field", [1.0, 0.0, 0.0])),
            sample_period=float(d["world"]["sample_period"]),
        )
        segments = {
            s["id"]: SegmentSpec(
                s["id"], np.asarray(s["vector"]), s["proximal_radius"], s["distal_radius"]
            )
            for s in d["segments"]
        }
        joints = [
            JointSpec(
                j["id"],
                j["parent"],
                j["child"],
                kind=j.get("kind", "ball"),
                axis=None if j.get("axis") is None else np.asarray(j["axis"]),
                rom_deg=None if j.get("rom_deg") is None else tuple(j["rom_deg"]),
                world_anchor=np.asarray(j.get("world_anchor", [0.0, 0.0, 0.0])),
            )
            for j in d["joints"]
        ]
        imus = [ImuAttachment(i["id"], i["segment"]) for i in d["imus"]]
        fixed = [
            FixedPointSpec(f["segment"], np.asarray(f["local"]), np.asarray(f["world"]))
            for f in d.get("fixed_points", [])
        ]
        return cls(segments, joints, imus, fixed, world)


def validate_model(model: BodyModel) -> list[str]:
    """Check structural consistency; returns a list of problems (empty = ok)."""
    issues: list[str] = []
    for s in model.segments.values():
        if s.length <= 0.0:
            issues.append(f"segment '{s.seg_id}': zero-length axis")
        if s.proximal_radius <= 0.0 or s.distal_radius <= 0.0:
            issues.append(f"segment '{s.seg_id}': radii must be positive")

    seen_children: set[str] = set()
    for j in model.joints:
        if j.parent is not None and j.parent not in model.segments:
            issues.append(f"joint '{j.joint_id}': unknown parent '{j.parent}'")
        if j.child not in model.segments:
            issues.append(f"joint '{j.joint_id}': unknown child '{j.child}'")
        if j.parent == j.child:
            issues.append(f"joint '{j.joint_id}': parent equals child")
        if j.child in seen_children:
            issues.append(f"segment '{j.child}' has more than one parent joint")
        seen_children.add(j.child)
        if j.kind not in ("ball", "hinge"):
            issues.append(f"joint '{j.joint_id}': unknown kind '{j.kind}'")
        if j.kind == "hinge":
            if j.axis is None:
                issues.append(f"hinge '{j.joint_id}': missing axis")
            elif abs(np.linalg.norm(j.axis) - 1.0) > 1e-6:
                issues.append(f"hinge '{j.joint_id}': axis must be unit length")
            if j.rom_deg is not None and not j.rom_deg[0] < j.rom_deg[1]:
                issues.append(f"hinge '{j.joint_id}': empty range of motion")

    reachable = set(model.topological_segments())
    for sid in model.segments:
        if sid not in reachable:
            issues.append(f"segment '{sid}' is not connected to the world")

    imu_ids = [i.imu_id for i in model.imus]
    if len(imu_ids) != len(set(imu_ids)):
        issues.append("duplicate IMU ids")
    seg_with_imu: set[str] = set()
    for imu in model.imus:
        if imu.segment not in model.segments:
            issues.append(f"IMU '{imu.imu_id}': unknown segment '{imu.segment}'")
        elif imu.segment in seg_with_imu:
            issues.append(f"segment '{imu.segment}' carries more than one IMU")
        else:
            seg_with_imu.add(imu.segment)

    for f in model.fixed_points:
        if f.segment not in model.segments:
            issues.append(f"fixed point on unknown segment '{f.segment}'")

    g = model.world.gravity
    m = model.world.magnetic_field
    if np.linalg.norm(g) < 1e-6:
        issues.append("gravity vector is zero")
    if np.linalg.norm(m) < 1e-12:
        issues.append("magnetic reference is zero")
    elif np.linalg.norm(np.cross(g, m)) < 1e-9 * np.linalg.norm(g) * np.linalg.norm(m):
        issues.append("magnetic field is parallel to gravity (heading unobservable)")
    return issues


def load_body_model(path) -> BodyModel:
    with open(path) as fh:
        return BodyModel.from_dict(json.load(fh))


def save_body_model(model: BodyModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")
