import json

import numpy as np
import pytest

from imu2seg import bodymodel as bm


def _seg(r_p=0.1, r_d=0.1, L=0.3):
    return bm.SegmentSpec("seg", np.array([0.0, 0.0, L]), r_p, r_d)


def _two_segment_model():
    segs = {
        "seg0": bm.SegmentSpec("seg0", [0, 0, 0.3], 0.1, 0.1),
        "seg1": bm.SegmentSpec("seg1", [0, 0, 0.3], 0.1, 0.1),
    }
    joints = [
        bm.JointSpec("j0", None, "seg0", kind="ball"),
        bm.JointSpec(
            "j1", "seg0", "seg1", kind="hinge", axis=[1.0, 0.0, 0.0], rom_deg=(0.0, 162.0)
        ),
    ]
    imus = [bm.ImuAttachment("imu0", "seg0"), bm.ImuAttachment("imu1", "seg1")]
    fixed = [bm.FixedPointSpec("seg0", [0, 0, 0], [0, 0, 0])]
    return bm.BodyModel(segs, joints, imus, fixed, bm.WorldConfig())


def test_radius_interpolation():
    seg = _seg(r_p=0.074, r_d=0.049, L=0.3)
    assert bm.capsule_radius_at(seg, 0.15) == pytest.approx(0.0615, abs=1e-12)
    assert bm.capsule_radius_at(seg, 0.0) == pytest.approx(0.074)
    assert bm.capsule_radius_at(seg, 0.3) == pytest.approx(0.049)


def test_projection_regions():
    seg = _seg()
    p = bm.capsule_project([0.15, 0.0, 0.1], seg)
    assert p.region == bm.REGION_LATERAL
    assert p.axial == pytest.approx(0.1)
    np.testing.assert_allclose(p.ortho, [0.15, 0, 0], atol=1e-15)
    assert not p.degenerate

    assert bm.capsule_project([0.0, 0.05, -0.02], seg).region == bm.REGION_BELOW_PROXIMAL
    assert bm.capsule_project([0.0, 0.05, 0.35], seg).region == bm.REGION_BEYOND_DISTAL


def test_surface_point_lateral():
    seg = _seg()
    s, proj = bm.capsule_surface_point([0.15, 0.0, 0.1], seg)
    np.testing.assert_allclose(s, [0.1, 0.0, 0.1], atol=1e-12)
    assert proj.region == bm.REGION_LATERAL


def test_surface_point_cap():
    seg = _seg()
    s, proj = bm.capsule_surface_point([0.0, 0.0, -0.05], seg)
    np.testing.assert_allclose(s, [0.0, 0.0, -0.1], atol=1e-12)
    assert proj.region == bm.REGION_BELOW_PROXIMAL
    s, _ = bm.capsule_surface_point([0.0, 0.05, 0.35], seg)
    # radial from the distal cap centre [0,0,0.3]
    u = np.array([0.0, 0.05, 0.05])
    np.testing.assert_allclose(s, np.array([0, 0, 0.3]) + 0.1 * u / np.linalg.norm(u))


def test_surface_frame_lateral():
    seg = _seg()
    f = bm.surface_frame([0.15, 0.0, 0.1], seg)
    np.testing.assert_allclose(f.normal, [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(f.t1, [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(f.t2, [0, -1, 0], atol=1e-15)
    assert not f.degenerate
    # right-handed and orthonormal
    np.testing.assert_allclose(np.cross(f.normal, f.t1), f.t2, atol=1e-15)


def test_surface_frame_cap_meridian_matches_lateral_at_equator():
    seg = _seg()
    f_lat = bm.surface_frame([0.1, 0.0, 1e-12], seg)
    f_cap = bm.surface_frame([0.1, 0.0, -1e-9], seg)
    np.testing.assert_allclose(f_lat.t1, f_cap.t1, atol=1e-6)
    np.testing.assert_allclose(f_lat.normal, f_cap.normal, atol=1e-6)


def test_surface_frame_cap_pole_fallback():
    seg = _seg()
    f = bm.surface_frame([0.0, 0.0, -0.05], seg)
    np.testing.assert_allclose(f.normal, [0, 0, -1], atol=1e-12)
    np.testing.assert_allclose(f.t1, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(f.t2, [0, -1, 0], atol=1e-12)


def test_degenerate_on_axis_warns():
    seg = _seg()
    with pytest.warns(UserWarning):
        f = bm.surface_frame([0.0, 0.0, 0.1], seg)
    assert f.degenerate
    with pytest.warns(UserWarning):
        s, proj = bm.capsule_surface_point([0.0, 0.0, 0.1], seg)
    assert proj.degenerate
    np.testing.assert_allclose(s, [0.0, 0.0, 0.1])


def test_validate_ok():
    assert bm.validate_model(_two_segment_model()) == []


def test_validate_catches_problems():
    m = _two_segment_model()
    m.segments["seg0"].proximal_radius = -1.0
    assert any("radii" in msg for msg in bm.validate_model(m))

    m = _two_segment_model()
    m.joints[1].axis = np.array([2.0, 0.0, 0.0])
    assert any("unit length" in msg for msg in bm.validate_model(m))

    m = _two_segment_model()
    m.joints[1].rom_deg = (90.0, 10.0)
    assert any("range of motion" in msg for msg in bm.validate_model(m))

    m = _two_segment_model()
    m.imus.append(bm.ImuAttachment("imu2", "seg0"))
    assert any("more than one IMU" in msg for msg in bm.validate_model(m))

    m = _two_segment_model()
    m.joints.pop(0)  # seg0 no longer reachable from the world
    msgs = bm.validate_model(m)
    assert any("not connected" in msg for msg in msgs)

    m = _two_segment_model()
    m.world.magnetic_field = np.array([0.0, 0.0, 5.0])
    assert any("parallel to gravity" in msg for msg in bm.validate_model(m))


def test_topological_order():
    m = _two_segment_model()
    assert m.topological_segments() == ["seg0", "seg1"]
    assert m.segment_of_imu("imu1") == "seg1"
    assert m.imu_on_segment("seg0") == "imu0"
    assert m.imu_on_segment("nope") is None


def test_json_roundtrip(tmp_path):
    m = _two_segment_model()
    path = tmp_path / "model.json"
    bm.save_body_model(m, path)
    m2 = bm.load_body_model(path)
    assert bm.validate_model(m2) == []
    assert m2.segment_ids == m.segment_ids
    assert m2.joints[1].kind == "hinge"
    np.testing.assert_allclose(m2.joints[1].axis, [1, 0, 0])
    assert m2.joints[1].rom_deg == (0.0, 162.0)
    np.testing.assert_allclose(m2.world.gravity, [0, 0, -9.81])
    # file is plain json
    with open(path) as fh:
        json.load(fh)


def test_calibration_copy_is_deep():
    cal = bm.I2SCalibration(
        {"imu0": bm.CalibEntry([1, 0, 0, 0], [0.1, 0.0, 0.15])}
    )
    cal2 = cal.copy()
    cal2["imu0"].pos[0] = 99.0
    assert cal["imu0"].pos[0] == pytest.approx(0.1)
    d = cal.to_dict()
    cal3 = bm.I2SCalibration.from_dict(d)
    np.testing.assert_allclose(cal3["imu0"].quat, [1, 0, 0, 0])


def test_world_config_validation():
    with pytest.raises(ValueError):
        bm.WorldConfig(sample_period=0.0)
    with pytest.raises(ValueError):
        bm.SegmentSpec("s", [1, 2], 0.1, 0.1)
