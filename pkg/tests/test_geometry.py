import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from planesdf_cd.geometry import (GeometryError, PlaneFrame, PlanePose, RigidTransform, normalize_pose,
                                  rotation_between)


@pytest.mark.parametrize("n, d, n_exp, d_exp", [
    ((0, 0, -2), -2, (0, 0, 1), 1),
    ((0, 0, 1), 0.5, (0, 0, 1), 0.5),
    ((-1, 0, 0), 3, (1, 0, 0), -3),
])
def test_normalize_pose_examples(n, d, n_exp, d_exp):
    out = normalize_pose(PlanePose(n, d))
    np.testing.assert_allclose(out.normal, n_exp, atol=1e-15)
    assert out.offset == pytest.approx(d_exp, abs=1e-15)


def test_normalize_zero_normal():
    with pytest.raises(GeometryError):
        normalize_pose(PlanePose((0, 0, 0), 1))


unit3 = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(unit3, st.floats(-10, 10), st.floats(0.1, 5))
def test_normalize_is_canonical(n, d, scale):
    a = normalize_pose(PlanePose(n, d))
    b = normalize_pose(PlanePose(-scale * np.asarray(n), -scale * d))
    assert abs(np.linalg.norm(a.normal) - 1) <= 1e-9
    np.testing.assert_allclose(a.normal, b.normal, atol=1e-12)
    assert a.offset == pytest.approx(b.offset, abs=1e-9)
    # same point set
    p = a.offset * a.normal
    assert abs(np.dot(n, p) - d) <= 1e-9 * max(1.0, abs(d))


@settings(max_examples=200, deadline=None)
@given(unit3, unit3)
def test_rotation_between(a, b):
    a = np.asarray(a) / np.linalg.norm(a)
    b = np.asarray(b) / np.linalg.norm(b)
    if np.dot(a, b) < -1 + 1e-6:
        return
    r = rotation_between(a, b)
    np.testing.assert_allclose(r @ a, b, atol=1e-9)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0)
    # minimal: angle equals the angle between the vectors
    ang = RigidTransform(r, np.zeros(3)).rotation_angle()
    assert ang == pytest.approx(np.arccos(np.clip(np.dot(a, b), -1, 1)), abs=1e-7)


def test_rotation_between_antiparallel():
    with pytest.raises(GeometryError):
        rotation_between([0, 0, 1], [0, 0, -1])


@settings(max_examples=100, deadline=None)
@given(unit3, st.floats(-5, 5))
def test_plane_frame(n, d):
    f = PlaneFrame.from_plane(np.asarray(n), d)
    ax = f.axes
    np.testing.assert_allclose(ax.T @ ax, np.eye(3), atol=1e-12)
    assert np.linalg.det(ax) == pytest.approx(1.0)
    n_unit = np.asarray(n) / np.linalg.norm(n)
    # local z is height above the plane
    p = np.array([[0.3, -0.2, 0.7]])
    w = f.to_world(p)
    assert float(w[0] @ n_unit - d) == pytest.approx(0.7, abs=1e-9)
    np.testing.assert_allclose(f.to_local(w), p, atol=1e-9)
    t = f.world_to_local().compose(f.local_to_world())
    np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(t.translation, 0, atol=1e-12)


def test_transform_inverse_and_compose(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.linalg.det(q))
    t = RigidTransform(q, rng.normal(size=3))
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(t.inverse().apply(t.apply(pts)), pts, atol=1e-12)
    u = RigidTransform(np.eye(3), np.array([1.0, 0, 0]))
    np.testing.assert_allclose(u.compose(t).apply(pts), u.apply(t.apply(pts)), atol=1e-12)
