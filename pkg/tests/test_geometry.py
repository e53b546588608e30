import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _instances import rotation
from mvs_selfsup.geometry import (
    Camera,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    bilinear_sample,
    image_gradient,
    image_gradient_adjoint,
    look_at_pose,
    reproject,
    reproject_pixel,
    sample_bilinear,
    warp,
    warp_grid,
)
from mvs_selfsup.synth import plane_scene, render_scene

INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0)


def test_reproject_identity():
    c = reproject_pixel((12.3, 40.0), 3.7, INTR, INTR, CameraPose.identity())
    np.testing.assert_allclose(c.source_uv, (12.3, 40.0), atol=1e-12)
    assert c.valid


def test_reproject_hand_example():
    pose = CameraPose(np.eye(3), np.array([-0.1, 0.0, 0.0]))
    c = reproject_pixel((50, 50), 2.0, INTR, INTR, pose)
    np.testing.assert_allclose(c.source_uv, (45.0, 50.0), atol=1e-12)
    assert c.valid


def test_reproject_behind_camera_invalid():
    pose = CameraPose(np.eye(3), np.array([0.0, 0.0, -5.0]))
    assert not reproject_pixel((50, 50), 2.0, INTR, INTR, pose).valid


def test_reproject_out_of_bounds_invalid():
    pose = CameraPose(np.eye(3), np.array([3.0, 0.0, 0.0]))
    assert not reproject_pixel((50, 50), 2.0, INTR, INTR, pose, (101, 101)).valid


@pytest.mark.parametrize("bad", [(np.nan, 1.0, 1.0), (1.0, 1.0, np.inf)])
def test_reproject_non_finite_rejected(bad):
    u, v, d = bad
    with pytest.raises(ValueError):
        reproject_pixel((u, v), d, INTR, INTR, CameraPose.identity())


def test_reproject_nonpositive_depth_rejected():
    with pytest.raises(ValueError):
        reproject_pixel((1, 1), 0.0, INTR, INTR, CameraPose.identity())


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0, 100), st.floats(0, 100), st.floats(0.1, 50),
)
def test_identity_pose_is_identity_map(u, v, d):
    c = reproject_pixel((u, v), d, INTR, INTR, CameraPose.identity())
    np.testing.assert_allclose(c.source_uv, (u, v), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 2**32 - 1), st.floats(0.2, 5.0),
)
def test_depth_translation_scaling_covariance(seed, s):
    rng = np.random.default_rng(seed)
    pose = CameraPose(rotation(rng.normal(0, 0.1, 3)), rng.normal(0, 0.3, 3))
    scaled = CameraPose(pose.rotation, pose.translation * s)
    uv = rng.uniform(0, 100, 2)
    d = rng.uniform(2, 5)
    a = reproject(uv, np.array(d), INTR, INTR, pose, (101, 101))
    b = reproject(uv, np.array(d * s), INTR, INTR, scaled, (101, 101))
    np.testing.assert_allclose(a.uv, b.uv, atol=1e-9)


def test_reproject_depth_derivative_matches_fd():
    rng = np.random.default_rng(1)
    pose = CameraPose(rotation(rng.normal(0, 0.1, 3)), rng.normal(0, 0.3, 3))
    uv = rng.uniform(0, 100, (20, 2))
    d = rng.uniform(2, 5, 20)
    r = reproject(uv, d, INTR, INTR, pose, (101, 101))
    h = 1e-6
    fd = (reproject(uv, d + h, INTR, INTR, pose, (101, 101)).uv - reproject(uv, d - h, INTR, INTR, pose, (101, 101)).uv) / (2 * h)
    np.testing.assert_allclose(r.duv_ddepth, fd, rtol=1e-6, atol=1e-8)


def test_bilinear_examples():
    g = np.array([[0.0, 1.0], [2.0, 3.0]])
    val, ok = bilinear_sample(g, (0.5, 0.5))
    assert ok and val[0] == pytest.approx(1.5)
    val, ok = bilinear_sample(g, (1, 1))
    assert ok and val[0] == 3.0
    val, ok = bilinear_sample(g, (-0.01, 0))
    assert not ok and val[0] == 0.0


def test_bilinear_lattice_points_exact():
    rng = np.random.default_rng(0)
    g = rng.uniform(size=(5, 7, 3))
    for y in range(5):
        for x in range(7):
            val, ok = bilinear_sample(g, (x, y))
            assert ok
            np.testing.assert_array_equal(val, g[y, x])


def test_bilinear_non_finite_rejected():
    with pytest.raises(ValueError):
        bilinear_sample(np.zeros((3, 3)), (np.nan, 1.0))


@settings(max_examples=50, deadline=None)
@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(-1, 1),
    st.floats(0, 6), st.floats(0, 4),
)
def test_bilinear_exact_on_affine(a, b, c, u, v):
    y, x = np.mgrid[0:5, 0:7].astype(float)
    g = a * x + b * y + c
    val, ok = bilinear_sample(g, (u, v))
    assert ok
    assert val[0] == pytest.approx(a * u + b * v + c, abs=1e-9)


def test_bilinear_derivatives_match_fd():
    rng = np.random.default_rng(2)
    g = rng.uniform(size=(6, 6, 2))
    uv = rng.uniform(0.1, 4.9, (30, 2))
    uv = uv[np.all(np.abs(uv - np.round(uv)) > 1e-3, axis=1)]
    s = sample_bilinear(g, uv)
    h = 1e-6
    du = (sample_bilinear(g, uv + [h, 0]).values - sample_bilinear(g, uv - [h, 0]).values) / (2 * h)
    dv = (sample_bilinear(g, uv + [0, h]).values - sample_bilinear(g, uv - [0, h]).values) / (2 * h)
    np.testing.assert_allclose(s.d_du, du, atol=1e-7)
    np.testing.assert_allclose(s.d_dv, dv, atol=1e-7)


def _cam(pose=None):
    return Camera(INTR, pose or CameraPose.identity(), 0.5, 10.0)


def test_warp_identity_returns_source():
    rng = np.random.default_rng(3)
    src = rng.uniform(size=(101, 101, 3))
    depth = DepthMap(rng.uniform(1, 5, (101, 101)), 0.5, 10.0)
    warped, mask = warp_grid(src, depth, INTR, INTR, CameraPose.identity())
    np.testing.assert_allclose(warped, src, atol=1e-12)
    assert np.all(mask == 1)


def test_warp_all_invalid_depth_gives_empty_mask():
    depth = DepthMap(np.full((8, 8), np.nan), 0.5, 10.0)
    _, mask = warp_grid(np.ones((8, 8)), depth, INTR, INTR, CameraPose.identity())
    assert not mask.any()


def test_warp_mask_equals_reproject_validity():
    rng = np.random.default_rng(4)
    pose = CameraPose(rotation([0, 0.05, 0]), np.array([0.6, 0.0, 0.0]))
    vals = rng.uniform(1, 5, (101, 101))
    vals[::7, ::5] = np.nan
    depth = DepthMap(vals, 0.5, 10.0)
    _, mask = warp_grid(rng.uniform(size=(101, 101)), depth, INTR, INTR, pose)
    expect = np.zeros((101, 101))
    for y in range(0, 101, 3):
        for x in range(0, 101, 3):
            if depth.valid[y, x]:
                expect[y, x] = reproject_pixel((x, y), vals[y, x], INTR, INTR, pose, (101, 101)).valid
    np.testing.assert_array_equal(mask[::3, ::3], expect[::3, ::3])


def test_warp_single_channel_layout():
    depth = DepthMap(np.full((4, 4), 2.0), 0.5, 10.0)
    warped, mask = warp_grid(np.ones((4, 4)), depth, INTR, INTR, CameraPose.identity())
    assert warped.shape == (4, 4) and mask.shape == (4, 4)


def test_warp_plane_scene_gt_consistency():
    scene = render_scene(plane_scene(n_views=2, size=64, seed=0))
    ref, src = scene.cameras
    warped, mask = warp_grid(scene.images[1], scene.depths[0], ref.intrinsics, src.intrinsics, src.relative_to(ref))
    m = mask > 0
    assert m.mean() > 0.8
    assert np.mean(np.abs(warped - scene.images[0])[m]) < 1e-3


def test_image_gradient_examples():
    gx, gy = image_gradient(np.full((3, 4), 2.5))
    assert not gx.any() and not gy.any()
    ramp = np.tile(np.arange(5.0), (4, 1))
    gx, gy = image_gradient(ramp)
    np.testing.assert_array_equal(gx[:, :-1], 1.0)
    np.testing.assert_array_equal(gx[:, -1], 0.0)
    assert not gy.any()


def test_image_gradient_loop_oracle():
    rng = np.random.default_rng(5)
    g = rng.uniform(size=(4, 4))
    gx, gy = image_gradient(g)
    for y in range(4):
        for x in range(4):
            assert gx[y, x] == (g[y, x + 1] - g[y, x] if x < 3 else 0.0)
            assert gy[y, x] == (g[y + 1, x] - g[y, x] if y < 3 else 0.0)


def test_image_gradient_degenerate():
    with pytest.raises(ValueError):
        image_gradient(np.zeros((1, 1)))


def test_image_gradient_adjoint_identity():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(5, 6, 2))
    ax, ay = rng.normal(size=(2, 5, 6, 2))
    gx, gy = image_gradient(x)
    lhs = np.sum(gx * ax) + np.sum(gy * ay)
    rhs = np.sum(x * image_gradient_adjoint(ax, ay))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_pose_validation_and_algebra():
    with pytest.raises(ValueError):
        CameraPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        CameraPose(np.eye(3) * 1.01, np.zeros(3))
    p = CameraPose(rotation([0.1, -0.2, 0.3]), np.array([1.0, 2.0, 3.0]))
    ident = p.compose(p.inverse())
    np.testing.assert_allclose(ident.matrix, np.eye(4), atol=1e-12)
    pts = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(p.inverse().apply(p.apply(pts)), pts, atol=1e-12)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, np.nan, 0.0)
    k = CameraIntrinsics(10, 12, 3, 4)
    assert CameraIntrinsics.from_matrix(k.matrix) == k


def test_pooled_intrinsics_track_pixel_centres():
    intr = CameraIntrinsics(64, 64, 31.5, 31.5)
    p = intr.pooled(2)
    # the pooled pixel 0 centre is full-resolution coordinate 0.5
    assert (0.5 - intr.cx) / intr.fx == pytest.approx((0 - p.cx) / p.fx)


def test_depthmap_validity_rules():
    d = DepthMap(np.array([[1.0, np.nan], [5.0, 20.0]]), 1.0, 10.0)
    np.testing.assert_array_equal(d.valid, [[True, False], [True, False]])
    with pytest.raises(ValueError):
        DepthMap(np.array([[20.0]]), 1.0, 10.0, valid=np.array([[True]]))
    with pytest.raises(ValueError):
        DepthMap(np.ones((2, 2)), 0.0, 1.0)


def test_look_at_pose_points_at_target():
    pose = look_at_pose((1.0, 0.5, -3.0), (0.0, 0.0, 4.0))
    tgt = pose.apply(np.array([[0.0, 0.0, 4.0]]))[0]
    np.testing.assert_allclose(tgt[:2], 0.0, atol=1e-12)
    assert tgt[2] > 0


def test_warp_derivative_chain_shapes():
    depth = DepthMap(np.full((5, 6), 2.0), 0.5, 10.0)
    w = warp(np.ones((5, 6, 3)), depth, INTR, INTR, CameraPose.identity())
    assert w.warped.shape == (5, 6, 3) and w.duv_ddepth.shape == (5, 6, 2)
