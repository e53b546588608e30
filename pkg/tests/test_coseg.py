import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvs_selfsup import coseg
from mvs_selfsup.synth import plane_sphere_scene, render_scene


def _clustered(seed, rows=40, cols=6):
    """Exact rank-2 product whose rows split into two pure clusters."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, rows)
    p = np.zeros((rows, 2))
    p[np.arange(rows), labels] = rng.uniform(0.5, 1.5, rows)
    q = rng.uniform(0, 1, (2, cols))
    q[0, :3] += 1
    q[1, 3:] += 1
    return p @ q, labels


def test_features_shape_and_nonnegative():
    views = [np.random.default_rng(i).uniform(size=(8, 12, 3)) for i in range(2)]
    vol = coseg.extract_features(views)
    assert vol.shape == (2, 8, 12, coseg.N_FEATURES)
    assert vol.min() >= 0
    assert coseg.feature_matrix(vol).shape == (2 * 8 * 12, coseg.N_FEATURES)
    assert coseg.extract_features(views, downsample=2).shape == (2, 4, 6, 16)


def test_features_constant_image():
    f = coseg.pixel_features(np.full((6, 6, 3), 0.4))
    np.testing.assert_allclose(f[..., :4], 0.4)
    assert not f[..., 4:12].any()
    assert not f[..., 14:].any()


def test_features_reject_bad_input():
    with pytest.raises(ValueError):
        coseg.extract_features([np.zeros((4, 4, 3)), np.zeros((4, 5, 3))])
    with pytest.raises(ValueError):
        coseg.extract_features([np.zeros((5, 5, 3))], downsample=2)


def test_nmf_monotone_and_nonnegative_each_step():
    a = np.random.default_rng(0).uniform(size=(30, 16))
    seen = []

    def hook(it, p, q, err):
        assert p.min() >= 0 and q.min() >= 0
        seen.append(err)

    f = coseg.nmf_factorize(a, kc=4, max_iters=100, seed=3, callback=hook)
    assert len(seen) == f.iterations == 100
    assert np.all(np.diff(seen) <= 1e-9)
    assert f.final_error == seen[-1] >= 0


def test_nmf_clustered_recovery():
    for seed in range(5):
        a, _ = _clustered(seed)
        f = coseg.nmf_factorize(a, kc=2, max_iters=500, seed=seed)
        assert f.final_error / np.linalg.norm(a) < 1e-3


def test_nmf_clusters_match_labels():
    a, labels = _clustered(11)
    f = coseg.nmf_factorize(a, kc=2, max_iters=300, seed=0)
    pred = f.p.argmax(1)
    agree = max(np.mean(pred == labels), np.mean(pred != labels))
    assert agree == 1.0


def test_nmf_deterministic():
    a = np.random.default_rng(1).uniform(size=(20, 8))
    f1 = coseg.nmf_factorize(a, kc=3, max_iters=50, seed=9)
    f2 = coseg.nmf_factorize(a, kc=3, max_iters=50, seed=9)
    np.testing.assert_array_equal(f1.p, f2.p)
    np.testing.assert_array_equal(f1.q, f2.q)


def test_nmf_tol_stops_early():
    a, _ = _clustered(2)
    f = coseg.nmf_factorize(a, kc=2, max_iters=1000, tol=1e-2, seed=0)
    assert f.iterations < 1000 and f.final_error <= 1e-2


def test_nmf_single_update_oracle():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(5, 4))
    p0, q0 = rng.uniform(0.1, 1, (5, 2)), rng.uniform(0.1, 1, (2, 4))
    f = coseg.nmf_factorize(a, kc=2, max_iters=1, init=(p0, q0))
    q1 = q0 * (p0.T @ a) / (p0.T @ p0 @ q0 + coseg.EPS)
    p1 = p0 * (a @ q1.T) / (p0 @ q1 @ q1.T + coseg.EPS)
    np.testing.assert_allclose(f.q, q1, rtol=1e-12)
    np.testing.assert_allclose(f.p, p1, rtol=1e-12)


@pytest.mark.parametrize(
    "kwargs", [{"kc": 0}, {"kc": 9}, {"max_iters": 0}, {"tol": -1.0}]
)
def test_nmf_argument_errors(kwargs):
    with pytest.raises(ValueError):
        coseg.nmf_factorize(np.ones((10, 8)), **{"kc": 2, **kwargs})


def test_nmf_rejects_negative():
    with pytest.raises(ValueError):
        coseg.nmf_factorize(-np.ones((4, 4)), kc=2)


def test_permutation_symmetry():
    rng = np.random.default_rng(5)
    a = rng.uniform(size=(3 * 2 * 2, 5))
    f = coseg.nmf_factorize(a, kc=3, max_iters=20, seed=0)
    perm = [2, 0, 1]
    g = coseg.NmfFactors(f.p[:, perm], f.q[perm], f.final_error, f.iterations)
    np.testing.assert_allclose(f.p @ f.q, g.p @ g.q, rtol=1e-12)
    s1 = coseg.segmentation_from_factors(f, 3, 2, 2)
    s2 = coseg.segmentation_from_factors(g, 3, 2, 2)
    np.testing.assert_allclose(s1[..., perm], s2, rtol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_segmentation_is_simplex(seed, kc):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0, 50, (2 * 3 * 4, kc))
    f = coseg.NmfFactors(p, np.ones((kc, 16)), 0.0, 1)
    s = coseg.segmentation_from_factors(f, 2, 3, 4)
    assert s.min() >= 0
    np.testing.assert_allclose(s.sum(-1), 1.0, atol=1e-6)


def test_segmentation_row_count_checked():
    f = coseg.NmfFactors(np.ones((10, 2)), np.ones((2, 16)), 0.0, 1)
    with pytest.raises(ValueError):
        coseg.segmentation_from_factors(f, 2, 2, 2)


def test_onehot_examples():
    np.testing.assert_array_equal(coseg.onehot_argmax([0.1, 0.7, 0.2]), [0, 1, 0])
    np.testing.assert_array_equal(coseg.onehot_argmax([0.25] * 4), [1, 0, 0, 0])
    oh = np.eye(5)[3]
    np.testing.assert_array_equal(coseg.onehot_argmax(oh), oh)
    with pytest.raises(ValueError):
        coseg.onehot_argmax([np.nan, 1.0])


def test_cosegment_scene():
    scene = render_scene(plane_sphere_scene(n_views=2, size=32, seed=0))
    maps, f = coseg.cosegment(scene.images, kc=4, downsample=2, max_iters=50)
    assert maps.shape == (2, 32, 32, 4)
    np.testing.assert_allclose(maps.sum(-1), 1.0, atol=1e-6)
    assert np.all(np.diff(f.error_trace) <= 1e-9)
    lab = coseg.label_image(maps[0])
    assert lab.shape == (32, 32, 3) and lab.dtype == np.uint8
