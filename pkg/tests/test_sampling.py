import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import pdist

from rkpmsim.errors import RkpmError
from rkpmsim.sampling import (
    Box,
    BoxRegion,
    Material,
    MaterialSpec,
    PointCloud,
    ShellRegion,
    Sphere,
    TriangleMesh,
    farthest_point_sampling,
    kernel_radii,
    load_point_cloud,
    sample_grid,
)


def test_unit_cube_grid_is_ten_cubed():
    integ = sample_grid(Box((0, 0, 0), (1, 1, 1)), 1000)
    assert len(integ) == 1000
    np.testing.assert_allclose(integ.weights, 1e-3, rtol=1e-12)
    assert np.all(Box((0, 0, 0), (1, 1, 1)).contains(integ.points))


def test_beam_volume():
    integ = sample_grid(Box((0, 0, 0), (5, 1, 1)), 5000)
    assert abs(integ.volume - 5.0) < 0.05 * 5.0


def test_sphere_acceptance_fraction():
    sphere = Sphere((0.5, 0.5, 0.5), 0.5)
    integ = sample_grid(sphere, 8000)
    cell = integ.weights[0]
    n_grid = round(1.0 / cell)
    assert abs(len(integ) / n_grid - np.pi / 6) < 0.03
    assert np.all(sphere.contains(integ.points))


def test_sphere_volume_matches_analytic():
    integ = sample_grid(Sphere((0, 0, 0), 0.5), 8000)
    exact = 4 / 3 * np.pi * 0.125
    assert 0.9 * exact <= integ.volume <= 1.1 * exact


def _cube_mesh(lo=0.0, hi=1.0):
    v = np.array([[x, y, z] for x in (lo, hi) for y in (lo, hi) for z in (lo, hi)], dtype=float)
    # outward-facing triangles of the 8-vertex cube
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
            [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
            [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ]
    )
    return TriangleMesh(v, f)


def test_mesh_inside_test_matches_box():
    mesh = _cube_mesh()
    pts = np.random.default_rng(0).uniform(-0.5, 1.5, size=(500, 3))
    inside_box = Box((0, 0, 0), (1, 1, 1)).contains(pts)
    np.testing.assert_array_equal(mesh.contains(pts), inside_box)
    integ = sample_grid(mesh, 1000)
    assert abs(integ.volume - 1.0) < 0.05


def test_point_cloud_pass_through(tmp_path):
    pts = np.random.default_rng(1).uniform(0, 1, size=(300, 3))
    path = tmp_path / "cloud.xyz"
    np.savetxt(path, pts)
    cloud = load_point_cloud(path)
    integ = sample_grid(cloud, 100)
    np.testing.assert_array_equal(integ.points, pts)
    assert np.allclose(integ.weights, integ.weights[0])
    bbox_vol = np.prod(pts.max(0) - pts.min(0))
    assert integ.volume <= bbox_vol * (1 + 1e-12)


def test_point_cloud_rejects_bad_input():
    with pytest.raises(RkpmError):
        PointCloud(np.array([[0, 0, 0], [1, 1, 1], [np.nan, 0, 0], [0, 1, 0]]))
    with pytest.raises(RkpmError):
        sample_grid(Box((0, 0, 0), (1, 1, 1)), 4)


def test_material_regions_last_wins():
    soft, stiff, mid = Material(1e5, 0.3, 900), Material(1e7, 0.3, 1100), Material(1e6, 0.3, 1000)
    spec = MaterialSpec(
        soft,
        (BoxRegion((0, 0, 0), (0.5, 1, 1), stiff), ShellRegion((0, 0, 0), 0.0, 0.3, mid)),
    )
    lam, mu, rho = spec.evaluate(np.array([[0.1, 0.1, 0.1], [0.4, 0.5, 0.5], [0.9, 0.5, 0.5]]))
    assert mu[0] == pytest.approx(mid.lame[1])
    assert mu[1] == pytest.approx(stiff.lame[1])
    assert mu[2] == pytest.approx(soft.lame[1])
    np.testing.assert_allclose(rho, [1000, 1100, 900])


def test_fps_cube_corners():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    assert sorted(farthest_point_sampling(corners, 8)) == list(range(8))


def test_fps_two_picks_far_apart():
    pts = np.random.default_rng(2).uniform(0, 1, size=(1000, 3))
    a, b = farthest_point_sampling(pts, 2)
    d = np.linalg.norm(pts - pts[a], axis=1)
    assert b == np.argmax(d)
    assert d[b] >= 0.8


def test_fps_collinear_endpoints():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    picks = farthest_point_sampling(pts, 3)
    assert picks[0] in (1, 2)
    assert {0, 3} <= set(picks.tolist())


def test_fps_beats_random_subsets():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, size=(400, 3))
    picks = farthest_point_sampling(pts, 30)
    assert len(set(picks.tolist())) == 30
    fps_min = pdist(pts[picks]).min()
    for _ in range(100):
        sub = rng.choice(len(pts), 30, replace=False)
        assert fps_min >= pdist(pts[sub]).min()


def test_fps_errors():
    pts = np.zeros((5, 3))
    with pytest.raises(RkpmError):
        farthest_point_sampling(pts, 6)
    with pytest.raises(RkpmError):
        farthest_point_sampling(pts, 0)


def test_kernel_radii_examples():
    r = kernel_radii(np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float))
    assert r[0] == pytest.approx(3.0)
    h = 0.25
    g = np.stack(np.meshgrid(*[np.arange(6) * h] * 3, indexing="ij"), -1).reshape(-1, 3)
    interior = np.all((g > 0) & (g < 5 * h), axis=1)
    np.testing.assert_allclose(kernel_radii(g)[interior], h, rtol=1e-12)
    with pytest.raises(RkpmError, match="degenerate"):
        kernel_radii(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], dtype=float))


def test_kernel_radii_spread_for_fps_centers():
    pts = np.random.default_rng(4).uniform(0, 1, size=(5000, 3))
    centers = pts[farthest_point_sampling(pts, 1000)]
    r = kernel_radii(centers)
    med = np.median(r)
    assert np.all((r >= 0.5 * med) & (r <= 2 * med))
    # brute-force kNN oracle
    d = np.sort(np.linalg.norm(centers[:50, None] - centers[None], axis=2), axis=1)
    np.testing.assert_allclose(r[:50], d[:, 2])


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_kernel_radii_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, size=(20, 3))
    perm = rng.permutation(20)
    np.testing.assert_array_equal(kernel_radii(c)[perm], kernel_radii(c[perm]))
