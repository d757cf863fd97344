import numpy as np
import pytest

import _oracles as O
from cpwstitch.features import CorrespondenceSet, LineMatch, LineSegment, PointMatch
from cpwstitch.geometry import (
    DegenerateHomographyError, Homography, Mesh, OutOfMeshError, RankDeficientError, RansacConfig,
    RansacError, anchor_arrays, anchor_point, dlt_estimate, footprint, inlier_subset, interpolate,
    quad_homography, ransac_homography, transfer_correspondences, warp_global, warp_image,
)
from cpwstitch.imaging import RasterImage


def point_matches(h, pts):
    return [PointMatch(tuple(p), tuple(O.map_h(h, p))) for p in pts]


def line_matches(h, segs, rng):
    """Target segments are other stretches of the mapped line, so only the line itself is shared."""
    out = []
    for s, e in segs:
        t1, t2 = rng.uniform(-0.3, 0.3), rng.uniform(0.7, 1.3)
        a = O.map_h(h, s + t1 * (e - s))
        b = O.map_h(h, s + t2 * (e - s))
        out.append(LineMatch(LineSegment(tuple(s), tuple(e)), LineSegment(tuple(a), tuple(b))))
    return out


def random_pts(rng, n):
    return rng.uniform(0, 200, size=(n, 2))


def random_segs(rng, n):
    return [(rng.uniform(0, 200, 2), rng.uniform(0, 200, 2)) for _ in range(n)]


@pytest.mark.parametrize("seed", range(5))
def test_dlt_four_points_exact(seed):
    rng = np.random.default_rng(seed)
    h = O.random_homography(rng)
    est = dlt_estimate(point_matches(h, random_pts(rng, 4)))
    assert est.distance(O.normalize_h(h)) < 1e-6


def test_dlt_identity():
    rng = np.random.default_rng(0)
    est = dlt_estimate(point_matches(np.eye(3), random_pts(rng, 7)))
    np.testing.assert_allclose(est.h, np.eye(3) / np.sqrt(3), atol=1e-9)


@pytest.mark.parametrize("n_pts,n_lines", [(3, 1), (2, 3), (1, 3), (0, 4), (6, 5)])
def test_dlt_mixed_constraints_exact(n_pts, n_lines):
    rng = np.random.default_rng(10 * n_pts + n_lines)
    h = O.random_homography(rng)
    est = dlt_estimate(point_matches(h, random_pts(rng, n_pts)), line_matches(h, random_segs(rng, n_lines), rng))
    assert est.distance(O.normalize_h(h)) < 1e-6


def test_dlt_two_points_two_lines_is_underdetermined():
    # the two points and the lines' intersection fix only three points: a one-parameter family remains
    rng = np.random.default_rng(7)
    h = O.random_homography(rng)
    with pytest.raises(RankDeficientError):
        dlt_estimate(point_matches(h, random_pts(rng, 2)), line_matches(h, random_segs(rng, 2), rng))


def test_dlt_collinear_points_rejected():
    pts = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(RankDeficientError):
        dlt_estimate(point_matches(np.eye(3), pts))


def test_homography_normalisation_and_inverse():
    h = Homography(-5 * np.array([[1, 0.1, 3], [0, 1, 4], [0, 0, 1.0]]))
    assert np.linalg.norm(h.h) == pytest.approx(1.0)
    assert h.h[2, 2] > 0
    p = np.array([[3.0, 7.0], [10.0, -2.0]])
    np.testing.assert_allclose(h.inverse().apply(h.apply(p)), p, atol=1e-12)
    with pytest.raises(DegenerateHomographyError):
        Homography(np.zeros((3, 3)))
    with pytest.raises(DegenerateHomographyError):
        Homography(np.diag([1.0, 1.0, 0.0]))


def _contaminated(seed, n_in=60, n_out=40):
    rng = np.random.default_rng(seed)
    h = O.random_homography(rng)
    src = random_pts(rng, n_in + n_out)
    dst = np.array([O.map_h(h, p) for p in src])
    dst[:n_in] += rng.normal(scale=0.3, size=(n_in, 2))
    dst[n_in:] = rng.uniform(dst.min(0) - 50, dst.max(0) + 50, size=(n_out, 2))
    perm = rng.permutation(n_in + n_out)
    corr = CorrespondenceSet([PointMatch(tuple(src[i]), tuple(dst[i])) for i in perm])
    truth = set(np.flatnonzero(perm < n_in).tolist())
    return h, corr, truth


def test_ransac_exact_inliers():
    rng = np.random.default_rng(3)
    h = O.random_homography(rng)
    corr = CorrespondenceSet(point_matches(h, random_pts(rng, 100)))
    res = ransac_homography(corr)
    assert res.point_inliers == list(range(100))
    assert res.model.distance(O.normalize_h(h)) < 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_ransac_with_outliers(seed):
    h, corr, truth = _contaminated(seed)
    res = ransac_homography(corr, RansacConfig(seed=42))
    found = set(res.point_inliers)
    assert len(found & truth) >= 0.95 * len(truth)
    src, dst = corr.point_arrays()
    idx = sorted(found & truth)
    err = np.linalg.norm(res.model.apply(src[idx]) - np.array([O.map_h(h, p) for p in src[idx]]), axis=1)
    assert err.max() <= 0.5


def test_ransac_deterministic():
    _, corr, _ = _contaminated(5)
    a = ransac_homography(corr, RansacConfig(seed=9))
    b = ransac_homography(corr, RansacConfig(seed=9))
    assert a.point_inliers == b.point_inliers and a.iterations_used == b.iterations_used
    np.testing.assert_array_equal(a.model.h, b.model.h)


def test_ransac_lines_vote_and_are_refit():
    rng = np.random.default_rng(11)
    h = O.random_homography(rng)
    lines = line_matches(h, random_segs(rng, 6), rng)
    bad = LineMatch(LineSegment((10.0, 10.0), (60.0, 20.0)), LineSegment((0.0, 100.0), (5.0, 180.0)))
    corr = CorrespondenceSet(point_matches(h, random_pts(rng, 12)), lines + [bad], [LineSegment((1.0, 1.0), (30.0, 2.0))])
    res = ransac_homography(corr)
    assert res.line_inliers == list(range(6))
    sub = inlier_subset(corr, res)
    assert len(sub.matched_lines) == 6
    assert bad.seg in sub.unmatched_lines and len(sub.unmatched_lines) == 2


def test_ransac_too_few():
    corr = CorrespondenceSet([PointMatch((0.0, 0.0), (1.0, 1.0))] * 3)
    with pytest.raises(RansacError):
        ransac_homography(corr)


def test_warp_global_identity_and_translation():
    rng = np.random.default_rng(0)
    img = RasterImage(rng.uniform(size=(20, 30)))
    out, mask, off = warp_global(img, Homography.identity())
    assert off == (0, 0) and mask.all()
    np.testing.assert_array_equal(out.data, img.data)
    out, mask, off = warp_global(img, Homography.translation(7, -3))
    assert off == (7, -3) and mask.all()
    np.testing.assert_allclose(out.data, img.data, atol=1e-12)


def test_warp_image_matches_forward_mapping():
    # a linear ramp samples exactly under bilinear interpolation, so values encode source positions
    h, w = 60, 80
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    hm = np.array([[0.95, 0.05, 4.0], [-0.03, 1.02, 2.0], [1e-4, -2e-4, 1.0]])
    off, size = (0, 0), (100, 80)
    wx, mask = warp_image(xs / 100, hm, off, size)
    wy, _ = warp_image(ys / 100, hm, off, size)
    rng = np.random.default_rng(1)
    pts = rng.uniform([5, 5], [70, 50], size=(200, 2))
    fwd = np.array([O.map_h(hm, p) for p in pts])
    for p, q in zip(pts, fwd):
        i, j = int(round(q[1])), int(round(q[0]))
        if not mask[i, j]:
            continue
        back = O.map_h(np.linalg.inv(hm), (j, i))
        assert wx[i, j] * 100 == pytest.approx(back[0], abs=1e-6)
        assert wy[i, j] * 100 == pytest.approx(back[1], abs=1e-6)


def test_footprint_rejects_points_at_infinity():
    hm = np.array([[1, 0, 0], [0, 1, 0], [-0.02, 0, 1.0]])
    with pytest.raises(DegenerateHomographyError):
        footprint(hm, 100, 50)


def test_transfer_identity_translation_and_random():
    rng = np.random.default_rng(2)
    corr = CorrespondenceSet(
        [PointMatch(tuple(p), tuple(p + 1)) for p in rng.uniform(10, 90, size=(5, 2))],
        line_matches(np.eye(3), [(np.array([10.0, 10.0]), np.array([50.0, 30.0]))], rng),
        [LineSegment((20.0, 70.0), (60.0, 75.0))],
    )
    same, dropped = transfer_correspondences(corr, Homography.identity())
    assert dropped == 0 and same == corr
    moved, _ = transfer_correspondences(corr, Homography.translation(4, -2))
    for a, b in zip(corr.points, moved.points):
        assert b.p == pytest.approx((a.p[0] + 4, a.p[1] - 2), abs=1e-12)
        assert b.p_prime == a.p_prime
    hm = O.random_homography(rng)
    off = (-13, 6)
    out, _ = transfer_correspondences(corr, Homography(hm), off)
    for a, b in zip(corr.points, out.points):
        want = O.map_h(hm, a.p) - np.array(off) - (np.array(a.p_prime) - np.array(off))
        assert np.subtract(b.p, b.p_prime) == pytest.approx(want, abs=1e-9)


def test_transfer_drops_outside_canvas():
    corr = CorrespondenceSet([PointMatch((5.0, 5.0), (5.0, 5.0)), PointMatch((95.0, 5.0), (5.0, 5.0))])
    out, dropped = transfer_correspondences(corr, Homography.identity(), (0, 0), (50, 50))
    assert dropped == 1 and len(out.points) == 1


def test_anchor_examples():
    mesh = Mesh((2.0, 3.0), (4.0, 5.0), 3, 4)
    a = anchor_point(mesh, mesh.rest[1, 2])
    assert a.quad_index == (1, 2)
    assert a.weights == pytest.approx((1, 0, 0, 0))
    assert a.vertex_ids[0] == mesh.vertex_id(1, 2)
    centre = mesh.rest[1, 2] + (2.0, 2.5)
    assert anchor_point(mesh, centre).weights == pytest.approx((0.25,) * 4)
    with pytest.raises(OutOfMeshError):
        anchor_point(mesh, (0.0, 0.0))


def test_anchor_reconstruction():
    rng = np.random.default_rng(4)
    mesh = Mesh((-7.0, 11.0), (3.3, 2.7), 6, 9)
    x0, y0, x1, y1 = mesh.bounds
    pts = rng.uniform([x0, y0], [x1, y1], size=(500, 2))
    ids, w, inside = anchor_arrays(mesh, pts)
    assert inside.all()
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(interpolate(mesh, ids, w), pts, atol=1e-9)
    for p, i, wt in zip(pts[:20], ids, w):
        ref = O.anchor((mesh.origin), mesh.cell_size, mesh.rows, mesh.cols, p)
        assert [v for v, _ in ref] == i.tolist()
        assert [x for _, x in ref] == pytest.approx(wt.tolist(), abs=1e-12)


def test_mesh_covering_and_scaling():
    mesh = Mesh.covering(10, 20, 74, 52, rows=4, cols=8)
    assert mesh.bounds == pytest.approx((10, 20, 74, 52))
    assert mesh.cell_size == (8.0, 8.0)
    half = mesh.scaled(0.5)
    np.testing.assert_allclose(half.rest, mesh.rest * 0.5)
    assert mesh.cell_vertex_ids(1, 2) == [11, 12, 20, 21]
    assert mesh.mean_displacement() == 0.0
    with pytest.raises(ValueError):
        Mesh((0, 0), (0, 1), 2, 2)


def test_quad_homography_maps_corners():
    src = np.array([[0, 0], [10, 0], [0, 10], [10, 10.0]])
    dst = np.array([[1, 2], [12, 1], [0, 13], [11, 12.5]])
    hm = quad_homography(src, dst)
    for s, d in zip(src, dst):
        np.testing.assert_allclose(O.map_h(hm, s), d, atol=1e-10)
