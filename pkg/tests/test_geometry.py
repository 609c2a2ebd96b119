import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import delaunay_mesh, sign_test_locate
from tetfield.geometry import (MeshError, Ray, barycentric_of_point, barycentric_of_points,
                               build_mesh, intersect_ray, intersect_rays, load_frames, load_mesh,
                               locate_point, locate_points, locate_points_bruteforce,
                               point_from_barycentric, points_from_barycentric, save_frames,
                               save_mesh)
from tetfield.scenes import box_mesh, cube_star_mesh, subdivide_tet

UNIT = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]


def test_unit_tet_build(tet1):
    assert tet1.n_tets == 1
    assert len(tet1.boundary_faces) == 4
    assert tet1.volumes()[0] == pytest.approx(1 / 6)


def test_negative_winding_is_flipped():
    m = build_mesh(UNIT, [(0, 2, 1, 3)])
    assert m.volumes()[0] == pytest.approx(1 / 6)


def test_shared_face_adjacency():
    m = build_mesh(UNIT + [(1, 1, 1)], [(0, 1, 2, 3), (1, 2, 3, 4)])
    adj = m.adjacency()
    assert sorted(adj[(1, 2, 3)]) == [0, 1]
    assert len(m.boundary_faces) == 6
    assert m.n_faces == 7


def test_build_errors():
    with pytest.raises(MeshError):
        build_mesh(UNIT, [(0, 1, 2, 7)])
    with pytest.raises(MeshError):
        build_mesh(UNIT + [(0.5, 0.5, 0)], [(0, 1, 2, 4)])  # flat
    with pytest.raises(MeshError):
        build_mesh(UNIT, [])


def test_face_count_identity():
    # each tet has 4 faces; interior faces are shared by two tets
    for mesh in (cube_star_mesh(), box_mesh(n=3), delaunay_mesh(60, 1)):
        b = len(mesh.boundary_faces)
        assert mesh.n_faces == (4 * mesh.n_tets + b) // 2


def test_overlaps_are_flagged():
    m = build_mesh(UNIT + [(0.1, 0.1, 0.1), (1.1, 0.1, 0.1), (0.1, 1.1, 0.1), (0.1, 0.1, 1.1)],
                   [(0, 1, 2, 3), (4, 5, 6, 7)])
    assert m.has_overlaps
    assert not cube_star_mesh().has_overlaps


@pytest.mark.parametrize("p, expected", [
    ((0, 0, 0), (1, 0, 0, 0)),
    ((0.25, 0.25, 0.25), (0.25, 0.25, 0.25, 0.25)),
    ((0.5, 0.25, 0), (0.25, 0.5, 0.25, 0)),
])
def test_barycentric_examples(tet1, p, expected):
    np.testing.assert_allclose(barycentric_of_point(tet1, 0, p), expected, atol=1e-15)


def test_point_from_barycentric_examples(tet1):
    np.testing.assert_array_equal(point_from_barycentric(tet1, 0, (1, 0, 0, 0)), (0, 0, 0))
    np.testing.assert_allclose(point_from_barycentric(tet1, 0, [0.25] * 4), [0.25] * 3)


def test_barycentric_roundtrip_random():
    mesh = delaunay_mesh(80, 2)
    rng = np.random.default_rng(0)
    t = rng.integers(0, mesh.n_tets, 5000)
    lam = rng.dirichlet(np.ones(4), 5000)
    p = points_from_barycentric(mesh, t, lam)
    back = barycentric_of_points(mesh, t, p)
    np.testing.assert_allclose(back, lam, atol=1e-9)
    np.testing.assert_allclose(back.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
def test_partition_of_unity_property(w):
    lam = np.array(w) / np.sum(w)
    mesh = cube_star_mesh()
    p = point_from_barycentric(mesh, 5, lam)
    back = barycentric_of_point(mesh, 5, p)
    assert abs(back.sum() - 1) < 1e-9
    assert back.min() > -1e-9


def test_locate_examples(tet1):
    assert locate_point(tet1, (5, 5, 5)) is None
    t, b = locate_point(tet1, (0.1, 0.1, 0.1))
    assert t == 0
    np.testing.assert_allclose(b, (0.7, 0.1, 0.1, 0.1), atol=1e-15)


def test_locate_matches_sign_test_oracle():
    mesh = delaunay_mesh(50, 7)
    rng = np.random.default_rng(1)
    lo, hi = mesh.bounds()
    pts = lo - 0.1 + rng.random((2000, 3)) * (hi - lo + 0.2)
    got, _ = locate_points(mesh, pts)
    want = np.array([sign_test_locate(mesh.vertices, mesh.tets, p) for p in pts])
    np.testing.assert_array_equal(got, want)


def test_locate_overlap_lowest_index():
    m = build_mesh(UNIT + [(0.1, 0.1, 0.1), (1.1, 0.1, 0.1), (0.1, 1.1, 0.1), (0.1, 0.1, 1.1)],
                   [(4, 5, 6, 7), (0, 1, 2, 3)])
    t, _ = locate_point(m, (0.2, 0.15, 0.15))
    assert t == 0
    t, _ = locate_point(m, (0.05, 0.05, 0.05))
    assert t == 1


def test_locate_shared_face_tie_goes_to_lowest():
    m = build_mesh(UNIT + [(1, 1, 1)], [(1, 2, 3, 4), (0, 1, 2, 3)])
    t, b = locate_point(m, (1 / 3, 1 / 3, 1 / 3))  # on the shared face
    assert t == 0
    assert b.min() > -1e-12


def test_bruteforce_agrees_with_winding():
    mesh = box_mesh(n=3)
    rng = np.random.default_rng(2)
    pts = rng.random((3000, 3)) * 1.2 - 0.1
    a, _ = locate_points(mesh, pts)
    b, _ = locate_points_bruteforce(mesh, pts)
    np.testing.assert_array_equal(a, b)


def test_intersect_unit_tet_example(tet1):
    segs = intersect_ray(tet1, Ray((-1, 0.1, 0.1), (1, 0, 0)))
    assert len(segs) == 1
    s = segs[0]
    assert s.t_in == pytest.approx(1.0, abs=1e-14)
    assert s.t_out == pytest.approx(1.8, abs=1e-14)
    np.testing.assert_allclose(s.bary_in, (0.8, 0, 0.1, 0.1), atol=1e-14)
    np.testing.assert_allclose(s.bary_out, (0, 0.8, 0.1, 0.1), atol=1e-14)


def test_intersect_miss(tet1):
    assert intersect_ray(tet1, Ray((-1, 5, 5), (1, 0, 0))) == []


def test_adjacent_segments_chain(star):
    segs = intersect_ray(star, Ray.towards((-3, 0.11, 0.07), (1, 0.02, 0.01)))
    assert len(segs) >= 2
    for a, b in zip(segs[:-1], segs[1:]):
        assert b.t_in == pytest.approx(a.t_out, abs=1e-12)


def test_separated_tets_skip_gap():
    m = build_mesh(UNIT + [(3, 0, 0), (4, 0, 0), (3, 1, 0), (3, 0, 1)], [(0, 1, 2, 3), (4, 5, 6, 7)])
    segs = intersect_ray(m, Ray((-1, 0.1, 0.1), (1, 0, 0)))
    assert [s.tet for s in segs] == [0, 1]
    assert segs[1].t_in - segs[0].t_out == pytest.approx(2.2)


def test_overlapping_tets_yield_overlapping_segments():
    m = build_mesh(UNIT + [(0.1, 0.1, 0.1), (1.1, 0.1, 0.1), (0.1, 1.1, 0.1), (0.1, 0.1, 1.1)],
                   [(0, 1, 2, 3), (4, 5, 6, 7)])
    segs = intersect_ray(m, Ray((-1, 0.15, 0.15), (1, 0, 0)))
    assert sorted(s.tet for s in segs) == [0, 1]
    a, b = sorted(segs, key=lambda s: s.tet)
    assert max(a.t_in, b.t_in) < min(a.t_out, b.t_out)
    # every point of each segment locates to its tet under the brute-force oracle
    for s in segs:
        for alpha in (0.1, 0.5, 0.9):
            t = s.t_in + alpha * (s.t_out - s.t_in)
            p = np.array([-1 + t, 0.15, 0.15])
            lam = barycentric_of_point(m, s.tet, p)
            assert lam.min() > -1e-9


def test_traversal_locate_consistency():
    mesh = delaunay_mesh(60, 4)
    rng = np.random.default_rng(3)
    n = 300
    o = rng.random((n, 3)) * 3 - 1
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    segs = intersect_rays(mesh, o, d)
    assert len(segs) > 100
    alpha = rng.random(len(segs))
    t = segs.t_in + alpha * (segs.t_out - segs.t_in)
    p = o[segs.ray] + t[:, None] * d[segs.ray]
    got, _ = locate_points(mesh, p)
    # a point on a shared face may legitimately belong to the neighbour
    ok = (got == segs.tet)
    if not ok.all():
        lam = barycentric_of_points(mesh, segs.tet[~ok], p[~ok])
        assert lam.min(axis=1).max() < 1e-9
    np.testing.assert_allclose(segs.bary_in.sum(1), 1, atol=1e-9)
    assert (np.abs(segs.bary_in - segs.bary_out).sum(1) <= 2 + 1e-12).all()
    assert (segs.t_out > segs.t_in).all()
    # entry and exit lie on a face unless the ray starts inside
    started_inside = segs.t_in <= 1e-12
    assert (segs.bary_in.min(1)[~started_inside] < 1e-7).all()


def test_segment_interpolation_matches_world_points(star):
    segs = intersect_rays(star, np.array([[-3.0, 0.2, 0.1]]), np.array([[1.0, 0.0, 0.0]]))
    for i in range(len(segs)):
        for a in (0.25, 0.75):
            lam = (1 - a) * segs.bary_in[i] + a * segs.bary_out[i]
            t = segs.t_in[i] + a * (segs.t_out[i] - segs.t_in[i])
            np.testing.assert_allclose(point_from_barycentric(star, segs.tet[i], lam),
                                       [-3 + t, 0.2, 0.1], atol=1e-12)


def test_mesh_and_frames_roundtrip(tmp_path, star):
    save_mesh(tmp_path / "m.tet", star)
    back = load_mesh(tmp_path / "m.tet")
    np.testing.assert_array_equal(back.vertices, star.vertices)
    np.testing.assert_array_equal(back.tets, star.tets)
    frames = [star.vertices, star.vertices * 1.5]
    save_frames(tmp_path / "f.tet", frames)
    got = load_frames(tmp_path / "f.tet")
    assert len(got) == 2
    np.testing.assert_array_equal(got[1], frames[1])


def test_bad_mesh_file(tmp_path):
    p = tmp_path / "bad.tet"
    p.write_text("tetmesh 4 1\nv 0 0 0\n")
    with pytest.raises(MeshError):
        load_mesh(p)


def test_with_vertices_rejects_inversion(tet1):
    v = tet1.vertices.copy()
    v[3] = (0, 0, -1)
    with pytest.raises(MeshError, match=r"\[0\]"):
        tet1.with_vertices(v)


def test_subdivide_tet(star):
    new, changed, old_of_new = subdivide_tet(star, 3)
    assert new.n_tets == star.n_tets + 7
    assert len(changed) == 8
    assert new.volumes()[changed].sum() == pytest.approx(star.volumes()[3])
    assert (old_of_new[changed] == -1).all()


def test_ray_inside_shared_face_counted_once():
    # the plane y = z holds internal faces of the star mesh
    mesh = cube_star_mesh(0.5)
    d = np.array([-1.0, 0.1, 0.1])
    d /= np.linalg.norm(d)
    for noise in (0.0, 1e-16, -1e-16):
        b = intersect_rays(mesh, np.array([[3.0, 0.0, noise]]), d[None])
        assert (b.t_in[1:] >= b.t_out[:-1] - 1e-9).all()
        # enters at x = 0.5 and leaves at x = -0.5
        assert (b.t_out - b.t_in).sum() == pytest.approx(1 / abs(d[0]), rel=1e-9)


def test_locate_non_finite_points_outside(star):
    t, _ = locate_points(star, np.array([[np.nan, 0, 0], [0, np.inf, 0], [0.1, 0.1, 0.1]]))
    assert t[0] == -1 and t[1] == -1 and t[2] >= 0
