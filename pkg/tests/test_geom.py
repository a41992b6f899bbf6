"""Unit tests for mesh loading and BVH ray queries.

The BVH is checked against an exhaustive numpy intersector over a random
triangle soup, so any traversal bug that changes a nearest hit shows up as
a disagreement in t or triangle id.
"""

import numpy as np
import pytest

from prtex import geom

QUAD_AND_WALL = """\
# fixture: quad floor (fan-triangulated) and a triangle wall
o floor
v -1 0 -1
v 1 0 -1
v 1 0 1
v -1 0 1
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 1 0
f 1/1/1 2/2/1 3/3/1 4/4/1
o wall
v -1 0 -1
v -1 1 -1
v -1 0 1
vt 0 0
vt 0.5 1
vt 1 0
vn 1 0 0
f 5/5/2 6/6/2 7/7/2
"""


def write_obj(tmp_path, text, name="scene.obj"):
    path = tmp_path / name
    path.write_text(text)
    return path


def soup_mesh(rng, count=500, spread=1.0, size=0.08):
    centers = rng.uniform(-spread, spread, (count, 3))
    tris = centers[:, None, :] + rng.normal(0, size, (count, 3, 3))
    pos = tris.reshape(-1, 3)
    nrm = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    uv = rng.uniform(0, 1, (len(pos), 2))
    faces = np.arange(len(pos), dtype=np.int32).reshape(-1, 3)
    return geom.Mesh(pos, nrm, uv, faces, name="soup")


def brute_force_nearest(origins, dirs, v0, e1, e2, t_min):
    """Reference intersector: all rays against all triangles."""
    p = np.cross(dirs[:, None, :], e2[None, :, :])
    det = np.einsum("tj,rtj->rt", e1, p)
    s = origins[:, None, :] - v0[None, :, :]
    u = np.einsum("rtj,rtj->rt", s, p)
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rj,rtj->rt", dirs, q)
    t = np.einsum("tj,rtj->rt", e2, q)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u, v, t = u * inv, v * inv, t * inv
    ok = ((np.abs(det) >= 1e-14) & (u >= 0) & (u <= 1) & (v >= 0)
          & (u + v <= 1) & (t > t_min))
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    rows = np.arange(len(origins))
    best_t = t[rows, best]
    return best_t, np.where(np.isinf(best_t), -1, best)


class TestObjLoader:
    def test_objects_split_and_fan_triangulated(self, tmp_path):
        meshes = geom.load_obj(write_obj(tmp_path, QUAD_AND_WALL))
        assert [m.name for m in meshes] == ["floor", "wall"]
        assert meshes[0].triangle_count == 2
        np.testing.assert_array_equal(meshes[0].faces, [[0, 1, 2], [0, 2, 3]])
        assert meshes[1].triangle_count == 1

    def test_corner_dedup(self, tmp_path):
        meshes = geom.load_obj(write_obj(tmp_path, QUAD_AND_WALL))
        # four corners reused across the two floor triangles
        assert len(meshes[0].positions) == 4

    def test_attributes_interleaved_per_corner(self, tmp_path):
        floor = geom.load_obj(write_obj(tmp_path, QUAD_AND_WALL))[0]
        np.testing.assert_allclose(floor.uvs[2], [1.0, 1.0])
        np.testing.assert_allclose(floor.normals, np.tile([0, 1, 0], (4, 1)))

    def test_save_round_trip(self, tmp_path):
        meshes = geom.load_obj(write_obj(tmp_path, QUAD_AND_WALL))
        out = tmp_path / "again.obj"
        geom.save_obj(out, meshes)
        again = geom.load_obj(out)
        for a, b in zip(meshes, again):
            np.testing.assert_allclose(a.positions, b.positions)
            np.testing.assert_allclose(a.uvs, b.uvs)
            np.testing.assert_allclose(a.normals, b.normals)
            np.testing.assert_array_equal(a.faces, b.faces)

    def test_missing_uv_reports_face(self, tmp_path):
        path = write_obj(tmp_path,
                         "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n")
        with pytest.raises(ValueError, match=r"missing UV"):
            geom.load_obj(path)

    def test_missing_normal_reports_face(self, tmp_path):
        path = write_obj(tmp_path,
                         "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n")
        with pytest.raises(ValueError, match=r"missing normal"):
            geom.load_obj(path)

    def test_parse_error_carries_line_number(self, tmp_path):
        path = write_obj(tmp_path, "v 0 0 0\nv 0 0 oops\n")
        with pytest.raises(ValueError, match=r":2:"):
            geom.load_obj(path)

    def test_undefined_reference_rejected(self, tmp_path):
        path = write_obj(tmp_path,
                         "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\n"
                         "f 1/1/1 2/1/1 9/1/1\n")
        with pytest.raises(ValueError, match="undefined"):
            geom.load_obj(path)

    def test_no_faces_rejected(self, tmp_path):
        path = write_obj(tmp_path, "v 0 0 0\n")
        with pytest.raises(ValueError, match="no faces"):
            geom.load_obj(path)


class TestMeshValidation:
    def test_non_unit_normals_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            geom.Mesh(np.zeros((3, 3)), np.tile([0, 0, 2.0], (3, 1)),
                      np.zeros((3, 2)), np.array([[0, 1, 2]]))

    def test_face_index_out_of_range(self):
        with pytest.raises(ValueError, match="face index"):
            geom.Mesh(np.zeros((3, 3)), np.tile([0, 0, 1.0], (3, 1)),
                      np.zeros((3, 2)), np.array([[0, 1, 3]]))

    def test_attribute_count_mismatch(self):
        with pytest.raises(ValueError, match="vertex count"):
            geom.Mesh(np.zeros((3, 3)), np.tile([0, 0, 1.0], (2, 1)),
                      np.zeros((3, 2)), np.array([[0, 1, 2]]))


class TestRayValidation:
    def test_direction_must_be_unit(self):
        with pytest.raises(ValueError, match="unit"):
            geom.Ray(np.zeros(3), np.array([0.0, 0.0, 3.0]))

    def test_t_range_must_be_ordered(self):
        with pytest.raises(ValueError, match="t_min"):
            geom.Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), t_min=2.0, t_max=1.0)


class TestBVHAgainstBruteForce:
    def test_nearest_hits_agree(self):
        rng = np.random.default_rng(7)
        bvh = geom.build_bvh([soup_mesh(rng)])
        n = 10000
        origins = rng.uniform(-2, 2, (n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t, tri, _, _ = bvh.intersect_batch(origins, dirs, t_min=1e-6)
        bt, btri = brute_force_nearest(origins, dirs, bvh.v0, bvh.e1, bvh.e2,
                                       1e-6)
        np.testing.assert_array_equal(tri, btri)
        hit = tri >= 0
        assert hit.sum() > 100
        np.testing.assert_allclose(t[hit], bt[hit], rtol=1e-12)

    def test_occlusion_matches_nearest(self):
        rng = np.random.default_rng(8)
        bvh = geom.build_bvh([soup_mesh(rng, count=200)])
        n = 4000
        origins = rng.uniform(-2, 2, (n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t, tri, _, _ = bvh.intersect_batch(origins, dirs, t_min=1e-6)
        occ = bvh.occluded_batch(origins, dirs, t_min=1e-6)
        np.testing.assert_array_equal(occ, tri >= 0)
        # finite t_max splits hits by distance
        occ_near = bvh.occluded_batch(origins, dirs, t_min=1e-6, t_max=0.75)
        np.testing.assert_array_equal(occ_near, (tri >= 0) & (t < 0.75))

    def test_axis_aligned_rays_on_axis_aligned_box(self):
        # rays with exact zero direction components against axis-aligned
        # geometry exercise the slab-test edge cases
        pos = np.array([[-1, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]], float)
        nrm = np.tile([0, 0, 1.0], (4, 1))
        uv = (pos[:, :2] + 1) / 2
        mesh = geom.Mesh(pos, nrm, uv, np.array([[0, 1, 2], [0, 2, 3]]))
        bvh = geom.build_bvh([mesh])
        g = np.linspace(-0.9, 0.9, 7)
        gx, gy = np.meshgrid(g, g)
        origins = np.column_stack([gx.ravel(), gy.ravel(),
                                   np.full(gx.size, 2.0)])
        dirs = np.tile([0.0, 0.0, -1.0], (len(origins), 1))
        t, tri, _, _ = bvh.intersect_batch(origins, dirs, t_min=1e-6)
        assert np.all(tri >= 0)
        np.testing.assert_allclose(t, 2.0, rtol=1e-12)


class TestRayEpsilon:
    def test_scaled_by_scene_diagonal(self):
        rng = np.random.default_rng(9)
        small = geom.build_bvh([soup_mesh(rng, spread=1.0)])
        big = geom.build_bvh([soup_mesh(rng, spread=100.0)])
        assert small.ray_epsilon == pytest.approx(
            geom.RAY_EPSILON_SCALE * small.scene_diagonal)
        assert big.ray_epsilon > 50 * small.ray_epsilon

    def test_no_self_intersection_from_surface(self):
        # rays leaving a flat plane from points on the plane must not hit it
        pos = np.array([[-5, -5, 0], [5, -5, 0], [5, 5, 0], [-5, 5, 0]], float)
        nrm = np.tile([0, 0, 1.0], (4, 1))
        uv = (pos[:, :2] + 5) / 10
        bvh = geom.build_bvh([geom.Mesh(pos, nrm, uv,
                                        np.array([[0, 1, 2], [0, 2, 3]]))])
        rng = np.random.default_rng(10)
        n = 2000
        origins = np.column_stack([rng.uniform(-4, 4, (n, 2)), np.zeros(n)])
        dirs = rng.normal(size=(n, 3))
        dirs[:, 2] = np.abs(dirs[:, 2]) + 0.05  # strictly upward
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert not bvh.occluded_batch(origins, dirs).any()


class TestHitAssembly:
    def test_barycentric_interpolation(self):
        pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
        nrm = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], float)
        uv = np.array([[0, 0], [1, 0], [0, 1]], float)
        bvh = geom.build_bvh([geom.Mesh(pos, nrm, uv, np.array([[0, 1, 2]]),
                                        object_id=3)])
        target = np.array([0.2, 0.3, 0.0])  # bary (0.5, 0.2, 0.3)
        origin = target + np.array([0.0, 0.0, 1.0])
        direction = np.array([0.0, 0.0, -1.0])
        t, tri, u, v = bvh.intersect_batch(origin[None], direction[None],
                                           t_min=1e-6)
        hit = bvh.hit_from_query(origin, direction, t[0], tri[0], u[0], v[0])
        assert hit.object_id == 3
        np.testing.assert_allclose(hit.barycentrics, [0.5, 0.2, 0.3],
                                   atol=1e-12)
        np.testing.assert_allclose(hit.uv, [0.2, 0.3], atol=1e-12)
        np.testing.assert_allclose(hit.position, target, atol=1e-12)
        want_n = np.array([0.2, 0.3, 0.5])
        want_n /= np.linalg.norm(want_n)
        np.testing.assert_allclose(hit.normal, want_n, atol=1e-12)

    def test_single_ray_wrappers(self):
        pos = np.array([[-1, -1, 0], [1, -1, 0], [0, 1, 0]], float)
        nrm = np.tile([0, 0, 1.0], (3, 1))
        bvh = geom.build_bvh([geom.Mesh(pos, nrm, np.zeros((3, 2)),
                                        np.array([[0, 1, 2]]))])
        ray = geom.Ray([0.0, 0.0, 2.0], [0.0, 0.0, -1.0], t_min=1e-6)
        hit = geom.intersect(bvh, ray)
        assert hit is not None and hit.t == pytest.approx(2.0)
        assert geom.occluded(bvh, ray)
        miss = geom.Ray([10.0, 0.0, 2.0], [0.0, 0.0, -1.0], t_min=1e-6)
        assert geom.intersect(bvh, miss) is None
        assert not geom.occluded(bvh, miss)


class TestDeterminism:
    def test_rebuild_is_identical(self):
        rng = np.random.default_rng(11)
        mesh = soup_mesh(rng, count=300)
        a = geom.build_bvh([mesh])
        b = geom.build_bvh([mesh])
        np.testing.assert_array_equal(a.tri_order, b.tri_order)
        np.testing.assert_array_equal(a.node_min, b.node_min)
        np.testing.assert_array_equal(a.node_left, b.node_left)

    def test_query_is_bitwise_stable(self):
        rng = np.random.default_rng(12)
        bvh = geom.build_bvh([soup_mesh(rng, count=200)])
        origins = rng.uniform(-2, 2, (5000, 3))
        dirs = rng.normal(size=(5000, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        t1, tri1, u1, v1 = bvh.intersect_batch(origins, dirs)
        t2, tri2, u2, v2 = bvh.intersect_batch(origins, dirs)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(tri1, tri2)
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(v1, v2)

    def test_empty_scene_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            geom.build_bvh([])
