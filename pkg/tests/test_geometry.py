"""BVH, mass properties, fracture, hole patching, and placement sampling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_mesh, icosphere, look_cam, merge_meshes
from sceneweaver.errors import Degenerate, EmptyMesh, MultipleLoops, NoFlatSupport
from sceneweaver.geometry import (
    Bvh,
    boundary_loops,
    build_boundary_patch,
    closest_points_on_mesh,
    convex_hull,
    first_hit_faces,
    intersect_rays_brute,
    is_convex,
    is_watertight,
    mass_properties,
    plane_patch_hole,
    render_depth_map,
    sample_support_points,
    voronoi_fracture,
    weld_vertices,
)
from sceneweaver.scene_model import Ray, TriangleMesh


def random_mesh(seed, n_tris=80, spread=2.0):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-spread, spread, size=(n_tris * 3, 3))
    faces = np.arange(n_tris * 3).reshape(-1, 3)
    return TriangleMesh(verts, faces)


def brute_force_hit(mesh, ray):
    """Independent reference: Moller-Trumbore over every face, python loop."""
    best = (None, np.inf)
    for fi, f in enumerate(mesh.faces):
        v0, v1, v2 = mesh.vertices[f]
        e1, e2 = v1 - v0, v2 - v0
        p = np.cross(ray.direction, e2)
        det = e1 @ p
        if abs(det) < 1e-14:
            continue
        tvec = ray.origin - v0
        u = (tvec @ p) / det
        if u < 0 or u > 1:
            continue
        q = np.cross(tvec, e1)
        v = (ray.direction @ q) / det
        if v < 0 or u + v > 1:
            continue
        t = (e2 @ q) / det
        if t > 1e-6 and t < best[1]:
            best = (fi, t)
    return best


def test_bvh_matches_brute_force_single_rays():
    mesh = random_mesh(0, n_tris=60)
    bvh = Bvh(mesh)
    rng = np.random.default_rng(1)
    hits = 0
    for _ in range(300):
        origin = rng.uniform(-3, 3, size=3)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        ray = Ray(origin, d)
        got = bvh.intersect(ray)
        face, t = brute_force_hit(mesh, ray)
        if face is None:
            assert got is None
        else:
            hits += 1
            assert got is not None
            assert got.face_index == face
            assert abs(got.t - t) <= 1e-9
    assert hits > 30  # the scene is dense enough that many rays hit


def test_bvh_hit_barycentrics_reconstruct_point():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    bvh = Bvh(mesh)
    ray = Ray([0.3, 0.4, 5.0], [0.0, 0.0, -1.0])
    hit = bvh.intersect(ray)
    assert hit is not None
    tri = mesh.vertices[mesh.faces[hit.face_index]]
    point = hit.barycentrics @ tri
    assert np.allclose(point, ray.at(hit.t), atol=1e-9)
    assert np.isclose(hit.barycentrics.sum(), 1.0)


def test_bvh_respects_min_distance():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    bvh = Bvh(mesh)
    # ray starting exactly on the top surface must not hit it again
    hit = bvh.intersect(Ray([0.5, 0.5, 1.0], [0.0, 0.0, 1.0]))
    assert hit is None


def test_bvh_empty_mesh_rejected():
    with pytest.raises(EmptyMesh):
        Bvh(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)))


def test_brute_batch_matches_single():
    mesh = random_mesh(2, n_tris=40)
    bvh = Bvh(mesh)
    rng = np.random.default_rng(3)
    origins = rng.uniform(-3, 3, size=(100, 3))
    dirs = rng.normal(size=(100, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t, f = intersect_rays_brute(mesh, origins, dirs)
    for i in range(100):
        got = bvh.intersect(Ray(origins[i], dirs[i]))
        if got is None:
            assert f[i] == -1
        else:
            assert f[i] == got.face_index
            assert abs(t[i] - got.t) <= 1e-9


def test_depth_map_plane_analytic():
    # camera looking straight down at z=0 plane from height 2
    mesh = box_mesh([-10, -10, -0.5], [10, 10, 0.0])
    cam = look_cam([0.0, 1e-6, 2.0], [0, 0, 0])
    depth = render_depth_map(Bvh(mesh), cam)
    # center pixel looks straight down: depth equals the camera height
    assert abs(depth[24, 24] - 2.0) < 1e-2


def test_first_hit_faces_miss_is_negative():
    mesh = box_mesh([-0.1, -0.1, -0.1], [0.1, 0.1, 0.1])
    cam = look_cam([0, 0, 5.0], [0.0, 1e-6, 0.0])
    faces = first_hit_faces(Bvh(mesh), cam, np.array([[0, 0], [24, 24]]))
    assert faces[0] == -1   # corner ray misses the tiny box
    assert faces[1] >= 0    # center ray hits it


def test_convex_hull_of_cube_corners():
    pts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)]
                   + [[0.5, 0.5, 0.5]])  # interior point must be dropped
    hull = convex_hull(pts)
    assert hull.n_vertices == 8
    assert is_watertight(hull)
    assert is_convex(hull)
    props = mass_properties(hull)
    assert np.isclose(props.volume, 1.0, atol=1e-12)
    assert np.allclose(props.center_of_mass, [0.5, 0.5, 0.5], atol=1e-12)


def test_convex_hull_degenerate_input():
    with pytest.raises(Degenerate):
        convex_hull(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]))


def test_mass_properties_box_oracle():
    # closed-form: volume = 2*3*4 = 24, com at the box center
    mesh = box_mesh([1, 1, 1], [3, 4, 5])
    props = mass_properties(mesh)
    assert props.watertight
    assert np.isclose(props.volume, 24.0, atol=1e-10)
    assert np.allclose(props.center_of_mass, [2.0, 2.5, 3.0], atol=1e-10)


def test_mass_properties_sphere_converges():
    mesh = icosphere(1.0, 3)
    props = mass_properties(mesh)
    assert abs(props.volume - 4.0 / 3.0 * np.pi) / (4.0 / 3.0 * np.pi) < 0.01
    assert np.allclose(props.center_of_mass, 0.0, atol=1e-9)


def test_mass_properties_open_mesh_fallback():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    opened = TriangleMesh(mesh.vertices, mesh.faces[:-1])
    props = mass_properties(opened)
    assert not props.watertight
    assert props.volume == 0.0


def test_is_watertight_detects_holes():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    assert is_watertight(mesh)
    assert not is_watertight(TriangleMesh(mesh.vertices, mesh.faces[:-1]))


def test_fracture_conserves_volume_and_partitions():
    mesh = box_mesh([0, 0, 0], [1, 1, 1], (0.5, 0.2, 0.2))
    pieces = voronoi_fracture(mesh, cell_count=20, seed=7)
    total = sum(mass_properties(p).volume for p in pieces)
    assert abs(total - 1.0) < 1e-6
    for p in pieces:
        assert is_watertight(p)
        assert is_convex(p, tol=1e-7)
    # random interior points are inside exactly one piece
    rng = np.random.default_rng(8)
    pts = rng.uniform(0.02, 0.98, size=(500, 3))
    halfspaces = []
    for p in pieces:
        n = p.face_normals
        d = np.einsum("ij,ij->i", n, p.vertices[p.faces[:, 0]])
        halfspaces.append((n, d))
    counts = np.zeros(len(pts), dtype=int)
    for n, d in halfspaces:
        inside = ((pts @ n.T - d) <= 1e-9).all(axis=1)
        counts += inside
    assert (counts == 1).all()


def test_fracture_deterministic_per_seed():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    a = voronoi_fracture(mesh, cell_count=10, seed=3)
    b = voronoi_fracture(mesh, cell_count=10, seed=3)
    assert len(a) == len(b)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.vertices, pb.vertices)
        assert np.array_equal(pa.faces, pb.faces)


def test_fracture_rejects_tiny_cell_count():
    with pytest.raises(Degenerate):
        voronoi_fracture(box_mesh([0, 0, 0], [1, 1, 1]), cell_count=1)


def test_boundary_patch_restores_watertightness():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    removed = [4, 5]  # one full side (two triangles)
    loops = boundary_loops(mesh, removed)
    assert len(loops) == 1
    assert len(loops[0]) == 4
    patched = plane_patch_hole(mesh, removed)
    assert is_watertight(patched)
    props = mass_properties(patched)
    assert np.isclose(props.volume, 1.0, atol=1e-9)


def test_boundary_patch_multiple_loops_rejected():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    with pytest.raises(MultipleLoops):
        build_boundary_patch(mesh, [4, 5, 8, 9])  # two opposite sides


def test_build_boundary_patch_covers_hole():
    mesh = box_mesh([0, 0, 0], [1, 1, 1], (0.3, 0.6, 0.9))
    patch = build_boundary_patch(mesh, [2, 3])  # top face
    assert patch.n_faces == 4
    assert np.allclose(patch.vertices[:, 2].min(), 1.0)
    assert patch.vertex_colors is not None


def test_weld_vertices_merges_duplicates():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 0], [1, 0, 0], [0, 0, 1.0]])
    f = np.array([[0, 1, 2], [3, 4, 5]])
    welded = weld_vertices(TriangleMesh(v, f))
    assert welded.n_vertices == 4
    assert welded.n_faces == 2


def test_sample_support_points_flat_and_clear():
    floor = box_mesh([-2, -2, -0.1], [2, 2, 0])
    blocker = box_mesh([-2, -2, 0.2], [0, 2, 0.4])  # roof over x < 0
    mesh = merge_meshes([floor, blocker])
    bvh = Bvh(mesh)
    pts = sample_support_points(bvh, mesh, np.arange(12), count=20, seed=0)
    # only the unblocked upward-facing floor half qualifies
    assert (pts[:, 0] > 0).all()
    assert np.allclose(pts[:, 2], 0.0)


def test_sample_support_points_rejects_walls():
    # vertical-only region: no face within 10 degrees of +z
    wall = box_mesh([0, 0, 0], [0.1, 2, 2])
    bvh = Bvh(wall)
    side_faces = [i for i, n in enumerate(wall.face_normals) if abs(n[2]) < 0.9]
    with pytest.raises(NoFlatSupport):
        sample_support_points(bvh, wall, side_faces, count=1, seed=0)


def test_sample_support_points_deterministic():
    mesh = box_mesh([-1, -1, -0.1], [1, 1, 0])
    bvh = Bvh(mesh)
    a = sample_support_points(bvh, mesh, np.arange(12), count=5, seed=42)
    b = sample_support_points(bvh, mesh, np.arange(12), count=5, seed=42)
    assert np.array_equal(a, b)


def test_closest_points_on_mesh_analytic():
    mesh = box_mesh([0, 0, 0], [1, 1, 1])
    queries = np.array([
        [0.5, 0.5, 2.0],    # above the top: closest is (0.5, 0.5, 1)
        [-1.0, -1.0, -1.0],  # outside the corner: closest is the corner
        [0.5, 0.5, 0.9],    # inside near the top
    ])
    pts, _, dist = closest_points_on_mesh(mesh, queries)
    assert np.allclose(pts[0], [0.5, 0.5, 1.0], atol=1e-12)
    assert np.isclose(dist[0], 1.0, atol=1e-12)
    assert np.allclose(pts[1], [0.0, 0.0, 0.0], atol=1e-12)
    assert np.isclose(dist[1], np.sqrt(3.0), atol=1e-12)
    assert np.isclose(dist[2], 0.1, atol=1e-12)


def test_closest_points_match_brute_force():
    mesh = random_mesh(9, n_tris=30)
    rng = np.random.default_rng(10)
    queries = rng.uniform(-3, 3, size=(50, 3))
    _, _, dist = closest_points_on_mesh(mesh, queries)
    # reference: dense sampling of every face's surface
    tri = mesh.vertices[mesh.faces]
    u, v = np.meshgrid(np.linspace(0, 1, 40), np.linspace(0, 1, 40))
    keep = (u + v) <= 1.0
    u, v = u[keep], v[keep]
    samples = (tri[:, None, 0] * (1 - u - v)[None, :, None]
               + tri[:, None, 1] * u[None, :, None]
               + tri[:, None, 2] * v[None, :, None]).reshape(-1, 3)
    ref = np.min(np.linalg.norm(queries[:, None, :] - samples[None], axis=2), axis=1)
    assert (dist <= ref + 1e-9).all()
    assert np.allclose(dist, ref, atol=5e-2)  # sampling resolution bound


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_hull_volume_never_below_input_solid(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    hull = convex_hull(pts)
    assert is_watertight(hull)
    assert mass_properties(hull).volume > 0
    # every input point is inside or on the hull
    assert is_convex(hull)
    n = hull.face_normals
    d = np.einsum("ij,ij->i", n, hull.vertices[hull.faces[:, 0]])
    assert ((pts @ n.T - d) <= 1e-9).all()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_fracture_volume_property(seed, cells):
    mesh = box_mesh([0, 0, 0], [1, 0.5, 0.25])
    pieces = voronoi_fracture(mesh, cell_count=cells, seed=seed)
    total = sum(mass_properties(p).volume for p in pieces)
    assert abs(total - 0.125) < 1e-6
