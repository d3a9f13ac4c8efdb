"""Spatial acceleration and mesh computational geometry.

Ray casting (single-ray BVH traversal and vectorized batches), depth maps,
flat-support placement sampling, convex hulls, solid mass properties,
Voronoi fracture of convex solids, and planar hole patching.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection
from scipy.spatial import QhullError

from .errors import Degenerate, EmptyMesh, MultipleLoops, NoFlatSupport, OpenBoundary
from .scene_model import Ray, TriangleMesh, compute_face_normals

RAY_EPS = 1e-6       # minimum hit distance, avoids self-intersection
UP = np.array([0.0, 0.0, 1.0])

_LEAF_SIZE = 8


@dataclass(frozen=True)
class Hit:
    face_index: int
    t: float
    barycentrics: np.ndarray  # (w0, w1, w2) for the face's three vertices


@dataclass
class MassProperties:
    mass: float            # kg, unit density x volume
    center_of_mass: np.ndarray
    volume: float          # m^3
    watertight: bool = True


class Bvh:
    """Axis-aligned bounding-box tree over mesh faces (median split)."""

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces == 0:
            raise EmptyMesh("cannot build BVH over empty mesh")
        self.mesh = mesh
        tri = mesh.vertices[mesh.faces]           # (M, 3, 3)
        self._v0 = tri[:, 0]
        self._e1 = tri[:, 1] - tri[:, 0]
        self._e2 = tri[:, 2] - tri[:, 0]
        face_min = tri.min(axis=1)
        face_max = tri.max(axis=1)
        centroids = tri.mean(axis=1)

        # Flat node arrays: box, children (-1 = leaf), face slice into _order.
        self._order = np.arange(mesh.n_faces)
        boxes_min, boxes_max = [], []
        left, right, start, count = [], [], [], []

        def build(lo, hi):
            idx = len(boxes_min)
            sel = self._order[lo:hi]
            boxes_min.append(face_min[sel].min(axis=0))
            boxes_max.append(face_max[sel].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(lo)
            count.append(hi - lo)
            if hi - lo <= _LEAF_SIZE:
                return idx
            ext = boxes_max[idx] - boxes_min[idx]
            axis = int(np.argmax(ext))
            c = centroids[sel, axis]
            mid = (lo + hi) // 2
            part = np.argsort(c, kind="stable")
            self._order[lo:hi] = sel[part]
            if ext[axis] <= 0:
                return idx  # all faces coincident along every axis: keep as leaf
            left[idx] = build(lo, mid)
            right[idx] = build(mid, hi)
            return idx

        import sys
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 10000))
        try:
            build(0, mesh.n_faces)
        finally:
            sys.setrecursionlimit(old)

        self._box_min = np.array(boxes_min)
        self._box_max = np.array(boxes_max)
        self._left = np.array(left)
        self._right = np.array(right)
        self._start = np.array(start)
        self._count = np.array(count)

    @property
    def root_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self._box_min[0].copy(), self._box_max[0].copy()

    def _leaf_hit(self, faces, origin, direction, best_t):
        """Möller-Trumbore against a face-index array; returns (face, t, bary)."""
        v0 = self._v0[faces]
        e1 = self._e1[faces]
        e2 = self._e2[faces]
        pvec = np.cross(direction, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-14
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)
        v = (qvec @ direction) * inv_det
        t = np.einsum("ij,ij->i", e2, qvec) * inv_det
        ok &= (u >= 0) & (v >= 0) & (u + v <= 1) & (t > RAY_EPS) & (t < best_t)
        if not ok.any():
            return None
        sub = np.nonzero(ok)[0]
        j = sub[np.argmin(t[sub])]
        return int(faces[j]), float(t[j]), np.array([1 - u[j] - v[j], u[j], v[j]])

    def intersect(self, ray: Ray) -> Optional[Hit]:
        """Nearest hit with t > RAY_EPS, or None."""
        origin = ray.origin
        direction = ray.direction
        inv = np.where(direction != 0, 1.0 / np.where(direction != 0, direction, 1.0), np.inf)
        best = (None, np.inf, None)
        stack = [0]
        while stack:
            node = stack.pop()
            t0 = (self._box_min[node] - origin) * inv
            t1 = (self._box_max[node] - origin) * inv
            tmin = np.minimum(t0, t1).max()
            tmax = np.maximum(t0, t1).min()
            if tmax < max(tmin, 0.0) or tmin > best[1]:
                continue
            if self._left[node] < 0:
                lo = self._start[node]
                faces = self._order[lo:lo + self._count[node]]
                got = self._leaf_hit(faces, origin, direction, best[1])
                if got is not None and got[1] < best[1]:
                    best = got
            else:
                stack.append(int(self._left[node]))
                stack.append(int(self._right[node]))
        if best[0] is None:
            return None
        return Hit(best[0], best[1], best[2])


def intersect_ray(bvh: Bvh, ray: Ray) -> Optional[Hit]:
    return bvh.intersect(ray)


def intersect_rays_brute(mesh: TriangleMesh, origins: np.ndarray, dirs: np.ndarray,
                         chunk: int = 4_000_000):
    """Vectorized all-faces nearest-hit for K rays.

    Returns (t (K,), face (K,) int64 with -1 on miss). Chunked so the
    K x M work arrays stay bounded.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    k = len(origins)
    m = mesh.n_faces
    tri = mesh.vertices[mesh.faces]
    v0 = tri[:, 0]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]

    out_t = np.full(k, np.inf)
    out_f = np.full(k, -1, dtype=np.int64)
    rows = max(1, chunk // max(m, 1))
    for lo in range(0, k, rows):
        hi = min(k, lo + rows)
        o = origins[lo:hi, None, :]     # (k, 1, 3)
        d = dirs[lo:hi, None, :]
        pvec = np.cross(d, e2[None, :, :])
        det = np.einsum("kmj,mj->km", pvec, e1)
        ok = np.abs(det) > 1e-14
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = o - v0[None, :, :]
        u = np.einsum("kmj,kmj->km", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("kmj,kj->km", qvec, dirs[lo:hi]) * inv_det
        t = np.einsum("kmj,mj->km", qvec, e2) * inv_det
        ok &= (u >= 0) & (v >= 0) & (u + v <= 1) & (t > RAY_EPS)
        t = np.where(ok, t, np.inf)
        j = np.argmin(t, axis=1)
        tt = t[np.arange(hi - lo), j]
        out_t[lo:hi] = tt
        out_f[lo:hi] = np.where(np.isfinite(tt), j, -1)
    return out_t, out_f


def render_depth_map(bvh: Bvh, cam) -> np.ndarray:
    """Per-pixel nearest-hit depth (m) through pixel centers; +inf on miss.

    Depth is the z-coordinate in the camera frame (matches project()).
    """
    from .scene_model import pixel_rays
    xs, ys = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    origins, dirs = pixel_rays(cam, pixels)
    t, _ = intersect_rays_brute(bvh.mesh, origins, dirs)
    # convert ray parameter to camera-frame z depth
    fwd = cam.world_from_camera.rotation[:, 2]
    cos = dirs @ fwd
    depth = np.where(np.isfinite(t), t * cos, np.inf)
    return depth.reshape(cam.height, cam.width)


def first_hit_faces(bvh: Bvh, cam, pixels: np.ndarray) -> np.ndarray:
    """Face index of the first hit through each pixel center (-1 on miss)."""
    from .scene_model import pixel_rays
    centers = np.asarray(pixels, dtype=np.float64).reshape(-1, 2) + 0.5
    origins, dirs = pixel_rays(cam, centers)
    _, f = intersect_rays_brute(bvh.mesh, origins, dirs)
    return f


def sample_support_points(bvh: Bvh, mesh: TriangleMesh, region_faces, count: int,
                          seed: int, flatness_angle_deg: float = 10.0,
                          clearance_min: float = 0.5) -> np.ndarray:
    """`count` flat, upward-clear face centers from the given region.

    A face qualifies when its normal is within flatness_angle_deg of +z and a
    ray cast upward from its center hits nothing within clearance_min.
    """
    region = np.asarray(sorted(region_faces), dtype=np.int64)
    if len(region) == 0:
        raise NoFlatSupport("empty support region")
    normals = mesh.face_normals[region]
    flat = normals @ UP >= np.cos(np.radians(flatness_angle_deg))
    candidates = region[flat]
    centers = mesh.vertices[mesh.faces[candidates]].mean(axis=1)
    ok = []
    for i, c in enumerate(centers):
        hit = bvh.intersect(Ray(c + 1e-5 * UP, UP))
        if hit is None or hit.t >= clearance_min:
            ok.append(i)
    if not ok:
        raise NoFlatSupport(
            f"no face in region meets flatness {flatness_angle_deg} deg "
            f"and clearance {clearance_min} m")
    centers = centers[ok]
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(centers), size=count)
    return centers[picks]


def convex_hull(points) -> TriangleMesh:
    """Watertight convex triangle mesh over the input points."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 4:
        raise Degenerate("convex hull needs at least 4 points")
    try:
        hull = ConvexHull(points)
    except QhullError as exc:
        raise Degenerate(f"degenerate point set: {exc}") from exc
    verts = points[hull.vertices]
    remap = {old: new for new, old in enumerate(hull.vertices)}
    faces = np.array([[remap[i] for i in simplex] for simplex in hull.simplices],
                     dtype=np.int64)
    mesh = TriangleMesh(verts, faces)
    return orient_outward(mesh)


def orient_outward(mesh: TriangleMesh) -> TriangleMesh:
    """Flip faces of a convex mesh so every normal points away from the centroid."""
    centroid = mesh.vertices.mean(axis=0)
    to_face = mesh.face_centroids() - centroid
    flip = np.einsum("ij,ij->i", mesh.face_normals, to_face) < 0
    faces = mesh.faces.copy()
    faces[flip] = faces[flip][:, ::-1]
    return TriangleMesh(mesh.vertices.copy(), faces, vertex_colors=mesh.vertex_colors)


def is_watertight(mesh: TriangleMesh) -> bool:
    """True when every edge is shared by exactly 2 faces with opposite orientation."""
    edges = {}
    for f in mesh.faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (int(a), int(b))
            edges[key] = edges.get(key, 0) + 1
    for (a, b), n in edges.items():
        if n != 1 or edges.get((b, a), 0) != 1:
            return False
    return True


def mass_properties(mesh: TriangleMesh) -> MassProperties:
    """Solid uniform-density volume and centroid via signed-tetrahedron sums.

    Non-watertight input falls back to the area-weighted surface centroid
    with volume 0 and watertight=False.
    """
    if not is_watertight(mesh):
        areas = mesh.face_areas()
        centroid = (mesh.face_centroids() * areas[:, None]).sum(axis=0) / areas.sum()
        return MassProperties(0.0, centroid, 0.0, watertight=False)
    tri = mesh.vertices[mesh.faces]
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    signed = np.einsum("ij,ij->i", v0, np.cross(v1, v2)) / 6.0
    volume = float(signed.sum())
    if abs(volume) < 1e-15:
        raise Degenerate("watertight mesh has zero volume")
    tet_centroids = (v0 + v1 + v2) / 4.0
    com = (tet_centroids * signed[:, None]).sum(axis=0) / volume
    return MassProperties(abs(volume), com, abs(volume), watertight=True)


def is_convex(mesh: TriangleMesh, tol: float = 1e-8) -> bool:
    """All vertices on or behind every face plane."""
    d = (mesh.vertices @ mesh.face_normals.T
         - np.einsum("ij,ij->i", mesh.face_normals,
                     mesh.vertices[mesh.faces[:, 0]]))
    return bool((d <= tol * max(1.0, np.abs(mesh.vertices).max())).all())


def mesh_halfspaces(mesh: TriangleMesh) -> np.ndarray:
    """Convex mesh faces as halfspaces [n, -n.v0] with n.x <= n.v0 inside."""
    n = mesh.face_normals
    d = -np.einsum("ij,ij->i", n, mesh.vertices[mesh.faces[:, 0]])
    return np.hstack([n, d[:, None]])


def _interior_point(halfspaces: np.ndarray) -> Optional[np.ndarray]:
    """Chebyshev center of the halfspace intersection, or None when empty."""
    a = halfspaces[:, :3]
    b = -halfspaces[:, 3]
    norms = np.linalg.norm(a, axis=1)
    res = linprog(c=[0, 0, 0, -1],
                  A_ub=np.hstack([a, norms[:, None]]), b_ub=b,
                  bounds=[(None, None)] * 3 + [(0, None)], method="highs")
    if not res.success or res.x[3] <= 1e-12:
        return None
    return res.x[:3]


def _polytope_mesh(halfspaces: np.ndarray, interior: np.ndarray) -> Optional[TriangleMesh]:
    try:
        hs = HalfspaceIntersection(halfspaces, interior)
    except QhullError:
        return None
    pts = hs.intersections
    pts = pts[np.isfinite(pts).all(axis=1)]
    if len(pts) < 4:
        return None
    # deduplicate near-identical intersection points before hulling
    rounded = np.round(pts / 1e-9) * 1e-9
    _, idx = np.unique(rounded, axis=0, return_index=True)
    pts = pts[np.sort(idx)]
    if len(pts) < 4:
        return None
    try:
        return convex_hull(pts)
    except Degenerate:
        return None


def voronoi_fracture(mesh: TriangleMesh, cell_count: int = 100,
                     seed: int = 0) -> list[TriangleMesh]:
    """Clip a convex solid by the Voronoi cells of seeds sampled in its bbox.

    Non-convex input is replaced by its convex hull. Cut faces carry the
    input's mean vertex color.
    """
    if cell_count < 2:
        raise Degenerate("cell_count must be >= 2")
    solid = mesh
    if not is_convex(mesh):
        solid = convex_hull(mesh.vertices)
    base_hs = mesh_halfspaces(solid)
    lo = solid.vertices.min(axis=0)
    hi = solid.vertices.max(axis=0)
    rng = np.random.default_rng(seed)
    seeds = rng.uniform(lo, hi, size=(cell_count, 3))

    mean_color = (mesh.vertex_colors.mean(axis=0)
                  if mesh.vertex_colors is not None else np.full(3, 0.5))
    scale = max(np.linalg.norm(hi - lo), 1e-12)

    pieces = []
    for i in range(cell_count):
        diff = seeds - seeds[i]                      # bisector normals toward s_j
        others = np.nonzero(np.linalg.norm(diff, axis=1) > 1e-12)[0]
        others = others[others != i]
        n = diff[others]
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        mid = (seeds[others] + seeds[i]) / 2.0
        d = -np.einsum("ij,ij->i", n, mid)
        hs = np.vstack([base_hs, np.hstack([n, d[:, None]])])
        interior = _interior_point(hs)
        if interior is None:
            continue
        piece = _polytope_mesh(hs, interior)
        if piece is None:
            continue
        # per-vertex colors: mean color on cut surfaces, source color elsewhere
        colors = np.tile(mean_color, (piece.n_vertices, 1))
        if mesh.vertex_colors is not None:
            on_surface = _on_boundary(piece.vertices, base_hs, 1e-7 * scale)
            if on_surface.any():
                dists = np.linalg.norm(
                    piece.vertices[on_surface, None, :] - mesh.vertices[None, :, :], axis=2)
                nearest = np.argmin(dists, axis=1)
                colors[on_surface] = mesh.vertex_colors[nearest]
        piece.vertex_colors = colors
        pieces.append(piece)
    if not pieces:
        raise Degenerate("fracture produced no pieces")
    return pieces


def _on_boundary(points: np.ndarray, halfspaces: np.ndarray, tol: float) -> np.ndarray:
    d = points @ halfspaces[:, :3].T + halfspaces[:, 3]
    return (np.abs(d) <= tol).any(axis=1)


def boundary_loops(mesh: TriangleMesh, removed_faces) -> list[list[int]]:
    """Closed vertex loops bounding the removed region."""
    removed = set(int(f) for f in removed_faces)
    counts = {}
    for fi, f in enumerate(mesh.faces):
        if fi in removed:
            continue
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (int(a), int(b))
            counts[key] = counts.get(key, 0) + 1
    # boundary = directed edges with no opposite partner
    boundary = {a: b for (a, b), n in counts.items()
                if counts.get((b, a), 0) == 0 and n == 1}
    loops = []
    while boundary:
        start, nxt = next(iter(boundary.items()))
        loop = [start]
        del boundary[start]
        cur = nxt
        while cur != start:
            loop.append(cur)
            if cur not in boundary:
                raise OpenBoundary("boundary does not close into a loop")
            nxt2 = boundary.pop(cur)
            cur = nxt2
        loops.append(loop)
    return loops


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares plane: returns (unit normal, point on plane)."""
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid)
    return vt[2], centroid


def build_boundary_patch(mesh: TriangleMesh, removed_faces) -> TriangleMesh:
    """Triangulate the single boundary loop left by the removal.

    Fan triangulation from the loop centroid projected onto the loop's
    least-squares plane; orientation matches the surrounding surface.
    """
    loops = boundary_loops(mesh, removed_faces)
    if len(loops) == 0:
        raise OpenBoundary("removal leaves no boundary to patch")
    if len(loops) > 1:
        raise MultipleLoops(f"removal leaves {len(loops)} boundary loops, expected 1")
    loop = loops[0]
    pts = mesh.vertices[loop]
    normal, centroid = fit_plane(pts)
    center = centroid  # centroid lies on the fitted plane by construction
    verts = np.vstack([pts, center[None, :]])
    n = len(loop)
    ci = n
    # surviving mesh holds edge (a, b); patch triangle must traverse (b, a)
    faces = np.array([[(k + 1) % n, k, ci] for k in range(n)], dtype=np.int64)
    color = None
    if mesh.vertex_colors is not None:
        loop_colors = mesh.vertex_colors[loop]
        color = np.vstack([loop_colors, loop_colors.mean(axis=0)[None, :]])
    return TriangleMesh(verts, faces, vertex_colors=color)


def plane_patch_hole(mesh: TriangleMesh, removed_faces) -> TriangleMesh:
    """Mesh with removed faces deleted and the hole covered by a planar patch.

    The patch fan reuses the boundary-loop vertices, so the result stays
    watertight; only the fan center is a new vertex.
    """
    loops = boundary_loops(mesh, removed_faces)
    if len(loops) == 0:
        raise OpenBoundary("removal leaves no boundary to patch")
    if len(loops) > 1:
        raise MultipleLoops(f"removal leaves {len(loops)} boundary loops, expected 1")
    loop = loops[0]
    _, center = fit_plane(mesh.vertices[loop])
    removed = set(int(f) for f in removed_faces)
    keep = [i for i in range(mesh.n_faces) if i not in removed]
    verts = np.vstack([mesh.vertices, center[None, :]])
    ci = mesh.n_vertices
    n = len(loop)
    fan = np.array([[loop[(k + 1) % n], loop[k], ci] for k in range(n)],
                   dtype=np.int64)
    faces = np.vstack([mesh.faces[keep], fan])
    colors = None
    if mesh.vertex_colors is not None:
        colors = np.vstack([mesh.vertex_colors,
                            mesh.vertex_colors[loop].mean(axis=0)[None, :]])
    return TriangleMesh(verts, faces, vertex_colors=colors)


def weld_vertices(mesh: TriangleMesh) -> TriangleMesh:
    """Merge exactly coincident vertices (used when stitching patches back in)."""
    _, first, inverse = np.unique(mesh.vertices, axis=0,
                                  return_index=True, return_inverse=True)
    verts = mesh.vertices[first]
    faces = inverse[mesh.faces]
    colors = mesh.vertex_colors[first] if mesh.vertex_colors is not None else None
    return TriangleMesh(verts, faces, vertex_colors=colors)


def closest_points_on_mesh(mesh: TriangleMesh, points: np.ndarray,
                           chunk: int = 2_000_000):
    """Closest point on the mesh surface for each query point.

    Returns (closest (K,3), face (K,), distance (K,)). Vectorized over all
    faces (Ericson's closest-point-on-triangle), chunked by query rows.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    k = len(points)
    m = mesh.n_faces
    out_p = np.empty((k, 3))
    out_f = np.empty(k, dtype=np.int64)
    out_d = np.empty(k)
    rows = max(1, chunk // max(m, 1))
    for lo in range(0, k, rows):
        hi = min(k, lo + rows)
        p = points[lo:hi, None, :]              # (k, 1, 3)
        ap = p - a[None]
        d1 = np.einsum("mj,kmj->km", ab, ap)
        d2 = np.einsum("mj,kmj->km", ac, ap)
        bp = p - b[None]
        d3 = np.einsum("mj,kmj->km", ab, bp)
        d4 = np.einsum("mj,kmj->km", ac, bp)
        cp = p - c[None]
        d5 = np.einsum("mj,kmj->km", ab, cp)
        d6 = np.einsum("mj,kmj->km", ac, cp)

        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2
        denom = va + vb + vc
        denom = np.where(np.abs(denom) < 1e-30, 1e-30, denom)
        v = vb / denom
        w = vc / denom

        # interior by default, then clamp to edges/vertices regionwise
        v = np.clip(v, 0, 1)
        w = np.clip(w, 0, 1)
        # vertex regions
        reg_a = (d1 <= 0) & (d2 <= 0)
        reg_b = (d3 >= 0) & (d4 <= d3)
        reg_c = (d6 >= 0) & (d5 <= d6)
        # edge regions
        t_ab = np.where(d1 - d3 != 0, d1 / np.where(d1 - d3 == 0, 1, d1 - d3), 0)
        reg_ab = (~reg_a) & (~reg_b) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t_ac = np.where(d2 - d6 != 0, d2 / np.where(d2 - d6 == 0, 1, d2 - d6), 0)
        reg_ac = (~reg_a) & (~reg_c) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        num_bc = d4 - d3
        den_bc = (d4 - d3) + (d5 - d6)
        t_bc = np.where(den_bc != 0, num_bc / np.where(den_bc == 0, 1, den_bc), 0)
        reg_bc = (~reg_b) & (~reg_c) & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

        q = a[None] + v[..., None] * ab[None] + w[..., None] * ac[None]
        q = np.where(reg_bc[..., None],
                     b[None] + np.clip(t_bc, 0, 1)[..., None] * (c - b)[None], q)
        q = np.where(reg_ac[..., None],
                     a[None] + np.clip(t_ac, 0, 1)[..., None] * ac[None], q)
        q = np.where(reg_c[..., None], np.broadcast_to(c[None], q.shape), q)
        q = np.where(reg_ab[..., None],
                     a[None] + np.clip(t_ab, 0, 1)[..., None] * ab[None], q)
        q = np.where(reg_b[..., None], np.broadcast_to(b[None], q.shape), q)
        q = np.where(reg_a[..., None], np.broadcast_to(a[None], q.shape), q)

        d = np.linalg.norm(q - p, axis=2)
        j = np.argmin(d, axis=1)
        rr = np.arange(hi - lo)
        out_p[lo:hi] = q[rr, j]
        out_f[lo:hi] = j
        out_d[lo:hi] = d[rr, j]
    return out_p, out_f, out_d
