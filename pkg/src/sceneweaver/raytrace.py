"""Path-traced render passes for shadow transfer and object insertion.

Produces three aligned passes per frame: the inserted objects alone (with the
background hidden from primary rays but still casting/receiving light), the
background with objects, and the background without them. The two background
passes share one random stream so their Monte-Carlo noise cancels in the
shadow ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoEmittersFound
from .geometry import RAY_EPS, Bvh, first_hit_faces, intersect_rays_brute, render_depth_map
from .scene_model import (
    CameraView,
    MaterialSpec,
    SceneBundle,
    SceneRepresentation,
    TriangleMesh,
    pixel_rays,
)
from .transforms import Similarity

SATURATION_THRESH = 250.0 / 255.0
VOTE_FRAC = 0.5
EMITTER_STRENGTH = 100.0
ENV_INTENSITY_OUTDOOR = 0.6
ENV_INTENSITY_INDOOR = 2.0
DEFAULT_SPP = 64
EFFECT_SPP = 512  # fire/smoke frames get extra samples
SUPERSAMPLE = 2
MAX_BOUNCES = 3

_LUM = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ _LUM


@dataclass
class EnvMap:
    """Equirectangular radiance map, +z up, linear RGB."""

    data: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        h, w = self.data.shape[:2]
        if w != 2 * h:
            raise ValueError(f"environment map must be 2:1, got {w}x{h}")
        if not np.isfinite(self.data).all() or (self.data < 0).any():
            raise ValueError("environment map values must be finite and >= 0")
        if self.intensity <= 0:
            raise ValueError("environment intensity must be positive")

    def sample(self, dirs: np.ndarray) -> np.ndarray:
        """Nearest-texel radiance for unit directions, shape (..., 3)."""
        d = np.asarray(dirs, dtype=np.float64)
        h, w = self.data.shape[:2]
        phi = np.arctan2(d[..., 1], d[..., 0])
        theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
        col = np.floor((phi / (2 * np.pi) + 0.5) * w).astype(np.int64) % w
        row = np.clip(np.floor(theta / np.pi * h).astype(np.int64), 0, h - 1)
        return self.data[row, col] * self.intensity

    def texel_directions(self) -> np.ndarray:
        """(H, W, 3) unit direction at each texel center."""
        h, w = self.data.shape[:2]
        theta = (np.arange(h) + 0.5) / h * np.pi
        phi = ((np.arange(w) + 0.5) / w - 0.5) * 2 * np.pi
        st = np.sin(theta)[:, None]
        return np.stack([st * np.cos(phi)[None, :],
                         st * np.sin(phi)[None, :],
                         np.broadcast_to(np.cos(theta)[:, None], (h, w))], axis=-1)

    def texel_solid_angles(self) -> np.ndarray:
        h, w = self.data.shape[:2]
        theta = (np.arange(h) + 0.5) / h * np.pi
        return np.broadcast_to(
            (np.sin(theta) * (np.pi / h) * (2 * np.pi / w))[:, None], (h, w))


def default_env_intensity(scene_type: str) -> float:
    return ENV_INTENSITY_INDOOR if scene_type.startswith("indoor") else ENV_INTENSITY_OUTDOOR


@dataclass
class SunLight:
    direction: np.ndarray  # unit, from surface toward the sun
    irradiance: np.ndarray  # RGB, W/m^2 on a facing surface

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64)
        self.direction = self.direction / np.linalg.norm(self.direction)
        self.irradiance = np.asarray(self.irradiance, dtype=np.float64)


@dataclass
class Emitter:
    face_indices: np.ndarray  # indices into the source mesh
    radiance: np.ndarray = field(default_factory=lambda: np.ones(3))
    strength: float = EMITTER_STRENGTH

    def __post_init__(self):
        self.face_indices = np.asarray(self.face_indices, dtype=np.int64)
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.strength <= 0:
            raise ValueError("emitter strength must be positive")

    @property
    def emitted_radiance(self) -> np.ndarray:
        return self.radiance * self.strength


def sun_from_envmap(env: EnvMap, scene_type: str = "outdoor"):
    """Directional light from the brightest environment region, or None.

    Direction is the luminance-weighted centroid of the top 0.1% brightest
    texels; returned only for outdoor/driving scenes with a peak at least
    10x the median luminance.
    """
    if scene_type not in ("outdoor", "driving"):
        return None
    lum = luminance(env.data)
    flat = lum.ravel()
    peak = float(flat.max())
    med = float(np.median(flat))
    if peak <= 0 or (med > 0 and peak <= 10 * med):
        return None
    k = max(1, int(np.ceil(0.001 * flat.size)))
    top = np.argpartition(flat, -k)[-k:]
    dirs = env.texel_directions().reshape(-1, 3)[top]
    w = flat[top]
    centroid = (dirs * w[:, None]).sum(axis=0)
    norm = np.linalg.norm(centroid)
    if norm == 0:
        return None
    omega = env.texel_solid_angles().ravel()[top]
    irradiance = (env.data.reshape(-1, 3)[top] * omega[:, None]).sum(axis=0) * env.intensity
    return SunLight(centroid / norm, irradiance)


def extract_emitters(bundle: SceneBundle, bvh: Bvh,
                     saturation_thresh: float = SATURATION_THRESH,
                     vote_frac: float = VOTE_FRAC) -> list:
    """Emissive background faces from over-saturated frame pixels.

    A face becomes an emitter when at least vote_frac of the views in which
    it is visible contain saturated pixels whose first-hit rays land on it.
    Faces group by mesh connectivity into one Emitter per connected patch.
    """
    n_faces = bundle.mesh.n_faces
    visible = np.zeros(n_faces)
    saturated = np.zeros(n_faces)
    any_saturated = False
    for cam in bundle.cameras:
        xs, ys = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
        pix = np.stack([xs.ravel(), ys.ravel()], axis=1)
        faces = first_hit_faces(bvh, cam, pix)
        hit = faces[faces >= 0]
        vis_ids = np.unique(hit)
        visible[vis_ids] += 1
        frame = bundle.load_frame(cam)
        sat = frame.min(axis=2).ravel() >= saturation_thresh
        if sat.any():
            any_saturated = True
            sat_faces = faces[sat]
            saturated[np.unique(sat_faces[sat_faces >= 0])] += 1
    if not any_saturated:
        raise NoEmittersFound("no saturated pixels in any view")
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(visible > 0, saturated / np.maximum(visible, 1), 0.0)
    selected = np.nonzero((visible > 0) & (frac >= vote_frac) & (saturated > 0))[0]
    if len(selected) == 0:
        raise NoEmittersFound("no face passed the visibility vote")
    groups = _connected_face_groups(bundle.mesh, selected)
    return [Emitter(g) for g in groups]


def _connected_face_groups(mesh: TriangleMesh, face_ids: np.ndarray) -> list:
    """Partition faces into vertex-connected components (union-find)."""
    parent = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for f in face_ids:
        parent[int(f)] = int(f)
    by_vertex = {}
    for f in face_ids:
        for v in mesh.faces[f]:
            by_vertex.setdefault(int(v), []).append(int(f))
    for members in by_vertex.values():
        for other in members[1:]:
            union(members[0], other)
    groups = {}
    for f in face_ids:
        groups.setdefault(find(int(f)), []).append(int(f))
    return [np.array(sorted(g), dtype=np.int64) for g in groups.values()]


# --- render scene assembly ----------------------------------------------------


@dataclass
class RenderScene:
    """Flattened triangle soup with per-face shading attributes."""

    mesh: TriangleMesh
    metallic: np.ndarray   # (F,)
    roughness: np.ndarray  # (F,)
    specular: np.ndarray   # (F,)
    tint: np.ndarray       # (F, 3)
    emission: np.ndarray   # (F, 3) emitted radiance
    is_object: np.ndarray  # (F,) bool, True for inserted-object faces

    @property
    def n_faces(self) -> int:
        return self.mesh.n_faces


def _object_transform_at(obj, timeline, frame: int):
    """World placement of an object at a frame; None while not yet spawned."""
    if timeline is not None and obj.object_id in timeline.tracks:
        track = timeline.tracks[obj.object_id]
        m = track[min(frame, len(track) - 1)]
        if m is None:
            return None
        return Similarity.from_matrix(np.asarray(m, dtype=np.float64))
    if obj.baked_animation:
        idx = min(frame, len(obj.baked_animation) - 1)
        return Similarity.from_matrix(np.asarray(obj.baked_animation[idx]))
    return obj.transform


def build_render_scene(rep: SceneRepresentation, timeline=None, frame: int = 0,
                       emitters=None, include_background: bool = True,
                       include_objects: bool = True) -> RenderScene:
    verts, faces, colors = [], [], []
    metallic, roughness, specular, tint, emission, is_object = [], [], [], [], [], []
    offset = 0

    def push(mesh, mat: MaterialSpec, emit_per_face, obj_flag):
        nonlocal offset
        nf = mesh.n_faces
        verts.append(mesh.vertices)
        faces.append(mesh.faces + offset)
        colors.append(mesh.vertex_colors if mesh.vertex_colors is not None
                      else np.full((mesh.n_vertices, 3), 0.5))
        metallic.append(np.full(nf, mat.metallic))
        roughness.append(np.full(nf, mat.roughness))
        specular.append(np.full(nf, mat.specular))
        tint.append(np.tile(mat.color_tint[:3], (nf, 1)))
        emission.append(emit_per_face)
        is_object.append(np.full(nf, obj_flag, dtype=bool))
        offset += mesh.n_vertices

    if include_background:
        bg = rep.background_mesh()
        emit = np.zeros((bg.n_faces, 3))
        if emitters:
            # emitter indices refer to the bundle mesh; map through removal
            kept = np.setdiff1d(np.arange(rep.bundle.mesh.n_faces),
                                np.fromiter(rep.removed_faces, dtype=np.int64)
                                if rep.removed_faces else np.empty(0, dtype=np.int64))
            pos = {int(f): i for i, f in enumerate(kept)}
            for em in emitters:
                for f in em.face_indices:
                    if int(f) in pos:
                        emit[pos[int(f)]] = em.emitted_radiance
        push(bg, MaterialSpec(), emit, False)
    if include_objects:
        for obj in rep.objects.values():
            tf = _object_transform_at(obj, timeline, frame)
            if tf is None:
                continue
            mesh = obj.mesh.transformed(tf)
            mat = obj.material if obj.material is not None else MaterialSpec()
            push(mesh, mat, np.zeros((mesh.n_faces, 3)), True)

    if not verts:
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        z = np.zeros(0)
        return RenderScene(empty, z, z, z, np.zeros((0, 3)), np.zeros((0, 3)),
                           np.zeros(0, dtype=bool))
    mesh = TriangleMesh(np.vstack(verts), np.vstack(faces),
                        vertex_colors=np.vstack(colors))
    return RenderScene(mesh, np.concatenate(metallic), np.concatenate(roughness),
                       np.concatenate(specular), np.vstack(tint), np.vstack(emission),
                       np.concatenate(is_object))


# --- path tracing core ---------------------------------------------------------


def _barycentrics(mesh: TriangleMesh, face_ids: np.ndarray, points: np.ndarray):
    tri = mesh.vertices[mesh.faces[face_ids]]
    v0 = tri[:, 1] - tri[:, 0]
    v1 = tri[:, 2] - tri[:, 0]
    v2 = points - tri[:, 0]
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    denom = np.maximum(d00 * d11 - d01 * d01, 1e-30)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    u = 1.0 - v - w
    return np.stack([u, v, w], axis=1)


def _interp_albedo(mesh: TriangleMesh, face_ids: np.ndarray, points: np.ndarray):
    if mesh.vertex_colors is None:
        return np.full((len(face_ids), 3), 0.5)
    bc = np.clip(_barycentrics(mesh, face_ids, points), 0.0, 1.0)
    cols = mesh.vertex_colors[mesh.faces[face_ids]]
    return np.einsum("ik,ikj->ij", bc, cols)


def _tangent_frame(n: np.ndarray):
    """Orthonormal (t, b) per unit normal, vectorized."""
    a = np.where(np.abs(n[:, 0:1]) > 0.9,
                 np.tile([0.0, 1.0, 0.0], (len(n), 1)),
                 np.tile([1.0, 0.0, 0.0], (len(n), 1)))
    t = np.cross(a, n)
    t = t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-30)
    b = np.cross(n, t)
    return t, b


def _cosine_sample(n: np.ndarray, u: np.ndarray) -> np.ndarray:
    t, b = _tangent_frame(n)
    r = np.sqrt(u[:, 0])
    phi = 2 * np.pi * u[:, 1]
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(1.0 - u[:, 0], 0.0))
    return x[:, None] * t + y[:, None] * b + z[:, None] * n


def _power_lobe_sample(axis: np.ndarray, exponent: np.ndarray, u: np.ndarray):
    t, b = _tangent_frame(axis)
    ct = u[:, 0] ** (1.0 / (exponent + 1.0))
    st = np.sqrt(np.maximum(1.0 - ct * ct, 0.0))
    phi = 2 * np.pi * u[:, 1]
    return (st * np.cos(phi))[:, None] * t + (st * np.sin(phi))[:, None] * b \
        + ct[:, None] * axis


@dataclass
class _EmitterGeometry:
    face_ids: np.ndarray   # global face indices in the traced scene
    tri: np.ndarray        # (E, 3, 3)
    normals: np.ndarray    # (E, 3)
    radiance: np.ndarray   # (E, 3)
    areas: np.ndarray      # (E,)
    cum_area: np.ndarray
    total_area: float


def _emitter_geometry(scene: RenderScene):
    ids = np.nonzero(scene.emission.any(axis=1))[0]
    if len(ids) == 0:
        return None
    tri = scene.mesh.vertices[scene.mesh.faces[ids]]
    areas = scene.mesh.face_areas()[ids]
    total = float(areas.sum())
    if total <= 0:
        return None
    return _EmitterGeometry(ids, tri, scene.mesh.face_normals[ids],
                            scene.emission[ids], areas, np.cumsum(areas), total)


def _occluded(scene: RenderScene, origins: np.ndarray, dirs: np.ndarray,
              max_t=None) -> np.ndarray:
    if scene.n_faces == 0:
        return np.zeros(len(origins), dtype=bool)
    t, f = intersect_rays_brute(scene.mesh, origins, dirs)
    hit = f >= 0
    if max_t is not None:
        hit &= t < max_t
    return hit


def _trace_pass(scene: RenderScene, primary: RenderScene, cam: CameraView,
                spp: int, seed: int, env, sun, max_bounces: int = MAX_BOUNCES):
    """One full pass: (linear color (H,W,3), alpha (H,W), nonfinite count).

    All random draws have shapes that depend only on the image size, so two
    passes traced with the same seed consume identical random streams and
    their per-pixel noise is correlated.
    """
    h, w = cam.height, cam.width
    npix = h * w
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    base = np.stack([xs.ravel(), ys.ravel()], axis=1)
    rng = np.random.Generator(np.random.Philox(key=seed))
    emitters = _emitter_geometry(scene)

    color_sum = np.zeros((npix, 3))
    alpha_sum = np.zeros(npix)
    for _ in range(spp):
        jitter = rng.random((npix, 2))
        origins, dirs = pixel_rays(cam, base + jitter)
        origins = np.array(origins)  # pixel_rays may return broadcast views
        dirs = np.array(dirs)
        throughput = np.ones((npix, 3))
        radiance = np.zeros((npix, 3))
        active = np.ones(npix, dtype=bool)
        for bounce in range(max_bounces):
            u_lobe = rng.random(npix)
            u_dir = rng.random((npix, 2))
            u_pick = rng.random(npix)
            u_bary = rng.random((npix, 2))
            if not active.any():
                continue
            target = primary if bounce == 0 else scene
            idx = np.nonzero(active)[0]
            if target.n_faces == 0:
                t = np.full(len(idx), np.inf)
                f = np.full(len(idx), -1, dtype=np.int64)
            else:
                t, f = intersect_rays_brute(target.mesh, origins[idx], dirs[idx])
            miss = f < 0
            if miss.any():
                mi = idx[miss]
                if env is not None:
                    radiance[mi] += throughput[mi] * env.sample(dirs[mi])
                active[mi] = False
            if (~miss).sum() == 0:
                continue
            hi = idx[~miss]
            fh = f[~miss]
            th = t[~miss]
            pts = origins[hi] + dirs[hi] * th[:, None]
            n = target.mesh.face_normals[fh].copy()
            flip = np.einsum("ij,ij->i", n, dirs[hi]) > 0
            n[flip] = -n[flip]
            albedo = _interp_albedo(target.mesh, fh, pts) * target.tint[fh]
            m = target.metallic[fh]
            if bounce == 0:
                alpha_sum[hi] += 1.0 / spp
                radiance[hi] += throughput[hi] * target.emission[fh]
            shade_origin = pts + n * max(RAY_EPS, 1e-6)
            # next-event estimation: sun
            if sun is not None:
                cos_s = np.maximum(np.einsum("ij,j->i", n, sun.direction), 0.0)
                lit = cos_s > 0
                if lit.any():
                    blocked = _occluded(scene, shade_origin[lit],
                                        np.tile(sun.direction, (lit.sum(), 1)))
                    vis = np.zeros(len(fh))
                    vis[np.nonzero(lit)[0][~blocked]] = 1.0
                    radiance[hi] += (throughput[hi] * (1 - m)[:, None] * albedo / np.pi
                                     * sun.irradiance[None, :]
                                     * (cos_s * vis)[:, None])
            # next-event estimation: area emitters
            if emitters is not None:
                pick = np.searchsorted(
                    emitters.cum_area, u_pick[hi] * emitters.total_area)
                pick = np.clip(pick, 0, len(emitters.face_ids) - 1)
                su = np.sqrt(u_bary[hi, 0])
                b1 = 1.0 - su
                b2 = u_bary[hi, 1] * su
                tri = emitters.tri[pick]
                y = (1 - b1 - b2)[:, None] * tri[:, 0] \
                    + b1[:, None] * tri[:, 1] + b2[:, None] * tri[:, 2]
                to_l = y - pts
                dist = np.linalg.norm(to_l, axis=1)
                ok = dist > 1e-6
                wi = np.zeros_like(to_l)
                wi[ok] = to_l[ok] / dist[ok, None]
                cos_s = np.maximum(np.einsum("ij,ij->i", n, wi), 0.0)
                cos_l = np.maximum(-np.einsum("ij,ij->i", wi, emitters.normals[pick]), 0.0)
                self_hit = emitters.face_ids[pick] == fh if target is scene else \
                    np.zeros(len(fh), dtype=bool)
                cand = ok & (cos_s > 0) & (cos_l > 0) & ~self_hit
                if cand.any():
                    st, sf = intersect_rays_brute(
                        scene.mesh, shade_origin[cand], wi[cand])
                    reach = (sf == emitters.face_ids[pick][cand]) & \
                        (np.abs(st - dist[cand]) < 1e-3 * np.maximum(dist[cand], 1.0))
                    g = np.zeros(len(fh))
                    ci = np.nonzero(cand)[0][reach]
                    g[ci] = (cos_s[ci] * cos_l[ci] / np.maximum(dist[ci] ** 2, 1e-12)
                             * emitters.total_area)
                    radiance[hi] += (throughput[hi] * (1 - m)[:, None] * albedo / np.pi
                                     * emitters.radiance[pick] * g[:, None])
            # continuation: pick diffuse or glossy lobe with probability (1-m)/m
            spec = u_lobe[hi] < m
            new_dir = np.empty_like(n)
            diff = ~spec
            if diff.any():
                new_dir[diff] = _cosine_sample(n[diff], u_dir[hi][diff])
                throughput[hi[diff]] *= albedo[diff]
            if spec.any():
                mirror = dirs[hi][spec] - 2 * np.einsum(
                    "ij,ij->i", dirs[hi][spec], n[spec])[:, None] * n[spec]
                exponent = np.maximum(2.0 / (target.roughness[fh][spec] ** 2 + 1e-4)
                                      - 2.0, 1.0)
                new_dir[spec] = _power_lobe_sample(mirror, exponent, u_dir[hi][spec])
                throughput[hi[spec]] *= (target.specular[fh][spec, None]
                                         * target.tint[fh][spec])
            # keep sampled directions on the shading side of the surface
            below = np.einsum("ij,ij->i", new_dir, n) <= 0
            if below.any():
                bi = np.nonzero(below)[0]
                new_dir[bi] = new_dir[bi] - 2 * np.einsum(
                    "ij,ij->i", new_dir[bi], n[bi])[:, None] * n[bi]
            origins[hi] = shade_origin
            dirs[hi] = new_dir
        color_sum += radiance
    color = color_sum / spp
    bad = ~np.isfinite(color)
    nonfinite = int(bad.sum())
    color[bad] = 0.0
    np.maximum(color, 0.0, out=color)
    return color.reshape(h, w, 3), alpha_sum.reshape(h, w), nonfinite


def _scaled_camera(cam: CameraView, k: int) -> CameraView:
    return CameraView(cam.fx * k, cam.fy * k, cam.cx * k, cam.cy * k,
                      cam.width * k, cam.height * k, cam.world_from_camera)


def _box_downsample(img: np.ndarray, k: int) -> np.ndarray:
    h, w = img.shape[:2]
    shaped = img.reshape(h // k, k, w // k, k, *img.shape[2:])
    return shaped.mean(axis=(1, 3))


def effect_spp(timeline, frame: int) -> int:
    """Sample count for a frame: raised while fire or smoke is active."""
    if timeline is not None:
        for ev in timeline.events:
            if ev.kind in ("fire", "smoke") and ev.start_frame <= frame <= ev.end_frame:
                return EFFECT_SPP
    return DEFAULT_SPP


@dataclass
class RenderPassSet:
    object_color: np.ndarray  # (H, W, 3) linear, object pass
    object_alpha: np.ndarray  # (H, W)
    bg_with_objects: np.ndarray
    bg_only: np.ndarray
    bg_depth: np.ndarray
    object_depth: np.ndarray
    spp: int = DEFAULT_SPP
    seed: int = 0
    nonfinite_clamped: int = 0


def render_passes(rep: SceneRepresentation, timeline, frame: int, cam: CameraView,
                  env: EnvMap = None, sun: SunLight = None, emitters=None,
                  seed: int = 0, spp: int = None,
                  supersample: int = SUPERSAMPLE,
                  max_bounces: int = MAX_BOUNCES) -> RenderPassSet:
    """The three aligned passes plus depth maps for one frame.

    Rendered at supersample x resolution and box-downsampled. The with/without
    background passes use the same seed so shadow-ratio noise cancels.
    """
    if spp is None:
        spp = effect_spp(timeline, frame)
    full = build_render_scene(rep, timeline, frame, emitters)
    bg_scene = build_render_scene(rep, timeline, frame, emitters,
                                  include_objects=False)
    obj_scene = build_render_scene(rep, timeline, frame, emitters=None,
                                   include_background=False)
    ss_cam = _scaled_camera(cam, supersample)

    with_color, _, nf1 = _trace_pass(full, full, ss_cam, spp, seed, env, sun,
                                     max_bounces)
    only_color, _, nf2 = _trace_pass(bg_scene, bg_scene, ss_cam, spp, seed, env,
                                     sun, max_bounces)
    if obj_scene.n_faces:
        # background hidden from primary rays, present for all later bounces
        obj_color, obj_alpha, nf3 = _trace_pass(full, obj_scene, ss_cam, spp,
                                                seed, env, sun, max_bounces)
    else:
        obj_color = np.zeros_like(with_color)
        obj_alpha = np.zeros(with_color.shape[:2])
        nf3 = 0

    bg_depth = (render_depth_map(Bvh(bg_scene.mesh), cam)
                if bg_scene.n_faces else np.full((cam.height, cam.width), np.inf))
    obj_depth = (render_depth_map(Bvh(obj_scene.mesh), cam)
                 if obj_scene.n_faces else np.full((cam.height, cam.width), np.inf))

    k = supersample
    return RenderPassSet(
        object_color=_box_downsample(obj_color, k),
        object_alpha=_box_downsample(obj_alpha, k),
        bg_with_objects=_box_downsample(with_color, k),
        bg_only=_box_downsample(only_color, k),
        bg_depth=bg_depth,
        object_depth=obj_depth,
        spp=spp, seed=seed,
        nonfinite_clamped=nf1 + nf2 + nf3)


def save_passes(passes: RenderPassSet, out_dir: str, lights_desc: str = ""):
    """Dump each pass as 8-bit sRGB PNG plus linear PFM, with a manifest."""
    import os

    from PIL import Image

    from .composite import srgb_encode
    from .scene_model import save_pfm

    os.makedirs(out_dir, exist_ok=True)
    named = {"object": passes.object_color, "bg_with_objects": passes.bg_with_objects,
             "bg_only": passes.bg_only}
    for name, img in named.items():
        png = np.clip(np.floor(srgb_encode(np.clip(img, 0, 1)) * 255.0 + 0.5),
                      0, 255).astype(np.uint8)
        Image.fromarray(png).save(os.path.join(out_dir, f"{name}.png"))
        save_pfm(img.astype(np.float32), os.path.join(out_dir, f"{name}.pfm"))
    with open(os.path.join(out_dir, "render_manifest.txt"), "w") as fh:
        fh.write(f"spp {passes.spp}\n")
        fh.write(f"seed {passes.seed}\n")
        fh.write(f"nonfinite_clamped {passes.nonfinite_clamped}\n")
        fh.write(f"lights {lights_desc}\n")


def build_lights(bundle: SceneBundle, bvh: Bvh = None):
    """(env, sun, emitters) per the scene type's lighting policy.

    Fully enclosed indoor scenes use extracted emitters only; every other
    scene type uses the environment map, plus a sun for outdoor/driving.
    """
    if bundle.scene_type == "indoor_full":
        emitters = bundle.emitters
        if not emitters:
            if bvh is None:
                bvh = Bvh(bundle.mesh)
            emitters = extract_emitters(bundle, bvh)
        return None, None, emitters
    env = EnvMap(bundle.env_map, default_env_intensity(bundle.scene_type))
    sun = sun_from_envmap(env, bundle.scene_type)
    return env, sun, None
