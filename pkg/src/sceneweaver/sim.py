"""Rigid-body simulation, trajectory animation, and timeline assembly.

Impulse-based contacts between object convex-hull vertices and the scene
mesh (plus symmetrized hull-vertex contacts between objects), fixed
dt = 1/240 s substeps, split-impulse position correction. Gravity is
(0, 0, -9.81); +z is up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConflictingTrack, NonFiniteState, TooFewPoints
from .geometry import (
    closest_points_on_mesh,
    convex_hull,
    mass_properties,
    voronoi_fracture,
)
from .scene_model import SceneObject, SceneRepresentation, Timeline, TriangleMesh, fmt
from .transforms import (
    Similarity,
    matrix_to_quat,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
)

DT = 1.0 / 240.0
GRAVITY = np.array([0.0, 0.0, -9.81])
SOLVER_ITERATIONS = 8

EVENT_KINDS = ("fire", "smoke", "melt", "break", "incinerate")

# Simulation parameter defaults carried on effect events (annotation only;
# events never alter rigid dynamics).
EVENT_DEFAULTS = {
    "smoke": {
        "density": 70,
        "color": (0.1, 0.1, 0.1, 1),
        "domain_resolution": 128,
        "adaptive_margin": 4,
        "adaptive_threshold": 0.005,
        "dissolve_speed": 30,
    },
    "fire": {
        "temperature": 1500,
        "smoke_density": 50,
        "blackbody_tint": (1, 0.3886, 0.0094, 1),
        "blackbody_intensity": 5,
    },
    "melt": {},
    "break": {},
    "incinerate": {},
}


@dataclass
class ContactParams:
    restitution: float = 0.4
    friction: float = 0.5
    baumgarte_beta: float = 0.2
    penetration_slop: float = 1e-3  # m

    def __post_init__(self):
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")


@dataclass
class EffectEvent:
    object_id: str
    kind: str
    start_frame: int
    end_frame: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        defaults = dict(EVENT_DEFAULTS[self.kind])
        defaults.update(self.params)
        self.params = defaults


@dataclass
class RigidBodyState:
    position: np.ndarray      # world COM, m
    orientation: np.ndarray   # unit quaternion (w, x, y, z)
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    mass: float
    inertia_body: np.ndarray  # 3x3 body-frame inertia, kg m^2

    def world_inertia_inv(self) -> np.ndarray:
        r = quat_to_matrix(self.orientation)
        return r @ np.linalg.inv(self.inertia_body) @ r.T


def solid_inertia(mesh: TriangleMesh) -> tuple[float, np.ndarray, np.ndarray]:
    """(mass, com, body inertia about com) of a watertight solid, density 1."""
    tri = mesh.vertices[mesh.faces]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    signed = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
    volume = signed.sum()
    com = ((a + b + c) / 4.0 * signed[:, None]).sum(axis=0) / volume
    # second moment about origin per signed tetra: V/20 (sum v v^T + s s^T)
    s = a + b + c
    second = np.einsum("n,nij->ij", signed / 20.0,
                       np.einsum("ni,nj->nij", a, a)
                       + np.einsum("ni,nj->nij", b, b)
                       + np.einsum("ni,nj->nij", c, c)
                       + np.einsum("ni,nj->nij", s, s))
    inertia_origin = np.eye(3) * np.trace(second) - second
    m = abs(volume)
    shift = m * (np.dot(com, com) * np.eye(3) - np.outer(com, com))
    return m, com, inertia_origin * np.sign(volume) - shift


class _Body:
    """Internal simulation body: hull vertices in a COM-centered body frame."""

    def __init__(self, object_id, hull: TriangleMesh, state: RigidBodyState,
                 fracture_enabled=False, source_obj=None, com_local=None):
        self.object_id = object_id
        self.hull = hull
        self.state = state
        self.body_vertices = hull.vertices.copy()  # already COM-centered
        self.fracture_enabled = fracture_enabled
        self.source_obj = source_obj
        self.com_local = np.zeros(3) if com_local is None else com_local
        self.frame_impulse = 0.0

    def world_vertices(self) -> np.ndarray:
        r = quat_to_matrix(self.state.orientation)
        return self.body_vertices @ r.T + self.state.position


def _make_body(obj: SceneObject) -> _Body:
    scaled = obj.mesh.vertices * obj.transform.scale
    hull = convex_hull(scaled)
    m, com, inertia = solid_inertia(hull)
    hull_centered = TriangleMesh(hull.vertices - com, hull.faces.copy())
    rot = obj.transform.rotation
    state = RigidBodyState(
        position=rot @ com + obj.transform.translation,
        orientation=matrix_to_quat(rot),
        linear_velocity=np.zeros(3),
        angular_velocity=np.zeros(3),
        mass=m,
        inertia_body=inertia,
    )
    return _Body(obj.object_id, hull_centered, state,
                 fracture_enabled=obj.fracture_enabled, source_obj=obj,
                 com_local=com)


def _body_world_from_object(body: _Body, obj: SceneObject) -> np.ndarray:
    """4x4 world-from-object transform implied by the body state.

    Object frame x maps to world r @ (s*x - com) + p, because the body frame
    is the scaled object frame re-centered at the COM.
    """
    r = quat_to_matrix(body.state.orientation)
    m = np.eye(4)
    m[:3, :3] = obj.transform.scale * r
    m[:3, 3] = body.state.position - r @ body.com_local
    return m


def _solve_contacts(body: _Body, normals, rs, params: ContactParams,
                    pre_vn, penetrations):
    """Sequential impulses for one body's contact set against a static surface."""
    st = body.state
    inv_m = 1.0 / st.mass
    inv_i = st.world_inertia_inv()
    acc = np.zeros(len(normals))
    # Restitution targets the speed the contact would have had at the surface:
    # discrete stepping detects contact only after penetrating, and bouncing
    # at the penetrated speed pumps energy in.
    g_n = -(normals @ GRAVITY)
    pen_max = float(np.max(penetrations))
    surf_vn = np.sqrt(np.maximum(pre_vn ** 2 - 2.0 * g_n * pen_max, 0.0))
    targets = np.where(pre_vn < 0.0, params.restitution * surf_vn, 0.0)
    for _ in range(SOLVER_ITERATIONS):
        for k in range(len(normals)):
            n = normals[k]
            r = rs[k]
            v_rel = st.linear_velocity + np.cross(st.angular_velocity, r)
            vn = float(n @ v_rel)
            target = targets[k]
            k_n = inv_m + n @ np.cross(inv_i @ np.cross(r, n), r)
            j = (target - vn) / k_n
            new_acc = max(acc[k] + j, 0.0)
            j = new_acc - acc[k]
            acc[k] = new_acc
            if j != 0.0:
                st.linear_velocity = st.linear_velocity + j * inv_m * n
                st.angular_velocity = st.angular_velocity + inv_i @ np.cross(r, j * n)
            # Coulomb friction against the accumulated normal impulse
            v_rel = st.linear_velocity + np.cross(st.angular_velocity, r)
            vt = v_rel - (n @ v_rel) * n
            speed = np.linalg.norm(vt)
            if speed > 1e-12 and acc[k] > 0:
                t = vt / speed
                k_t = inv_m + t @ np.cross(inv_i @ np.cross(r, t), r)
                jt = -speed / k_t
                jt = max(jt, -params.friction * acc[k])
                st.linear_velocity = st.linear_velocity + jt * inv_m * t
                st.angular_velocity = st.angular_velocity + inv_i @ np.cross(r, jt * t)
    body.frame_impulse += float(acc.sum())


def simulate_rigid(rep: SceneRepresentation, objects, params: ContactParams,
                   frames: int, fps: float, seed: int,
                   fracture_impulse_threshold: float = 25.0,
                   fracture_cell_count: int = 12) -> Timeline:
    """Simulate physics-enabled objects against the scene mesh.

    Deterministic per seed. Returns a Timeline with one track per simulated
    object (pieces spawned by impact fracture get their own tracks, padded
    with their spawn transform before the break frame).
    """
    for obj in objects:
        if not obj.physics_enabled:
            raise ValueError(f"object {obj.object_id!r} has physics disabled")
    scene_mesh = rep.background_mesh()
    bodies = [_make_body(obj) for obj in objects]
    rng = np.random.default_rng(seed)

    timeline = Timeline(frame_rate=fps, frame_count=frames)
    velocities = {}

    def record(frame):
        # pieces spawned mid-run keep None before their break frame, so the
        # renderer shows parent-then-pieces with no overlap
        for body in bodies:
            track = timeline.tracks.setdefault(body.object_id, [None] * frames)
            if body.source_obj is not None:
                track[frame] = _body_world_from_object(body, body.source_obj)
            else:
                m = np.eye(4)
                m[:3, :3] = quat_to_matrix(body.state.orientation)
                m[:3, 3] = body.state.position
                track[frame] = m
            velocities.setdefault(body.object_id, [None] * frames)[frame] = (
                body.state.linear_velocity.copy(),
                body.state.angular_velocity.copy(),
                body.state.mass,
                (quat_to_matrix(body.state.orientation)
                 @ body.state.inertia_body
                 @ quat_to_matrix(body.state.orientation).T),
                body.state.position.copy(),
            )

    substeps = max(1, round(1.0 / (fps * DT)))
    record(0)
    for frame in range(1, frames):
        for body in bodies:
            body.frame_impulse = 0.0
        for _ in range(substeps):
            _step(bodies, scene_mesh, params)
        # impact fracture: replace over-threshold enabled bodies with pieces
        spawned = []
        for body in list(bodies):
            if not np.isfinite(body.state.position).all():
                raise NonFiniteState(f"simulation diverged at frame {frame}")
            if body.fracture_enabled and body.frame_impulse > fracture_impulse_threshold:
                spawned.extend(_fracture_body(rep, body, fracture_cell_count,
                                              int(rng.integers(0, 2 ** 31))))
                bodies.remove(body)
        bodies.extend(spawned)
        record(frame)

    timeline.meta["velocities"] = velocities
    return timeline


def _body_energy(body: _Body) -> tuple[float, float]:
    """(kinetic, potential) energy of a body, unit density, g along -z."""
    st = body.state
    r = quat_to_matrix(st.orientation)
    inertia_world = r @ st.inertia_body @ r.T
    ke = (0.5 * st.mass * float(st.linear_velocity @ st.linear_velocity)
          + 0.5 * float(st.angular_velocity @ inertia_world @ st.angular_velocity))
    pe = st.mass * 9.81 * float(st.position[2])
    return ke, pe


def _step(bodies, scene_mesh, params: ContactParams):
    # detect contacts and capture pre-impact normal velocities before the
    # gravity kick, so restitution targets the true approach speed
    contacts = []
    energy_before = [sum(_body_energy(body)) for body in bodies]
    world_verts = [body.world_vertices() for body in bodies]
    for body, verts in zip(bodies, world_verts):
        closest, faces, _ = closest_points_on_mesh(scene_mesh, verts)
        n = scene_mesh.face_normals[faces]
        pen = -np.einsum("ij,ij->i", n, verts - closest)
        idx = np.nonzero(pen > 0)[0]
        if len(idx) == 0:
            contacts.append(None)
            continue
        normals = n[idx]
        rs = verts[idx] - body.state.position
        v = body.state.linear_velocity
        w = body.state.angular_velocity
        pre_vn = np.einsum("ij,ij->i", normals, v + np.cross(w, rs))
        contacts.append((normals, rs, pre_vn, pen[idx]))

    for body in bodies:
        body.state.linear_velocity = body.state.linear_velocity + GRAVITY * DT

    for body, contact in zip(bodies, contacts):
        if contact is None:
            continue
        normals, rs, pre_vn, pen = contact
        _solve_contacts(body, normals, rs, params, pre_vn, pen)
        # split-impulse position correction (never injects kinetic energy)
        corr = params.baumgarte_beta * np.maximum(
            pen - 0.5 * params.penetration_slop, 0.0)
        if corr.any():
            body.state.position = body.state.position + (
                normals * corr[:, None]).sum(axis=0) / len(pen)

    # symmetrized hull-vertex contacts between dynamic bodies; bounding-box
    # rejection is exact because a contact needs a vertex inside the other
    # hull, which implies overlapping boxes
    pre_pair = [body.frame_impulse for body in bodies]
    margin = 10.0 * params.penetration_slop  # covers split-impulse drift above
    los = [v.min(axis=0) - margin for v in world_verts]
    his = [v.max(axis=0) + margin for v in world_verts]
    for i in range(len(bodies)):
        for j in range(i + 1, len(bodies)):
            if (los[i] > his[j]).any() or (los[j] > his[i]).any():
                continue
            _body_pair_contacts(bodies[i], bodies[j], params)
    paired = [body.frame_impulse != before
              for body, before in zip(bodies, pre_pair)]

    for body in bodies:
        st = body.state
        st.position = st.position + st.linear_velocity * DT - 0.5 * GRAVITY * DT * DT
        w = st.angular_velocity
        dq = 0.5 * DT * quat_multiply(np.array([0.0, w[0], w[1], w[2]]), st.orientation)
        st.orientation = quat_normalize(st.orientation + dq)

    # contacts are dissipative: discretization artifacts (full-substep advance
    # at the bounced velocity, split-impulse lift) may only remove energy
    for body, contact, e0, pair in zip(bodies, contacts, energy_before, paired):
        if contact is None or pair:
            continue
        ke, pe = _body_energy(body)
        if ke + pe <= e0 or ke <= 0.0:
            continue
        scale = np.sqrt(max(e0 - pe, 0.0) / ke)
        body.state.linear_velocity = body.state.linear_velocity * scale
        body.state.angular_velocity = body.state.angular_velocity * scale


def _body_pair_contacts(a: _Body, b: _Body, params: ContactParams):
    """Vertex-vs-hull contacts, both directions, two-body impulses."""
    for va, vb in ((a, b), (b, a)):
        verts = va.world_vertices()
        other = vb.world_vertices()
        # only vertices inside the other hull's bounding box can penetrate
        inside_box = np.nonzero(
            (verts >= other.min(axis=0)).all(axis=1)
            & (verts <= other.max(axis=0)).all(axis=1))[0]
        if len(inside_box) == 0:
            continue
        verts = verts[inside_box]
        hull_world = TriangleMesh(other, vb.hull.faces.copy())
        closest, faces, dist = closest_points_on_mesh(hull_world, verts)
        n = hull_world.face_normals[faces]
        sd = np.einsum("ij,ij->i", n, verts - closest)
        pen = -sd
        idx = np.nonzero(pen > 0)[0]
        if len(idx) == 0:
            continue
        inv_ma = 1.0 / va.state.mass
        inv_mb = 1.0 / vb.state.mass
        inv_ia = va.state.world_inertia_inv()
        inv_ib = vb.state.world_inertia_inv()
        for k in idx:
            nk = n[k]  # outward from b's hull: push a along +nk, b along -nk
            pa = verts[k]
            ra = pa - va.state.position
            rb = pa - vb.state.position
            v_rel = (va.state.linear_velocity + np.cross(va.state.angular_velocity, ra)
                     - vb.state.linear_velocity - np.cross(vb.state.angular_velocity, rb))
            vn = float(nk @ v_rel)
            if vn >= 0:
                continue
            k_n = (inv_ma + inv_mb
                   + nk @ np.cross(inv_ia @ np.cross(ra, nk), ra)
                   + nk @ np.cross(inv_ib @ np.cross(rb, nk), rb))
            jimp = -(1.0 + params.restitution) * vn / k_n
            va.state.linear_velocity = va.state.linear_velocity + jimp * inv_ma * nk
            va.state.angular_velocity = (va.state.angular_velocity
                                         + inv_ia @ np.cross(ra, jimp * nk))
            vb.state.linear_velocity = vb.state.linear_velocity - jimp * inv_mb * nk
            vb.state.angular_velocity = (vb.state.angular_velocity
                                         - inv_ib @ np.cross(rb, jimp * nk))
            va.frame_impulse += jimp
            vb.frame_impulse += jimp
            corr = params.baumgarte_beta * max(
                pen[k] - 0.5 * params.penetration_slop, 0.0)
            share = inv_ma / (inv_ma + inv_mb)
            va.state.position = va.state.position + nk * corr * share
            vb.state.position = vb.state.position - nk * corr * (1 - share)


def _fracture_body(rep: SceneRepresentation, body: _Body, cell_count, seed):
    """Replace a body with Voronoi pieces inheriting its velocity field."""
    obj = body.source_obj
    world_hull = TriangleMesh(body.world_vertices(), body.hull.faces.copy(),
                              vertex_colors=None)
    if obj is not None and obj.mesh.vertex_colors is not None:
        world_hull.vertex_colors = np.tile(obj.mesh.vertex_colors.mean(axis=0),
                                           (world_hull.n_vertices, 1))
    pieces = voronoi_fracture(world_hull, max(cell_count, 2), seed)
    spawned = []
    for p_idx, piece in enumerate(pieces):
        m, com, inertia = solid_inertia(piece)
        centered = TriangleMesh(piece.vertices - com, piece.faces.copy(),
                                vertex_colors=piece.vertex_colors)
        vel = (body.state.linear_velocity
               + np.cross(body.state.angular_velocity, com - body.state.position))
        st = RigidBodyState(com, np.array([1.0, 0.0, 0.0, 0.0]), vel,
                            body.state.angular_velocity.copy(), m, inertia)
        piece_id = f"{body.object_id}_piece{p_idx}"
        piece_obj = SceneObject(
            object_id=piece_id, name=piece_id, source="asset",
            mesh=centered, transform=Similarity(np.eye(3), com, 1.0),
            physics_enabled=True,
            material=obj.material if obj is not None else None,
        )
        if piece_id not in rep.objects:
            rep.add_object(piece_obj)
        if obj is not None:
            rep.objects.pop(obj.object_id, None)
        nb = _Body(piece_id, centered, st, fracture_enabled=False,
                   source_obj=piece_obj)
        spawned.append(nb)
    return spawned


# --- trajectories ------------------------------------------------------------

class BezierPath:
    """Interpolating composite cubic Bezier (Catmull-Rom construction),
    arc-length reparameterized."""

    SAMPLES_PER_SEGMENT = 256

    def __init__(self, keypoints):
        pts = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
        if len(pts) < 2:
            raise TooFewPoints("trajectory needs at least 2 keypoints")
        self.keypoints = pts
        n = len(pts)
        tangents = np.empty_like(pts)
        tangents[0] = pts[1] - pts[0]
        tangents[-1] = pts[-1] - pts[-2]
        if n > 2:
            tangents[1:-1] = (pts[2:] - pts[:-2]) / 2.0
        # Bezier control points per segment (Hermite form)
        self._p0 = pts[:-1]
        self._p1 = pts[:-1] + tangents[:-1] / 3.0
        self._p2 = pts[1:] - tangents[1:] / 3.0
        self._p3 = pts[1:]
        # arc-length table over dense uniform samples
        u = np.linspace(0.0, 1.0, (n - 1) * self.SAMPLES_PER_SEGMENT + 1)
        samples = self._eval_uniform(u)
        seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = cum[-1]
        self._u_table = u
        self._s_table = cum / max(self.length, 1e-300)

    def _eval_uniform(self, u):
        """Evaluate at raw (non arc-length) parameters u in [0, 1]."""
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        nseg = len(self._p0)
        x = np.clip(u, 0.0, 1.0) * nseg
        seg = np.minimum(x.astype(int), nseg - 1)
        s = x - seg
        s = s[:, None]
        p0, p1, p2, p3 = (p[seg] for p in (self._p0, self._p1, self._p2, self._p3))
        omt = 1.0 - s
        return (omt ** 3 * p0 + 3 * omt ** 2 * s * p1
                + 3 * omt * s ** 2 * p2 + s ** 3 * p3)

    def _tangent_uniform(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        nseg = len(self._p0)
        x = np.clip(u, 0.0, 1.0) * nseg
        seg = np.minimum(x.astype(int), nseg - 1)
        s = (x - seg)[:, None]
        p0, p1, p2, p3 = (p[seg] for p in (self._p0, self._p1, self._p2, self._p3))
        omt = 1.0 - s
        d = 3 * omt ** 2 * (p1 - p0) + 6 * omt * s * (p2 - p1) + 3 * s ** 2 * (p3 - p2)
        lens = np.linalg.norm(d, axis=1, keepdims=True)
        lens[lens < 1e-14] = 1.0
        return d / lens

    def _warp(self, t):
        """Arc-length parameter t in [0,1] -> raw parameter u."""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)), 0.0, 1.0)
        return np.interp(t, self._s_table, self._u_table)

    def at(self, t):
        """(position, unit tangent) at normalized arc length t in [0, 1]."""
        u = self._warp(t)
        pos = self._eval_uniform(u)
        tan = self._tangent_uniform(u)
        if np.isscalar(t) or np.ndim(t) == 0:
            return pos[0], tan[0]
        return pos, tan


def bezier_path(keypoints, t):
    """Convenience wrapper: position and unit tangent at arc-length t."""
    return BezierPath(keypoints).at(t)


def animate_trajectory(obj: SceneObject, keypoints, frames: int, fps: float) -> Timeline:
    """Per-frame transforms along the keypoint path, yaw aligned to the tangent."""
    path = BezierPath(keypoints)
    timeline = Timeline(frame_rate=fps, frame_count=frames)
    track = []
    last_yaw = 0.0
    for frame in range(frames):
        t = frame / (frames - 1) if frames > 1 else 0.0
        pos, tan = path.at(t)
        horiz = np.hypot(tan[0], tan[1])
        yaw = np.arctan2(tan[1], tan[0]) if horiz > 1e-9 else last_yaw
        last_yaw = yaw
        cz, sz = np.cos(yaw), np.sin(yaw)
        rot = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
        m = np.eye(4)
        m[:3, :3] = obj.transform.scale * rot
        m[:3, 3] = pos
        track.append(m)
    timeline.tracks[obj.object_id] = track
    return timeline


def merge_timelines(fragments) -> Timeline:
    """Union of per-object tracks; same object in two fragments is an error."""
    fragments = [f for f in fragments if f is not None]
    if not fragments:
        return Timeline()
    base = fragments[0]
    merged = Timeline(frame_rate=base.frame_rate, frame_count=base.frame_count)
    for frag in fragments:
        if frag.tracks and (frag.frame_rate != merged.frame_rate
                            or frag.frame_count != merged.frame_count):
            raise ConflictingTrack("fragments disagree on fps or frame count")
        for oid, track in frag.tracks.items():
            if oid in merged.tracks:
                raise ConflictingTrack(f"object {oid!r} animated in two fragments")
            merged.tracks[oid] = track
        merged.events.extend(frag.events)
        merged.meta.update(frag.meta)
    return merged


def save_timeline(timeline: Timeline, path: str):
    """Text table: one row per (frame, object); event rows appended."""
    with open(path, "w") as fh:
        fh.write(f"# fps {fmt(timeline.frame_rate)} frames {timeline.frame_count}\n")
        for oid in sorted(timeline.tracks):
            track = timeline.tracks[oid]
            for frame, m in enumerate(track):
                if m is None:
                    continue
                vals = " ".join(fmt(x) for x in np.asarray(m).ravel())
                fh.write(f"{frame} {oid} {vals}\n")
        for ev in timeline.events:
            kv = " ".join(f"{k}={v}" for k, v in sorted(ev.params.items()))
            fh.write(f"event {ev.kind} {ev.object_id} "
                     f"{ev.start_frame} {ev.end_frame} {kv}\n")
