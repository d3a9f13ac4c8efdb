"""Interpreter for the editing language.

Evaluates a validated program against a SceneRepresentation, dispatching
each builtin to the engine module that implements it. All randomness draws
from one stream seeded by the caller, and after the last statement the
physics-enabled objects are simulated and trajectory animations baked, so a
given (program, seed) pair always yields the same timeline.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import dsl
from .assets import (
    AssetCatalog,
    apply_material,
    retrieve_asset,
    retrieve_material,
    scaled_asset_mesh,
)
from .errors import (
    EditingModuleError,
    RuntimeFault,
    SceneWeaverError,
    UnsupportedFunction,
    ValidationFailed,
)
from .geometry import Bvh, sample_support_points, voronoi_fracture
from .scene_model import (
    MaterialSpec,
    SceneObject,
    SceneRepresentation,
    Timeline,
    TriangleMesh,
)
from .segmentation import extract_object, lift_instance, remove_instance
from .sim import (
    ContactParams,
    EVENT_KINDS,
    EffectEvent,
    animate_trajectory,
    merge_timelines,
    simulate_rigid,
)
from .transforms import Similarity, quat_to_matrix

VERTICAL_OFFSET = 0.5  # m, default raise for sample_point_above_object
BREAK_CELL_COUNT = 100


@dataclass
class Value:
    kind: str
    data: object


@dataclass
class ExecutionReport:
    timeline: Timeline
    touched_objects: list
    warnings: list


@dataclass
class _Context:
    rep: SceneRepresentation
    catalog: AssetCatalog
    rng: np.random.Generator
    frames: int
    fps: float
    params: ContactParams
    estimator: object = None
    warnings: list = field(default_factory=list)
    touched: list = field(default_factory=list)
    pending_events: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    _bvh: Bvh = None

    @property
    def bvh(self) -> Bvh:
        if self._bvh is None:
            self._bvh = Bvh(self.rep.bundle.mesh)
        return self._bvh

    def fresh_id(self, stem: str) -> str:
        n = self.counters.get(stem, 0) + 1
        self.counters[stem] = n
        return f"{stem}_{n}"

    def touch(self, obj: SceneObject):
        if obj.object_id not in self.touched:
            self.touched.append(obj.object_id)


# --- builtin implementations --------------------------------------------------


def _bi_detect_object(ctx, scene, name):
    lift = lift_instance(ctx.rep.bundle, ctx.bvh, name.data)
    obj = extract_object(ctx.rep, lift, name.data)
    ctx.touch(obj)
    return Value(dsl.OBJECT, obj)


def _support_context(ctx, obj: SceneObject):
    """(bvh, mesh, region) for support sampling on an object's surface."""
    if obj.source == "extracted" and obj.source_faces is not None:
        return ctx.bvh, ctx.rep.bundle.mesh, obj.source_faces
    mesh = obj.world_mesh()
    return Bvh(mesh), mesh, np.arange(mesh.n_faces)


def _bi_sample_point_on_object(ctx, scene, obj):
    bvh, mesh, region = _support_context(ctx, obj.data)
    seed = int(ctx.rng.integers(0, 2 ** 31))
    pts = sample_support_points(bvh, mesh, region, 1, seed)
    return Value(dsl.VEC3, pts[0])


def _bi_sample_point_above_object(ctx, scene, obj, offset=None):
    dz = VERTICAL_OFFSET if offset is None else float(offset.data)
    point = _bi_sample_point_on_object(ctx, scene, obj).data
    return Value(dsl.VEC3, point + np.array([0.0, 0.0, dz]))


def _make_asset_object(ctx, record, animated: bool) -> SceneObject:
    mesh = scaled_asset_mesh(record, ctx.estimator)
    baked = record.load_animation() if animated else None
    return SceneObject(
        object_id=ctx.fresh_id(record.asset_id),
        name=record.name,
        source="asset",
        mesh=mesh,
        real_size=np.asarray(record.real_size, dtype=np.float64),
        baked_animation=baked)


def _bi_retrieve_asset(ctx, scene, name, animated=None, generated=None):
    if generated is not None and generated.data:
        raise UnsupportedFunction("text-to-3D asset generation is not available")
    record = retrieve_asset(ctx.catalog, name.data)
    obj = _make_asset_object(ctx, record,
                             animated is not None and bool(animated.data))
    return Value(dsl.OBJECT, obj)


def _bi_retrieve_chatsim_asset(ctx, scene, name):
    sub = AssetCatalog(assets={aid: rec for aid, rec in ctx.catalog.assets.items()
                               if "driving" in rec.tags})
    record = retrieve_asset(sub, name.data)
    return Value(dsl.OBJECT, _make_asset_object(ctx, record, False))


def _bi_insert_object(ctx, scene, obj):
    if obj.data.object_id not in ctx.rep.objects:
        ctx.rep.add_object(obj.data)
    ctx.touch(obj.data)
    return Value(dsl.UNIT, None)


def _bi_update_object(ctx, scene, obj):
    ctx.rep.objects[obj.data.object_id] = obj.data
    ctx.touch(obj.data)
    return Value(dsl.UNIT, None)


def _bi_remove_object(ctx, scene, obj, remove_gaussians=None):
    remove_instance(ctx.rep, obj.data)
    if remove_gaussians is not None and not remove_gaussians.data:
        # gaussians stay visible even though the mesh faces are gone
        ctx.rep.removed_gaussians.difference_update(
            int(g) for g in obj.data.source_gaussians)
    ctx.touch(obj.data)
    return Value(dsl.UNIT, None)


def _bi_allow_physics(ctx, obj):
    obj.data.physics_enabled = True
    return obj


def _bi_allow_fracture(ctx, obj):
    obj.data.fracture_enabled = True
    return obj


def _bi_make_break(ctx, obj):
    parent = obj.data
    world = parent.world_mesh()
    pieces = voronoi_fracture(world, BREAK_CELL_COUNT,
                              seed=int(ctx.rng.integers(0, 2 ** 31)))
    ctx.rep.objects.pop(parent.object_id, None)
    for piece in pieces:
        centroid = piece.vertices.mean(axis=0)
        local = TriangleMesh(piece.vertices - centroid, piece.faces.copy(),
                             vertex_colors=piece.vertex_colors)
        child = SceneObject(
            object_id=ctx.fresh_id(f"{parent.object_id}_piece"),
            name=parent.name, source=parent.source, mesh=local,
            transform=Similarity(np.eye(3), centroid, 1.0),
            physics_enabled=True, material=parent.material)
        ctx.rep.add_object(child)
        ctx.touch(child)
    ctx.pending_events.append(EffectEvent(parent.object_id, "break", 0, 0))
    return obj


def _bi_make_melting(ctx, obj):
    ctx.pending_events.append(
        EffectEvent(obj.data.object_id, "melt", 0, ctx.frames - 1))
    ctx.warnings.append(
        f"unsupported_function: melt on {obj.data.object_id} is annotated on "
        "the timeline but not rendered")
    return obj


def _add_effect(ctx, obj, kind, start, end):
    ev = EffectEvent(obj.object_id, kind, start, end)
    obj.events.append(ev)
    ctx.pending_events.append(ev)
    ctx.touch(obj)


def _bi_add_fire(ctx, scene, obj):
    _add_effect(ctx, obj.data, "fire", 0, ctx.frames - 1)
    return Value(dsl.UNIT, None)


def _bi_add_smoke(ctx, scene, obj):
    _add_effect(ctx, obj.data, "smoke", 0, ctx.frames - 1)
    return Value(dsl.UNIT, None)


def _bi_add_event(ctx, scene, obj, kind, start=None, end=None):
    name = kind.data
    if name not in EVENT_KINDS:
        raise UnsupportedFunction(f"event kind {name!r} is not supported "
                                  f"(known: {', '.join(EVENT_KINDS)})")
    s = 0 if start is None else int(start.data)
    e = ctx.frames - 1 if end is None else int(end.data)
    _add_effect(ctx, obj.data, name, s, e)
    return Value(dsl.UNIT, None)


def _bi_set_static_animation(ctx, obj):
    obj.data.animation = None
    return obj


def _bi_set_moving_animation(ctx, obj, points):
    obj.data.animation = [np.asarray(p, dtype=np.float64) for p in points.data]
    return obj


def _bi_init_material(ctx, metallic=None, roughness=None, specular=None):
    spec = MaterialSpec(
        metallic=0.0 if metallic is None else float(metallic.data),
        roughness=0.5 if roughness is None else float(roughness.data),
        specular=1.0 if specular is None else float(specular.data))
    return Value(dsl.MATERIAL, spec)


def _bi_retrieve_material(ctx, scene, name):
    return Value(dsl.MATERIAL, retrieve_material(ctx.catalog, name.data))


def _bi_apply_material(ctx, obj, mat):
    apply_material(obj.data, mat.data)
    ctx.touch(obj.data)
    return obj


def _bi_get_object_center_position(ctx, obj):
    lo, hi = obj.data.world_bounds()
    return Value(dsl.VEC3, (lo + hi) / 2)


def _bi_get_object_bottom_position(ctx, obj):
    lo, hi = obj.data.world_bounds()
    center = (lo + hi) / 2
    return Value(dsl.VEC3, np.array([center[0], center[1], lo[2]]))


def _bi_translate_object(ctx, obj, vec):
    tf = obj.data.transform
    obj.data.transform = Similarity(tf.rotation, tf.translation + vec.data, tf.scale)
    return obj


def _bi_rotate_object(ctx, obj, rot):
    tf = obj.data.transform
    obj.data.transform = Similarity(rot.data @ tf.rotation, tf.translation, tf.scale)
    return obj


def _bi_scale_object(ctx, obj, factor):
    tf = obj.data.transform
    k = float(factor.data)
    if k <= 0:
        raise EditingModuleError("scale factor must be positive")
    obj.data.transform = Similarity(tf.rotation, tf.translation, tf.scale * k)
    return obj


def _bi_make_copy(ctx, obj):
    dup = copy.deepcopy(obj.data)
    dup.object_id = ctx.fresh_id(f"{obj.data.object_id}_copy")
    return Value(dsl.OBJECT, dup)


def _bi_get_random_2d_rotation(ctx):
    yaw = ctx.rng.uniform(0.0, 2 * np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    return Value(dsl.ROTATION, np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


def _bi_get_random_3d_rotation(ctx):
    q = ctx.rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Value(dsl.ROTATION, quat_to_matrix(q))


def _bi_get_camera_position(ctx, scene):
    return Value(dsl.VEC3, ctx.rep.bundle.cameras[0].position.copy())


def _bi_get_vehicle_position(ctx, scene):
    pos = ctx.rep.bundle.cameras[0].position.copy()
    pos[2] = 0.0
    return Value(dsl.VEC3, pos)


_DIRECTION_WORDS = ("front", "back", "left", "right", "up", "down")


def _bi_get_direction(ctx, scene, word):
    name = word.data.lower()
    if name not in _DIRECTION_WORDS:
        raise EditingModuleError(
            f"unknown direction {word.data!r} (use one of {', '.join(_DIRECTION_WORDS)})")
    if name == "up":
        return Value(dsl.VEC3, np.array([0.0, 0.0, 1.0]))
    if name == "down":
        return Value(dsl.VEC3, np.array([0.0, 0.0, -1.0]))
    r = ctx.rep.bundle.cameras[0].world_from_camera.rotation
    fwd = r[:, 2].copy()
    fwd[2] = 0.0
    n = np.linalg.norm(fwd)
    fwd = r[:, 2] if n < 1e-9 else fwd / n
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    rn = np.linalg.norm(right)
    right = right / rn if rn > 1e-9 else np.array([1.0, 0.0, 0.0])
    return {"front": Value(dsl.VEC3, fwd), "back": Value(dsl.VEC3, -fwd),
            "right": Value(dsl.VEC3, right), "left": Value(dsl.VEC3, -right)}[name]


_IMPLS = {
    "detect_object": _bi_detect_object,
    "sample_point_on_object": _bi_sample_point_on_object,
    "sample_point_above_object": _bi_sample_point_above_object,
    "retrieve_asset": _bi_retrieve_asset,
    "retrieve_chatsim_asset": _bi_retrieve_chatsim_asset,
    "insert_object": _bi_insert_object,
    "update_object": _bi_update_object,
    "remove_object": _bi_remove_object,
    "allow_physics": _bi_allow_physics,
    "allow_fracture": _bi_allow_fracture,
    "make_break": _bi_make_break,
    "make_melting": _bi_make_melting,
    "add_fire": _bi_add_fire,
    "add_smoke": _bi_add_smoke,
    "add_event": _bi_add_event,
    "set_static_animation": _bi_set_static_animation,
    "set_moving_animation": _bi_set_moving_animation,
    "init_material": _bi_init_material,
    "retrieve_material": _bi_retrieve_material,
    "apply_material": _bi_apply_material,
    "get_object_center_position": _bi_get_object_center_position,
    "get_object_bottom_position": _bi_get_object_bottom_position,
    "translate_object": _bi_translate_object,
    "rotate_object": _bi_rotate_object,
    "scale_object": _bi_scale_object,
    "make_copy": _bi_make_copy,
    "get_random_2D_rotation": _bi_get_random_2d_rotation,
    "get_random_3D_rotation": _bi_get_random_3d_rotation,
    "get_camera_position": _bi_get_camera_position,
    "get_vehicle_position": _bi_get_vehicle_position,
    "get_direction": _bi_get_direction,
}


# --- expression and statement evaluation --------------------------------------


def _eval_expr(ctx, env, e) -> Value:
    if isinstance(e, dsl.Number):
        return Value(dsl.NUMBER, e.value)
    if isinstance(e, dsl.Text):
        return Value(dsl.TEXT, e.value)
    if isinstance(e, dsl.Boolean):
        return Value(dsl.BOOLEAN, e.value)
    if isinstance(e, dsl.VectorLit):
        items = [_eval_expr(ctx, env, i) for i in e.items]
        if len(items) == 3 and all(v.kind == dsl.NUMBER for v in items):
            return Value(dsl.VEC3, np.array([v.data for v in items], dtype=np.float64))
        return Value(dsl.POINTLIST, [np.asarray(v.data, dtype=np.float64)
                                     for v in items])
    if isinstance(e, dsl.Var):
        return env[e.name]
    if isinstance(e, dsl.Neg):
        v = _eval_expr(ctx, env, e.operand)
        return Value(v.kind, -v.data)
    if isinstance(e, dsl.BinOp):
        left = _eval_expr(ctx, env, e.left)
        right = _eval_expr(ctx, env, e.right)
        ops = {"+": lambda a, b: a + b, "-": lambda a, b: a - b,
               "*": lambda a, b: a * b, "/": lambda a, b: a / b}
        data = ops[e.op](left.data, right.data)
        kind = dsl.VEC3 if dsl.VEC3 in (left.kind, right.kind) else dsl.NUMBER
        return Value(kind, data)
    if isinstance(e, dsl.Call):
        args = [_eval_expr(ctx, env, a) for a in e.args]
        return _IMPLS[e.name](ctx, *args)
    raise TypeError(f"unknown expression node {type(e).__name__}")


def _exec_block(ctx, env, stmts):
    for stmt in stmts:
        if isinstance(stmt, dsl.Assign):
            env[stmt.name] = _eval_expr(ctx, env, stmt.expr)
        elif isinstance(stmt, dsl.ExprStmt):
            _eval_expr(ctx, env, stmt.expr)
        elif isinstance(stmt, dsl.ForLoop):
            for i in range(stmt.start, stmt.stop):
                env[stmt.var] = Value(dsl.NUMBER, float(i))
                _exec_block(ctx, env, stmt.body)
        else:
            raise TypeError(f"unknown statement node {type(stmt).__name__}")


def execute_program(prog: dsl.Program, rep: SceneRepresentation, rng_seed: int,
                    catalog: AssetCatalog = None, frames: int = 48,
                    fps: float = 24.0, params: ContactParams = None,
                    estimator=None) -> ExecutionReport:
    """Run a validated program; returns the merged animation timeline.

    Faults carry the index of the failing top-level statement and keep any
    edits completed before it.
    """
    diags = dsl.validate_program(prog)
    if diags:
        raise ValidationFailed(diags)
    ctx = _Context(rep=rep,
                   catalog=catalog if catalog is not None else AssetCatalog(),
                   rng=np.random.default_rng(rng_seed),
                   frames=frames, fps=fps,
                   params=params if params is not None else ContactParams(),
                   estimator=estimator)
    env = {"scene": Value(dsl.SCENE, rep)}
    for index, stmt in enumerate(prog.statements):
        try:
            _exec_block(ctx, env, [stmt])
        except SceneWeaverError as exc:
            raise RuntimeFault(index, exc) from exc
        except Exception as exc:  # noqa: BLE001 - fold host faults into the taxonomy
            raise RuntimeFault(index, EditingModuleError(str(exc))) from exc

    fragments = []
    sim_seed = int(ctx.rng.integers(0, 2 ** 31))
    physical = [o for o in rep.objects.values() if o.physics_enabled]
    if physical:
        fragments.append(simulate_rigid(rep, physical, ctx.params,
                                        frames, fps, sim_seed))
    for obj in list(rep.objects.values()):
        if obj.animation:
            if obj.physics_enabled:
                ctx.warnings.append(
                    f"{obj.object_id}: trajectory ignored, physics takes over")
                continue
            fragments.append(animate_trajectory(obj, obj.animation, frames, fps))
    timeline = merge_timelines(fragments)
    if not timeline.tracks:
        timeline.frame_rate = fps
        timeline.frame_count = frames
    timeline.events.extend(ctx.pending_events)
    rep.timeline = timeline
    return ExecutionReport(timeline, ctx.touched, ctx.warnings)
