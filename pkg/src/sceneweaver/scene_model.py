"""Shared domain types and on-disk scene bundle loading/validation.

Bundle layout under a root directory:
    mesh.obj          triangulated ASCII OBJ, optional vertex colors (v x y z r g b)
    gaussians.txt     one Gaussian per line: x y z qw qx qy qz sx sy sz opacity r g b
    cameras.json      [{fx,fy,cx,cy,width,height,world_from_camera,frame,masks}, ...]
    frames/NNNN.png   8-bit sRGB
    masks/NNNN.png    16-bit instance ids (0 = background)
    masks/labels.json id -> label text
    env.pfm           equirectangular HDR (little-endian PFM), optional for indoor_full
    scene.json        {"scene_type": ...}

World convention: +z is up. All numeric text uses 9 significant digits.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    InvariantViolation,
    MalformedRecord,
    MissingFile,
    OutOfBounds,
)
from .transforms import Similarity

SCENE_TYPES = ("indoor_full", "indoor_partial", "outdoor", "driving")

_FMT = "%.9g"


def fmt(x: float) -> str:
    return _FMT % float(x)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", np.asarray(self.direction, dtype=np.float64))

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class TriangleMesh:
    vertices: np.ndarray                      # (N, 3) float64, meters
    faces: np.ndarray                         # (M, 3) int64
    face_normals: np.ndarray = None           # (M, 3) unit vectors, computed if absent
    vertex_colors: Optional[np.ndarray] = None  # (N, 3) linear RGB in [0,1]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_normals is None:
            self.face_normals = compute_face_normals(self.vertices, self.faces)
        else:
            self.face_normals = np.asarray(self.face_normals, dtype=np.float64).reshape(-1, 3)
        if self.vertex_colors is not None:
            self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_centroids(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def face_areas(self) -> np.ndarray:
        v0, v1, v2 = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)

    def validate(self, where: str = "mesh"):
        if self.n_faces == 0 or self.n_vertices == 0:
            raise InvariantViolation(f"{where}: empty mesh")
        if self.faces.min() < 0 or self.faces.max() >= self.n_vertices:
            bad = int(np.argmax((self.faces < 0) | (self.faces >= self.n_vertices)).item() // 3)
            raise InvariantViolation(f"{where}: face {bad} has out-of-range vertex index")
        norms = np.linalg.norm(self.face_normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise InvariantViolation(f"{where}: face {bad} normal not unit length")
        areas = self.face_areas()
        if (areas <= 1e-12).any():
            bad = int(np.argmax(areas <= 1e-12))
            raise InvariantViolation(f"{where}: face {bad} is degenerate (area <= 1e-12)")
        if self.vertex_colors is not None and len(self.vertex_colors) != self.n_vertices:
            raise InvariantViolation(f"{where}: vertex color count != vertex count")

    def transformed(self, tf: Similarity) -> "TriangleMesh":
        return TriangleMesh(
            tf.apply(self.vertices),
            self.faces.copy(),
            vertex_colors=None if self.vertex_colors is None else self.vertex_colors.copy(),
        )

    def copy(self) -> "TriangleMesh":
        return TriangleMesh(
            self.vertices.copy(), self.faces.copy(), self.face_normals.copy(),
            None if self.vertex_colors is None else self.vertex_colors.copy(),
        )


def compute_face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0 = vertices[faces[:, 0]]
    n = np.cross(vertices[faces[:, 1]] - v0, vertices[faces[:, 2]] - v0)
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    lens[lens == 0] = 1.0
    return n / lens


@dataclass
class GaussianCloud:
    centers: np.ndarray    # (N, 3) m
    rotations: np.ndarray  # (N, 4) unit quaternions (w, x, y, z)
    scales: np.ndarray     # (N, 3) positive lengths, m
    opacities: np.ndarray  # (N,) in [0, 1]
    colors: np.ndarray     # (N, 3) linear RGB (degree-0 only)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.centers)

    def validate(self, where: str = "gaussians"):
        if len(self) == 0:
            raise InvariantViolation(f"{where}: empty cloud")
        qn = np.linalg.norm(self.rotations, axis=1)
        if not np.allclose(qn, 1.0, atol=1e-6):
            bad = int(np.argmax(np.abs(qn - 1.0)))
            raise InvariantViolation(f"{where}: row {bad} quaternion not unit norm")
        if (self.scales <= 0).any():
            bad = int(np.argmax((self.scales <= 0).any(axis=1)))
            raise InvariantViolation(f"{where}: row {bad} has non-positive scale")
        if ((self.opacities < 0) | (self.opacities > 1)).any():
            bad = int(np.argmax((self.opacities < 0) | (self.opacities > 1)))
            raise InvariantViolation(f"{where}: row {bad} opacity outside [0,1]")

    def subset(self, indices) -> "GaussianCloud":
        idx = np.asarray(sorted(indices), dtype=np.int64)
        return GaussianCloud(
            self.centers[idx], self.rotations[idx], self.scales[idx],
            self.opacities[idx], self.colors[idx],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.centers.copy(), self.rotations.copy(), self.scales.copy(),
            self.opacities.copy(), self.colors.copy(),
        )


@dataclass
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: Similarity  # rigid (scale 1)
    frame_path: Optional[str] = None
    mask_path: Optional[str] = None

    def validate(self, where: str = "camera"):
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation(f"{where}: focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvariantViolation(f"{where}: principal point outside image")
        r = self.world_from_camera.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise InvariantViolation(f"{where}: rotation not orthonormal")

    @property
    def position(self) -> np.ndarray:
        return self.world_from_camera.translation


def project(cam: CameraView, p) -> Optional[tuple]:
    """World point -> ((px, py), depth), or None when behind the camera."""
    p = np.asarray(p, dtype=np.float64)
    wc = cam.world_from_camera
    pc = wc.rotation.T @ (p - wc.translation)
    if pc[2] <= 0:
        return None
    px = cam.fx * pc[0] / pc[2] + cam.cx
    py = cam.fy * pc[1] / pc[2] + cam.cy
    return np.array([px, py]), float(pc[2])


def unproject_pixel(cam: CameraView, pixel) -> Ray:
    """Pixel -> world-space ray from the camera center."""
    pixel = np.asarray(pixel, dtype=np.float64)
    if not (0 <= pixel[0] <= cam.width and 0 <= pixel[1] <= cam.height):
        raise OutOfBounds(f"pixel {pixel.tolist()} outside {cam.width}x{cam.height}")
    d = np.array([(pixel[0] - cam.cx) / cam.fx, (pixel[1] - cam.cy) / cam.fy, 1.0])
    d /= np.linalg.norm(d)
    return Ray(cam.world_from_camera.translation, cam.world_from_camera.rotation @ d)


def pixel_rays(cam: CameraView, pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized unprojection: (K, 2) pixels -> origins (K, 3), unit dirs (K, 3)."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    d = np.stack([
        (pixels[:, 0] - cam.cx) / cam.fx,
        (pixels[:, 1] - cam.cy) / cam.fy,
        np.ones(len(pixels)),
    ], axis=1)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    dirs = d @ cam.world_from_camera.rotation.T
    origins = np.broadcast_to(cam.world_from_camera.translation, dirs.shape)
    return origins, dirs


@dataclass
class MaterialSpec:
    metallic: float = 0.0
    specular: float = 1.0
    roughness: float = 0.5
    color_tint: np.ndarray = field(default_factory=lambda: np.ones(3))
    texture_set: Optional[str] = None

    def __post_init__(self):
        raw = (float(self.metallic), float(self.specular), float(self.roughness))
        self.metallic = min(max(raw[0], 0.0), 1.0)
        self.specular = min(max(raw[1], 0.0), 1.0)
        self.roughness = min(max(raw[2], 0.0), 1.0)
        if raw != (self.metallic, self.specular, self.roughness):
            import warnings
            warnings.warn(f"material parameters clamped to [0, 1]: {raw}")
        self.color_tint = np.maximum(np.asarray(self.color_tint, dtype=np.float64), 0.0)


@dataclass
class SceneObject:
    object_id: str
    name: str
    source: str  # "extracted" | "asset"
    mesh: TriangleMesh  # object frame
    gaussians: Optional[GaussianCloud] = None  # object frame
    transform: Similarity = field(default_factory=Similarity.identity)
    physics_enabled: bool = False
    fracture_enabled: bool = False
    animation: Optional[list] = None  # None = static, else list of 3D keypoints
    material: Optional[MaterialSpec] = None
    events: list = field(default_factory=list)  # EffectEvent refs
    real_size: Optional[np.ndarray] = None      # (3,) extents, m
    source_faces: Optional[np.ndarray] = None      # bundle face indices (extracted)
    source_gaussians: Optional[np.ndarray] = None  # bundle Gaussian indices (extracted)
    baked_animation: Optional[list] = None  # per-frame 4x4 transforms for animated assets

    def world_mesh(self) -> TriangleMesh:
        return self.mesh.transformed(self.transform)

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pts = self.transform.apply(self.mesh.vertices)
        return pts.min(axis=0), pts.max(axis=0)


@dataclass
class SceneBundle:
    mesh: TriangleMesh
    gaussians: GaussianCloud
    cameras: list
    scene_type: str = "indoor_full"
    env_map: Optional[np.ndarray] = None  # (H, 2H, 3) linear HDR
    emitters: Optional[list] = None
    label_table: dict = field(default_factory=dict)  # instance id -> label text
    root: Optional[str] = None

    def validate(self):
        if len(self.cameras) < 1:
            raise InvariantViolation("bundle: needs at least one camera")
        self.mesh.validate("mesh.obj")
        self.gaussians.validate("gaussians.txt")
        for i, cam in enumerate(self.cameras):
            cam.validate(f"cameras.json[{i}]")
        if self.scene_type not in SCENE_TYPES:
            raise InvariantViolation(f"scene.json: unknown scene_type {self.scene_type!r}")
        if self.scene_type != "indoor_full" and self.env_map is None:
            raise InvariantViolation(
                f"bundle: env.pfm required for scene_type {self.scene_type!r}")

    def load_frame(self, cam: CameraView) -> np.ndarray:
        """Frame image as float sRGB in [0,1], shape (H, W, 3)."""
        if cam.frame_path is None:
            raise MissingFile("camera has no frame reference")
        from PIL import Image
        img = np.asarray(Image.open(cam.frame_path).convert("RGB"), dtype=np.float64)
        return img / 255.0

    def load_mask(self, cam: CameraView) -> np.ndarray:
        """Instance-id mask, shape (H, W) uint16 (0 = background)."""
        if cam.mask_path is None:
            raise MissingFile("camera has no mask reference")
        from PIL import Image
        return np.asarray(Image.open(cam.mask_path), dtype=np.uint16)


@dataclass
class Timeline:
    frame_rate: float = 24.0
    frame_count: int = 1
    tracks: dict = field(default_factory=dict)  # object_id -> list of 4x4 (None = absent)
    events: list = field(default_factory=list)  # EffectEvent
    meta: dict = field(default_factory=dict)    # diagnostics (per-frame velocities etc.)


@dataclass
class SceneRepresentation:
    bundle: SceneBundle
    objects: dict = field(default_factory=dict)  # object_id -> SceneObject
    removed_faces: set = field(default_factory=set)
    removed_gaussians: set = field(default_factory=set)
    timeline: Timeline = field(default_factory=Timeline)
    patch_meshes: list = field(default_factory=list)  # hole patches added by removal

    def add_object(self, obj: SceneObject):
        if obj.object_id in self.objects:
            raise InvariantViolation(f"duplicate object_id {obj.object_id!r}")
        self.objects[obj.object_id] = obj

    def background_mesh(self) -> TriangleMesh:
        """Bundle mesh with removed faces dropped and hole patches appended."""
        mesh = self.bundle.mesh
        if not self.removed_faces and not self.patch_meshes:
            return mesh
        keep = np.ones(mesh.n_faces, dtype=bool)
        if self.removed_faces:
            keep[np.fromiter(self.removed_faces, dtype=np.int64)] = False
        verts = [mesh.vertices]
        faces = [mesh.faces[keep]]
        colors = [mesh.vertex_colors if mesh.vertex_colors is not None
                  else np.full((mesh.n_vertices, 3), 0.5)]
        offset = mesh.n_vertices
        for patch in self.patch_meshes:
            verts.append(patch.vertices)
            faces.append(patch.faces + offset)
            colors.append(patch.vertex_colors if patch.vertex_colors is not None
                          else np.full((patch.n_vertices, 3), 0.5))
            offset += patch.n_vertices
        from .geometry import weld_vertices
        return weld_vertices(TriangleMesh(np.vstack(verts), np.vstack(faces),
                                          vertex_colors=np.vstack(colors)))

    def visible_gaussians(self) -> GaussianCloud:
        g = self.bundle.gaussians
        if not self.removed_gaussians:
            return g
        keep = np.ones(len(g), dtype=bool)
        keep[np.fromiter(self.removed_gaussians, dtype=np.int64)] = False
        idx = np.nonzero(keep)[0]
        return g.subset(idx)


# --- OBJ ---------------------------------------------------------------------

def load_obj(path: str) -> TriangleMesh:
    if not os.path.exists(path):
        raise MissingFile(path)
    verts, colors, faces = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) == 7:
                        verts.append([float(x) for x in parts[1:4]])
                        colors.append([float(x) for x in parts[4:7]])
                    elif len(parts) == 4:
                        verts.append([float(x) for x in parts[1:4]])
                    else:
                        raise ValueError("vertex needs 3 or 6 components")
                elif parts[0] == "f":
                    if len(parts) != 4:
                        raise ValueError("faces must be triangles")
                    faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
            except ValueError as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
    vc = np.array(colors) if colors and len(colors) == len(verts) else None
    if colors and vc is None:
        raise MalformedRecord(f"{path}: vertex colors present on only some vertices")
    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3),
                        vertex_colors=vc)


def save_obj(mesh: TriangleMesh, path: str):
    with open(path, "w") as fh:
        for i, v in enumerate(mesh.vertices):
            if mesh.vertex_colors is not None:
                c = mesh.vertex_colors[i]
                fh.write(f"v {fmt(v[0])} {fmt(v[1])} {fmt(v[2])} "
                         f"{fmt(c[0])} {fmt(c[1])} {fmt(c[2])}\n")
            else:
                fh.write(f"v {fmt(v[0])} {fmt(v[1])} {fmt(v[2])}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# --- gaussians.txt -----------------------------------------------------------

def load_gaussians(path: str) -> GaussianCloud:
    if not os.path.exists(path):
        raise MissingFile(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 14:
                raise MalformedRecord(f"{path}:{lineno}: expected 14 fields, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise MalformedRecord(f"{path}: no Gaussian rows")
    arr = np.array(rows, dtype=np.float64)
    return GaussianCloud(arr[:, 0:3], arr[:, 3:7], arr[:, 7:10], arr[:, 10], arr[:, 11:14])


def save_gaussians(cloud: GaussianCloud, path: str):
    with open(path, "w") as fh:
        for i in range(len(cloud)):
            row = np.concatenate([cloud.centers[i], cloud.rotations[i], cloud.scales[i],
                                  [cloud.opacities[i]], cloud.colors[i]])
            fh.write(" ".join(fmt(x) for x in row) + "\n")


# --- PFM ---------------------------------------------------------------------

def load_pfm(path: str) -> np.ndarray:
    if not os.path.exists(path):
        raise MissingFile(path)
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if header not in ("PF", "Pf"):
            raise MalformedRecord(f"{path}: not a PFM file")
        dims = fh.readline().decode("ascii").split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().decode("ascii").strip())
        count = w * h * (3 if header == "PF" else 1)
        data = np.frombuffer(fh.read(count * 4),
                             dtype="<f4" if scale < 0 else ">f4").astype(np.float64)
    img = data.reshape(h, w, -1)
    return img[::-1].copy()  # PFM rows are bottom-up


def save_pfm(img: np.ndarray, path: str):
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    header = b"PF\n" if img.shape[2] == 3 else b"Pf\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f"{img.shape[1]} {img.shape[0]}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(img[::-1].astype("<f4").tobytes())


# --- bundle ------------------------------------------------------------------

def load_scene_bundle(root: str) -> SceneBundle:
    """Load and validate a scene bundle directory."""
    def need(name):
        p = os.path.join(root, name)
        if not os.path.exists(p):
            raise MissingFile(p)
        return p

    mesh = load_obj(need("mesh.obj"))
    gaussians = load_gaussians(need("gaussians.txt"))

    cam_path = need("cameras.json")
    try:
        with open(cam_path) as fh:
            cam_records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{cam_path}: {exc}") from exc

    cameras = []
    for i, rec in enumerate(cam_records):
        try:
            m = np.array(rec["world_from_camera"], dtype=np.float64).reshape(4, 4)
            cam = CameraView(
                fx=float(rec["fx"]), fy=float(rec["fy"]),
                cx=float(rec["cx"]), cy=float(rec["cy"]),
                width=int(rec["width"]), height=int(rec["height"]),
                world_from_camera=Similarity(m[:3, :3], m[:3, 3], 1.0),
            )
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(f"{cam_path}: camera {i}: {exc}") from exc
        if rec.get("frame"):
            cam.frame_path = os.path.join(root, rec["frame"])
        if rec.get("masks"):
            cam.mask_path = os.path.join(root, rec["masks"])
        cameras.append(cam)

    scene_path = need("scene.json")
    with open(scene_path) as fh:
        scene_type = json.load(fh).get("scene_type", "indoor_full")

    env_path = os.path.join(root, "env.pfm")
    env_map = load_pfm(env_path) if os.path.exists(env_path) else None
    if env_map is not None and env_map.shape[1] != 2 * env_map.shape[0]:
        raise InvariantViolation(f"{env_path}: width must be 2x height")

    labels_path = os.path.join(root, "masks", "labels.json")
    label_table = {}
    if os.path.exists(labels_path):
        with open(labels_path) as fh:
            label_table = {int(k): v for k, v in json.load(fh).items()}

    bundle = SceneBundle(mesh=mesh, gaussians=gaussians, cameras=cameras,
                         scene_type=scene_type, env_map=env_map,
                         label_table=label_table, root=root)
    bundle.validate()
    return bundle


def save_scene_bundle(bundle: SceneBundle, root: str):
    """Write the bundle back out in the canonical byte-stable text formats."""
    os.makedirs(root, exist_ok=True)
    save_obj(bundle.mesh, os.path.join(root, "mesh.obj"))
    save_gaussians(bundle.gaussians, os.path.join(root, "gaussians.txt"))
    records = []
    for cam in bundle.cameras:
        rec = {
            "fx": float(fmt(cam.fx)), "fy": float(fmt(cam.fy)),
            "cx": float(fmt(cam.cx)), "cy": float(fmt(cam.cy)),
            "width": cam.width, "height": cam.height,
            "world_from_camera": [float(fmt(x))
                                  for x in cam.world_from_camera.matrix().ravel()],
        }
        if cam.frame_path:
            rec["frame"] = os.path.relpath(cam.frame_path, root)
        if cam.mask_path:
            rec["masks"] = os.path.relpath(cam.mask_path, root)
        records.append(rec)
    with open(os.path.join(root, "cameras.json"), "w") as fh:
        json.dump(records, fh, indent=1)
    with open(os.path.join(root, "scene.json"), "w") as fh:
        json.dump({"scene_type": bundle.scene_type}, fh)
    if bundle.env_map is not None:
        save_pfm(bundle.env_map, os.path.join(root, "env.pfm"))
    if bundle.label_table:
        os.makedirs(os.path.join(root, "masks"), exist_ok=True)
        with open(os.path.join(root, "masks", "labels.json"), "w") as fh:
            json.dump({str(k): v for k, v in bundle.label_table.items()}, fh)
