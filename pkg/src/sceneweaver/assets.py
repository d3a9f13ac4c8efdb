"""Local asset and material catalogs with lexical retrieval.

Catalog layout on disk:
    assets/<id>/{asset.json, mesh.obj, anim.txt?}
    materials/<id>/{material.json, albedo.png, roughness.png?, metallic.png?}

Retrieval ranks by normalized token overlap between the query and the
record's name, description, and tags. Real-world extents come from record
metadata or from an external vision-language estimator; estimates are
cached on the record.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EndpointError,
    MissingFile,
    MissingMetadata,
    NoMatch,
    UnparseableReply,
)
from .scene_model import MaterialSpec, SceneObject, TriangleMesh, load_obj

_NUMBER_RE = re.compile(r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?")


def tokenize(text: str) -> set:
    return set(t for t in re.split(r"[^a-z0-9]+", text.lower()) if t)


def overlap_score(query: str, doc_tokens: set) -> float:
    """|query tokens ∩ doc tokens| / |query tokens|."""
    q = tokenize(query)
    if not q:
        return 0.0
    return len(q & doc_tokens) / len(q)


@dataclass
class AssetRecord:
    asset_id: str
    name: str
    description: str = ""
    mesh_path: str = ""
    tags: list = field(default_factory=list)
    real_size: Optional[np.ndarray] = None  # (3,) extents, m
    anim_path: Optional[str] = None

    def __post_init__(self):
        if self.real_size is not None:
            self.real_size = np.asarray(self.real_size, dtype=np.float64)
            if (self.real_size <= 0).any():
                raise ValueError(f"asset {self.asset_id}: real_size must be positive")

    def tokens(self) -> set:
        return tokenize(" ".join([self.name, self.description, *self.tags]))

    def load_mesh(self) -> TriangleMesh:
        if not self.mesh_path or not os.path.exists(self.mesh_path):
            raise MissingFile(f"asset {self.asset_id}: mesh not found at {self.mesh_path}")
        return load_obj(self.mesh_path)

    def load_animation(self) -> Optional[list]:
        """Baked per-frame 4x4 transforms, or None for static assets."""
        if self.anim_path is None:
            return None
        frames = []
        with open(self.anim_path) as fh:
            for line in fh:
                vals = [float(v) for v in line.split()]
                if len(vals) != 16:
                    raise ValueError(
                        f"asset {self.asset_id}: anim rows need 16 values")
                frames.append(np.array(vals).reshape(4, 4))
        return frames


@dataclass
class MaterialRecord:
    material_id: str
    name: str
    albedo_path: str
    roughness_path: Optional[str] = None
    metallic_path: Optional[str] = None
    tags: list = field(default_factory=list)

    def tokens(self) -> set:
        return tokenize(" ".join([self.name, *self.tags]))


@dataclass
class AssetCatalog:
    assets: dict = field(default_factory=dict)     # asset_id -> AssetRecord
    materials: dict = field(default_factory=dict)  # material_id -> MaterialRecord

    @classmethod
    def load(cls, root: str) -> "AssetCatalog":
        cat = cls()
        asset_dir = os.path.join(root, "assets")
        if os.path.isdir(asset_dir):
            for aid in sorted(os.listdir(asset_dir)):
                meta_path = os.path.join(asset_dir, aid, "asset.json")
                if not os.path.exists(meta_path):
                    continue
                with open(meta_path) as fh:
                    meta = json.load(fh)
                anim = os.path.join(asset_dir, aid, "anim.txt")
                cat.assets[aid] = AssetRecord(
                    asset_id=aid,
                    name=meta.get("name", aid),
                    description=meta.get("description", ""),
                    mesh_path=os.path.join(asset_dir, aid, "mesh.obj"),
                    tags=list(meta.get("tags", [])),
                    real_size=meta.get("real_size"),
                    anim_path=anim if os.path.exists(anim) else None)
        mat_dir = os.path.join(root, "materials")
        if os.path.isdir(mat_dir):
            for mid in sorted(os.listdir(mat_dir)):
                meta_path = os.path.join(mat_dir, mid, "material.json")
                if not os.path.exists(meta_path):
                    continue
                with open(meta_path) as fh:
                    meta = json.load(fh)

                def tex(name):
                    p = os.path.join(mat_dir, mid, name)
                    return p if os.path.exists(p) else None

                albedo = tex("albedo.png")
                if albedo is None:
                    raise MissingFile(f"material {mid}: albedo.png required")
                cat.materials[mid] = MaterialRecord(
                    material_id=mid, name=meta.get("name", mid),
                    albedo_path=albedo, roughness_path=tex("roughness.png"),
                    metallic_path=tex("metallic.png"),
                    tags=list(meta.get("tags", [])))
        return cat


def _best_record(records: dict, query: str, kind: str):
    scored = [(overlap_score(query, rec.tokens()), rid)
              for rid, rec in records.items()]
    scored = [(s, rid) for s, rid in scored if s > 0]
    if not scored:
        raise NoMatch(f"no {kind} matches query {query!r}")
    # highest score first, ties resolved by lexicographic id
    scored.sort(key=lambda p: (-p[0], p[1]))
    return records[scored[0][1]]


def retrieve_asset(catalog: AssetCatalog, query: str) -> AssetRecord:
    return _best_record(catalog.assets, query, "asset")


def retrieve_material(catalog: AssetCatalog, query: str) -> MaterialRecord:
    return _best_record(catalog.materials, query, "material")


def parse_scale_reply(reply: str) -> np.ndarray:
    """Three positive lengths (m) from a free-form estimator reply."""
    nums = [float(m) for m in _NUMBER_RE.findall(reply)]
    nums = [n for n in nums if n > 0]
    if len(nums) < 3:
        raise UnparseableReply(reply)
    return np.array(nums[:3])


class OfflineScaleEstimator:
    """Metadata pass-through; fails when the record carries no real_size."""

    def __init__(self):
        self.calls = 0

    def estimate(self, record: AssetRecord) -> np.ndarray:
        if record.real_size is None:
            raise MissingMetadata(
                f"asset {record.asset_id} has no real_size metadata")
        return np.asarray(record.real_size, dtype=np.float64)


class EndpointScaleEstimator:
    """Asks a chat-completion endpoint for real-world extents.

    The request carries the asset name and a rendered thumbnail in an image
    attachment field; the reply is parsed for three lengths in meters.
    """

    PROMPT = ("Estimate the real-world dimensions (width x depth x height, in "
              "meters) of the object named {name!r} shown in the image. Reply "
              "with three numbers.")

    def __init__(self, url: str, model: str, api_key_env: str = "SCENEWEAVER_API_KEY",
                 timeout: float = 60.0):
        self.url = url
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.calls = 0

    def estimate(self, record: AssetRecord) -> np.ndarray:
        import base64

        import requests

        self.calls += 1
        key = os.environ.get(self.api_key_env, "")
        thumb = base64.b64encode(render_thumbnail_png(record)).decode("ascii")
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": self.PROMPT.format(name=record.name),
                "image": thumb,
            }],
        }
        try:
            resp = requests.post(self.url, json=body, timeout=self.timeout,
                                 headers={"Authorization": f"Bearer {key}"})
            resp.raise_for_status()
            text = resp.json()["choices"][0]["message"]["content"]
        except UnparseableReply:
            raise
        except Exception as exc:
            raise EndpointError(f"scale estimation request failed: {exc}") from exc
        return parse_scale_reply(text)


def render_thumbnail_png(record: AssetRecord, size: int = 64) -> bytes:
    """Small orthographic silhouette of the asset mesh, PNG bytes."""
    import io

    from PIL import Image

    mesh = record.load_mesh()
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    span = max(float((hi - lo).max()), 1e-9)
    # project along a diagonal view axis onto its orthogonal plane
    view = np.array([1.0, 1.0, -1.0]) / np.sqrt(3)
    right = np.cross(view, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, view)
    center = (lo + hi) / 2
    img = np.zeros((size, size), dtype=np.uint8)
    pts = mesh.vertices[mesh.faces].reshape(-1, 3) - center
    u = ((pts @ right) / span + 0.5) * (size - 1)
    v = ((pts @ up) / span + 0.5) * (size - 1)
    ui = np.clip(np.round(u).astype(int), 0, size - 1)
    vi = np.clip(np.round(v).astype(int), 0, size - 1)
    img[size - 1 - vi, ui] = 255
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return buf.getvalue()


def estimate_real_scale(record: AssetRecord, estimator=None) -> np.ndarray:
    """Real-world extents of an asset, cached on the record after first use."""
    if record.real_size is not None:
        return np.asarray(record.real_size, dtype=np.float64)
    if estimator is None:
        estimator = OfflineScaleEstimator()
    size = estimator.estimate(record)
    record.real_size = np.asarray(size, dtype=np.float64)
    return record.real_size


def scaled_asset_mesh(record: AssetRecord, estimator=None) -> TriangleMesh:
    """Asset mesh with per-axis scaling baked so its extents = real_size."""
    mesh = record.load_mesh()
    size = estimate_real_scale(record, estimator)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extents = np.maximum(hi - lo, 1e-12)
    scale = size / extents
    center = (lo + hi) / 2
    verts = (mesh.vertices - center) * scale
    verts[:, 2] += size[2] / 2  # rest the base on the object-frame origin plane
    return TriangleMesh(verts, mesh.faces.copy(),
                        vertex_colors=None if mesh.vertex_colors is None
                        else mesh.vertex_colors.copy())


def apply_material(obj: SceneObject, mat) -> SceneObject:
    """Attach a material to an object; scalar parameters are clamped."""
    if isinstance(mat, MaterialRecord):
        tint = (obj.material.color_tint if obj.material is not None
                else np.ones(3))
        spec = MaterialSpec(texture_set=mat.albedo_path, color_tint=tint)
    elif isinstance(mat, MaterialSpec):
        if obj.material is not None and obj.material.texture_set is not None \
                and mat.texture_set is None:
            mat.texture_set = obj.material.texture_set
        spec = mat
    else:
        raise TypeError(f"expected MaterialSpec or MaterialRecord, got {type(mat)}")
    obj.material = spec
    return obj
