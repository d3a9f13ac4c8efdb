"""Lifts per-frame 2D instance masks to 3D face/Gaussian selections.

Per-view visibility voting over mask-pixel rays, a threshold sweep scored by
mask/render mIoU, and object extraction/removal built on the winning
selection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EditingModuleError, EmptySelection, UnknownLabel
from .geometry import Bvh, build_boundary_patch, intersect_rays_brute
from .scene_model import (
    GaussianCloud,
    SceneBundle,
    SceneObject,
    SceneRepresentation,
    TriangleMesh,
    pixel_rays,
)
from .splats import render_splats
from .transforms import Similarity

THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 20))  # 0.05 .. 0.95
ALPHA_BIN = 0.5  # binarization level for rendered alpha masks


@dataclass
class LiftResult:
    face_set: np.ndarray      # selected face indices
    gaussian_set: np.ndarray  # selected Gaussian indices
    tau_star: float
    miou_curve: dict = field(default_factory=dict)  # tau -> mIoU


def _label_ids(bundle: SceneBundle, label: str) -> set:
    ids = {i for i, name in bundle.label_table.items() if name == label}
    if not ids:
        raise UnknownLabel(f"label {label!r} not present in the bundle label table")
    return ids


def _mask_for_label(bundle: SceneBundle, cam, ids: set) -> np.ndarray:
    mask = bundle.load_mask(cam)
    return np.isin(mask, list(ids))


def mask_hit_faces(bundle: SceneBundle, bvh: Bvh, cam, binary_mask: np.ndarray) -> set:
    """Faces hit first by rays through the centers of masked pixels."""
    ys, xs = np.nonzero(binary_mask)
    if len(xs) == 0:
        return set()
    pixels = np.stack([xs + 0.5, ys + 0.5], axis=1).astype(np.float64)
    origins, dirs = pixel_rays(cam, pixels)
    _, faces = intersect_rays_brute(bvh.mesh, origins, dirs)
    return set(int(f) for f in faces if f >= 0)


def vote_face_visibility(bundle: SceneBundle, bvh: Bvh, label: str) -> np.ndarray:
    """V(f) = fraction of views whose masked-pixel rays hit face f first."""
    ids = _label_ids(bundle, label)
    votes = np.zeros(bundle.mesh.n_faces)
    n = len(bundle.cameras)
    for cam in bundle.cameras:
        hit = mask_hit_faces(bundle, bvh, cam, _mask_for_label(bundle, cam, ids))
        for f in hit:
            votes[f] += 1
    return votes / n


def nearest_face_assignment(gaussians: GaussianCloud, mesh: TriangleMesh) -> np.ndarray:
    """Index of the face whose centroid is closest to each Gaussian center."""
    centroids = mesh.face_centroids()
    # chunked (N_g x N_f) distance argmin
    out = np.empty(len(gaussians), dtype=np.int64)
    rows = max(1, 2_000_000 // max(len(centroids), 1))
    for lo in range(0, len(gaussians), rows):
        hi = min(len(gaussians), lo + rows)
        d = np.linalg.norm(
            gaussians.centers[lo:hi, None, :] - centroids[None, :, :], axis=2)
        out[lo:hi] = np.argmin(d, axis=1)
    return out


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0  # both empty: perfect agreement
    return float(np.logical_and(a, b).sum() / union)


def lift_instance(bundle: SceneBundle, bvh: Bvh, label: str) -> LiftResult:
    """Threshold sweep over visibility votes, scored by per-view mask mIoU.

    Ties in the mIoU argmax resolve to the smallest threshold.
    """
    ids = _label_ids(bundle, label)
    votes = vote_face_visibility(bundle, bvh, label)
    nearest = nearest_face_assignment(bundle.gaussians, bundle.mesh)
    masks = [_mask_for_label(bundle, cam, ids) for cam in bundle.cameras]

    best_tau, best_miou = None, -1.0
    best_faces, best_gaussians = None, None
    curve = {}
    for tau in THRESHOLDS:
        face_sel = np.nonzero(votes >= tau)[0]
        if len(face_sel) == 0:
            curve[tau] = 0.0
            continue
        in_sel = np.isin(nearest, face_sel)
        g_sel = np.nonzero(in_sel)[0]
        ious = []
        for cam, mask in zip(bundle.cameras, masks):
            if len(g_sel):
                alpha = render_splats(bundle.gaussians.subset(g_sel), cam).alpha
                rendered = alpha >= ALPHA_BIN
            else:
                rendered = np.zeros_like(mask, dtype=bool)
            ious.append(_iou(rendered, mask))
        miou = float(np.mean(ious))
        curve[tau] = miou
        if miou > best_miou:
            best_tau, best_miou = tau, miou
            best_faces, best_gaussians = face_sel, g_sel
    if best_faces is None:
        raise EmptySelection(f"no threshold selects any face for label {label!r}")
    return LiftResult(best_faces, best_gaussians, best_tau, curve)


def _fresh_object_id(rep: SceneRepresentation, name: str) -> str:
    n = 1
    while f"{name}_{n}" in rep.objects:
        n += 1
    return f"{name}_{n}"


def extract_object(rep: SceneRepresentation, lift: LiftResult, name: str) -> SceneObject:
    """Re-index the lifted selection into an object frame at its centroid.

    The inverse placement is stored on the object, so world-space geometry is
    unchanged by extraction. Source indices are remembered for later removal.
    """
    if len(lift.face_set) == 0:
        raise EmptySelection("lift selected no faces")
    mesh = rep.bundle.mesh
    faces = mesh.faces[lift.face_set]
    used = np.unique(faces)
    centroid = mesh.vertices[used].mean(axis=0)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    local_mesh = TriangleMesh(
        mesh.vertices[used] - centroid,
        remap[faces],
        vertex_colors=None if mesh.vertex_colors is None else mesh.vertex_colors[used],
    )
    g = rep.bundle.gaussians.subset(lift.gaussian_set)
    local_gaussians = GaussianCloud(
        g.centers - centroid, g.rotations, g.scales, g.opacities, g.colors)

    obj = SceneObject(
        object_id=_fresh_object_id(rep, name),
        name=name,
        source="extracted",
        mesh=local_mesh,
        gaussians=local_gaussians,
        transform=Similarity(np.eye(3), centroid, 1.0),
        source_faces=np.asarray(lift.face_set, dtype=np.int64).copy(),
        source_gaussians=np.asarray(lift.gaussian_set, dtype=np.int64).copy(),
    )
    rep.add_object(obj)
    return obj


def remove_instance(rep: SceneRepresentation, obj: SceneObject) -> None:
    """Mark the object's source faces/Gaussians removed and patch the hole.

    The patch is painted with the mean boundary vertex color (the full
    inpainting pipeline is out of scope here).
    """
    if obj.source != "extracted":
        raise EditingModuleError(
            f"remove_instance requires an extracted object, got source={obj.source!r}")
    patch = build_boundary_patch(rep.bundle.mesh, obj.source_faces)
    if patch.vertex_colors is not None:
        patch.vertex_colors = np.tile(patch.vertex_colors[:-1].mean(axis=0),
                                      (patch.n_vertices, 1))
    rep.removed_faces.update(int(f) for f in obj.source_faces)
    rep.removed_gaussians.update(int(g) for g in obj.source_gaussians)
    rep.patch_meshes.append(patch)
    rep.objects.pop(obj.object_id, None)
