"""Forward splatting of Gaussian clouds to color/alpha/depth images.

No low-pass dilation is applied to the projected covariance: downstream
consumers binarize the alpha channel, so the usual sub-pixel dilation has
no observable effect here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_model import CameraView, GaussianCloud
from .transforms import Similarity, matrix_to_quat, quat_multiply, quat_to_matrix

SKIP_ALPHA = 1.0 / 255.0  # contributions below 8-bit significance are skipped


@dataclass
class SplatImage:
    color: np.ndarray  # (H, W, 3) linear RGB
    alpha: np.ndarray  # (H, W) in [0, 1]
    depth: np.ndarray  # (H, W) nearest contributing splat depth (m), +inf if none


def transform_gaussians(cloud: GaussianCloud, transform: Similarity) -> GaussianCloud:
    """Apply a similarity: centers mapped fully, rotations left-composed,
    scales multiplied by the uniform scale factor."""
    q = matrix_to_quat(transform.rotation)
    return GaussianCloud(
        transform.apply(cloud.centers),
        quat_multiply(q, cloud.rotations),
        cloud.scales * transform.scale,
        cloud.opacities.copy(),
        cloud.colors.copy(),
    )


def gaussian_covariances(cloud: GaussianCloud) -> np.ndarray:
    """World-frame 3x3 covariances: R diag(s^2) R^T per Gaussian."""
    rot = quat_to_matrix(cloud.rotations)                 # (N, 3, 3)
    s2 = cloud.scales ** 2
    return np.einsum("nij,nj,nkj->nik", rot, s2, rot)


def render_splats(cloud: GaussianCloud, cam: CameraView) -> SplatImage:
    """Front-to-back alpha compositing of depth-sorted Gaussians.

    Per pixel: alpha_i = opacity_i * exp(-0.5 d^T Sigma2D^-1 d) with Sigma2D
    the first-order perspective projection of the world covariance and d the
    offset from the projected center. T <- T * (1 - alpha_i); alpha = 1 - T.
    """
    h, w = cam.height, cam.width
    color = np.zeros((h, w, 3))
    transmit = np.ones((h, w))
    depth = np.full((h, w), np.inf)
    if len(cloud) == 0:
        return SplatImage(color, np.zeros((h, w)), depth)

    wfc = cam.world_from_camera
    r_cw = wfc.rotation.T  # camera-from-world rotation
    centers_cam = (cloud.centers - wfc.translation) @ r_cw.T
    in_front = centers_cam[:, 2] > 1e-9

    cov_world = gaussian_covariances(cloud)
    order = np.argsort(centers_cam[:, 2], kind="stable")
    order = order[in_front[order]]

    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + 0.5
    py = ys + 0.5

    for i in order:
        x, y, z = centers_cam[i]
        j = np.array([[cam.fx / z, 0.0, -cam.fx * x / z ** 2],
                      [0.0, cam.fy / z, -cam.fy * y / z ** 2]])
        jw = j @ r_cw
        cov2d = jw @ cov_world[i] @ jw.T
        det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
        if det <= 1e-18:
            continue
        inv = np.array([[cov2d[1, 1], -cov2d[0, 1]],
                        [-cov2d[1, 0], cov2d[0, 0]]]) / det
        cx2d = cam.fx * x / z + cam.cx
        cy2d = cam.fy * y / z + cam.cy
        # 3-sigma pixel footprint
        radius = 3.0 * np.sqrt(max(cov2d[0, 0], cov2d[1, 1]))
        x0 = max(int(np.floor(cx2d - radius)), 0)
        x1 = min(int(np.ceil(cx2d + radius)) + 1, w)
        y0 = max(int(np.floor(cy2d - radius)), 0)
        y1 = min(int(np.ceil(cy2d + radius)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = px[y0:y1, x0:x1] - cx2d
        dy = py[y0:y1, x0:x1] - cy2d
        power = -0.5 * (inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy
                        + inv[1, 1] * dy * dy)
        alpha = cloud.opacities[i] * np.exp(power)
        alpha = np.where(alpha < SKIP_ALPHA, 0.0, np.minimum(alpha, 1.0))
        if not (alpha > 0).any():
            continue
        tile_t = transmit[y0:y1, x0:x1]
        contrib = tile_t * alpha
        color[y0:y1, x0:x1] += contrib[:, :, None] * cloud.colors[i]
        hit_new = (alpha > 0) & ~np.isfinite(depth[y0:y1, x0:x1])
        depth[y0:y1, x0:x1] = np.where(hit_new, z, depth[y0:y1, x0:x1])
        transmit[y0:y1, x0:x1] = tile_t * (1.0 - alpha)

    return SplatImage(color, 1.0 - transmit, depth)
