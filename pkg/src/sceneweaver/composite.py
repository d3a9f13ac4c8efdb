"""Composites rendered object passes into the original video frames.

Shadow and bounce light transfer via the with/without background render
ratio, depth-based occlusion, and alpha blending in linear color, then
sequence assembly to numbered PNGs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IoError, ResolutionMismatch
from .raytrace import RenderPassSet, luminance

RATIO_EPS = 1e-4
RATIO_CLAMP = 4.0
DEPTH_BIAS = 1e-3  # m, occlusion comparison slack


def srgb_decode(img: np.ndarray) -> np.ndarray:
    """Display sRGB in [0,1] to linear."""
    img = np.asarray(img, dtype=np.float64)
    return np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)


def srgb_encode(img: np.ndarray) -> np.ndarray:
    """Linear in [0,1] to display sRGB."""
    img = np.asarray(img, dtype=np.float64)
    return np.where(img <= 0.0031308, img * 12.92,
                    1.055 * np.maximum(img, 0.0) ** (1 / 2.4) - 0.055)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[0,1] float to 8-bit with round-half-up."""
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


@dataclass
class CompositeFrame:
    color: np.ndarray         # (H, W, 3) uint8 sRGB
    shadow_ratio: np.ndarray  # (H, W) float
    fg_mask: np.ndarray       # (H, W) float alpha of inserted content
    occlusion_mask: np.ndarray  # (H, W) bool
    mode: str = "straight"
    meta: dict = field(default_factory=dict)


def shadow_ratio_map(passes: RenderPassSet) -> np.ndarray:
    """Per-pixel luminance ratio of the with/without background renders.

    Clamped to [0, 4]; forced to 1 where no background surface exists, so
    sky pixels pass through unchanged.
    """
    num = luminance(passes.bg_with_objects)
    den = luminance(passes.bg_only)
    ratio = np.clip(num / np.maximum(den, RATIO_EPS), 0.0, RATIO_CLAMP)
    ratio[num == den] = 1.0  # unchanged pixels pass through even below eps
    ratio[~np.isfinite(passes.bg_depth)] = 1.0
    return ratio


def shadow_ratio_map_rgb(passes: RenderPassSet) -> np.ndarray:
    """Per-channel variant of shadow_ratio_map, shape (H, W, 3)."""
    num = passes.bg_with_objects
    den = passes.bg_only
    ratio = np.clip(num / np.maximum(den, RATIO_EPS), 0.0, RATIO_CLAMP)
    ratio[num == den] = 1.0
    ratio[~np.isfinite(passes.bg_depth)] = 1.0
    return ratio


def occlusion_mask(bg_depth: np.ndarray, object_depth: np.ndarray,
                   bias: float = DEPTH_BIAS) -> np.ndarray:
    """True where the background surface sits in front of the object."""
    if bg_depth.shape != object_depth.shape:
        raise ResolutionMismatch(
            f"depth shapes differ: {bg_depth.shape} vs {object_depth.shape}")
    return bg_depth < object_depth - bias


def composite_frame(base: np.ndarray, passes: RenderPassSet,
                    mode: str = "straight",
                    per_channel_ratio: bool = False) -> CompositeFrame:
    """Blend the object pass into a base frame with shadow transfer.

    base is an sRGB float image in [0,1]. All blending happens in linear
    color; straight mode weights the object color by alpha, premultiplied
    mode assumes the object pass already carries its alpha weighting
    (emissive transparent content such as fire).
    """
    if mode not in ("straight", "premultiplied"):
        raise ValueError(f"unknown blend mode {mode!r}")
    if base.shape[:2] != passes.object_alpha.shape:
        raise ResolutionMismatch(
            f"base frame {base.shape[:2]} vs passes {passes.object_alpha.shape}")
    linear = srgb_decode(base)
    if per_channel_ratio:
        ratio = shadow_ratio_map_rgb(passes)
        out = linear * ratio
        ratio_out = luminance(ratio)
    else:
        ratio_out = shadow_ratio_map(passes)
        out = linear * ratio_out[:, :, None]
        ratio = ratio_out

    occluded = occlusion_mask(passes.bg_depth, passes.object_depth)
    alpha = np.where(occluded, 0.0, passes.object_alpha)
    obj = passes.object_color
    if mode == "straight":
        blended = alpha[:, :, None] * obj + (1.0 - alpha[:, :, None]) * out
    else:
        blended = np.where(occluded[:, :, None], out,
                           obj + (1.0 - passes.object_alpha[:, :, None]) * out)
    color = to_uint8(srgb_encode(np.clip(blended, 0.0, 1.0)))
    return CompositeFrame(color, np.asarray(ratio_out, dtype=np.float64), alpha,
                          occluded, mode)


def blend_mode_for_frame(timeline, frame: int) -> str:
    """Premultiplied while a fire event is active, straight otherwise."""
    if timeline is not None:
        for ev in timeline.events:
            if ev.kind == "fire" and ev.start_frame <= frame <= ev.end_frame:
                return "premultiplied"
    return "straight"


def assemble_sequence(frames: list, out_dir: str, fps: float = 24.0) -> list:
    """Write frames as out_dir/NNNN.png plus a JSON manifest; returns paths."""
    from PIL import Image

    if not frames:
        raise IoError("no frames to assemble")
    try:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for i, cf in enumerate(frames):
            path = os.path.join(out_dir, f"{i:04d}.png")
            Image.fromarray(cf.color).save(path)
            paths.append(path)
        manifest = {
            "frame_count": len(frames),
            "fps": fps,
            "mode_per_frame": [cf.mode for cf in frames],
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise IoError(f"failed to write sequence to {out_dir}: {exc}") from exc
    return paths
