"""End-to-end pipeline driver and failure reporting.

Loads a scene bundle, obtains an editing program (from a file, an offline
stub, or a chat endpoint), executes it, renders and composites every frame,
and writes the sequence plus a machine-readable report. Failures map onto
four categories with fixed exit codes: scene_modeling 1, editing_modules 2,
unsupported_function 3, code_generation 4; configuration problems exit 64.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import composite as comp
from . import dsl, llm, raytrace
from .assets import AssetCatalog
from .errors import SceneWeaverError
from .runtime import execute_program
from .scene_model import CameraView, SceneRepresentation, load_scene_bundle
from .sim import save_timeline
from .transforms import Similarity

EXIT_CODES = {
    "scene_modeling": 1,
    "editing_modules": 2,
    "unsupported_function": 3,
    "code_generation": 4,
}
EXIT_CONFIG = 64

DEFAULT_FRAMES = 48
DEFAULT_FPS = 24.0
DEFAULT_SEED = 0


@dataclass
class RunConfig:
    bundle: str
    out: str
    instruction: Optional[str] = None
    program: Optional[str] = None
    seed: int = DEFAULT_SEED
    frames: int = DEFAULT_FRAMES
    fps: float = DEFAULT_FPS
    spp: Optional[int] = None
    offline: bool = False
    camera: str = "original"
    assets: Optional[str] = None
    endpoint_url: Optional[str] = None
    model: str = "gpt-4"

    def validate(self):
        if (self.instruction is None) == (self.program is None):
            raise ValueError("provide exactly one of instruction or program")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.camera not in ("original", "orbit"):
            raise ValueError(f"unknown camera track {self.camera!r}")


@dataclass
class FailureReport:
    category: str
    detail: str
    statement_index: Optional[int] = None


def report_failure_category(err: BaseException) -> FailureReport:
    """Total mapping from any raised error onto the failure taxonomy."""
    category = getattr(err, "category", None)
    if category not in EXIT_CODES:
        category = "editing_modules"
    return FailureReport(category, str(err),
                         getattr(err, "statement_index", None))


def orbit_cameras(bundle, frames: int) -> list:
    """Circular track about the scene centroid at the mean camera height."""
    proto = bundle.cameras[0]
    centroid = bundle.mesh.vertices.mean(axis=0)
    positions = np.array([c.position for c in bundle.cameras])
    height = positions[:, 2].mean()
    radius = float(np.linalg.norm(positions[:, :2] - centroid[None, :2],
                                  axis=1).mean())
    radius = max(radius, 1e-3)
    cams = []
    for frame in range(frames):
        ang = 2 * np.pi * frame / frames
        pos = np.array([centroid[0] + radius * np.cos(ang),
                        centroid[1] + radius * np.sin(ang), height])
        fwd = centroid - pos
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, [0.0, 0.0, 1.0])
        rn = np.linalg.norm(right)
        right = right / rn if rn > 1e-9 else np.array([1.0, 0.0, 0.0])
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=1)
        cams.append(CameraView(proto.fx, proto.fy, proto.cx, proto.cy,
                               proto.width, proto.height,
                               Similarity(rot, pos, 1.0)))
    return cams


def _obtain_program(cfg: RunConfig, out_dir: str):
    if cfg.program is not None:
        with open(cfg.program) as fh:
            source = fh.read()
        prog = dsl.parse_program(source)
        diags = dsl.validate_program(prog)
        if diags:
            from .errors import ValidationFailed
            raise ValidationFailed(diags)
        return prog
    endpoint = llm.stub_endpoint if cfg.offline or cfg.endpoint_url is None \
        else llm.HttpEndpoint(cfg.endpoint_url, cfg.model)
    try:
        prog, transcripts = llm.generate_with_repair(
            endpoint, llm.default_template(), cfg.instruction)
    except llm.ExhaustedAttempts as exc:
        llm.save_transcripts(exc.transcripts, os.path.join(out_dir, "run"))
        raise
    llm.save_transcripts(transcripts, os.path.join(out_dir, "run"))
    return prog


def run_pipeline(cfg: RunConfig) -> dict:
    """Execute the full pipeline; returns the report dictionary."""
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    bundle = load_scene_bundle(cfg.bundle)
    rep = SceneRepresentation(bundle)
    catalog = AssetCatalog.load(cfg.assets) if cfg.assets else AssetCatalog()

    prog = _obtain_program(cfg, cfg.out)
    report = execute_program(prog, rep, cfg.seed, catalog=catalog,
                             frames=cfg.frames, fps=cfg.fps)
    timeline = report.timeline
    save_timeline(timeline, os.path.join(cfg.out, "timeline.txt"))

    env, sun, emitters = raytrace.build_lights(bundle)
    if cfg.camera == "orbit":
        cams = orbit_cameras(bundle, cfg.frames)
        base_frames = [None] * cfg.frames
    else:
        cams = [bundle.cameras[f % len(bundle.cameras)] for f in range(cfg.frames)]
        base_frames = [bundle.load_frame(c) if c.frame_path else None for c in cams]

    frames_out = []
    for frame in range(cfg.frames):
        passes = raytrace.render_passes(
            rep, timeline, frame, cams[frame], env=env, sun=sun,
            emitters=emitters, seed=cfg.seed + frame, spp=cfg.spp)
        base = base_frames[frame]
        if base is None:
            base = comp.srgb_encode(np.clip(passes.bg_only, 0.0, 1.0))
        mode = comp.blend_mode_for_frame(timeline, frame)
        frames_out.append(comp.composite_frame(base, passes, mode))
    comp.assemble_sequence(frames_out, os.path.join(cfg.out, "frames"), cfg.fps)

    result = {
        "status": "ok",
        "frames": cfg.frames,
        "fps": cfg.fps,
        "seed": cfg.seed,
        "inserted_objects": sorted(rep.objects),
        "touched_objects": report.touched_objects,
        "warnings": report.warnings,
    }
    _write_report(cfg.out, result)
    return result


def _write_report(out_dir: str, payload: dict):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sceneweaver",
        description="Instruction-driven scene editing, simulation, and compositing.")
    parser.add_argument("--bundle", required=True, help="scene bundle directory")
    parser.add_argument("--instruction", help="natural-language edit instruction")
    parser.add_argument("--program", help="path to a program file (skips generation)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    parser.add_argument("--fps", type=float, default=DEFAULT_FPS)
    parser.add_argument("--spp", type=int, default=None,
                        help="override samples per pixel")
    parser.add_argument("--offline", action="store_true",
                        help="use the canned-instruction stub, no network")
    parser.add_argument("--camera", choices=("original", "orbit"),
                        default="original")
    parser.add_argument("--assets", help="asset catalog directory")
    parser.add_argument("--endpoint", dest="endpoint_url",
                        help="chat-completion endpoint URL")
    parser.add_argument("--model", default="gpt-4")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = RunConfig(bundle=ns.bundle, out=ns.out, instruction=ns.instruction,
                        program=ns.program, seed=ns.seed, frames=ns.frames,
                        fps=ns.fps, spp=ns.spp, offline=ns.offline,
                        camera=ns.camera, assets=ns.assets,
                        endpoint_url=ns.endpoint_url, model=ns.model)
        cfg.validate()
    except SystemExit:
        return EXIT_CONFIG
    except (ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_pipeline(cfg)
    except SceneWeaverError as exc:
        failure = report_failure_category(exc)
        _write_report(cfg.out, {
            "status": "failed",
            "category": failure.category,
            "detail": failure.detail,
            "statement_index": failure.statement_index,
        })
        print(f"{failure.category}: {failure.detail}", file=sys.stderr)
        return EXIT_CODES[failure.category]
    except (OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_CONFIG
    for warning in result["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
