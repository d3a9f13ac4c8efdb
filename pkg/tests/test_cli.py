"""Pipeline driver: configuration, failure taxonomy, exit codes."""

import json
import os

import numpy as np
import pytest

from sceneweaver.cli import (
    DEFAULT_FPS,
    DEFAULT_FRAMES,
    DEFAULT_SEED,
    EXIT_CODES,
    EXIT_CONFIG,
    RunConfig,
    main,
    orbit_cameras,
    report_failure_category,
)
from sceneweaver.errors import (
    NoMatch,
    RuntimeFault,
    UnknownLabel,
    UnsupportedFunction,
    ValidationFailed,
)


def test_exit_code_table():
    assert EXIT_CODES == {"scene_modeling": 1, "editing_modules": 2,
                          "unsupported_function": 3, "code_generation": 4}
    assert EXIT_CONFIG == 64
    assert (DEFAULT_FRAMES, DEFAULT_FPS, DEFAULT_SEED) == (48, 24.0, 0)


def test_failure_category_mapping():
    assert report_failure_category(UnknownLabel("x")).category == "scene_modeling"
    assert report_failure_category(NoMatch("x")).category == "editing_modules"
    assert report_failure_category(
        UnsupportedFunction("x")).category == "unsupported_function"
    assert report_failure_category(
        ValidationFailed(["bad"])).category == "code_generation"
    # runtime faults inherit the wrapped error's category and keep the index
    fr = report_failure_category(RuntimeFault(3, UnknownLabel("x")))
    assert fr.category == "scene_modeling"
    assert fr.statement_index == 3
    # anything else folds into editing_modules
    assert report_failure_category(KeyError("x")).category == "editing_modules"


def test_run_config_validation(tmp_path):
    ok = RunConfig(bundle="b", out="o", instruction="hi")
    ok.validate()
    with pytest.raises(ValueError):
        RunConfig(bundle="b", out="o").validate()  # neither source
    with pytest.raises(ValueError):
        RunConfig(bundle="b", out="o", instruction="x", program="p").validate()
    with pytest.raises(ValueError):
        RunConfig(bundle="b", out="o", instruction="x", frames=0).validate()
    with pytest.raises(ValueError):
        RunConfig(bundle="b", out="o", instruction="x", camera="dolly").validate()


def test_orbit_cameras_circle(table_bundle):
    bundle, _, _ = table_bundle
    cams = orbit_cameras(bundle, 8)
    assert len(cams) == 8
    centroid = bundle.mesh.vertices.mean(axis=0)
    radii = [np.linalg.norm(c.position[:2] - centroid[:2]) for c in cams]
    assert np.allclose(radii, radii[0], atol=1e-9)
    heights = [c.position[2] for c in cams]
    assert np.allclose(heights, heights[0], atol=1e-9)
    # every camera looks at the centroid
    for c in cams:
        fwd = c.world_from_camera.rotation[:, 2]
        to_c = centroid - c.position
        to_c /= np.linalg.norm(to_c)
        assert np.allclose(fwd, to_c, atol=1e-9)
    assert cams[0].width == bundle.cameras[0].width


# --- exit codes by fault injection -------------------------------------------------


def test_exit_config_for_bad_arguments(tmp_path, capsys):
    assert main([]) == EXIT_CONFIG  # missing required args
    assert main(["--bundle", "b", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--bundle", "b", "--out", str(tmp_path), "--instruction", "x",
                 "--program", "p"]) == EXIT_CONFIG
    assert main(["--bundle", "b", "--out", str(tmp_path), "--instruction", "x",
                 "--frames", "0"]) == EXIT_CONFIG
    capsys.readouterr()


def test_exit_scene_modeling_for_missing_bundle(tmp_path, capsys):
    out = str(tmp_path / "out")
    code = main(["--bundle", str(tmp_path / "nonexistent"), "--out", out,
                 "--instruction", "x", "--offline"])
    assert code == EXIT_CODES["scene_modeling"]
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["status"] == "failed"
    assert report["category"] == "scene_modeling"
    capsys.readouterr()


def test_exit_editing_modules_for_missing_asset(table_bundle, tmp_path, capsys):
    _, root, _ = table_bundle
    prog = tmp_path / "prog.txt"
    prog.write_text('b = retrieve_asset(scene, "basketball")\n'
                    'insert_object(scene, b)\n')
    out = str(tmp_path / "out")
    # no --assets: the empty catalog cannot match, NoMatch -> editing_modules
    code = main(["--bundle", root, "--out", out, "--program", str(prog)])
    assert code == EXIT_CODES["editing_modules"]
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["category"] == "editing_modules"
    assert report["statement_index"] == 0
    capsys.readouterr()


def test_exit_unsupported_function(table_bundle, asset_catalog_dir, tmp_path,
                                   capsys):
    _, root, _ = table_bundle
    prog = tmp_path / "prog.txt"
    prog.write_text('b = retrieve_asset(scene, "basketball", false, true)\n')
    out = str(tmp_path / "out")
    code = main(["--bundle", root, "--out", out, "--program", str(prog),
                 "--assets", asset_catalog_dir])
    assert code == EXIT_CODES["unsupported_function"]
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["category"] == "unsupported_function"
    capsys.readouterr()


def test_exit_code_generation_for_bad_program(table_bundle, tmp_path, capsys):
    _, root, _ = table_bundle
    prog = tmp_path / "prog.txt"
    prog.write_text("x = = 1\n")
    out = str(tmp_path / "out")
    code = main(["--bundle", root, "--out", out, "--program", str(prog)])
    assert code == EXIT_CODES["code_generation"]

    prog.write_text("x = summon(scene)\n")
    code = main(["--bundle", root, "--out", str(tmp_path / "out2"),
                 "--program", str(prog)])
    assert code == EXIT_CODES["code_generation"]

    # offline stub with an instruction outside the corpus
    code = main(["--bundle", root, "--out", str(tmp_path / "out3"),
                 "--instruction", "Paint the ceiling plaid.", "--offline"])
    assert code == EXIT_CODES["code_generation"]
    capsys.readouterr()


# --- success path -------------------------------------------------------------------


def test_pipeline_success_offline(table_bundle, asset_catalog_dir, tmp_path,
                                  capsys):
    _, root, _ = table_bundle
    out = str(tmp_path / "out")
    code = main(["--bundle", root, "--out", out,
                 "--instruction", "Put a basketball on the table.",
                 "--offline", "--assets", asset_catalog_dir,
                 "--frames", "2", "--spp", "2", "--seed", "5"])
    assert code == 0
    report = json.load(open(os.path.join(out, "report.json")))
    assert report["status"] == "ok"
    assert report["inserted_objects"] == ["basketball_1", "table_1"]
    assert report["seed"] == 5
    frames_dir = os.path.join(out, "frames")
    assert sorted(os.listdir(frames_dir)) == ["0000.png", "0001.png",
                                              "manifest.json"]
    from PIL import Image
    img = np.asarray(Image.open(os.path.join(frames_dir, "0000.png")))
    assert img.shape == (48, 48, 3)
    assert os.path.exists(os.path.join(out, "timeline.txt"))
    # generation transcript saved alongside the outputs
    assert os.path.exists(os.path.join(out, "run", "attempt_1.txt"))
    capsys.readouterr()
