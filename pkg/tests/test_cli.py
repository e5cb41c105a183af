import filecmp
import os

import numpy as np
import pytest

from planesdf_cd.cli import main
from planesdf_cd.config import PipelineConfig
from planesdf_cd.pipeline import NoPlanesError, detect_changes, write_direction
from planesdf_cd.planesdf import read_pgm
from planesdf_cd.scene_io import PointCloud, load_point_cloud


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    out = {}
    for kind, seed in (("remove", 0), ("unchanged", 1)):
        d = root / f"{kind}{seed}"
        assert main(["gen", "--scenario", kind, "--seed", str(seed), "--out", str(d)]) == 0
        out[kind] = d
    return out


def test_gen_outputs(scenes):
    d = scenes["remove"]
    assert {"source.ply", "target.ply", "gt.ply", "objects.csv"} <= set(os.listdir(d))
    gt = load_point_cloud(str(d / "gt.ply"))
    assert gt.labels is not None and len(gt) > 0


def test_detect_remove_and_eval(scenes, tmp_path, capsys):
    d = scenes["remove"]
    out = tmp_path / "run"
    rc = main(["detect", "--source", str(d / "source.ply"), "--target", str(d / "target.ply"),
               "--out", str(out), "--gt", str(d / "gt.ply")])
    assert rc == 0
    text = (out / "evaluation.txt").read_text()
    assert "missed_objects: 0" in text and "wrong_clusters: 0" in text
    for sub in ("forward", "backward"):
        names = os.listdir(out / sub)
        for tag in ("hc", "cc", "3d"):
            assert any(n.endswith(f"_mask_{tag}.pgm") for n in names)
            assert any(n.endswith(f"_mask_{tag}.csv") for n in names)
        assert "pairings.csv" in names and any(n.endswith("_height.pgm") for n in names)
    changed = load_point_cloud(str(out / "changed_voxels.ply"))
    assert len(changed) > 100 and np.all(changed.colors == [255, 0, 0])
    capsys.readouterr()
    assert main(["eval", "--detected", str(out / "changed_voxels.ply"), "--gt", str(d / "gt.ply"), "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("precision,recall")
    assert lines[1].split(",")[3:5] == ["0", "0"]


def test_identical_inputs_give_nothing(scenes, tmp_path):
    d = scenes["unchanged"]
    out = tmp_path / "same"
    assert main(["detect", "--source", str(d / "source.ply"), "--target", str(d / "source.ply"),
                 "--out", str(out), "--direction", "forward"]) == 0
    assert len(load_point_cloud(str(out / "changed_voxels.ply"))) == 0
    for n in os.listdir(out / "forward"):
        if n.endswith("_mask_3d.pgm"):
            assert not np.any(read_pgm(str(out / "forward" / n)) == 255)


def test_deterministic_artifacts(scenes, tmp_path):
    d = scenes["remove"]
    runs = []
    for k, extra in enumerate(([], ["--set", "workers=2"])):
        out = tmp_path / f"r{k}"
        assert main(["detect", "--source", str(d / "source.ply"), "--target", str(d / "target.ply"),
                     "--out", str(out), "--seed", "0"] + extra) == 0
        runs.append(out)
    for sub in ("forward", "backward"):
        names = sorted(os.listdir(runs[0] / sub))
        assert names == sorted(os.listdir(runs[1] / sub))
        _, mismatch, errors = filecmp.cmpfiles(runs[0] / sub, runs[1] / sub, names, shallow=False)
        assert mismatch == [] and errors == []


def test_missing_input_leaves_nothing(tmp_path, scenes):
    out = tmp_path / "never"
    rc = main(["detect", "--source", str(tmp_path / "nope.ply"),
               "--target", str(scenes["remove"] / "target.ply"), "--out", str(out)])
    assert rc == 2
    assert not out.exists()
    assert not [n for n in os.listdir(tmp_path) if n.startswith(".staging")]


def test_config_error_exit(tmp_path, scenes):
    d = scenes["remove"]
    rc = main(["detect", "--source", str(d / "source.ply"), "--target", str(d / "target.ply"),
               "--out", str(tmp_path / "x"), "--set", "delta_h=abc"])
    assert rc == 3
    assert not (tmp_path / "x").exists()


def test_malformed_input_exit(tmp_path, scenes):
    bad = tmp_path / "bad.ply"
    bad.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                   "property float z\nend_header\n0 0 0\n")
    rc = main(["detect", "--source", str(bad), "--target", str(scenes["remove"] / "target.ply"),
               "--out", str(tmp_path / "y")])
    assert rc == 2


def test_no_planes(tmp_path, capsys):
    pts = np.random.default_rng(0).uniform(0, 1, size=(300, 3))
    with pytest.raises(NoPlanesError):
        detect_changes(PointCloud(pts), PointCloud(pts), PipelineConfig())
    p = tmp_path / "blob.csv"
    p.write_text("".join(f"{x},{y},{z}\n" for x, y, z in pts))
    rc = main(["detect", "--source", str(p), "--target", str(p), "--out", str(tmp_path / "z")])
    assert rc == 2
    assert "no planes" in capsys.readouterr().err


def test_no_pairings_reports_unmatched(tmp_path):
    rng = np.random.default_rng(0)
    floor = np.column_stack([rng.uniform(0, 1, 5000), rng.uniform(0, 1, 5000), np.zeros(5000)])
    raised = floor + [0, 0, 0.5]
    run = detect_changes(PointCloud(floor), PointCloud(raised), PipelineConfig(), "forward")
    assert run.forward.matches.pairings == []
    assert run.forward.matches.unmatched_source == [0]
    write_direction(run.forward, str(tmp_path), PipelineConfig())
    assert (tmp_path / "unmatched.csv").read_text() == "side,plane_id\nsource,0\ntarget,0\n"


def test_bad_direction():
    with pytest.raises(ValueError):
        detect_changes(PointCloud.empty(), PointCloud.empty(), PipelineConfig(), "sideways")
