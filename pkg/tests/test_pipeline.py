import json

import numpy as np
import pandas as pd
import pytest

from app import main
from data_sources.fixtures import flat_grid, hemisphere, rotated, spherical_cap, synthetic_face
from geometry.registration import RigidTransform, apply_transform
from imaging.mci import read_mci
from ingestion.readers import load_mesh, save_mesh
from pipeline.config import build_config
from pipeline.runner import compare_mesh, flatten_file


def _write(tmp_path, name, mesh):
    return save_mesh(mesh, tmp_path / "in" / name)


def test_flatten_cap(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=8))
    out = tmp_path / "out"
    assert main(["flatten", "--input", str(src), "--out", str(out)]) == 0

    image = read_mci(out / "cap.mci")
    assert image.data.shape == (9, 182, 182)
    assert image.mask.any()
    flow = json.loads((out / "cap.flow.json").read_text())
    assert flow["converged"] is True
    stats = json.loads((out / "cap.stats.json").read_text())
    assert stats["distortion"]["mean"] >= 1.0
    assert stats["flip_count"] == 0


def test_orthographic_without_alignment_has_flat_cf(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=6))
    out = tmp_path / "out"
    args = ["flatten", "--input", str(src), "--out", str(out), "--projection", "orthographic", "--no-align"]
    assert main(args) == 0
    image = read_mci(out / "cap.mci")
    assert np.all(image.channel("CF")[image.mask] == 0.0)
    assert not (out / "cap.flow.json").exists()


def test_orthographic_needs_reference_or_no_align(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=3))
    assert main(["flatten", "--input", str(src), "--projection", "orthographic"]) == 2


def test_no_inputs_is_a_usage_error(tmp_path, capsys):
    assert main(["flatten", "--input", str(tmp_path / "nothing" / "*.obj"), "--out", str(tmp_path)]) == 2
    assert "no inputs matched" in capsys.readouterr().err


def test_bad_input_does_not_abort_the_batch(tmp_path, capsys):
    _write(tmp_path, "good.obj", spherical_cap(rings=4))
    (tmp_path / "in" / "broken.obj").write_text("v 0 0 0\nf 1 2 3\n")
    out = tmp_path / "out"
    assert main(["flatten", "--input", str(tmp_path / "in" / "*.obj"), "--out", str(out)]) == 1
    assert (out / "good.mci").exists()
    assert not (out / "broken.mci").exists()
    assert "1 failed" in capsys.readouterr().out


def test_iteration_budget_writes_partial_report(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=6))
    cfg = build_config(inputs=[str(src)], out=tmp_path / "out", max_iters=0)
    outcome = flatten_file(src, cfg)
    assert not outcome.ok
    flow = json.loads((tmp_path / "out" / "cap.flow.json").read_text())
    assert flow["converged"] is False
    assert flow["iterations"] == 0


def test_runs_are_reproducible_and_parallel_safe(tmp_path):
    for name, rings in (("a.obj", 4), ("b.obj", 5)):
        _write(tmp_path, name, spherical_cap(rings=rings))
    pattern = str(tmp_path / "in" / "*.obj")
    for out, jobs in (("serial", "1"), ("again", "1"), ("parallel", "2")):
        assert main(["flatten", "--input", pattern, "--out", str(tmp_path / out), "--jobs", jobs]) == 0
    for name in ("a.mci", "b.mci"):
        reference = (tmp_path / "serial" / name).read_bytes()
        assert (tmp_path / "again" / name).read_bytes() == reference
        assert (tmp_path / "parallel" / name).read_bytes() == reference


def test_depth_input_and_vertex_table(tmp_path):
    path = tmp_path / "in" / "bump.csv"
    path.parent.mkdir(parents=True)
    x, y = np.meshgrid(np.arange(12.0), np.arange(10.0))
    depth = 3.0 * np.exp(-((x - 5.5) ** 2 + (y - 4.5) ** 2) / 8.0)
    pd.DataFrame(depth).to_csv(path, header=False, index=False)
    out = tmp_path / "out"
    args = ["flatten", "--input", str(path), "--kind", "depth", "--out", str(out), "--size", "64x48"]
    assert main(args + ["--export-vertex-csv"]) == 0
    assert read_mci(out / "bump.mci").data.shape == (9, 48, 64)
    table = pd.read_csv(out / "bump.vertices.csv", index_col="vertex_index")
    assert list(table.columns) == ["R", "G", "B", "Nx", "Ny", "Nz", "K", "CF", "D"]
    assert len(table) == 120


def test_compare_flat_mesh():
    report = compare_mesh(flat_grid(6), build_config())
    assert report["conformal"]["mean"] == pytest.approx(1.0)
    assert report["orthographic"]["mean"] == pytest.approx(1.0)
    assert report["ratio"] == pytest.approx(1.0)


def test_compare_hemisphere_command(tmp_path):
    src = _write(tmp_path, "hemi.obj", hemisphere(rings=10))
    out = tmp_path / "out"
    assert main(["compare", "--input", str(src), "--out", str(out)]) == 0
    report = json.loads((out / "hemi.compare.json").read_text())
    assert report["conformal"]["mean"] < report["orthographic"]["mean"]
    assert report["ratio"] < 1.0


def test_compare_isolates_bad_inputs_and_prints_one_line(tmp_path, capsys):
    folder = tmp_path / "in"
    folder.mkdir()
    pd.DataFrame([[1.0, 2.0, 3.0]]).to_csv(folder / "a_row.csv", header=False, index=False)
    x, y = np.meshgrid(np.arange(8.0), np.arange(7.0))
    pd.DataFrame(np.exp(-((x - 3.5) ** 2 + (y - 3.0) ** 2) / 6.0)).to_csv(folder / "ok.csv", header=False, index=False)
    out = tmp_path / "out"
    args = ["compare", "--kind", "depth", "--input", str(folder / "*.csv"), "--out", str(out)]
    assert main(args) == 1
    assert (out / "ok.compare.json").exists()
    assert not (out / "a_row.compare.json").exists()
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed == [f"compare: 2 inputs, 1 ok, 1 failed -> {out}"]


def test_flatten_exports_embedding_and_quantities(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=4))
    out = tmp_path / "out"
    args = ["flatten", "--input", str(src), "--out", str(out), "--export-embedding", "--export-quantities"]
    assert main(args) == 0
    flat = load_mesh(out / "cap.flat.obj")
    assert flat.n_vertices == spherical_cap(rings=4).n_vertices
    assert np.all(flat.vertices[:, 2] == 0.0)
    curvature = pd.read_csv(out / "cap.curvature.csv")
    assert list(curvature.columns) == ["vertex_index", "value"]
    normals = pd.read_csv(out / "cap.normals.csv")
    assert list(normals.columns) == ["vertex_index", "x", "y", "z"]
    factors = pd.read_csv(out / "cap.conformal_factors.csv")
    assert len(factors) == flat.n_vertices
    assert (factors["value"] > 0).all()


def test_compare_profile_reports_flips():
    report = compare_mesh(rotated(synthetic_face(spacing=5.0), 90.0), build_config())
    ortho = report["orthographic"]
    assert ortho["flipped"] + ortho["degenerate"] > 0
    assert report["conformal"]["flipped"] == 0


def test_compare_images_and_export(tmp_path):
    src = _write(tmp_path, "cap.obj", spherical_cap(rings=5))
    out = tmp_path / "out"
    assert main(["flatten", "--input", str(src), "--out", str(out)]) == 0
    mci = str(out / "cap.mci")
    assert main(["compare", "--images", mci, mci, "--out", str(out)]) == 0
    report = json.loads((out / "cap_vs_cap.compare.json").read_text())
    assert report["mask_iou"] == 1.0
    assert all(v == 0.0 for v in report["mean_abs_diff"].values())

    assert main(["export-pgm", "--input", mci, "--out", str(out / "pgm")]) == 0
    assert len(list((out / "pgm").glob("*.pgm"))) == 9
    assert (out / "pgm" / "cap.rgb.ppm").exists()
    assert main(["export-pgm", "--input", mci, "--channel", "7", "--out", str(out / "one")]) == 0
    assert (out / "one" / "cap.CF.pgm").exists()
    assert main(["export-pgm", "--input", mci, "--channel", "Q", "--out", str(out / "none")]) == 2


def test_stats_summary(tmp_path):
    for name, rings in (("a.obj", 4), ("b.obj", 5)):
        _write(tmp_path, name, spherical_cap(rings=rings))
    out = tmp_path / "out"
    assert main(["flatten", "--input", str(tmp_path / "in" / "*.obj"), "--out", str(out)]) == 0
    assert main(["stats", "--out", str(out), "--pdf"]) == 0
    summary = pd.read_csv(out / "summary.csv")
    assert summary["input"].tolist() == ["a.obj", "b.obj"]
    assert "distortion.mean" in summary.columns
    assert (out / "summary.pdf").read_bytes().startswith(b"%PDF")


def test_icp_command(tmp_path):
    reference = spherical_cap(rings=8)
    ref = _write(tmp_path, "ref.obj", reference)
    src = _write(tmp_path, "moved.obj", apply_transform(reference, RigidTransform(np.eye(3), (0.3, -0.2, 0.1))))
    out = tmp_path / "out"
    aligned = tmp_path / "aligned.ply"
    args = ["icp", "--input", str(src), "--reference", str(ref), "--out", str(out), "--aligned-mesh", str(aligned)]
    assert main(args) == 0
    result = json.loads((out / "moved.icp.json").read_text())
    assert result["rms"] == pytest.approx(0.0, abs=1e-9)
    assert aligned.exists()


def test_fixtures_command(tmp_path):
    assert main(["fixtures", "--out", str(tmp_path / "fx"), "--format", "ply"]) == 0
    assert (tmp_path / "fx" / "cap.ply").exists()
    assert (tmp_path / "fx" / "face_depth.pgm").exists()
    out = tmp_path / "out"
    assert main(["flatten", "--input", str(tmp_path / "fx" / "flat_5x5.ply"), "--out", str(out)]) == 0
    assert json.loads((out / "flat_5x5.flow.json").read_text())["iterations"] <= 1
