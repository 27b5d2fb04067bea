import numpy as np
import pytest
from click.testing import CliRunner

from carimesh.cli import main


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("corpus")
    result = runner.invoke(main, [
        "synth", "--out", str(out), "--count", "4", "--rank", "2",
        "--subdivisions", "2",
    ])
    assert result.exit_code == 0, result.output
    return out


@pytest.fixture(scope="module")
def base_config(tmp_path_factory, corpus_dir):
    cfg = tmp_path_factory.mktemp("cfg") / "pipeline.yaml"
    cfg.write_text(
        f"template: {corpus_dir / 'template.obj'}\n"
        f"landmark_ids: {corpus_dir / 'landmark_ids.txt'}\n"
        f"basis: {corpus_dir / 'basis.bin'}\n"
        "resolution: 32\n"
        "image_size: 64\n"
        "outer_rounds: 1\n"
        "nicp:\n"
        "  alphas: [20.0, 5.0]\n"
        "  inner_iterations: 3\n"
    )
    return cfg


def test_synth_outputs(corpus_dir):
    assert (corpus_dir / "template.obj").exists()
    assert (corpus_dir / "landmark_ids.txt").exists()
    assert (corpus_dir / "region_masks.txt").exists()
    assert (corpus_dir / "basis.bin").exists()
    heads = sorted((corpus_dir / "heads").glob("head_*.obj"))
    assert len(heads) == 4
    assert (corpus_dir / "heads" / "head_000.landmarks3d.txt").exists()
    weights = (corpus_dir / "blend_weights.csv").read_text().strip().splitlines()
    assert len(weights) == 5  # header + 4 rows


def test_reconstruct_pipeline(tmp_path, runner, corpus_dir, base_config):
    out = tmp_path / "recon"
    result = runner.invoke(main, [
        "reconstruct", "--config", str(base_config), "--out", str(out),
        "--target", str(corpus_dir / "heads" / "head_001.obj"),
        "--no-refine",
    ])
    assert result.exit_code == 0, result.output
    for name in ("m_pifu.obj", "occupancy.grid", "rig.txt", "landmarks2d.txt",
                 "landmarks3d.txt", "m_nicp.obj", "m_pca.obj",
                 "diagnostics.csv"):
        assert (out / name).exists(), name


def test_reconstruct_deterministic(tmp_path, runner, corpus_dir, base_config):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        result = runner.invoke(main, [
            "reconstruct", "--config", str(base_config), "--out", str(out),
            "--target", str(corpus_dir / "heads" / "head_002.obj"),
            "--no-refine", "--seed", "5",
        ])
        assert result.exit_code == 0, result.output
        outs.append(out)
    for f in sorted(outs[0].iterdir()):
        assert f.read_bytes() == (outs[1] / f.name).read_bytes(), f.name


def test_register_command(tmp_path, runner, corpus_dir, base_config):
    out = tmp_path / "reg"
    result = runner.invoke(main, [
        "register", "--config", str(base_config), "--out", str(out),
        "--target", str(corpus_dir / "heads" / "head_000.obj"),
        "--landmarks", str(corpus_dir / "heads" / "head_000.landmarks3d.txt"),
    ])
    assert result.exit_code == 0, result.output
    assert (out / "m_nicp.obj").exists()
    assert (out / "m_pca.obj").exists()


def test_build_basis_command(tmp_path, runner, corpus_dir):
    out = tmp_path / "basis"
    result = runner.invoke(main, [
        "build-basis", "--out", str(out), str(corpus_dir / "heads"), "-d", "2",
    ])
    assert result.exit_code == 0, result.output
    assert (out / "basis.bin").exists()


def test_detect_landmarks_stub(tmp_path, runner, corpus_dir, base_config):
    out = tmp_path / "lm"
    result = runner.invoke(main, [
        "detect-landmarks", "--config", str(base_config), "--out", str(out),
        "--mesh", str(corpus_dir / "heads" / "head_003.obj"),
        "--stub", "--no-refine",
    ])
    assert result.exit_code == 0, result.output
    assert (out / "landmarks3d.txt").exists()


def test_eval_command(tmp_path, runner, corpus_dir, base_config):
    out = tmp_path / "eval"
    result = runner.invoke(main, [
        "eval", "--config", str(base_config), "--out", str(out),
        "--pred", str(corpus_dir / "heads" / "head_000.obj"),
        "--gt", str(corpus_dir / "heads" / "head_000.obj"),
        "--masks", str(corpus_dir / "region_masks.txt"),
    ])
    assert result.exit_code == 0, result.output
    report = (out / "report.csv").read_text()
    assert "p2s_head" in report and "p2s_face" in report


def test_variance_command(tmp_path, runner, corpus_dir):
    out = tmp_path / "var"
    result = runner.invoke(main, [
        "variance", "--out", str(out), str(corpus_dir / "heads"),
        "--masks", str(corpus_dir / "region_masks.txt"),
    ])
    assert result.exit_code == 0, result.output


def test_interpolate_command(tmp_path, runner, corpus_dir):
    out = tmp_path / "interp"
    result = runner.invoke(main, [
        "interpolate", "--out", str(out),
        str(corpus_dir / "heads" / "head_000.obj"),
        str(corpus_dir / "heads" / "head_001.obj"),
        "-t", "0.5", "-t", "1.5",
    ])
    assert result.exit_code == 0, result.output
    written = list(out.glob("*.obj"))
    assert len(written) == 2


def test_missing_config_field_reports_stage(tmp_path, runner, corpus_dir):
    out = tmp_path / "err"
    result = runner.invoke(main, [
        "register", "--out", str(out),
        "--target", str(corpus_dir / "heads" / "head_000.obj"),
        "--landmarks", str(corpus_dir / "heads" / "head_000.landmarks3d.txt"),
    ])
    assert result.exit_code != 0
    assert "[" in result.output and "required" in result.output


def test_bad_target_path_fails_cleanly(tmp_path, runner, base_config):
    out = tmp_path / "err2"
    result = runner.invoke(main, [
        "reconstruct", "--config", str(base_config), "--out", str(out),
        "--target", "/nonexistent/mesh.obj",
    ])
    assert result.exit_code != 0
