import os

import numpy as np
import pytest

from sonomesh.cli import main
from sonomesh.mesh_io import read_ply, write_ply, Mesh
from sonomesh.volume_io import read_volume


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main([
        "synth", "--kind", "pipe", "--out", str(out),
        "--volumes", "3", "--dim", "32x32x12", "--seed", "1",
    ])
    assert code == 0
    return out


def test_synth_layout(dataset_dir):
    vols = sorted(os.listdir(dataset_dir / "volumes"))
    meshes = sorted(os.listdir(dataset_dir / "meshes"))
    assert [v for v in vols if v.endswith(".mhd")] == ["pipe_001.mhd", "pipe_002.mhd", "pipe_003.mhd"]
    assert meshes == ["pipe_001.ply", "pipe_002.ply", "pipe_003.ply"]
    vol = read_volume(dataset_dir / "volumes" / "pipe_001.mhd")
    assert vol.data.shape == (12, 32, 32)
    with open(dataset_dir / "meshes" / "pipe_001.ply", "rb") as fh:
        mesh = read_ply(fh.read())
    assert len(mesh.vertices) > 100
    assert len(mesh.faces) > 100


def test_synth_deterministic(tmp_path, dataset_dir):
    out = tmp_path / "again"
    assert main(["synth", "--out", str(out), "--volumes", "3", "--dim", "32x32x12", "--seed", "1"]) == 0
    a = (dataset_dir / "volumes" / "pipe_002.raw").read_bytes()
    b = (out / "volumes" / "pipe_002.raw").read_bytes()
    assert a == b


def test_encode_roundtrip(dataset_dir, tmp_path):
    label_path = tmp_path / "label.mhd"
    code = main([
        "encode",
        "--mesh", str(dataset_dir / "meshes" / "pipe_001.ply"),
        "--volume", str(dataset_dir / "volumes" / "pipe_001.mhd"),
        "--mode", "soft", "--radius", "2",
        "--out", str(label_path),
    ])
    assert code == 0
    label = read_volume(label_path)
    assert label.data.shape == (12, 32, 32)
    assert label.data.max() == 65535  # quantized peak of a unit-valued mask


def test_encode_out_of_bounds_warns_but_succeeds(dataset_dir, tmp_path, recwarn):
    far = Mesh(vertices=np.array([[999.0, 999.0, 999.0]]))
    mesh_path = tmp_path / "far.ply"
    mesh_path.write_bytes(write_ply(far))
    code = main([
        "encode", "--mesh", str(mesh_path),
        "--volume", str(dataset_dir / "volumes" / "pipe_001.mhd"),
        "--out", str(tmp_path / "far.mhd"),
    ])
    assert code == 0
    assert any("outside" in str(w.message) for w in recwarn.list)


def test_evaluate_identical_clouds(dataset_dir, capsys):
    ply = str(dataset_dir / "meshes" / "pipe_001.ply")
    code = main(["evaluate", "--pred", ply, "--ref", ply, "--v", "10000", "--seed", "0"])
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out.endswith(", 0")
    assert out.split(", ")[0] == "-"


def test_evaluate_with_labels(dataset_dir, capsys):
    ply = str(dataset_dir / "meshes" / "pipe_001.ply")
    code = main([
        "evaluate", "--pred", ply, "--ref", ply,
        "--volume-id", "4", "--threshold", "0.4",
    ])
    assert code == 0
    assert capsys.readouterr().out.strip() == "4, 0.4, 0"


def test_unknown_flag_exits_one(capsys):
    assert main(["evaluate", "--nope"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_exits_one():
    assert main(["frobnicate"]) == 1


def test_missing_file_exits_one(tmp_path):
    assert main(["evaluate", "--pred", str(tmp_path / "a.ply"), "--ref", str(tmp_path / "b.ply")]) == 1


def test_mesh_from_encoded_label(dataset_dir, tmp_path):
    label_path = tmp_path / "label.mhd"
    main([
        "encode",
        "--mesh", str(dataset_dir / "meshes" / "pipe_002.ply"),
        "--volume", str(dataset_dir / "volumes" / "pipe_002.mhd"),
        "--mode", "soft", "--radius", "2",
        "--out", str(label_path),
    ])
    surf_path = tmp_path / "surf.ply"
    shot_path = tmp_path / "surf.png"
    code = main([
        "mesh", "--prob", str(label_path), "--iso", "0.4",
        "--out", str(surf_path), "--screenshot", str(shot_path),
    ])
    assert code == 0
    with open(surf_path, "rb") as fh:
        surf = read_ply(fh.read())
    assert len(surf.vertices) > 0
    assert shot_path.exists()


@pytest.fixture(scope="module")
def trained_ckpt(dataset_dir, tmp_path_factory):
    work = tmp_path_factory.mktemp("train")
    cfg = work / "run.cfg"
    cfg.write_text(
        "arch = unet\nnf = 2\nmax_epochs = 2\npatience = 2\nlr0 = 0.003\n"
        "scheme = SE2\nen = soft\nradius = 2\n"
        "train_ids = 1\nval_id = 2\ntest_id = 3\n"
        f"data_dir = {dataset_dir}\n"
    )
    ckpt = work / "model.ckpt"
    code = main(["train", "--config", str(cfg), "--out", str(ckpt), "--log", str(work / "t.log")])
    assert code == 0
    assert ckpt.exists()
    return ckpt


def test_train_and_predict(trained_ckpt, dataset_dir, tmp_path):
    cloud_path = tmp_path / "cloud.ply"
    prob_path = tmp_path / "prob.mhd"
    code = main([
        "predict", "--ckpt", str(trained_ckpt),
        "--volume", str(dataset_dir / "volumes" / "pipe_003.mhd"),
        "--agg", "mean", "--threshold", "0.37",
        "--prob-out", str(prob_path),
        "--out", str(cloud_path),
    ])
    assert code == 0
    assert cloud_path.exists()
    assert read_volume(prob_path).data.shape == (12, 32, 32)


def test_predict_spec_mismatch_exits_one(trained_ckpt, tmp_path, capsys):
    big = tmp_path / "big"
    main(["synth", "--out", str(big), "--volumes", "1", "--dim", "48x48x8", "--seed", "3"])
    code = main([
        "predict", "--ckpt", str(trained_ckpt),
        "--volume", str(big / "volumes" / "pipe_001.mhd"),
        "--out", str(tmp_path / "c.ply"),
    ])
    assert code == 1
    assert "mismatch" in capsys.readouterr().err


def test_flags_win_over_config_values(tmp_path):
    from sonomesh.cli import _config_from_file

    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("seed = 5\nnf = 4\n")
    cfg, _ = _config_from_file(cfg_path, {"seed": 9})
    assert cfg.seed == 9
    assert cfg.nf == 4
    cfg, _ = _config_from_file(cfg_path, {"seed": None})
    assert cfg.seed == 5


def test_trial_grid(dataset_dir, tmp_path, capsys):
    grid = tmp_path / "grid.cfg"
    grid.write_text(
        "arch = unet\nnf = 2\nmax_epochs = 1\npatience = 1\nlr0 = 0.003\n"
        "thresholds = 0.3,0.6\n"
        "train_ids = 1\nval_id = 2\ntest_id = 3\n"
        "loss = bce,mse\n"
    )
    out = tmp_path / "report.txt"
    code = main([
        "trial", "--grid", str(grid), "--data", str(dataset_dir),
        "--workdir", str(tmp_path / "work"), "--out", str(out),
    ])
    assert code == 0
    text = out.read_text()
    assert "(val)" in text
    assert (tmp_path / "report.csv").exists()
    printed = capsys.readouterr().out
    assert "LSbce" in printed and "LSmse" in printed
