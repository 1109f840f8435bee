import json

import numpy as np
import pytest

from conftest import scene_spec_path
from mvgcn import cli
from mvgcn._binio import read_raster
from mvgcn.evidence import read_uncertainty
from mvgcn.features import read_features
from mvgcn.graph import read_segmentation


def run(*argv):
    return cli.run([str(a) for a in argv])


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "s.psar"
    assert run("synth", "--spec", scene_spec_path("three_class"), "--out", p) == 0
    return p


def test_fuse_demo(tmp_path, capsys):
    (tmp_path / "a.csv").write_text("4,1,1\n")
    (tmp_path / "b.csv").write_text("1,4,1\n")
    assert run("fuse-demo", "--e1", tmp_path / "a.csv", "--e2", tmp_path / "b.csv") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "b0,b1,b2,u,conflict"
    vals = [float(x) for x in lines[1].split(",")]
    assert np.allclose(vals, [19 / 54, 19 / 54, 7 / 54, 9 / 54, 1 / 3], atol=1e-12, rtol=0)


def test_missing_input_exit_2(tmp_path, capsys):
    assert run("segment", "--scene", tmp_path / "nope.psar", "--out", tmp_path / "x") == 2
    assert "nope.psar" in capsys.readouterr().err


def test_bad_arguments_exit_2(capsys):
    assert run("train") == 2
    assert run("frobnicate") == 2


def test_format_error_exit_3(tmp_path):
    bad = tmp_path / "bad.psar"
    bad.write_bytes(b"PSAR\x01\x00garbage")
    assert run("features", "--scene", bad, "--out", tmp_path / "f") == 3


def test_divergence_exit_4(scene_file, tmp_path):
    assert run("train", "--scene", scene_file, "--out", tmp_path / "m", "--lr", "1e12", "--epochs", "3") == 4


def test_config_unknown_key_rejected(scene_file, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "learning_rate": 3}))
    assert run("train", "--scene", scene_file, "--out", tmp_path / "m", "--config", cfg) == 2


def test_flags_override_config(scene_file, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 2, "seed": 5}))
    log = tmp_path / "log.csv"
    assert run("train", "--scene", scene_file, "--out", tmp_path / "m", "--config", cfg,
               "--epochs", "3", "--log", log) == 0
    assert len(log.read_text().strip().splitlines()) == 1 + 3
    from mvgcn.gcn import read_checkpoint
    _, meta, _ = read_checkpoint(tmp_path / "m")
    assert meta["config"]["seed"] == 5 and meta["config"]["epochs"] == 3


def test_help_lists_defaults(capsys):
    assert run("train", "--help") == 0
    out = capsys.readouterr().out
    for flag in ("--lr", "--epochs", "--delta", "--q", "--seed", "--threads", "--views"):
        assert flag in out
    assert "default: 0.0001" in out and "default: 300" in out


def test_pipeline_end_to_end(scene_file, tmp_path, capsys):
    t = tmp_path
    assert run("features", "--scene", scene_file, "--out", t / "f.pfea") == 0
    assert read_features(t / "f.pfea").shape == (64, 64, 57)
    assert run("segment", "--scene", scene_file, "--out", t / "s.pseg") == 0
    assert read_segmentation(t / "s.pseg").count > 10
    assert run("train", "--scene", scene_file, "--out", t / "m.ckpt", "--epochs", "40", "--log", t / "l.csv") == 0
    assert run("predict", "--scene", scene_file, "--checkpoint", t / "m.ckpt",
               "--labels-out", t / "p.plab", "--uncertainty-out", t / "p.punc", "--pgm", t / "p.pgm") == 0
    labels, _ = read_raster(t / "p.plab", b"PLAB", "<u2")
    u = read_uncertainty(t / "p.punc")
    assert labels.shape == u.shape == (64, 64) and labels.max() < 3
    assert np.all((u > 0) & (u <= 1))
    capsys.readouterr()
    assert run("evaluate", "--scene", scene_file, "--checkpoint", t / "m.ckpt", "--out", t / "r.txt") == 0
    report = dict(line.split(" = ") for line in (t / "r.txt").read_text().splitlines())
    assert 0 <= float(report["oa"]) <= 1 and "kappa" in report
    assert capsys.readouterr().out == (t / "r.txt").read_text()


def test_subcommands_idempotent(scene_file, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        assert run("synth", "--spec", scene_spec_path("three_class_hard"), "--out", d / "s.psar", "--seed", "3") == 0
        assert run("features", "--scene", scene_file, "--out", d / "f.pfea") == 0
        assert run("segment", "--scene", scene_file, "--out", d / "g.pseg") == 0
        outs.append([(d / n).read_bytes() for n in ("s.psar", "f.pfea", "g.pseg")])
    assert outs[0] == outs[1]
