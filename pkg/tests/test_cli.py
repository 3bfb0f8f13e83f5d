import json
import os

import numpy as np
import pytest

from energyplan import cli, diffusion, nnkit, pipeline

SMALL = ["--set", "planner.n_anchors=4", "--set", "planner.width=8", "--set", "planner.head_hidden=4",
         "--set", "planner.refine_hidden=8", "--set", "planner.epochs=2"]


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("generate", "--count", 6, "--seed", 3, "--out", root / "scen") == 0
    assert run("train", "--scenario-dir", root / "scen", "--out", root / "ckpt", *SMALL) == 0
    return root


def test_generate_writes_index(workspace):
    index = json.loads((workspace / "scen" / "index.json").read_text())
    assert index["count"] == 6 and len(index["scenes"]) == 6
    for name in index["scenes"]:
        assert (workspace / "scen" / name).exists()


def test_generate_zero_scenes(tmp_path):
    assert run("generate", "--count", 0, "--out", tmp_path / "empty") == 0
    index = json.loads((tmp_path / "empty" / "index.json").read_text())
    assert index["count"] == 0 and index["scenes"] == []


def test_train_outputs(workspace):
    ck = workspace / "ckpt"
    for name in ("planner.nnkw", "anchors.json", "config.json", "manifest.txt", "losses.csv", "train_state.bin"):
        assert (ck / name).exists(), name
    man = nnkit.read_manifest(ck / "manifest.txt")
    assert man["seed"] == "0" and json.loads(man["N"]) == 4 and json.loads(man["T"]) == 50
    assert (ck / "losses.csv").read_text().splitlines()[0] == "epoch,L_plan,L_anchor"


def test_zero_epochs_checkpoint_equals_initialisation(workspace, tmp_path):
    assert run("train", "--scenario-dir", workspace / "scen", "--out", tmp_path / "z", *SMALL, "--epochs", 0) == 0
    config = pipeline.load_config(tmp_path / "z" / "config.json")
    scenes = pipeline.load_scenarios(workspace / "scen")
    fresh = diffusion.build_planner(diffusion.augment_scenes(scenes, config.planner), config.planner)
    saved = nnkit.load_weights(tmp_path / "z" / "planner.nnkw")
    assert all(np.array_equal(a, np.asarray(p, dtype="<f4").astype(float)) for a, p in zip(saved, fresh.params()))


def test_resume_matches_uninterrupted(workspace, tmp_path):
    scen = workspace / "scen"
    assert run("train", "--scenario-dir", scen, "--out", tmp_path / "r", *SMALL, "--stop-after", 1) == 0
    assert run("train", "--scenario-dir", scen, "--out", tmp_path / "r", *SMALL, "--resume") == 0
    for name in ("planner.nnkw", "train_state.bin", "losses.csv"):
        assert (tmp_path / "r" / name).read_bytes() == (workspace / "ckpt" / name).read_bytes(), name


def test_plan_eval_and_eval(workspace, tmp_path):
    out = tmp_path / "pe"
    assert run("plan-eval", "--scenario-dir", workspace / "scen", "--checkpoint", workspace / "ckpt",
               "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["scenes"]) == 6
    assert len(list((out / "renders").glob("*.ppm"))) == 6
    assert run("eval", "--scenario-dir", workspace / "scen", "--candidates", out / "candidates",
               "--out", tmp_path / "ev") == 0
    a = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert a["scenes"] == report["scenes"] and a["aggregate"] == report["aggregate"]


def test_parallel_plan_matches_serial(workspace, tmp_path):
    args = ["plan", "--scenario-dir", workspace / "scen", "--checkpoint", workspace / "ckpt"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b", "--jobs", 2) == 0
    a = sorted(os.listdir(tmp_path / "a" / "candidates"))
    assert a == sorted(os.listdir(tmp_path / "b" / "candidates"))
    for name in a:
        assert (tmp_path / "a" / "candidates" / name).read_bytes() == (tmp_path / "b" / "candidates" / name).read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(workspace, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        run("frobnicate")
    assert e.value.code == cli.EXIT_USAGE
    assert run("generate", "--count", -1, "--out", tmp_path / "x") == cli.EXIT_USAGE
    assert run("generate", "--set", "nonsense", "--out", tmp_path / "x") == cli.EXIT_USAGE
    assert run("plan", "--scenario-dir", workspace / "scen", "--checkpoint", tmp_path / "missing",
               "--out", tmp_path / "p") == cli.EXIT_DATA
    assert run("train", "--scenario-dir", tmp_path / "nowhere", "--out", tmp_path / "t") == cli.EXIT_DATA
    assert run("generate", "--set", "planner.bogus=1", "--out", tmp_path / "x") == cli.EXIT_DATA
    assert run("train", "--scenario-dir", workspace / "scen", "--out", tmp_path / "d", *SMALL,
               "--set", "planner.lr=1e308") == cli.EXIT_DIVERGED
    assert "last finite loss" in capsys.readouterr().err


def test_config_roundtrip(tmp_path):
    config = pipeline.set_option(pipeline.RunConfig(), "planner.lr", "0.003")
    (tmp_path / "c.json").write_text(config.dumps())
    back = pipeline.load_config(tmp_path / "c.json")
    assert back == config and back.planner.lr == 0.003
    assert back.scenario.branch_count == (2, 3)
