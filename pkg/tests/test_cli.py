import hashlib
import json
import os

import pytest

from moescope.cli import main

TINY = {"model": {"num_experts": 4, "top_k": 2, "base_width": 16, "shared_widths": [4, 6], "gate_width": 4,
                  "proj_dim": 8},
        "train": {"epochs": 3, "batch_size": 32, "lr": 1e-3, "keep_top": 3}}


def digest(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    corpus = root / "c.moec"
    assert run("gen", "--n", 160, "--size", 16, "--dims", 6, "--seed", 11, "--out", corpus) == 0
    for seed in (1, 2):
        assert run("train", "--config", cfg, "--corpus", corpus, "--seed", seed, "--out", root / f"run{seed}") == 0
    return root


def test_gen_is_reproducible(tmp_path, workspace):
    a, b = tmp_path / "a.moec", tmp_path / "b.moec"
    for p in (a, b):
        assert run("gen", "--n", 160, "--size", 16, "--dims", 6, "--seed", 11, "--out", p) == 0
    assert digest(a) == digest(b) == digest(workspace / "c.moec")
    manifest = json.loads((tmp_path / "a.moec.manifest.json").read_text())
    assert manifest["artifacts"] == {"a.moec": digest(a)}
    assert run("gen", "--n", 160, "--size", 16, "--dims", 6, "--seed", 12, "--out", b) == 0
    assert digest(a) != digest(b)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MOESCOPE_SEED", "11")
    assert run("gen", "--n", 40, "--size", 16, "--dims", 3, "--out", tmp_path / "e.moec") == 0
    monkeypatch.delenv("MOESCOPE_SEED")
    assert run("gen", "--n", 40, "--size", 16, "--dims", 3, "--seed", 11, "--out", tmp_path / "f.moec") == 0
    assert digest(tmp_path / "e.moec") == digest(tmp_path / "f.moec")


def test_invalid_dims_is_a_validation_error(tmp_path, capsys):
    assert run("gen", "--dims", 1, "--out", tmp_path / "x.moec") == 2
    err = capsys.readouterr().err
    diag = json.loads(err.strip().splitlines()[-1])
    assert diag["exit_code"] == 2 and "dims" in diag["message"]
    assert not (tmp_path / "x.moec").exists()


def test_unknown_config_key(tmp_path, workspace):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochz": 3}}))
    assert run("train", "--config", bad, "--corpus", workspace / "c.moec", "--out", tmp_path / "r") == 2


def test_missing_corpus_file(tmp_path):
    assert run("train", "--corpus", tmp_path / "nope.moec", "--out", tmp_path / "r") == 2


def test_corrupt_corpus(tmp_path):
    p = tmp_path / "junk.moec"
    p.write_bytes(b"not a corpus at all")
    assert run("probe", "--corpus", p, "--checkpoint", p, "--out", tmp_path / "o") == 2


def test_train_writes_top_checkpoints_and_manifest(workspace):
    out = workspace / "run1"
    ckpts = sorted(p for p in os.listdir(out) if p.endswith(".ckpt"))
    assert len(ckpts) == 4 and "last.ckpt" in ckpts
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train"
    listed = {os.path.basename(a) for a in manifest["artifacts"]}
    assert set(ckpts) <= listed
    resolved = json.loads((out / "run_config.json").read_text())
    assert resolved["seed"] == 1 and resolved["model"]["input_size"] == 16


def test_resume_matches_uninterrupted(tmp_path, workspace):
    cfg = workspace / "tiny.json"
    corpus = workspace / "c.moec"
    # continue the 3-epoch run from its first-epoch checkpoint
    assert run("train", "--config", cfg, "--corpus", corpus, "--seed", 1, "--out", tmp_path / "a",
               "--resume", workspace / "run1" / "epoch000.ckpt") == 0
    for name in sorted(os.listdir(workspace / "run1")):
        if name.endswith(".ckpt"):
            assert digest(tmp_path / "a" / name) == digest(workspace / "run1" / name), name


def test_probe_outputs(tmp_path, workspace, capsys):
    out = tmp_path / "probe"
    assert run("probe", "--corpus", workspace / "c.moec", "--checkpoint", workspace / "run1" / "last.ckpt",
               "--out", out, "--folds", 3, "--mei-n", 4) == 0
    summary = json.loads((out / "summary.json").read_text())
    E = TINY["model"]["num_experts"]
    for e in range(E):
        assert (out / f"gating_vs_readout_{e}.csv").exists()
        assert (out / f"separability_{e}.csv").exists()
    assert 0.0 <= summary["topk_agreement"] <= 1.0
    assert summary["chance_agreement"] == pytest.approx(1 / 6)
    lines = (out / "lasso.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * E
    assert "agreement" in capsys.readouterr().out


def test_stability_outputs(tmp_path, workspace):
    out = tmp_path / "stab"
    assert run("stability", "--corpus", workspace / "c.moec", "--models", workspace / "run*" / "last.ckpt",
               "--rsa-images", 60, "--mei-n", 3, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["items"]) == 8
    rows = (out / "second_order.csv").read_text().splitlines()
    assert len(rows) == 9 and len(rows[0].split(",")) == 9
    assert summary["chosen_clusters"] >= 1


def test_stability_needs_two_models(tmp_path, workspace):
    assert run("stability", "--corpus", workspace / "c.moec", "--models", workspace / "run1" / "last.ckpt",
               "--out", tmp_path / "s") == 2


def test_report(tmp_path, workspace):
    out = tmp_path / "rep"
    assert run("report", "--train-dir", workspace / "run1", "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["train"]["epochs"] == 3
    assert (out / "val_total.svg").exists()
    assert run("report", "--out", out) == 2
