import json

import pytest

from harfuse.cli import main

SMALL_MODEL = {"stages": 2, "gcn_channels": [8, 8], "temporal_kernel": 3,
               "transformer": {"depth": 1, "model_dim": 8, "heads": 2, "ff_dim": 16}, "fusion_hidden": 8}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.json").write_text(json.dumps({"K": 3, "T": 20, "per_class_count": 3}))
    assert run("gen", "--spec", root / "spec.json", "--out", root / "data", "--quiet") == 0
    config = {
        "version": 1,
        "model": SMALL_MODEL,
        "train": {"target_hz": 10.0, "epochs": 2},
        "data": {"train": "data/train.jsonl", "test": "data/test.jsonl", "catalog": "data/catalog.json"},
        "topology": "data/topology.json",
    }
    (root / "cfg.json").write_text(json.dumps(config))
    for kind in ("pogcn", "transformer"):
        assert run("train", "--config", root / "cfg.json", "--model", kind, "--out", root / kind, "--quiet") == 0
    return root


def write_config(root, name, **changes):
    config = json.loads((root / "cfg.json").read_text())
    config.update(changes)
    (root / name).write_text(json.dumps(config))
    return root / name


def test_gen_files_and_determinism(tmp_path):
    assert run("gen", "--out", tmp_path / "a", "--quiet") == 0
    assert run("gen", "--out", tmp_path / "b", "--quiet") == 0
    names = ["catalog.json", "test.jsonl", "topology.json", "train.jsonl"]
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_gen_rejects_single_class(tmp_path, capsys):
    (tmp_path / "s.json").write_text('{"K": 1}')
    assert run("gen", "--spec", tmp_path / "s.json", "--out", tmp_path / "o") == 2
    assert "K must be" in capsys.readouterr().err


def test_gen_missing_out_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        run("gen")
    assert exc.value.code == 2


def test_gen_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("gen", "--out", blocker / "sub", "--quiet") == 2


def test_gen_other_joint_count(tmp_path):
    (tmp_path / "s.json").write_text('{"J": 5, "per_class_count": 2, "T": 10}')
    assert run("gen", "--spec", tmp_path / "s.json", "--out", tmp_path / "o", "--quiet") == 0
    assert json.loads((tmp_path / "o" / "topology.json").read_text())["joint_count"] == 5


def test_train_outputs(workspace):
    assert (workspace / "pogcn" / "model.ckpt").exists()
    log = [json.loads(line) for line in (workspace / "pogcn" / "train_log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in log] == [1, 2]
    assert not [p for p in (workspace / "pogcn").iterdir() if p.name.endswith(".tmp")]


def test_train_unknown_model_lists_kinds(workspace, capsys):
    with pytest.raises(SystemExit) as exc:
        run("train", "--config", workspace / "cfg.json", "--model", "lstm")
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "pogcn" in err and "transformer" in err


def test_train_rejects_unknown_config_keys(workspace, tmp_path):
    bad = write_config(workspace, "bad.json", learning_rate=0.1)
    assert run("train", "--config", bad, "--model", "pogcn", "--out", tmp_path) == 2
    bad = write_config(workspace, "bad2.json", train={"target_hz": 10.0, "epochz": 1})
    assert run("train", "--config", bad, "--model", "pogcn", "--out", tmp_path) == 2


def test_train_needs_target_rate(workspace, tmp_path):
    bad = write_config(workspace, "norate.json", train={"epochs": 1})
    assert run("train", "--config", bad, "--model", "pogcn", "--out", tmp_path) == 2


def test_train_bad_data_is_data_error(workspace, tmp_path):
    (tmp_path / "train.jsonl").write_text('{"id": "x", "sampling_rate_hz": 10, "frames": [[[0]]], "labels": ["nope"]}\n')
    bad = write_config(workspace, "baddata.json", data={
        "train": str(tmp_path / "train.jsonl"), "catalog": "data/catalog.json"})
    assert run("train", "--config", bad, "--model", "pogcn", "--out", tmp_path / "o") == 3


def test_seed_flag_overrides_config(workspace, tmp_path):
    for name in ("s1", "s2"):
        run("train", "--config", workspace / "cfg.json", "--model", "transformer", "--seed", "7",
            "--out", tmp_path / name, "--quiet")
    run("train", "--config", workspace / "cfg.json", "--model", "transformer", "--out", tmp_path / "s0", "--quiet")
    a, b, c = ((tmp_path / n / "model.ckpt").read_bytes() for n in ("s1", "s2", "s0"))
    assert a == b and a != c


def test_fuse_and_eval(workspace, tmp_path, capsys):
    p, t = workspace / "pogcn" / "model.ckpt", workspace / "transformer" / "model.ckpt"
    assert run("fuse", "--config", workspace / "cfg.json", "--pogcn", p, "--transformer", t, "--out", tmp_path) == 0
    f = tmp_path / "fusion.ckpt"
    assert f.exists()
    report = tmp_path / "r.json"
    assert run("eval", "--config", workspace / "cfg.json", "--fusion", p, t, f,
               "--data", workspace / "data" / "test.jsonl", "--report", report) == 0
    js = json.loads(report.read_text())
    assert set(js["f1"]) == {"0.10", "0.25", "0.50"}
    frames = js["counts"]["frames"]
    assert js["accuracy"] == frames["correct"] / frames["total"]
    assert "accuracy" in capsys.readouterr().out


def test_fuse_swapped_checkpoints(workspace, tmp_path, capsys):
    p, t = workspace / "pogcn" / "model.ckpt", workspace / "transformer" / "model.ckpt"
    assert run("fuse", "--config", workspace / "cfg.json", "--pogcn", t, "--transformer", p, "--out", tmp_path) == 3
    assert "stage0.block.gcn.w" in capsys.readouterr().err


def test_fuse_corrupt_checkpoint(workspace, tmp_path, capsys):
    raw = (workspace / "pogcn" / "model.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(raw[:-3])
    t = workspace / "transformer" / "model.ckpt"
    assert run("fuse", "--config", workspace / "cfg.json", "--pogcn", tmp_path / "bad.ckpt",
               "--transformer", t, "--out", tmp_path) == 3
    assert "truncated" in capsys.readouterr().err


def test_eval_stdout_only(workspace, tmp_path, capsys):
    assert run("eval", "--config", workspace / "cfg.json", "--ckpt", workspace / "pogcn" / "model.ckpt",
               "--data", workspace / "data" / "test.jsonl") == 0
    js = json.loads(capsys.readouterr().out)
    assert js["counts"]["frames"]["total"] > 0
    assert list(tmp_path.iterdir()) == []


def test_eval_missing_files(workspace):
    assert run("eval", "--config", workspace / "cfg.json", "--ckpt", workspace / "none.ckpt",
               "--data", workspace / "data" / "test.jsonl") == 2
    assert run("eval", "--config", workspace / "cfg.json", "--ckpt", workspace / "pogcn" / "model.ckpt",
               "--data", workspace / "missing.jsonl") == 2
    assert run("eval", "--config", workspace / "missing.json", "--ckpt", workspace / "pogcn" / "model.ckpt",
               "--data", workspace / "data" / "test.jsonl") == 2


def test_inputs_not_mutated(workspace, tmp_path):
    data = workspace / "data"
    before = {p.name: p.read_bytes() for p in data.iterdir()}
    run("eval", "--config", workspace / "cfg.json", "--ckpt", workspace / "pogcn" / "model.ckpt",
        "--data", data / "test.jsonl", "--report", tmp_path / "r.json", "--quiet")
    assert {p.name: p.read_bytes() for p in data.iterdir()} == before


def write_streams(path, rows):
    path.write_text("".join(json.dumps({"id": k, "labels": v}) + "\n" for k, v in rows.items()))


def test_metrics_identical(tmp_path, capsys):
    rows = {"a": ["x", "x", "y"], "b": ["y", "y"]}
    write_streams(tmp_path / "p.jsonl", rows)
    write_streams(tmp_path / "g.jsonl", rows)
    assert run("metrics", "--pred", tmp_path / "p.jsonl", "--gt", tmp_path / "g.jsonl") == 0
    js = json.loads(capsys.readouterr().out)
    assert js["accuracy"] == 1.0 and set(js["f1"].values()) == {1.0}


def test_metrics_worked_example(tmp_path, capsys):
    write_streams(tmp_path / "g.jsonl", {"s": ["A"] * 10 + ["B"] * 10})
    write_streams(tmp_path / "p.jsonl", {"s": ["A"] * 3 + ["B"] * 17})
    assert run("metrics", "--pred", tmp_path / "p.jsonl", "--gt", tmp_path / "g.jsonl") == 0
    js = json.loads(capsys.readouterr().out)
    assert js["f1"]["0.50"] == 0.5
    assert js["counts"]["segments"]["0.50"] == {"tp": 1, "fp": 1, "fn": 1}


def test_metrics_length_mismatch_names_id(tmp_path, capsys):
    write_streams(tmp_path / "g.jsonl", {"s1": [0, 0], "s2": [1]})
    write_streams(tmp_path / "p.jsonl", {"s1": [0, 0], "s2": [1, 1]})
    assert run("metrics", "--pred", tmp_path / "p.jsonl", "--gt", tmp_path / "g.jsonl") == 3
    assert "'s2'" in capsys.readouterr().err


def test_metrics_id_mismatch_lists_differences(tmp_path, capsys):
    write_streams(tmp_path / "g.jsonl", {"a": [0], "b": [0]})
    write_streams(tmp_path / "p.jsonl", {"a": [0], "c": [0]})
    assert run("metrics", "--pred", tmp_path / "p.jsonl", "--gt", tmp_path / "g.jsonl") == 3
    err = capsys.readouterr().err
    assert "'c'" in err and "'b'" in err
