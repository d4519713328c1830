import json
from pathlib import Path

import numpy as np
import pytest

from disengcd.cli import main


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main([
        "synth", "--n-students", "16", "--n-exercises", "12", "--n-concepts", "3",
        "--logs-per-student", "6", "--seed", "5", "--out", str(out),
    ])
    assert rc == 0
    return out


def data_flags(synth_dir):
    return [
        "--logs", str(synth_dir / "logs.csv"),
        "--q", str(synth_dir / "q.csv"),
        "--dep", str(synth_dir / "dep.csv"),
    ]


TRAIN_FLAGS = ["--split", "0.6,0.2,0.2", "--seed", "7", "--epochs", "2",
               "--batch-size", "32", "--d", "3", "--hyper-nodes", "3", "--gat-layers", "1"]


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", *data_flags(synth_dir), *TRAIN_FLAGS, "--out", str(out)])
    assert rc == 0
    return out


def test_synth_same_seed_identical_files(tmp_path, synth_dir):
    again = tmp_path / "again"
    rc = main([
        "synth", "--n-students", "16", "--n-exercises", "12", "--n-concepts", "3",
        "--logs-per-student", "6", "--seed", "5", "--out", str(again),
    ])
    assert rc == 0
    for name in ("logs.csv", "q.csv", "dep.csv", "truth.json"):
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_log_count(synth_dir):
    lines = (synth_dir / "logs.csv").read_text().splitlines()
    assert len(lines) - 1 == 16 * 6


def test_train_writes_artifacts(trained_dir):
    for name in ("checkpoint.bin", "history.csv", "metagraph.json", "id_maps.json", "run.json"):
        assert (trained_dir / name).exists(), name
    history = (trained_dir / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,train_loss,val_loss,val_acc,val_rmse,val_auc"
    assert len(history) == 3


def test_train_missing_q_exits_2(tmp_path, synth_dir, capsys):
    rc = main([
        "train", "--logs", str(synth_dir / "logs.csv"), "--q", str(tmp_path / "missing.csv"),
        *TRAIN_FLAGS, "--out", str(tmp_path / "o"),
    ])
    assert rc == 2
    assert "missing.csv" in capsys.readouterr().err


def test_train_malformed_data_exits_3(tmp_path, synth_dir, capsys):
    bad_logs = tmp_path / "bad_logs.csv"
    bad_logs.write_text("student_id,exercise_id,response\ns0,not_an_exercise,1\n")
    rc = main([
        "train", "--logs", str(bad_logs), "--q", str(synth_dir / "q.csv"),
        *TRAIN_FLAGS, "--out", str(tmp_path / "o"),
    ])
    assert rc == 3
    assert "not_an_exercise" in capsys.readouterr().err


def test_train_idempotent_outputs(tmp_path, synth_dir, trained_dir):
    again = tmp_path / "again"
    rc = main(["train", *data_flags(synth_dir), *TRAIN_FLAGS, "--out", str(again)])
    assert rc == 0
    assert (again / "checkpoint.bin").read_bytes() == (trained_dir / "checkpoint.bin").read_bytes()
    assert (again / "history.csv").read_text() == (trained_dir / "history.csv").read_text()


def test_train_variant_flag(tmp_path, synth_dir):
    out = tmp_path / "variant"
    rc = main(["train", *data_flags(synth_dir), *TRAIN_FLAGS, "--variant", "disengcd_i",
               "--out", str(out)])
    assert rc == 0
    run = json.loads((out / "run.json").read_text())
    assert run["config"]["train"]["variant"] == "disengcd_i"


def test_eval_reports_and_is_stable(synth_dir, trained_dir, capsys):
    args = ["eval", *data_flags(synth_dir), "--checkpoint", str(trained_dir / "checkpoint.bin")]
    assert main([*args, "--split-name", "test"]) == 0
    first = capsys.readouterr().out
    assert main([*args, "--split-name", "test"]) == 0
    assert capsys.readouterr().out == first
    report = json.loads(first)
    assert report["split"] == "test"
    assert 0 <= report["acc"] <= 1

    assert main([*args, "--split-name", "val"]) == 0
    val_report = json.loads(capsys.readouterr().out)
    assert val_report["n_examples"] != report["n_examples"] or val_report["acc"] != report["acc"]


def test_eval_fitted_model_beats_chance_on_train(tmp_path, synth_dir, capsys):
    out = tmp_path / "fitted"
    rc = main(["train", *data_flags(synth_dir), "--split", "0.6,0.2,0.2", "--seed", "7",
               "--epochs", "15", "--lr", "0.005", "--batch-size", "32", "--d", "3",
               "--hyper-nodes", "3", "--gat-layers", "1", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    rc = main(["eval", *data_flags(synth_dir), "--checkpoint", str(out / "checkpoint.bin"),
               "--split-name", "train"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["auc"] > 0.5


def test_eval_k_mismatch_exits_2(tmp_path, trained_dir, capsys):
    other = tmp_path / "otherdata"
    main(["synth", "--n-students", "16", "--n-exercises", "12", "--n-concepts", "4",
          "--logs-per-student", "6", "--seed", "5", "--out", str(other)])
    rc = main([
        "eval", "--logs", str(other / "logs.csv"), "--q", str(other / "q.csv"),
        "--checkpoint", str(trained_dir / "checkpoint.bin"),
    ])
    assert rc == 2
    assert "n_concepts" in capsys.readouterr().err


def test_diagnose_single_and_unknown(synth_dir, trained_dir, capsys):
    rc = main(["diagnose", *data_flags(synth_dir), "--checkpoint",
               str(trained_dir / "checkpoint.bin"), "--students", "s0,sXX"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["unknown"] == ["sXX"]
    assert len(payload["reports"]) == 1
    assert len(payload["reports"][0]["mastery"]) == 3


def test_diagnose_all(synth_dir, trained_dir, capsys):
    rc = main(["diagnose", *data_flags(synth_dir), "--checkpoint",
               str(trained_dir / "checkpoint.bin"), "--all"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["reports"]) == 16


def test_diagnose_requires_selection(synth_dir, trained_dir, capsys):
    rc = main(["diagnose", *data_flags(synth_dir), "--checkpoint",
               str(trained_dir / "checkpoint.bin")])
    assert rc == 2


def test_experiment_robustness_rows(tmp_path, synth_dir):
    out = tmp_path / "exp"
    rc = main(["experiment", "robustness", *data_flags(synth_dir), *TRAIN_FLAGS,
               "--epochs", "1", "--ratios", "0,0.5", "--out", str(out)])
    assert rc == 0
    csvs = list(out.glob("report_robustness_*.csv"))
    assert len(csvs) == 1
    assert len(csvs[0].read_text().splitlines()) == 3


def test_experiment_ablation_emits_all_rows(tmp_path, synth_dir):
    out = tmp_path / "abl"
    rc = main(["experiment", "ablation", *data_flags(synth_dir), *TRAIN_FLAGS,
               "--epochs", "1", "--out", str(out)])
    assert rc == 0
    rows = json.loads(next(out.glob("report_ablation_*.json")).read_text())
    names = {(r["variant"], r["student_mode"]) for r in rows}
    assert len(rows) == 8
    assert ("full", "meta_multigraph") in names and ("full", "naive") in names


def test_experiment_sensitivity(tmp_path, synth_dir):
    out = tmp_path / "sens"
    rc = main(["experiment", "sensitivity", *data_flags(synth_dir), *TRAIN_FLAGS,
               "--epochs", "1", "--hyper-node-sweep", "2,3", "--out", str(out)])
    assert rc == 0
    rows = json.loads(next(out.glob("report_sensitivity_*.json")).read_text())
    assert [r["n_hyper_nodes"] for r in rows] == [2, 3]
    assert all(r["seconds"] > 0 for r in rows)


def test_config_file_merges_and_flags_win(tmp_path, synth_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 1, "batch_size": 16, "d": 3,
                               "hyper_nodes": 3, "gat_layers": 1, "seed": 7}))
    out = tmp_path / "cfgrun"
    rc = main(["train", *data_flags(synth_dir), "--config", str(cfg),
               "--split", "0.6,0.2,0.2", "--epochs", "2", "--out", str(out)])
    assert rc == 0
    run = json.loads((out / "run.json").read_text())
    assert run["config"]["train"]["max_epochs"] == 2  # flag beat the file
    assert run["config"]["train"]["batch_size"] == 16


def test_config_file_unknown_key_exits_2(tmp_path, synth_dir, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"optimizer": "sgd"}))
    rc = main(["train", *data_flags(synth_dir), "--config", str(cfg),
               "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "optimizer" in capsys.readouterr().err


def test_export_metagraph_round_trip(tmp_path, trained_dir):
    out = tmp_path / "mg.json"
    dot = tmp_path / "mg.dot"
    rc = main(["export-metagraph", "--checkpoint", str(trained_dir / "checkpoint.bin"),
               "--out", str(out), "--dot", str(dot)])
    assert rc == 0
    export = json.loads(out.read_text())
    assert export["P"] == 3
    assert dot.read_text().startswith("digraph")

    from disengcd.student_meta import structure_from_export

    structure = structure_from_export(export)
    assert set(structure) == {(1, 2), (1, 3), (2, 3)}


def test_run_config_digest_embedded(trained_dir):
    run = json.loads((trained_dir / "run.json").read_text())
    assert len(run["digest"]) == 12
