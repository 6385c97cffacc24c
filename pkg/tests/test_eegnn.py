import json
import logging

import pandas as pd
import pytest

import eegnn
from gnn_train import REPORT_COLUMNS
from graph_core import save_simple_graph


@pytest.fixture(autouse=True)
def restore_root_handlers():
    root = logging.getLogger()
    saved, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in saved:
            root.removeHandler(handler)
            handler.close()
    for handler in saved:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


def read_manifest(out_dir):
    with open(out_dir / eegnn.MANIFEST_FILE, encoding="utf-8") as f:
        return json.load(f)


# --- GENERATE ---
def test_generate_is_deterministic(tmp_path):
    args = ["generate", "--nodes", "40", "--kappa", "8", "--seed", "7"]
    assert eegnn.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert eegnn.main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in (eegnn.MULTIGRAPH_FILE, eegnn.GRAPH_FILE):
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
    manifest = read_manifest(tmp_path / "a")
    assert manifest["command"] == "generate"
    assert manifest["seed"] == 7
    assert manifest["config"]["kappa_mass"] == 8.0


def test_invalid_value_names_the_flag(tmp_path, capsys):
    with pytest.raises(SystemExit) as excinfo:
        eegnn.main(["generate", "--kappa", "-1", "--out", str(tmp_path)])
    assert excinfo.value.code == 2
    assert "--kappa" in capsys.readouterr().err


def test_config_file_precedence(tmp_path):
    config = tmp_path / "run.env"
    config.write_text("num_nodes=30\nkappa_mass=5\n", encoding="utf-8")
    out = tmp_path / "out"
    assert eegnn.main(["generate", "--config", str(config), "--kappa", "7", "--out", str(out)]) == 0
    manifest = read_manifest(out)
    assert manifest["config"]["num_nodes"] == 30
    assert manifest["config"]["kappa_mass"] == 7.0
    assert str(config) in manifest["input_digests"]


def test_missing_config_file_is_an_io_error(tmp_path):
    code = eegnn.main(["generate", "--config", str(tmp_path / "nope.env"), "--out", str(tmp_path)])
    assert code == eegnn.EXIT_IO


# --- INFER ---
def test_infer_writes_chain_outputs(tmp_path, triangle):
    graph_file = tmp_path / "graph.txt"
    save_simple_graph(triangle, graph_file)
    out = tmp_path / "chain"
    assert eegnn.main(["infer", "--graph", str(graph_file), "--epochs", "1", "--out", str(out)]) == 0
    for name in ("trace.csv", "posterior_multiplicity.txt", "multiplicity_histogram.csv", "snapshots/index.csv"):
        assert (out / name).exists()
    assert len(pd.read_csv(out / "trace.csv")) == 1
    manifest = read_manifest(out)
    assert str(graph_file) in manifest["input_digests"]
    assert manifest["config"]["epochs"] == 1


def test_infer_fixed_k_on_named_nodes_writes_mapping(tmp_path):
    graph_file = tmp_path / "named.txt"
    graph_file.write_text("nodes 3\nalice bob\nbob carol\n", encoding="utf-8")
    out = tmp_path / "fresh" / "chain"
    code = eegnn.main(["infer", "--graph", str(graph_file), "--epochs", "3", "--k-init", "2", "--fixed-k",
                       "--out", str(out)])
    assert code == 0
    assert pd.read_csv(out / "node_mapping.csv")["original"].tolist() == ["alice", "bob", "carol"]
    assert set(pd.read_csv(out / "trace.csv")["K"]) == {2}
    assert read_manifest(out)["config"]["grow_clusters"] is False


def test_infer_missing_graph_is_an_io_error(tmp_path):
    assert eegnn.main(["infer", "--graph", str(tmp_path / "none.txt"), "--out", str(tmp_path)]) == eegnn.EXIT_IO


def test_infer_malformed_graph_is_an_io_error(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("nodes 2\n0 0\n", encoding="utf-8")
    assert eegnn.main(["infer", "--graph", str(bad), "--out", str(tmp_path)]) == eegnn.EXIT_IO


# --- TRAIN ---
def test_train_baseline_writes_report(tmp_path, toy_dataset_dir):
    out = tmp_path / "runs"
    code = eegnn.main([
        "train", "--dataset", str(toy_dataset_dir), "--runs", "2", "--seed", "3",
        "--max-epochs", "20", "--patience", "20", "--out", str(out),
    ])
    assert code == 0
    report = pd.read_csv(out / eegnn.REPORT_FILE)
    assert list(report.columns) == REPORT_COLUMNS
    assert report.loc[0, "model"] == "SGC"
    seeds = pd.read_csv(out / eegnn.SEEDS_FILE)
    assert seeds["seed"].tolist() == [3, 4]


def test_train_enhanced_without_snapshots_is_missing_artifact(tmp_path, toy_dataset_dir):
    code = eegnn.main(["train", "--dataset", str(toy_dataset_dir), "--edge-mode", "ee_mean", "--out", str(tmp_path)])
    assert code == eegnn.EXIT_MISSING


def test_live_chain_rejects_mean_mode(tmp_path, toy_dataset_dir):
    with pytest.raises(SystemExit) as excinfo:
        eegnn.main(["train", "--dataset", str(toy_dataset_dir), "--edge-mode", "ee_mean", "--live-chain",
                    "--out", str(tmp_path)])
    assert excinfo.value.code == 2


def test_infer_then_train_enhanced(tmp_path, toy_dataset_dir):
    chain = tmp_path / "chain"
    assert eegnn.main([
        "infer", "--graph", str(toy_dataset_dir / "edges.txt"), "--epochs", "3", "--thin", "1", "--out", str(chain),
    ]) == 0
    out = tmp_path / "runs"
    code = eegnn.main([
        "train", "--dataset", str(toy_dataset_dir), "--edge-mode", "ee_sampled", "--snapshots",
        str(chain / "snapshots"), "--max-epochs", "5", "--patience", "5", "--out", str(out),
    ])
    assert code == 0
    assert pd.read_csv(out / eegnn.REPORT_FILE).loc[0, "model"] == "EE-SGC"


# --- REPORT ---
def write_report(path, rows):
    pd.DataFrame(rows, columns=REPORT_COLUMNS).to_csv(path, index=False)
    return str(path)


def test_report_merges_and_adds_delta(tmp_path):
    a = write_report(tmp_path / "a.csv", [["SGC", "toy", 2, 90.0, 1.0, 3]])
    b = write_report(tmp_path / "b.csv", [["EE-SGC", "toy", 2, 92.0, 1.0, 3]])
    assert eegnn.main(["report", a, b, "--out", str(tmp_path / "summary")]) == 0
    combined = pd.read_csv(tmp_path / "summary" / "combined_report.csv")
    assert combined.set_index("model").loc["EE-SGC", "delta"] == pytest.approx(2.0)


def test_report_conflicting_layers_is_a_usage_error(tmp_path):
    a = write_report(tmp_path / "a.csv", [["SGC", "toy", 2, 90.0, 1.0, 3]])
    b = write_report(tmp_path / "b.csv", [["SGC", "toy", 4, 85.0, 1.0, 3]])
    assert eegnn.main(["report", a, b, "--out", str(tmp_path)]) == eegnn.EXIT_USAGE


def test_report_missing_file_is_an_io_error(tmp_path):
    assert eegnn.main(["report", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == eegnn.EXIT_IO
