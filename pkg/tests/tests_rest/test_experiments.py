import json
import os

import pytest
import numpy as np
import pandas as pd

from vflsel.config import ExperimentConfig
from vflsel.datasets import save_csv
from vflsel.errors import ConfigError, DataError
from vflsel.experiments import (
    aggregate_grid,
    build_system,
    grid_search,
    pick_winner,
    prepare_data,
    read_report,
    run_experiment,
    run_method,
    summarize_run_dir,
)
from vflsel.experiments import runner
from vflsel.nn.losses import LossKind
from vflsel.simulation import SyntheticSpec, synth_generate


def _config(**overrides):
    doc = {
        "seed": 1,
        "data": {
            "synthetic": {
                "n_parties": 2,
                "significant": 3,
                "spurious": 2,
                "hidden_sizes": [4],
                "embedding_dim": 2,
                "n_samples": 60,
                "seed": 2,
            },
        },
        "model": {"party_hidden_sizes": [4], "embedding_dims": 2},
        "training": {"batch_size": 16, "pretrain_epochs": 2, "post_fs_epochs": 1, "learning_rate": 0.05},
        "less_vfl": {"server_epochs": 2, "party_epochs": 2, "server_step": 0.05, "party_step": 0.05},
        "local_lasso": {"party_epochs": 2, "party_step": 0.05},
        "methods": ["vfl_original", "vfl_spurious", "group_lasso", "local_lasso", "less_vfl"],
    }
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


def test_prepare_data_follows_the_generator_layout():
    data = prepare_data(_config())
    assert data.partition.columns == [[0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]
    assert data.train.n_samples == 48
    assert data.test.n_samples == 12
    assert data.loss_kind == LossKind.SQUARED_ERROR
    assert data.output_dim == 1
    assert data.original_columns() == [[0, 1, 2], [5, 6, 7]]
    flags = data.party_flags()
    assert flags[0].tolist() == [False, False, False, True, True]


def test_prepare_data_injects_noise_per_party():
    config = _config(
        data={"synthetic": {"n_samples": 40, "significant": 2, "spurious": 0}, "spurious_ratio": [1.0, 0.5]}
    )
    data = prepare_data(config)
    assert data.partition.columns == [[0, 1, 4, 5], [2, 3, 6]]
    assert data.train.spurious_flags.tolist() == [False] * 4 + [True] * 3


def test_prepare_data_from_csv(tmp_path):
    ds, _ = synth_generate(SyntheticSpec(n_parties=1, significant=4, spurious=0, n_samples=30, seed=3))
    path = str(tmp_path / "data.csv")
    save_csv(ds, path)
    config = _config(
        data={"source": "csv", "csv": {"path": path}, "spurious_ratio": 0.5},
        training={"loss": "squared_error", "pretrain_epochs": 1, "batch_size": 8},
    )
    data = prepare_data(config)
    assert data.partition.columns == [[0, 1, 4], [2, 3, 5]]
    # standardized with training statistics
    assert np.allclose(data.train.features[:, :4].mean(axis=0), 0.0)
    with pytest.raises(ConfigError):
        prepare_data(_config(data={"source": "csv", "csv": {"path": path}, "spurious_ratio": [0.5, 0.5]},
                             training={"loss": "squared_error"}))


def test_prepare_data_rejects_fractional_classes(tmp_path):
    ds, _ = synth_generate(SyntheticSpec(n_parties=1, significant=2, spurious=0, n_samples=20, seed=3))
    path = str(tmp_path / "data.csv")
    save_csv(ds, path)
    config = _config(data={"source": "csv", "csv": {"path": path}}, training={"loss": "softmax_cross_entropy"})
    with pytest.raises(ConfigError, match="non-negative integer labels"):
        prepare_data(config)


def test_prepare_data_missing_csv(tmp_path):
    config = _config(data={"source": "csv", "csv": {"path": str(tmp_path / "nope.csv")}},
                     training={"loss": "squared_error"})
    with pytest.raises(DataError):
        prepare_data(config)


def test_build_system_is_seeded():
    config = _config()
    data = prepare_data(config)
    a = build_system(config, data)
    b = build_system(config, data)
    assert np.all(np.equal(a.server.first_layer_weights, b.server.first_layer_weights))
    assert a.n_parties == 2
    assert a.parties[0].n_features == 5
    small = build_system(config, data, columns=data.original_columns())
    assert small.parties[0].n_features == 3


def test_run_experiment_writes_reports(tmp_path):
    config = _config()
    records = run_experiment(config, output_dir=str(tmp_path))
    assert list(records.keys()) == config.methods
    for method in config.methods:
        assert os.path.isfile(os.path.join(str(tmp_path), method, "report.json"))
        series = pd.read_csv(os.path.join(str(tmp_path), method, "series.csv"))
        assert "cumulative_mb" in series.columns
        doc = read_report(os.path.join(str(tmp_path), method, "report.json"))
        assert doc["record"]["status"] == "ok"
        assert doc["seed_table"]["master"] == 1
    # the baseline sees only the original features
    assert records["vfl_original"].spurious_flags == [[False] * 3, [False] * 3]
    summary = records["less_vfl"].extras["summary"]
    assert summary["baseline_best_accuracy"] is None
    assert summary["total_mb"] == pytest.approx(records["less_vfl"].total_mb())
    assert records["less_vfl"].ledger["stage3"]["bytes_up"] == 0


def test_run_experiment_is_byte_deterministic(tmp_path):
    config = _config(methods=["less_vfl"])
    run_experiment(config, output_dir=str(tmp_path / "a"))
    run_experiment(config, output_dir=str(tmp_path / "b"))
    for name in ("report.json", "series.csv"):
        with open(str(tmp_path / "a" / "less_vfl" / name), "rb") as f:
            first = f.read()
        with open(str(tmp_path / "b" / "less_vfl" / name), "rb") as f:
            second = f.read()
        assert first == second


def test_parallel_methods_match_sequential(tmp_path):
    sequential = run_experiment(_config(methods=["vfl_spurious", "less_vfl"]), output_dir=str(tmp_path / "s"))
    parallel = run_experiment(_config(methods=["vfl_spurious", "less_vfl"], n_jobs=2), output_dir=str(tmp_path / "p"))
    for method in ("vfl_spurious", "less_vfl"):
        assert sequential[method].to_dict() == parallel[method].to_dict()


def test_failing_method_does_not_stop_the_others(tmp_path, monkeypatch):
    def _boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(runner, "group_lasso_run", _boom)
    records = run_experiment(_config(methods=["group_lasso", "vfl_spurious"]), output_dir=str(tmp_path))
    assert records["group_lasso"].status == "failed"
    assert "boom" in records["group_lasso"].error
    assert records["vfl_spurious"].status == "ok"
    with open(os.path.join(str(tmp_path), "group_lasso", "report.json"), "r", encoding="utf-8") as f:
        assert json.load(f)["record"]["status"] == "failed"


def test_failed_stage_keeps_the_partial_record():
    config = _config(methods=["less_vfl"])
    config.less_vfl.server_step = 0.0
    record = run_method(config, prepare_data(config), "less_vfl")
    assert record.status == "failed"
    assert record.ledger["pretrain"]["rounds"] > 0


def test_summarize_run_dir(tmp_path):
    run_experiment(_config(methods=["vfl_spurious", "less_vfl"]), output_dir=str(tmp_path))
    df = summarize_run_dir(str(tmp_path))
    assert df["method"].tolist() == ["less_vfl", "vfl_spurious"]
    assert (df["total_mb"] > 0).all()
    with pytest.raises(DataError):
        summarize_run_dir(str(tmp_path / "empty"))
    os.makedirs(str(tmp_path / "empty"))
    with pytest.raises(DataError):
        summarize_run_dir(str(tmp_path / "empty"))


def test_read_report_rejects_malformed_json(tmp_path):
    path = tmp_path / "report.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(DataError):
        read_report(str(path))


def test_grid_search(tmp_path):
    config = _config(
        grid={"lambda_server": [0.01], "lambda_party": [0.0, 1e3], "pretrain_epochs": [2, 1], "seeds": [0, 1]},
    )
    table, winners = grid_search(config, output_dir=str(tmp_path))
    assert list(winners) == ["less_vfl"]
    winner = winners["less_vfl"]
    assert os.path.isfile(os.path.join(str(tmp_path), "grid.csv"))
    runs = pd.read_csv(os.path.join(str(tmp_path), "grid_runs.csv"))
    assert len(runs) == 2 * 2 * 2
    assert len(table) == 4
    assert (table["n_seeds"] == 2).all()
    assert (table["method"] == "less_vfl").all()
    # lambdas share the frozen checkpoint of their (seed, pre-training epochs)
    for _, group in runs.groupby(["seed", "pretrain_epochs"]):
        assert group["shared_mb"].nunique() == 1
    one = runs[runs["pretrain_epochs"] == 1]["pretrain_mb"].iloc[0]
    two = runs[runs["pretrain_epochs"] == 2]["pretrain_mb"].iloc[0]
    assert two == pytest.approx(2 * one)
    assert winner is not None
    assert winner["lambda_party"] == 1e3
    assert winner["removal_mean"] == 1.0



def test_grid_search_sweeps_each_method_with_its_own_lambdas(tmp_path):
    config = _config(
        grid={
            "methods": ["less_vfl", "local_lasso", "group_lasso"],
            "lambda_server": [0.01],
            "lambda_party": [0.0],
            "local_lasso_lambda_party": [0.0, 1e3],
            "group_lasso_lambda_party": [1e3],
            "pretrain_epochs": [1],
            "seeds": [0],
        },
    )
    table, winners = grid_search(config, output_dir=str(tmp_path))
    runs = pd.read_csv(os.path.join(str(tmp_path), "grid_runs.csv"))
    assert runs["method"].value_counts().to_dict() == {"local_lasso": 2, "less_vfl": 1, "group_lasso": 1}
    assert (runs["status"] == "ok").all()
    # both pre-trained methods start from the same frozen checkpoint
    selection = runs[runs["method"] != "group_lasso"]
    assert selection["shared_mb"].nunique() == 1
    assert selection["pretrain_mb"].nunique() == 1
    group = runs[runs["method"] == "group_lasso"].iloc[0]
    assert pd.isna(group["pretrain_epochs"])
    assert pd.isna(group["lambda_server"])
    assert group["pretrain_mb"] == 0.0
    assert group["train_mb"] > 0.0

    assert sorted(table["method"]) == ["group_lasso", "less_vfl", "local_lasso", "local_lasso"]
    local = table[table["method"] == "local_lasso"]
    assert local["lambda_party"].tolist() == [0.0, 1e3]
    assert local["lambda_server"].isna().all()
    assert winners["less_vfl"] is None
    assert winners["local_lasso"]["lambda_party"] == 1e3
    assert winners["local_lasso"]["method"] == "local_lasso"
    assert winners["group_lasso"]["removal_mean"] == 1.0


def test_pick_winner_without_eligible_rows():
    table = pd.DataFrame(
        {
            "method": ["less_vfl"],
            "pretrain_epochs": [1],
            "lambda_server": [0.1],
            "lambda_party": [0.1],
            "removal_mean": [0.2],
            "train_loss_mean": [1.0],
        }
    )
    assert pick_winner(table, LossKind.SQUARED_ERROR, 0.8) is None
    assert pick_winner(table, LossKind.SQUARED_ERROR, 0.1)["lambda_party"] == 0.1
    assert pick_winner(table, LossKind.SQUARED_ERROR, 0.1, method="less_vfl")["lambda_party"] == 0.1
    assert pick_winner(table, LossKind.SQUARED_ERROR, 0.1, method="local_lasso") is None


def test_aggregate_grid_ignores_failed_runs():
    runs = pd.DataFrame(
        {
            "seed": [0, 1, 0],
            "method": ["less_vfl"] * 3,
            "pretrain_epochs": [1, 1, 1],
            "lambda_server": [0.1, 0.1, 0.1],
            "lambda_party": [0.1, 0.1, 0.2],
            "status": ["ok", "ok", "failed"],
            "train_loss": [1.0, 3.0, None],
            "removal": [0.5, 1.0, None],
            "total_mb": [2.0, 2.0, None],
        }
    )
    table = aggregate_grid(runs)
    assert len(table) == 1
    assert table["train_loss_mean"].iloc[0] == pytest.approx(2.0)
    assert table["removal_mean"].iloc[0] == pytest.approx(0.75)
    assert table["seeds"].iloc[0] == "0;1"
