import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from ..config import ExperimentConfig, resolve_lambda
from ..datasets import (
    PartitionSpec,
    TabularDataset,
    inject_spurious,
    inject_spurious_per_party,
    load_csv,
    split,
    standardize,
)
from ..errors import ConfigError, RunFailedError
from ..metrics import MetricsRecord, TargetSpec, cost_to_targets, phase_cost_to_targets
from ..nn.losses import LossKind
from ..protocol.system import VflSystem
from ..selection.pipelines import SelectionSettings, group_lasso_run, less_vfl_run, local_lasso_run, vfl_run
from ..simulation import synth_generate
from ..utils import derive_seed, get_logger
from .reports import write_report


@dataclass
class PreparedData:
    """Train/test splits of the (noise-injected) dataset and the party layout of its columns."""

    train: TabularDataset
    test: TabularDataset
    partition: PartitionSpec
    loss_kind: LossKind
    output_dim: int

    def party_flags(self, columns: Optional[Sequence[Sequence[int]]] = None) -> List[np.ndarray]:
        columns = self.partition.columns if columns is None else columns
        return [self.train.spurious_flags[list(cols)] for cols in columns]

    def original_columns(self) -> List[List[int]]:
        """Per party, the columns that are not flagged; parties left empty are dropped."""
        out = [[c for c in cols if not self.train.spurious_flags[c]] for cols in self.partition.columns]
        return [cols for cols in out if len(cols) > 0]


def prepare_data(config: ExperimentConfig, logger: Optional[logging.Logger] = None) -> PreparedData:
    """Load or synthesize the dataset, add spurious features, partition, split and standardize."""
    if logger is None:
        logger = get_logger("vflsel-experiments")
    data = config.data
    if data.source == "synthetic":
        ds, _ = synth_generate(data.synthetic)
        base = data.synthetic.partition()
    else:
        ds = load_csv(data.csv.path, data.csv.label_column, has_header=data.csv.has_header)
        base = None
    if config.partition.scheme == "explicit_lists":
        base = PartitionSpec.explicit(config.partition.columns, ds.n_features)

    ratios = data.spurious_ratio
    seed = config.spurious_seed()
    if base is None:
        if isinstance(ratios, list):
            raise ConfigError("data.spurious_ratio: per-party ratios need a synthetic source or explicit_lists")
        ds = inject_spurious(ds, ratios, seed=seed)
        spec = PartitionSpec.even_contiguous(ds.n_features, config.partition.n_parties, flags=ds.spurious_flags)
    else:
        if not isinstance(ratios, list):
            ratios = [ratios] * base.n_parties
        ds, spec = inject_spurious_per_party(ds, base, ratios, seed=seed)
    logger.info(
        "Dataset: {} rows, {} features ({} flagged spurious), {} parties.".format(
            ds.n_samples, ds.n_features, int(np.sum(ds.spurious_flags)), spec.n_parties
        )
    )

    train, test = split(ds, data.train_fraction, seed=derive_seed(config.seed, "split"))
    if data.use_standardize():
        train, test = standardize(train, test)

    loss_kind = config.loss_kind()
    if loss_kind == LossKind.SOFTMAX_CROSS_ENTROPY:
        labels = np.asarray(ds.labels)
        if not np.all(np.equal(np.mod(labels, 1), 0)) or labels.min() < 0:
            raise ConfigError("training.loss: softmax_cross_entropy needs non-negative integer labels")
        output_dim = int(labels.max()) + 1
    else:
        output_dim = 1
    return PreparedData(train=train, test=test, partition=spec, loss_kind=loss_kind, output_dim=output_dim)


def build_system(
    config: ExperimentConfig,
    data: PreparedData,
    columns: Optional[Sequence[Sequence[int]]] = None,
    seed: Optional[int] = None,
    logger: Optional[logging.Logger] = None,
) -> VflSystem:
    """Fresh VFL system over the given per-party columns (default: the full partition)."""
    columns = data.partition.columns if columns is None else columns
    master = config.seed if seed is None else seed
    dims = config.model.embedding_dims
    if isinstance(dims, list):
        if len(dims) != data.partition.n_parties:
            raise ConfigError("model.embedding_dims: {} values for {} parties".format(
                len(dims), data.partition.n_parties))
        # parties dropped from `columns` keep their own width
        by_cols = {tuple(c): d for c, d in zip(data.partition.columns, dims)}
        dims = [by_cols.get(tuple(c), dims[0]) for c in columns]
    shards = [{"train": data.train.features[:, list(c)], "test": data.test.features[:, list(c)]} for c in columns]
    labels = {"train": data.train.labels, "test": data.test.labels}
    return VflSystem.build(
        shards,
        labels,
        data.output_dim,
        party_hidden_sizes=config.model.party_hidden_sizes,
        embedding_dims=dims,
        server_hidden_sizes=config.model.server_hidden_sizes,
        activation=config.model.activation,
        optimizer=config.training.optimizer,
        learning_rate=config.training.learning_rate,
        party_columns=columns,
        seed=derive_seed(master, "model-init"),
        logger=logger,
    )


def method_settings(
    config: ExperimentConfig, method: str, n_train: int, seed: Optional[int] = None
) -> SelectionSettings:
    master = config.seed if seed is None else seed
    t = config.training
    settings = SelectionSettings(
        loss_kind=config.loss_kind(),
        batch_size=t.batch_size,
        seed=derive_seed(master, "batches"),
        pretrain_epochs=t.pretrain_epochs,
        post_fs_epochs=t.post_fs_epochs,
        train_epochs=t.baseline_epochs(),
        progress=t.progress,
    )
    if method == "less_vfl":
        c = config.less_vfl
        settings.lambda_server = resolve_lambda(c.lambda_server, c.lambda_scaling, n_train)
        settings.lambda_party = resolve_lambda(c.lambda_party, c.lambda_scaling, n_train)
        settings.server_step = c.server_step
        settings.party_step = c.party_step
        settings.server_epochs = c.server_epochs
        settings.party_epochs = c.party_epochs
        settings.prune_components = c.prune_components
        settings.n_jobs = -1 if c.parallel_parties else 1
        settings.plateau_patience = c.plateau_patience
        settings.plateau_tol = c.plateau_tol
    elif method == "local_lasso":
        c = config.local_lasso
        settings.lambda_party = resolve_lambda(c.lambda_party, c.lambda_scaling, n_train)
        settings.party_step = c.party_step
        settings.party_epochs = c.party_epochs
        settings.n_jobs = -1 if c.parallel_parties else 1
        settings.plateau_patience = c.plateau_patience
        settings.plateau_tol = c.plateau_tol
    elif method == "group_lasso":
        c = config.group_lasso
        settings.lambda_party = resolve_lambda(c.lambda_party, c.lambda_scaling, n_train)
    return settings


def run_method(
    config: ExperimentConfig, data: PreparedData, method: str, logger: Optional[logging.Logger] = None
) -> MetricsRecord:
    """One seeded method run; a failure becomes a record with status "failed" instead of an exception."""
    if logger is None:
        logger = get_logger("vflsel-experiments")
    logger.info("Running {}.".format(method))
    try:
        if method == "vfl_original":
            columns = data.original_columns()
            if len(columns) == 0:
                raise ConfigError("methods: vfl_original needs at least one non-spurious feature")
        else:
            columns = data.partition.columns
        system = build_system(config, data, columns=columns)
        settings = method_settings(config, method, data.train.n_samples)
        flags = data.party_flags(columns)
        if method in ("vfl_original", "vfl_spurious"):
            record = vfl_run(system, settings, flags)
        elif method == "group_lasso":
            record = group_lasso_run(system, settings, flags)
        elif method == "local_lasso":
            record = local_lasso_run(system, settings, flags)
        elif method == "less_vfl":
            record = less_vfl_run(system, settings, flags)
        else:
            raise ConfigError("methods: unknown method '{}'".format(method))
    except RunFailedError as e:
        record = e.report
    except Exception as e:
        logger.error("{} failed before training: {}".format(method, e))
        record = MetricsRecord(method=method, status="failed", error="{}: {}".format(type(e).__name__, e))
    record.method = method
    return record


def _summaries(records: Dict[str, MetricsRecord], targets: TargetSpec) -> Dict[str, dict]:
    baseline = records.get("vfl_original")
    baseline_best = baseline.best("test_accuracy") if baseline is not None else None
    out = dict()
    for method, record in records.items():
        out[method] = {
            "status": record.status,
            "total_mb": record.total_mb(),
            "phase_mb": record.phase_mb(),
            "final_train_accuracy": record.last("train_accuracy"),
            "final_test_accuracy": record.last("test_accuracy"),
            "best_test_accuracy": record.best("test_accuracy"),
            "final_train_loss": record.last("train_loss"),
            "final_test_loss": record.last("test_loss"),
            "spurious_removed_fraction": record.removal(),
            "baseline_best_accuracy": baseline_best,
            "cost_to_targets_mb": cost_to_targets(record, baseline_best, targets),
            "cost_to_targets_split_mb": phase_cost_to_targets(record, baseline_best, targets),
        }
    return out


def run_experiment(
    config: ExperimentConfig,
    output_dir: Optional[str] = None,
    logger: Optional[logging.Logger] = None,
) -> Dict[str, MetricsRecord]:
    """Run every configured method on the same data and write `<output_dir>/<method>/report.json` and
    `series.csv` for each.

    Methods run in parallel processes when `config.n_jobs` != 1; a failing method does not stop the others.
    """
    if logger is None:
        logger = get_logger("vflsel-experiments")
    data = prepare_data(config, logger=logger)
    methods = list(dict.fromkeys(config.methods))
    if config.n_jobs == 1 or len(methods) == 1:
        results = [run_method(config, data, m) for m in methods]
    else:
        results = Parallel(n_jobs=config.n_jobs)(delayed(run_method)(config, data, m) for m in methods)
    records = dict(zip(methods, results))

    summaries = _summaries(records, config.targets)
    out_dir = config.output_dir if output_dir is None else output_dir
    for method, record in records.items():
        record.extras["summary"] = summaries[method]
        write_report(os.path.join(out_dir, method), record, config)
    failed = [m for m, r in records.items() if r.status != "ok"]
    if failed:
        logger.warning("Methods failed: {}".format(failed))
    logger.info("Reports written to {}.".format(out_dir))
    return records
