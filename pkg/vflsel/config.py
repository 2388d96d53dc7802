"""Experiment configuration: a JSON document parsed into dataclasses.

Loading is strict: unknown keys, wrong types and out-of-range values are rejected before any compute, with
the dotted path of the offending field in the message.
"""
import json
import os
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .errors import ConfigError
from .metrics import TargetSpec
from .nn.losses import LossKind
from .nn.network import Activation
from .nn.optim import OptimizerKind
from .regularization import scaled_lambda
from .simulation import SyntheticSpec, SyntheticTask
from .utils import derive_seed, to_jsonable

METHODS = ["vfl_original", "vfl_spurious", "group_lasso", "local_lasso", "less_vfl"]
LAMBDA_SCALINGS = ["absolute", "n_quarter"]
GRID_METHODS = ["less_vfl", "local_lasso", "group_lasso"]


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError("{}: {}".format(path, message))


def _check_lambda(value: Any, path: str) -> None:
    values = value if isinstance(value, list) else [value]
    _check(len(values) > 0, path, "needs at least one value")
    for v in values:
        _check(_is_number(v) and np.isfinite(v) and v >= 0, path, "must be a finite number >= 0; got {}".format(v))


@dataclass
class CsvSource:
    path: str = ""
    label_column: Union[str, int] = "label"
    has_header: bool = True

    def validate(self, path: str) -> None:
        _check(isinstance(self.path, str) and len(self.path) > 0, path + ".path", "must name a CSV file")
        _check(isinstance(self.has_header, bool), path + ".has_header", "must be true or false")


@dataclass
class DataConfig:
    source: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    csv: Optional[CsvSource] = None
    # a list gives one ratio per party (uneven noise)
    spurious_ratio: Union[float, List[float]] = 0.0
    spurious_seed: Optional[int] = None
    train_fraction: float = 0.8
    # None: standardize CSV data, leave synthetic data as drawn
    standardize: Optional[bool] = None

    def validate(self, path: str) -> None:
        _check(self.source in ("synthetic", "csv"), path + ".source", "must be 'synthetic' or 'csv'")
        if self.source == "csv":
            _check(self.csv is not None, path + ".csv", "is required when source is 'csv'")
            self.csv.validate(path + ".csv")
        ratios = self.spurious_ratio if isinstance(self.spurious_ratio, list) else [self.spurious_ratio]
        for r in ratios:
            _check(_is_number(r) and r >= 0, path + ".spurious_ratio", "must be >= 0; got {}".format(r))
        _check(
            _is_number(self.train_fraction) and 0.0 < self.train_fraction < 1.0,
            path + ".train_fraction",
            "must lie in (0, 1); got {}".format(self.train_fraction),
        )

    def use_standardize(self) -> bool:
        if self.standardize is None:
            return self.source == "csv"
        return self.standardize


@dataclass
class PartitionConfig:
    """even_contiguous splits original and spurious columns evenly; explicit_lists takes `columns` as given.
    Synthetic data without an explicit partition follows the generator's party layout."""

    scheme: str = "even_contiguous"
    n_parties: int = 2
    columns: Optional[List[List[int]]] = None

    def validate(self, path: str) -> None:
        _check(self.scheme in ("even_contiguous", "explicit_lists"), path + ".scheme", "unknown scheme")
        _check(isinstance(self.n_parties, int) and self.n_parties >= 1, path + ".n_parties", "must be >= 1")
        if self.scheme == "explicit_lists":
            _check(self.columns is not None and len(self.columns) > 0, path + ".columns", "is required")


@dataclass
class ModelConfig:
    party_hidden_sizes: List[int] = field(default_factory=lambda: [16, 8])
    embedding_dims: Union[int, List[int]] = 4
    server_hidden_sizes: List[int] = field(default_factory=list)
    activation: Activation = Activation.TANH

    def validate(self, path: str) -> None:
        for name in ("party_hidden_sizes", "server_hidden_sizes"):
            sizes = getattr(self, name)
            _check(
                isinstance(sizes, list) and all(isinstance(x, int) and x >= 1 for x in sizes),
                path + "." + name,
                "must be a list of positive integers",
            )
        dims = self.embedding_dims if isinstance(self.embedding_dims, list) else [self.embedding_dims]
        _check(all(isinstance(x, int) and x >= 1 for x in dims), path + ".embedding_dims", "must be positive")
        self.activation = Activation(self.activation)


@dataclass
class TrainingConfig:
    # None: squared_error for regression, softmax_cross_entropy for classification (synthetic data only)
    loss: Optional[LossKind] = None
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 0.01
    batch_size: int = 128
    pretrain_epochs: int = 10
    post_fs_epochs: int = 10
    # epochs of the single-phase baselines; None: pretrain_epochs + post_fs_epochs
    train_epochs: Optional[int] = None
    progress: bool = False

    def validate(self, path: str) -> None:
        if self.loss is not None:
            self.loss = LossKind(self.loss)
        self.optimizer = OptimizerKind(self.optimizer)
        _check(_is_number(self.learning_rate) and self.learning_rate > 0, path + ".learning_rate", "must be > 0")
        _check(isinstance(self.batch_size, int) and self.batch_size >= 1, path + ".batch_size", "must be >= 1")
        _check(isinstance(self.pretrain_epochs, int) and self.pretrain_epochs >= 1, path + ".pretrain_epochs",
               "must be >= 1")
        _check(isinstance(self.post_fs_epochs, int) and self.post_fs_epochs >= 0, path + ".post_fs_epochs",
               "must be >= 0")
        if self.train_epochs is not None:
            _check(isinstance(self.train_epochs, int) and self.train_epochs >= 1, path + ".train_epochs",
                   "must be >= 1")

    def baseline_epochs(self) -> int:
        return self.pretrain_epochs + self.post_fs_epochs if self.train_epochs is None else self.train_epochs


@dataclass
class LessVflConfig:
    lambda_server: float = 0.1
    lambda_party: Union[float, List[float]] = 0.1
    # n_quarter: the lambdas are constants c, applied as c * N^(-1/4)
    lambda_scaling: str = "absolute"
    server_step: float = 0.01
    party_step: float = 0.01
    server_epochs: int = 150
    party_epochs: int = 150
    prune_components: bool = False
    parallel_parties: bool = False
    plateau_patience: Optional[int] = None
    plateau_tol: float = 0.0

    def validate(self, path: str) -> None:
        _check(not isinstance(self.lambda_server, list), path + ".lambda_server", "must be a single number")
        _check_lambda(self.lambda_server, path + ".lambda_server")
        _check_lambda(self.lambda_party, path + ".lambda_party")
        _check(self.lambda_scaling in LAMBDA_SCALINGS, path + ".lambda_scaling", "must be one of {}".format(
            LAMBDA_SCALINGS))
        for name in ("server_step", "party_step"):
            _check(_is_number(getattr(self, name)) and getattr(self, name) > 0, path + "." + name, "must be > 0")
        _check(isinstance(self.server_epochs, int) and self.server_epochs >= 1, path + ".server_epochs",
               "must be >= 1")
        _check(isinstance(self.party_epochs, int) and self.party_epochs >= 0, path + ".party_epochs",
               "must be >= 0")
        if self.plateau_patience is not None:
            _check(isinstance(self.plateau_patience, int) and self.plateau_patience >= 1,
                   path + ".plateau_patience", "must be >= 1")


@dataclass
class LocalLassoConfig:
    lambda_party: Union[float, List[float]] = 0.1
    lambda_scaling: str = "absolute"
    party_step: float = 0.01
    party_epochs: int = 150
    parallel_parties: bool = False
    plateau_patience: Optional[int] = None
    plateau_tol: float = 0.0

    def validate(self, path: str) -> None:
        _check_lambda(self.lambda_party, path + ".lambda_party")
        _check(self.lambda_scaling in LAMBDA_SCALINGS, path + ".lambda_scaling", "must be one of {}".format(
            LAMBDA_SCALINGS))
        _check(_is_number(self.party_step) and self.party_step > 0, path + ".party_step", "must be > 0")
        _check(isinstance(self.party_epochs, int) and self.party_epochs >= 0, path + ".party_epochs",
               "must be >= 0")


@dataclass
class GroupLassoConfig:
    lambda_party: Union[float, List[float]] = 0.01
    lambda_scaling: str = "absolute"

    def validate(self, path: str) -> None:
        _check_lambda(self.lambda_party, path + ".lambda_party")
        _check(self.lambda_scaling in LAMBDA_SCALINGS, path + ".lambda_scaling", "must be one of {}".format(
            LAMBDA_SCALINGS))


@dataclass
class GridConfig:
    """Sweep of the selection methods' settings; every combination runs once per seed.

    `lambda_server` and `lambda_party` sweep LESS-VFL. The baselines get their own party lambdas; a missing
    list falls back to `lambda_party`. Group lasso has no pre-training phase, so `pretrain_epochs` only
    applies to LESS-VFL and local lasso.
    """

    methods: List[str] = field(default_factory=lambda: ["less_vfl"])
    lambda_server: List[float] = field(default_factory=lambda: [0.1])
    lambda_party: List[float] = field(default_factory=lambda: [0.1])
    local_lasso_lambda_party: Optional[List[float]] = None
    group_lasso_lambda_party: Optional[List[float]] = None
    pretrain_epochs: List[int] = field(default_factory=lambda: [10])
    seeds: List[int] = field(default_factory=lambda: [0])

    def party_lambdas(self, method: str) -> List[float]:
        own = None if method == "less_vfl" else getattr(self, method + "_lambda_party")
        return list(self.lambda_party if own is None else own)

    def validate(self, path: str) -> None:
        for name in ("methods", "lambda_server", "lambda_party", "pretrain_epochs", "seeds"):
            values = getattr(self, name)
            _check(isinstance(values, list) and len(values) > 0, path + "." + name, "must be a non-empty list")
        for name in self.methods:
            _check(name in GRID_METHODS, path + ".methods", "cannot sweep '{}'; choose from {}".format(
                name, GRID_METHODS))
        _check_lambda(self.lambda_server, path + ".lambda_server")
        _check_lambda(self.lambda_party, path + ".lambda_party")
        for name in ("local_lasso_lambda_party", "group_lasso_lambda_party"):
            values = getattr(self, name)
            if values is not None:
                _check(isinstance(values, list), path + "." + name, "must be a list")
                _check_lambda(values, path + "." + name)
        _check(all(isinstance(x, int) and x >= 1 for x in self.pretrain_epochs), path + ".pretrain_epochs",
               "must hold integers >= 1")


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    methods: List[str] = field(default_factory=lambda: ["less_vfl"])
    less_vfl: LessVflConfig = field(default_factory=LessVflConfig)
    local_lasso: LocalLassoConfig = field(default_factory=LocalLassoConfig)
    group_lasso: GroupLassoConfig = field(default_factory=GroupLassoConfig)
    targets: TargetSpec = field(default_factory=TargetSpec)
    grid: GridConfig = field(default_factory=GridConfig)
    n_jobs: int = 1

    def validate(self) -> None:
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        _check(isinstance(self.methods, list) and len(self.methods) > 0, "methods", "must be a non-empty list")
        for name in self.methods:
            _check(name in METHODS, "methods", "unknown method '{}'; choose from {}".format(name, METHODS))
        _check(isinstance(self.n_jobs, int) and self.n_jobs != 0, "n_jobs", "must be a non-zero integer")
        for name in ("data", "partition", "model", "training", "less_vfl", "local_lasso", "group_lasso", "grid"):
            try:
                getattr(self, name).validate(name)
            except ConfigError:
                raise
            except ValueError as e:
                raise ConfigError("{}: {}".format(name, e))
        if self.training.loss is None and self.data.source == "csv":
            raise ConfigError("training.loss: is required for csv data")

    def loss_kind(self) -> LossKind:
        if self.training.loss is not None:
            return self.training.loss
        if self.data.synthetic.task == SyntheticTask.CLASSIFICATION:
            return LossKind.SOFTMAX_CROSS_ENTROPY
        return LossKind.SQUARED_ERROR

    def spurious_seed(self) -> int:
        if self.data.spurious_seed is not None:
            return self.data.spurious_seed
        return derive_seed(self.seed, "spurious")

    def seed_table(self) -> Dict[str, int]:
        """Seed of every random component, all derived from the master seed."""
        table = {
            "master": self.seed,
            "split": derive_seed(self.seed, "split"),
            "spurious": self.spurious_seed(),
            "model-init": derive_seed(self.seed, "model-init"),
            "batches": derive_seed(self.seed, "batches"),
        }
        if self.data.source == "synthetic":
            table["synthetic"] = self.data.synthetic.seed
        return table

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(_asdict(self))

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ExperimentConfig":
        config = _build(cls, d, "")
        config.validate()
        return config


def resolve_lambda(value: Union[float, List[float]], scaling: str, n_samples: int) -> Union[float, List[float]]:
    if scaling == "absolute":
        return value
    if isinstance(value, list):
        return [scaled_lambda(x, n_samples) for x in value]
    return scaled_lambda(value, n_samples)


NESTED = {
    (ExperimentConfig, "data"): DataConfig,
    (ExperimentConfig, "partition"): PartitionConfig,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "training"): TrainingConfig,
    (ExperimentConfig, "less_vfl"): LessVflConfig,
    (ExperimentConfig, "local_lasso"): LocalLassoConfig,
    (ExperimentConfig, "group_lasso"): GroupLassoConfig,
    (ExperimentConfig, "targets"): TargetSpec,
    (ExperimentConfig, "grid"): GridConfig,
    (DataConfig, "synthetic"): SyntheticSpec,
    (DataConfig, "csv"): CsvSource,
}


def _asdict(obj: Any) -> Any:
    if is_dataclass(obj):
        return {f.name: _asdict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, list):
        return [_asdict(x) for x in obj]
    return obj


def _build(cls, d: Any, path: str):
    prefix = path + "." if path else ""
    if not isinstance(d, dict):
        raise ConfigError("{}: expected an object, got {}".format(path or "config", type(d).__name__))
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError("{}{}: unknown key".format(prefix, key))
    kwargs = dict()
    for key, value in d.items():
        sub = NESTED.get((cls, key))
        if sub is not None and value is not None:
            value = _build(sub, value, prefix + key)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("{}: {}".format(path or "config", e))


def load_config(path: str) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError("config file not found: {}".format(path))
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("{}: malformed JSON ({})".format(path, e))
    return ExperimentConfig.from_dict(d)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)


def load_synthetic_spec(path: str) -> SyntheticSpec:
    """Strictly parse a JSON file holding one SyntheticSpec."""
    if not os.path.isfile(path):
        raise ConfigError("spec file not found: {}".format(path))
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("{}: malformed JSON ({})".format(path, e))
    return _build(SyntheticSpec, d, "synthetic")
