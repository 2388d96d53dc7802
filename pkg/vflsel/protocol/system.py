import logging
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import BatchIndexError, ConfigError, ShapeError
from ..nn.network import Activation, DenseNetwork
from ..nn.optim import OptimizerKind, OptimizerState
from ..utils import ceil_div, derive_seed, get_logger
from .ledger import CommLedger


@dataclass
class Party:
    """One data holder: its local model, its private shards and its optimizer.

    Attributes:
        network: local model h_m; its outputs are the embedding sent to the server
        shards: split name -> (n_split, d_m) feature matrix; never exposed to the server
        optimizer: update rule used by standard VFL training
        columns: global column index of each local feature (reporting only)
        components: original embedding component index of each network output; shrinks when components
            are pruned after selection
        feature_mask: when set, features with False are pinned to exactly zero input weights
        participating: False once every embedding component of this party has been pruned
    """

    network: DenseNetwork
    shards: Dict[str, np.ndarray]
    optimizer: OptimizerState
    columns: np.ndarray
    components: np.ndarray = None
    feature_mask: Optional[np.ndarray] = None
    participating: bool = True

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=np.int64)
        if self.components is None:
            self.components = np.arange(self.network.output_dim, dtype=np.int64)
        for split, x in self.shards.items():
            if x.ndim != 2 or x.shape[1] != self.network.input_dim:
                raise ShapeError(
                    "Shard '{}' has shape {} but the party network expects {} features.".format(
                        split, x.shape, self.network.input_dim
                    )
                )

    @property
    def data(self) -> np.ndarray:
        return self.shards["train"]

    @property
    def n_features(self) -> int:
        return self.network.input_dim

    @property
    def embedding_dim(self) -> int:
        return self.network.output_dim


@dataclass
class BatchPlan:
    """Seeded mini-batch schedule: a fresh permutation of [0, N) per epoch, cut into batches."""

    n_samples: int
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive; got {}.".format(self.batch_size))

    @property
    def steps_per_epoch(self) -> int:
        return ceil_div(self.n_samples, self.batch_size)

    def batches(self, epoch: int) -> List[np.ndarray]:
        rng = np.random.default_rng([int(self.seed), int(epoch)])
        perm = rng.permutation(self.n_samples)
        return [perm[x : x + self.batch_size] for x in range(0, self.n_samples, self.batch_size)]


class VflSystem:
    """Server model, M party models, vertically partitioned data, server-held labels and the ledger.

    The server's input is the concatenation of participating party embeddings in party order.
    """

    def __init__(
        self,
        server: DenseNetwork,
        parties: Sequence[Party],
        labels: Dict[str, np.ndarray],
        server_optimizer: OptimizerState,
        ledger: Optional[CommLedger] = None,
        rng_seed: int = 0,
        logger: Optional[logging.Logger] = None,
    ):
        if logger is None:
            self.logger = get_logger("vflsel-protocol")
        else:
            self.logger = logger
        self.server = server
        self.parties = list(parties)
        self.labels = dict(labels)
        self.server_optimizer = server_optimizer
        self.ledger = CommLedger() if ledger is None else ledger
        self.rng_seed = rng_seed
        # set once Stage 2's single upload round has happened
        self.frozen = None
        self.pretrained_epochs = 0
        self.validate()

    def validate(self) -> None:
        if len(self.parties) == 0:
            raise ConfigError("A VFL system needs at least one party.")
        for split, y in self.labels.items():
            for m, party in enumerate(self.parties):
                if split in party.shards and party.shards[split].shape[0] != len(y):
                    raise ShapeError(
                        "Party {} holds {} rows for split '{}' but the server holds {} labels.".format(
                            m, party.shards[split].shape[0], split, len(y)
                        )
                    )
        width = sum(p.embedding_dim for p in self.parties if p.participating)
        if width != self.server.input_dim:
            raise ShapeError(
                "Server expects {} inputs but participating parties produce {} embedding components.".format(
                    self.server.input_dim, width
                )
            )

    @property
    def n_parties(self) -> int:
        return len(self.parties)

    def n_samples(self, split: str = "train") -> int:
        return len(self.labels[split])

    def participating(self) -> List[int]:
        return [m for m, p in enumerate(self.parties) if p.participating]

    def party_slices(self) -> Dict[int, slice]:
        """Server input columns fed by each participating party."""
        out = dict()
        start = 0
        for m in self.participating():
            d = self.parties[m].embedding_dim
            out[m] = slice(start, start + d)
            start += d
        return out

    def component_map(self) -> List[Tuple[int, int]]:
        """server input index -> (party, original component index)."""
        out = list()
        for m in self.participating():
            out += [(m, int(k)) for k in self.parties[m].components]
        return out

    def server_index(self, m: int, k: int) -> int:
        """Inverse of `component_map`."""
        try:
            return self.component_map().index((m, k))
        except ValueError:
            raise BatchIndexError("Party {} component {} does not feed the server.".format(m, k))

    def feature_masks(self) -> List[np.ndarray]:
        return [
            np.ones(p.n_features, dtype=bool) if p.feature_mask is None else p.feature_mask.copy()
            for p in self.parties
        ]

    def reset_optimizers(self) -> None:
        self.server_optimizer.reset(self.server)
        for party in self.parties:
            party.optimizer.reset(party.network)

    def copy(self) -> "VflSystem":
        logger = self.logger
        self.logger = None
        try:
            out = deepcopy(self)
        finally:
            self.logger = logger
        out.logger = logger
        return out

    @classmethod
    def build(
        cls,
        party_shards: Sequence[Dict[str, np.ndarray]],
        labels: Dict[str, np.ndarray],
        output_dim: int,
        party_hidden_sizes: Sequence[int] = (16, 8),
        embedding_dims: Union[int, Sequence[int]] = 4,
        server_hidden_sizes: Sequence[int] = (),
        activation: Union[str, Activation] = Activation.TANH,
        optimizer: Union[str, OptimizerKind] = OptimizerKind.ADAM,
        learning_rate: float = 0.01,
        party_columns: Optional[Sequence[Sequence[int]]] = None,
        seed: int = 0,
        logger: Optional[logging.Logger] = None,
    ) -> "VflSystem":
        """Fresh system with seeded Glorot-initialized models (one sub-seed per model)."""
        n_parties = len(party_shards)
        if isinstance(embedding_dims, (int, np.integer)):
            embedding_dims = [int(embedding_dims)] * n_parties
        if len(embedding_dims) != n_parties:
            raise ConfigError("Got {} embedding dims for {} parties.".format(len(embedding_dims), n_parties))
        parties = list()
        start = 0
        for m, shards in enumerate(party_shards):
            d_m = shards["train"].shape[1]
            net = DenseNetwork.initialize(
                [d_m] + list(party_hidden_sizes) + [embedding_dims[m]],
                activation=activation,
                seed=derive_seed(seed, "party-init", m),
            )
            columns = np.arange(start, start + d_m) if party_columns is None else party_columns[m]
            start += d_m
            parties.append(
                Party(
                    network=net,
                    shards=dict(shards),
                    optimizer=OptimizerState.create(optimizer, net, learning_rate=learning_rate),
                    columns=columns,
                )
            )
        server = DenseNetwork.initialize(
            [sum(embedding_dims)] + list(server_hidden_sizes) + [output_dim],
            activation=activation,
            seed=derive_seed(seed, "server-init"),
        )
        server_optimizer = OptimizerState.create(optimizer, server, learning_rate=learning_rate)
        return cls(
            server=server,
            parties=parties,
            labels=labels,
            server_optimizer=server_optimizer,
            rng_seed=seed,
            logger=logger,
        )
