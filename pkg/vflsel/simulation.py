from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple, Union

import numpy as np

from .datasets import PartitionSpec, TabularDataset
from .errors import ConfigError
from .nn.network import Activation, DenseNetwork
from .nn.optim import OptimizerKind, OptimizerState
from .protocol.system import Party, VflSystem
from .protocol.training import predict
from .utils import derive_seed


class SyntheticTask(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass
class SyntheticSpec:
    """Generating-model description of a synthetic vertically partitioned task.

    Party m holds `significant[m]` features followed by `spurious[m]` features; the generating party
    network has exactly zero input weights on the latter, so they are non-significant by construction.

    Attributes:
        n_parties: number of data holders M
        significant: significant features per party (an int applies to every party)
        spurious: spurious features per party (an int applies to every party)
        hidden_sizes: hidden widths of the generating party networks
        embedding_dim: output width of each generating party network
        noise_sigma: std of the additive label noise
        n_samples: rows to draw
        seed: master seed of the generator
        task: regression (y = f(x) + noise) or classification (thresholded noisy f(x))
        weight_scale: multiplier applied to every generating weight
        label_flip: extra probability of flipping a classification label
    """

    n_parties: int = 2
    significant: Union[int, List[int]] = 10
    spurious: Union[int, List[int]] = 5
    hidden_sizes: List[int] = field(default_factory=lambda: [8])
    embedding_dim: int = 4
    noise_sigma: float = 0.1
    n_samples: int = 2000
    seed: int = 0
    task: SyntheticTask = SyntheticTask.REGRESSION
    weight_scale: float = 1.0
    label_flip: float = 0.0

    def __post_init__(self):
        self.task = SyntheticTask(self.task)
        self.hidden_sizes = [int(x) for x in self.hidden_sizes]
        self.validate()

    def _per_party(self, value: Union[int, Sequence[int]], what: str) -> List[int]:
        if isinstance(value, (int, np.integer)):
            return [int(value)] * self.n_parties
        value = [int(x) for x in value]
        if len(value) != self.n_parties:
            raise ConfigError("synthetic.{} lists {} counts for {} parties.".format(what, len(value), self.n_parties))
        return value

    def significant_counts(self) -> List[int]:
        return self._per_party(self.significant, "significant")

    def spurious_counts(self) -> List[int]:
        return self._per_party(self.spurious, "spurious")

    def validate(self) -> None:
        if self.n_parties < 1:
            raise ConfigError("synthetic.n_parties must be >= 1; got {}.".format(self.n_parties))
        sig = self.significant_counts()
        spur = self.spurious_counts()
        if any(x < 0 for x in sig + spur):
            raise ConfigError("synthetic feature counts must be non-negative.")
        if any(a + b == 0 for a, b in zip(sig, spur)):
            raise ConfigError("Every synthetic party needs at least one feature.")
        if self.n_samples < 1:
            raise ConfigError("synthetic.n_samples must be >= 1; got {}.".format(self.n_samples))
        if self.embedding_dim < 1 or any(x < 1 for x in self.hidden_sizes):
            raise ConfigError("synthetic layer sizes must be positive.")
        if self.noise_sigma < 0:
            raise ConfigError("synthetic.noise_sigma must be >= 0; got {}.".format(self.noise_sigma))
        if not 0.0 <= self.label_flip <= 0.5:
            raise ConfigError("synthetic.label_flip must lie in [0, 0.5]; got {}.".format(self.label_flip))

    def party_columns(self) -> List[List[int]]:
        out = list()
        start = 0
        for a, b in zip(self.significant_counts(), self.spurious_counts()):
            out.append(list(range(start, start + a + b)))
            start += a + b
        return out

    def partition(self) -> PartitionSpec:
        cols = self.party_columns()
        return PartitionSpec.explicit(cols, sum(len(c) for c in cols))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["task"] = self.task.value
        return out


def make_generating_system(spec: SyntheticSpec) -> VflSystem:
    """Random generating party networks (tanh hidden layers, spurious input columns zeroed) and a linear
    scalar-output server. The system carries no data yet."""
    parties = list()
    for m, (a, b) in enumerate(zip(spec.significant_counts(), spec.spurious_counts())):
        net = DenseNetwork.initialize(
            [a + b] + spec.hidden_sizes + [spec.embedding_dim],
            activation=Activation.TANH,
            seed=derive_seed(spec.seed, "generator-party", m),
        )
        for layer in net.layers:
            layer.weights *= spec.weight_scale
        net.layers[0].weights[:, a:] = 0.0
        parties.append(
            Party(
                network=net,
                shards=dict(),
                optimizer=OptimizerState.create(OptimizerKind.SGD, net, learning_rate=0.0),
                columns=spec.party_columns()[m],
            )
        )
    server = DenseNetwork.initialize(
        [spec.n_parties * spec.embedding_dim, 1],
        seed=derive_seed(spec.seed, "generator-server"),
    )
    server.layers[0].weights *= spec.weight_scale
    return VflSystem(
        server=server,
        parties=parties,
        labels=dict(),
        server_optimizer=OptimizerState.create(OptimizerKind.SGD, server, learning_rate=0.0),
        rng_seed=spec.seed,
    )


def attach_features(system: VflSystem, x: np.ndarray, split: str = "train") -> None:
    """Hand each generating party its columns of `x` (rows aligned) under `split`."""
    for party in system.parties:
        party.shards[split] = x[:, party.columns]
    system.labels[split] = np.zeros(x.shape[0])


def generating_output(system: VflSystem, x: np.ndarray) -> np.ndarray:
    """Noise-free scalar output f(x) of a generating system on a full feature matrix."""
    attach_features(system, x, split="probe")
    try:
        return predict(system, "probe").reshape(-1)
    finally:
        for party in system.parties:
            del party.shards["probe"]
        del system.labels["probe"]


def synth_generate(spec: SyntheticSpec) -> Tuple[TabularDataset, VflSystem]:
    """Draw a synthetic dataset from its generating model.

    X ~ N(0, I). Regression labels are f(x) + N(0, sigma^2); classification labels are 1 where
    f(x) + N(0, sigma^2) exceeds the median of f(x), then flipped with probability `label_flip`.

    Returns:
        dataset with spurious flags set, and the generating system holding X under "train"
    """
    spec.validate()
    system = make_generating_system(spec)
    n_features = sum(len(c) for c in spec.party_columns())
    rng = np.random.default_rng(derive_seed(spec.seed, "generator-features"))
    x = rng.standard_normal((spec.n_samples, n_features))
    attach_features(system, x, split="train")
    f = predict(system, "train").reshape(-1)

    noise_rng = np.random.default_rng(derive_seed(spec.seed, "generator-noise"))
    if spec.noise_sigma > 0:
        noisy = f + noise_rng.normal(0.0, spec.noise_sigma, size=f.shape[0])
    else:
        noisy = f

    if spec.task == SyntheticTask.REGRESSION:
        labels = noisy
    else:
        labels = (noisy > np.median(f)).astype(np.int64)
        if spec.label_flip > 0:
            flips = noise_rng.uniform(size=labels.shape[0]) < spec.label_flip
            labels[flips] = 1 - labels[flips]
    system.labels["train"] = labels

    flags = np.zeros(n_features, dtype=bool)
    names = list()
    for m, (cols, a) in enumerate(zip(spec.party_columns(), spec.significant_counts())):
        flags[cols[a:]] = True
        names += ["p{}_sig{}".format(m, j) for j in range(a)]
        names += ["p{}_spur{}".format(m, j) for j in range(len(cols) - a)]
    return TabularDataset(features=x, labels=labels, feature_names=names, spurious_flags=flags), system
