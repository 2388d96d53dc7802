"""The three stages of communication-efficient feature selection, plus masking and post-selection refinement.

Stage 1 pre-trains the VFL model with standard training. The parties then upload embeddings of their whole
dataset once; after that single round, Stage 2 (server) and Stage 3 (each party) run locally and cost no
communication.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from ..errors import ConfigError, ConsistencyError, ContractError, ShapeError
from ..nn.losses import LossKind, loss_and_grad
from ..nn.network import DenseLayer, DenseNetwork, backward, forward
from ..protocol.ledger import Phase
from ..protocol.system import BatchPlan, VflSystem
from ..protocol.training import party_embed, pin_dead_columns, train_epochs
from ..regularization import group_norms, proximal_sgd_step
from ..utils import derive_seed

EpochHook = Callable[[DenseNetwork, int, float], None]


@dataclass(frozen=True)
class FrozenEmbeddings:
    """Full-dataset embeddings of the pre-trained party models; arrays are read-only.

    Attributes:
        embeddings: party index -> (N, d_e_m) matrix, for the parties taking part in the exchange
    """

    embeddings: Dict[int, np.ndarray]

    @property
    def parties(self) -> List[int]:
        return sorted(self.embeddings.keys())

    @property
    def n_samples(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]

    def party(self, m: int) -> np.ndarray:
        return self.embeddings[m]

    def dims(self) -> Dict[int, int]:
        return {m: self.embeddings[m].shape[1] for m in self.parties}

    def concatenated(self) -> np.ndarray:
        """Server-side input: all embeddings side by side in party order."""
        return np.concatenate([self.embeddings[m] for m in self.parties], axis=1)

    def slices(self) -> Dict[int, slice]:
        out = dict()
        start = 0
        for m in self.parties:
            d = self.embeddings[m].shape[1]
            out[m] = slice(start, start + d)
            start += d
        return out


@dataclass
class SignificantComponentSet:
    """Per party, the sorted embedding components the server found significant."""

    components: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.components = {int(m): np.unique(np.asarray(k, dtype=np.int64)) for m, k in self.components.items()}

    @classmethod
    def everything(cls, dims: Dict[int, int]) -> "SignificantComponentSet":
        return cls({m: np.arange(d) for m, d in dims.items()})

    def of(self, m: int) -> np.ndarray:
        return self.components.get(m, np.zeros(0, dtype=np.int64))

    def sizes(self, n_parties: int) -> List[int]:
        return [len(self.of(m)) for m in range(n_parties)]

    def to_lists(self, n_parties: int) -> List[List[int]]:
        return [[int(k) for k in self.of(m)] for m in range(n_parties)]


def pretrain(
    system: VflSystem,
    epochs: int,
    loss_kind: Union[str, LossKind],
    batch_size: int = 128,
    seed: int = 0,
    on_epoch: Optional[Callable] = None,
    progress: bool = False,
) -> List[float]:
    """Stage 1: unregularized standard VFL training, priced on the pre-training phase."""
    if epochs < 1:
        raise ContractError("Pre-training needs at least one epoch; got {}.".format(epochs))
    system.logger.info("Pre-training for {} epochs.".format(epochs))
    history = train_epochs(
        system,
        epochs,
        loss_kind,
        Phase.PRETRAIN,
        batch_size=batch_size,
        seed=seed,
        on_epoch=on_epoch,
        progress=progress,
        first_epoch=system.pretrained_epochs,
    )
    system.pretrained_epochs += epochs
    system.logger.info(
        "Pre-training done: loss {:.6f}, {} bytes on the wire.".format(history[-1], system.ledger.total_bytes)
    )
    return history


def freeze_embeddings(system: VflSystem) -> FrozenEmbeddings:
    """The one extra round: every participating party uploads embeddings of all its training rows."""
    if system.frozen is not None:
        raise ContractError("Embeddings were already frozen; the upload round happens once.")
    if system.pretrained_epochs < 1:
        raise ContractError("Freeze the embeddings after pre-training.")
    system.ledger.set_phase(Phase.STAGE2_UPLOAD)
    idx = np.arange(system.n_samples("train"))
    embeddings = dict()
    for m in system.participating():
        emb = party_embed(system, m, idx, record=False)
        system.ledger.record_upload(emb.size)
        emb.setflags(write=False)
        embeddings[m] = emb
    system.ledger.record_round()
    system.frozen = FrozenEmbeddings(embeddings)
    system.logger.info("Frozen embeddings uploaded: {} bytes.".format(system.ledger.phase_bytes(Phase.STAGE2_UPLOAD)))
    return system.frozen


def _plateaued(history: Sequence[float], patience: Optional[int], tol: float) -> bool:
    if patience is None or len(history) <= patience:
        return False
    best_before = min(history[:-patience])
    return min(history[-patience:]) > best_before - tol


def select_components(
    server_net: DenseNetwork,
    frozen: FrozenEmbeddings,
    labels: np.ndarray,
    lam: float,
    eta: float,
    epochs: int,
    loss_kind: Union[str, LossKind],
    batch_size: int = 128,
    seed: int = 0,
    plateau_patience: Optional[int] = None,
    plateau_tol: float = 0.0,
    on_epoch: Optional[EpochHook] = None,
) -> Tuple[DenseNetwork, SignificantComponentSet, List[float]]:
    """Stage 2: server-local proximal SGD with group lasso over its input (embedding) components.

    Starts from a copy of `server_net`. Every step ends with the proximal operator, so a component is
    significant exactly when its input column is not all zero.

    Returns:
        trained server copy, per-party significant components, mean loss per epoch
    """
    if lam < 0 or not np.isfinite(lam):
        raise ConfigError("less_vfl.lambda_server must be finite and >= 0; got {}.".format(lam))
    if eta <= 0:
        raise ConfigError("less_vfl.server_step must be > 0; got {}.".format(eta))
    if epochs < 1:
        raise ContractError("Component selection needs at least one epoch; got {}.".format(epochs))
    x = frozen.concatenated()
    if x.shape[1] != server_net.input_dim:
        raise ShapeError(
            "Frozen embeddings have {} components; the server expects {}.".format(x.shape[1], server_net.input_dim)
        )
    net = server_net.copy()
    plan = BatchPlan(n_samples=x.shape[0], batch_size=batch_size, seed=seed)
    history = list()
    for epoch in range(epochs):
        losses = list()
        for idx in plan.batches(epoch):
            out, trace = forward(net, x[idx])
            loss, out_grad = loss_and_grad(loss_kind, out, labels[idx])
            proximal_sgd_step(net, backward(net, trace, out_grad), lam, eta)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(net, epoch, history[-1])
        if _plateaued(history, plateau_patience, plateau_tol):
            break

    norms = group_norms(net)
    selected = {m: np.flatnonzero(norms[s] > 0.0) for m, s in frozen.slices().items()}
    return net, SignificantComponentSet(selected), history


def _proxy_forward(party_net, party_data, frozen_m, components, batch_indices):
    idx = np.asarray(batch_indices, dtype=np.int64).reshape(-1)
    components = np.asarray(components, dtype=np.int64).reshape(-1)
    if frozen_m.shape[1] != party_net.output_dim:
        raise ShapeError(
            "Frozen embeddings have {} components; the party network outputs {}.".format(
                frozen_m.shape[1], party_net.output_dim
            )
        )
    if components.size > 0 and (components.min() < 0 or components.max() >= party_net.output_dim):
        raise ConfigError("Component indices {} exceed the embedding width {}.".format(components, party_net.output_dim))
    out, trace = forward(party_net, party_data[idx])
    grad = np.zeros_like(out)
    n = len(idx)
    if n == 0 or components.size == 0:
        return 0.0, grad, trace
    diff = out[:, components] - frozen_m[idx][:, components]
    loss = float(np.sum(diff * diff) / n)
    grad[:, components] = 2.0 * diff / n
    return loss, grad, trace


def proxy_loss(
    party_net: DenseNetwork,
    party_data: np.ndarray,
    frozen_m: np.ndarray,
    components: np.ndarray,
    batch_indices: np.ndarray,
) -> Tuple[float, np.ndarray]:
    """Mean over the batch of the squared distance to the frozen embedding, on the given components only.

    Returns:
        loss, and its gradient w.r.t. the network outputs (exactly zero outside `components`)
    """
    loss, grad, _ = _proxy_forward(party_net, party_data, frozen_m, components, batch_indices)
    return loss, grad


def proxy_risk(party_net: DenseNetwork, party_data: np.ndarray, frozen_m: np.ndarray, components: np.ndarray) -> float:
    """Proxy loss over every training row."""
    loss, _ = proxy_loss(party_net, party_data, frozen_m, components, np.arange(party_data.shape[0]))
    return loss


def local_feature_selection(
    party_net: DenseNetwork,
    party_data: np.ndarray,
    frozen_m: np.ndarray,
    components: np.ndarray,
    lam: float,
    eta: float,
    epochs: int,
    batch_size: int = 128,
    seed: int = 0,
    feature_mask: Optional[np.ndarray] = None,
    plateau_patience: Optional[int] = None,
    plateau_tol: float = 0.0,
    on_epoch: Optional[EpochHook] = None,
) -> Tuple[DenseNetwork, List[float]]:
    """Stage 3 for one party: proximal SGD on the proxy loss with group lasso over the party's inputs.

    Works on a copy of `party_net` and touches nothing but the party's own data and frozen slice.
    """
    if lam < 0 or not np.isfinite(lam):
        raise ConfigError("lambda_party must be finite and >= 0; got {}.".format(lam))
    if eta <= 0:
        raise ConfigError("party_step must be > 0; got {}.".format(eta))
    if epochs < 0:
        raise ContractError("Local selection epochs must be >= 0; got {}.".format(epochs))
    net = party_net.copy()
    plan = BatchPlan(n_samples=party_data.shape[0], batch_size=batch_size, seed=seed)
    history = list()
    for epoch in range(epochs):
        losses = list()
        for idx in plan.batches(epoch):
            loss, out_grad, trace = _proxy_forward(net, party_data, frozen_m, components, idx)
            grads = backward(net, trace, out_grad)
            pin_dead_columns(net, feature_mask, grads)
            proximal_sgd_step(net, grads, lam, eta)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(net, epoch, history[-1])
        if _plateaued(history, plateau_patience, plateau_tol):
            break
    return net, history


def select_local_features(
    system: VflSystem,
    frozen: FrozenEmbeddings,
    components: SignificantComponentSet,
    lams: Sequence[float],
    eta: float,
    epochs: int,
    batch_size: int = 128,
    seed: int = 0,
    n_jobs: int = 1,
    plateau_patience: Optional[int] = None,
    plateau_tol: float = 0.0,
) -> Dict[int, Dict[str, list]]:
    """Stage 3 for every participating party; installs the selected networks in the system.

    Each party draws its batches from its own sub-seed, so running parties in parallel threads
    (n_jobs != 1) gives the same networks as running them one after the other.

    Returns:
        party -> {"loss": per-epoch proxy loss, "surviving": per-epoch survival mask}
    """
    if len(lams) != system.n_parties:
        raise ConfigError("Got {} party lambdas for {} parties.".format(len(lams), system.n_parties))
    system.ledger.set_phase(Phase.STAGE3)

    def _run(m: int):
        party = system.parties[m]
        masks = list()

        def _track(net, epoch, loss):
            masks.append(group_norms(net) > 0.0)

        net, history = local_feature_selection(
            party.network,
            party.data,
            frozen.party(m),
            components.of(m),
            lams[m],
            eta,
            epochs,
            batch_size=batch_size,
            seed=derive_seed(seed, "stage3", m),
            feature_mask=party.feature_mask,
            plateau_patience=plateau_patience,
            plateau_tol=plateau_tol,
            on_epoch=_track,
        )
        return m, net, {"loss": history, "surviving": masks}

    active = [m for m in frozen.parties if system.parties[m].participating]
    if n_jobs == 1:
        results = [_run(m) for m in active]
    else:
        results = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(_run)(m) for m in active)

    out = dict()
    for m, net, trail in results:
        system.parties[m].network = net
        out[m] = trail
        system.logger.info(
            "Party {}: {} of {} features survive local selection.".format(
                m, int(np.sum(group_norms(net) > 0.0)), net.input_dim
            )
        )
    return out


def extract_mask(system: VflSystem) -> List[np.ndarray]:
    """Per party, True where the first-layer input column is not exactly zero."""
    return [group_norms(p.network) > 0.0 for p in system.parties]


def prune_components(system: VflSystem, components: SignificantComponentSet) -> None:
    """Drop embedding components outside K_m from the wire.

    Party output rows and the matching server input columns are removed; a party left with no component
    stops participating in the exchange.
    """
    keep_server = list()
    cmap = system.component_map()
    for m in system.participating():
        party = system.parties[m]
        keep_k = components.of(m)
        local = np.flatnonzero(np.isin(party.components, keep_k))
        keep_server += [cmap.index((m, int(party.components[j]))) for j in local]
        if len(local) == 0:
            party.participating = False
            system.logger.info("Party {} has no significant component and leaves the exchange.".format(m))
            continue
        last = party.network.layers[-1]
        party.network.layers[-1] = DenseLayer(last.weights[local], last.bias[local], last.activation)
        party.components = party.components[local]
        party.optimizer.reset(party.network)
    first = system.server.layers[0]
    system.server.layers[0] = DenseLayer(first.weights[:, keep_server], first.bias.copy(), first.activation)
    system.server_optimizer.reset(system.server)
    system.validate()


def refine(
    system: VflSystem,
    mask: Sequence[np.ndarray],
    epochs: int,
    loss_kind: Union[str, LossKind],
    batch_size: int = 128,
    seed: int = 0,
    components: Optional[SignificantComponentSet] = None,
    prune: bool = False,
    on_epoch: Optional[Callable] = None,
    progress: bool = False,
) -> List[float]:
    """Post-selection standard VFL training with removed features pinned to zero input weights.

    Optimizer state is re-initialized before training continues.
    """
    if len(mask) != system.n_parties:
        raise ConsistencyError("Got masks for {} parties; the system has {}.".format(len(mask), system.n_parties))
    for m, (party, keep) in enumerate(zip(system.parties, mask)):
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (party.n_features,):
            raise ConsistencyError("Mask of party {} has {} entries for {} features.".format(
                m, keep.shape[0], party.n_features))
        if np.any(party.network.first_layer_weights[:, ~keep] != 0.0):
            raise ConsistencyError("Mask of party {} removes features whose input weights are not zero.".format(m))
        party.feature_mask = keep.copy()
    if epochs == 0:
        return list()
    if prune:
        if components is None:
            raise ConfigError("Component pruning needs the significant component sets.")
        prune_components(system, components)
    system.reset_optimizers()
    system.logger.info("Refining with the selected features for {} epochs.".format(epochs))
    return train_epochs(
        system,
        epochs,
        loss_kind,
        Phase.POST_FS,
        batch_size=batch_size,
        seed=derive_seed(seed, "post-fs"),
        on_epoch=on_epoch,
        progress=progress,
    )
