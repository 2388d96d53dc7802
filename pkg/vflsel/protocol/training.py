from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm.auto import tqdm

from ..errors import BatchIndexError, ConfigError, ShapeError
from ..nn.losses import LossKind, loss_and_grad, predict_classes
from ..nn.network import DenseNetwork, GradientSet, backward, forward
from ..nn.optim import optimizer_step
from ..regularization import proximal_sgd_step
from .ledger import Phase
from .system import BatchPlan, VflSystem


def _check_indices(indices: np.ndarray, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size > 0 and (idx.min() < 0 or idx.max() >= n):
        raise BatchIndexError("Batch indices must lie in [0, {}); got min={}, max={}.".format(n, idx.min(), idx.max()))
    return idx


def party_embed(
    system: VflSystem,
    m: int,
    batch_indices: np.ndarray,
    record: bool,
    split: str = "train",
    return_trace: bool = False,
):
    """Party m's embeddings for the given rows of its own shard.

    With record=True the upload of |B| x d_e scalars is priced on the ledger's current phase.
    """
    party = system.parties[m]
    shard = party.shards[split]
    idx = _check_indices(batch_indices, shard.shape[0])
    emb, trace = forward(party.network, shard[idx])
    if record:
        system.ledger.record_upload(emb.size)
    if return_trace:
        return emb, trace
    return emb


def pin_dead_columns(net: DenseNetwork, feature_mask: Optional[np.ndarray], grads: Optional[GradientSet] = None):
    """Zero the input columns (and their gradients) of features removed by selection."""
    if feature_mask is None:
        return
    dead = ~np.asarray(feature_mask, dtype=bool)
    if not np.any(dead):
        return
    if grads is not None:
        grads.weight_grads[0][:, dead] = 0.0
    net.layers[0].weights[:, dead] = 0.0


def vfl_train_step(
    system: VflSystem,
    batch_indices: np.ndarray,
    loss_kind: Union[str, LossKind],
    regularized: Optional[Sequence[float]] = None,
) -> float:
    """One round of standard VFL training on the batch.

    Parties upload embeddings, the server takes a step on its loss and returns each party's embedding
    gradient, parties back-propagate it and update. With `regularized` (one lambda per party) the party
    update is a proximal SGD step on the group lasso objective with step size equal to the party's
    learning rate; otherwise the party's configured optimizer is used.

    Returns:
        mini-batch loss before the update
    """
    idx = _check_indices(batch_indices, system.n_samples("train"))
    active = system.participating()
    if regularized is not None and len(regularized) != system.n_parties:
        raise ConfigError("Got {} lambdas for {} parties.".format(len(regularized), system.n_parties))

    embeddings = list()
    traces = dict()
    for m in active:
        emb, trace = party_embed(system, m, idx, record=True, return_trace=True)
        embeddings.append(emb)
        traces[m] = trace

    server_input = np.concatenate(embeddings, axis=1) if embeddings else np.zeros((len(idx), 0))
    outputs, server_trace = forward(system.server, server_input)
    loss, out_grad = loss_and_grad(loss_kind, outputs, system.labels["train"][idx])
    server_grads = backward(system.server, server_trace, out_grad)
    optimizer_step(system.server_optimizer, system.server, server_grads)

    slices = system.party_slices()
    for m in active:
        party = system.parties[m]
        emb_grad = server_grads.input_grad[:, slices[m]]
        system.ledger.record_download(emb_grad.size)
        grads = backward(party.network, traces[m], emb_grad)
        pin_dead_columns(party.network, party.feature_mask, grads)
        if regularized is not None:
            proximal_sgd_step(party.network, grads, regularized[m], party.optimizer.learning_rate)
        else:
            optimizer_step(party.optimizer, party.network, grads)
        pin_dead_columns(party.network, party.feature_mask)
    system.ledger.record_round()
    return loss


def train_epochs(
    system: VflSystem,
    epochs: int,
    loss_kind: Union[str, LossKind],
    phase: Phase,
    batch_size: int = 128,
    seed: int = 0,
    regularized: Optional[Sequence[float]] = None,
    on_epoch: Optional[Callable[[VflSystem, int, float], None]] = None,
    progress: bool = False,
    first_epoch: int = 0,
) -> List[float]:
    """Run `epochs` communication epochs (ceil(N / batch_size) steps each) on one ledger phase.

    Args:
        on_epoch: called as on_epoch(system, epoch, mean_train_loss) after each epoch
        first_epoch: offset of the epoch counter fed to the batch plan, so a run split across calls samples
            the same batches as an uninterrupted one
    Returns:
        mean mini-batch loss of each epoch
    """
    system.ledger.set_phase(phase)
    plan = BatchPlan(n_samples=system.n_samples("train"), batch_size=batch_size, seed=seed)
    history = list()
    for epoch in tqdm(range(first_epoch, first_epoch + epochs), disable=not progress, desc=phase.value):
        losses = [vfl_train_step(system, b, loss_kind, regularized=regularized) for b in plan.batches(epoch)]
        mean_loss = float(np.mean(losses)) if losses else 0.0
        history.append(mean_loss)
        system.logger.debug("[{}] epoch {} loss {:.6f}".format(phase.value, epoch, mean_loss))
        if on_epoch is not None:
            on_epoch(system, epoch, mean_loss)
    return history


def predict(system: VflSystem, split: str = "train") -> np.ndarray:
    """Full-model outputs on a split; out-of-band, nothing is priced."""
    n = system.n_samples(split)
    idx = np.arange(n)
    embeddings = [party_embed(system, m, idx, record=False, split=split) for m in system.participating()]
    server_input = np.concatenate(embeddings, axis=1) if embeddings else np.zeros((n, 0))
    outputs, _ = forward(system.server, server_input)
    return outputs


def evaluate(
    system: VflSystem, split: str, loss_kind: Union[str, LossKind]
) -> Tuple[float, Optional[float]]:
    """Loss and (classification only) accuracy on a split. The ledger is not touched."""
    if split not in system.labels:
        raise ShapeError("Unknown split '{}'; available: {}.".format(split, list(system.labels.keys())))
    outputs = predict(system, split)
    labels = system.labels[split]
    loss, _ = loss_and_grad(loss_kind, outputs, labels)
    if LossKind(loss_kind) != LossKind.SOFTMAX_CROSS_ENTROPY:
        return loss, None
    if len(labels) == 0:
        return loss, None
    accuracy = float(np.mean(predict_classes(outputs) == np.asarray(labels).astype(np.int64)))
    return loss, accuracy
