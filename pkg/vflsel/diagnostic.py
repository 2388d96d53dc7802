"""Runtime property checks for VFL systems and their building blocks."""
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .explainability.significance import Significance, check_significance
from .nn.losses import LossKind, loss_and_grad
from .nn.network import DenseNetwork, GradientSet, backward, finite_diff_grad, forward
from .protocol.ledger import CommLedger, Phase
from .protocol.system import VflSystem
from .selection.stages import FrozenEmbeddings, SignificantComponentSet, proxy_risk


def relative_error(analytic: GradientSet, numeric: GradientSet) -> float:
    """Largest absolute difference over all entries, relative to the largest magnitude (floored at 1)."""
    pairs = list(zip(analytic.arrays(), numeric.arrays())) + [(analytic.input_grad, numeric.input_grad)]
    diff = max(float(np.max(np.abs(a - b))) if a.size else 0.0 for a, b in pairs)
    scale = max(float(np.max(np.abs(b))) if b.size else 0.0 for _, b in pairs)
    return diff / max(scale, 1.0)


def check_gradients(
    net: DenseNetwork,
    batch: np.ndarray,
    labels: np.ndarray,
    loss_kind: Union[str, LossKind],
    h: float = 1e-6,
) -> float:
    """Relative error between back-propagated and central-difference gradients of a loss."""
    out, trace = forward(net, batch)
    _, out_grad = loss_and_grad(loss_kind, out, labels)
    analytic = backward(net, trace, out_grad)
    numeric = finite_diff_grad(net, batch, lambda o: loss_and_grad(loss_kind, o, labels)[0], h=h)
    return relative_error(analytic, numeric)


def check_symmetric_exchange(ledger: CommLedger, phases: Sequence[Phase] = (Phase.PRETRAIN, Phase.POST_FS)) -> bool:
    """In standard training every uploaded embedding is answered by a gradient of the same size."""
    return all(ledger.counters[Phase(p)].bytes_up == ledger.counters[Phase(p)].bytes_down for p in phases)


def check_proxy_at_optimum(
    system: VflSystem, frozen: FrozenEmbeddings, components: Optional[SignificantComponentSet] = None
) -> Dict[int, float]:
    """Proxy risk of every party's current network against its frozen embeddings.

    Right after freezing, every value is exactly 0.
    """
    if components is None:
        components = SignificantComponentSet.everything(frozen.dims())
    return {
        m: proxy_risk(system.parties[m].network, system.parties[m].data, frozen.party(m), components.of(m))
        for m in frozen.parties
    }


def check_zero_columns(net: DenseNetwork, probe_samples: np.ndarray, tol: float = 0.0) -> Dict[str, list]:
    """Compare the perturbation verdicts with the zero-column predicate on the first layer.

    Returns:
        indices flagged non-significant by the probe but with a non-zero column ("false_negatives") and
        indices with a zero column the probe calls significant ("false_positives")
    """
    zero = np.linalg.norm(net.first_layer_weights, axis=0) == 0.0
    out = {"false_positives": list(), "false_negatives": list()}
    for j in range(net.input_dim):
        verdict = check_significance(net, j, probe_samples, tol=tol)
        if zero[j] and verdict == Significance.SIGNIFICANT:
            out["false_positives"].append(j)
        if not zero[j] and verdict == Significance.NON_SIGNIFICANT:
            out["false_negatives"].append(j)
    return out
