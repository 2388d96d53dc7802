"""L2,1 (group lasso) penalty over a network's input layer and its proximal operator.

Group j is column j of the first-layer weight matrix, i.e. every weight fed by input j.
Biases and deeper layers belong to no group.
"""
from dataclasses import dataclass
from typing import List, Set

import numpy as np

from .errors import DomainError, ShapeError
from .nn.network import DenseNetwork, GradientSet


@dataclass(frozen=True)
class InputGroupView:
    group_index: int
    weights: np.ndarray


def input_groups(net: DenseNetwork) -> List[InputGroupView]:
    w = net.first_layer_weights
    return [InputGroupView(group_index=j, weights=w[:, j]) for j in range(w.shape[1])]


def group_norms(net: DenseNetwork) -> np.ndarray:
    """(input_dim, ) Euclidean norms of the first-layer columns."""
    return np.linalg.norm(net.first_layer_weights, axis=0)


def group_lasso_penalty(net: DenseNetwork) -> float:
    return float(np.sum(group_norms(net)))


def shrink_groups(groups: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-thresholding of the columns of `groups`.

    Columns with norm <= threshold become exact zeros; others keep their direction and lose `threshold` of
    their norm.
    """
    norms = np.linalg.norm(groups, axis=0)
    scale = np.zeros_like(norms)
    keep = norms > threshold
    scale[keep] = 1.0 - threshold / norms[keep]
    out = groups * scale
    # exact (positive) zeros on dropped groups
    out[:, ~keep] = 0.0
    return out


def prox_group_lasso(net: DenseNetwork, lam: float, eta: float, inplace: bool = False) -> DenseNetwork:
    """Closed-form proximal step of eta * lam * G(theta) applied to the input layer."""
    threshold = float(lam) * float(eta)
    if not np.isfinite(threshold) or lam < 0 or eta < 0:
        raise DomainError("prox needs finite lambda >= 0 and eta >= 0; got lambda={}, eta={}.".format(lam, eta))
    out = net if inplace else net.copy()
    if threshold == 0.0:
        return out
    layer = out.layers[0]
    layer.weights[...] = shrink_groups(layer.weights, threshold)
    return out


def surviving_groups(net: DenseNetwork) -> Set[int]:
    """Input indices whose first-layer column is not exactly zero."""
    return set(int(x) for x in np.flatnonzero(group_norms(net) > 0.0))


def proximal_sgd_step(net: DenseNetwork, grads: GradientSet, lam: float, eta: float) -> DenseNetwork:
    """One P-SGD update in place: theta <- prox_{lam, eta}(theta - eta * grad)."""
    if not grads.matches(net):
        raise ShapeError("Gradient shapes do not mirror the network.")
    for g in grads.arrays():
        if not np.all(np.isfinite(g)):
            raise DomainError("Rejected proximal step: non-finite gradient.")
    for p, g in zip(net.parameters(), grads.arrays()):
        p -= eta * g
    return prox_group_lasso(net, lam, eta, inplace=True)


def scaled_lambda(constant: float, n_samples: int) -> float:
    """Regularization strength c * N^(-1/4), the rate under which selection is consistent."""
    if n_samples < 1:
        raise DomainError("n_samples must be positive; got {}.".format(n_samples))
    return float(constant) * float(n_samples) ** -0.25
