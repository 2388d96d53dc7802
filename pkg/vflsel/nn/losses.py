from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy.special import logsumexp, softmax

from ..errors import DomainError, ShapeError
from ..utils import check_finite


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    SOFTMAX_CROSS_ENTROPY = "softmax_cross_entropy"


def as_target_matrix(labels: np.ndarray, n_outputs: int) -> np.ndarray:
    """Regression labels as (n, n_outputs); a 1-d vector is read as a single output column."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape[1] != n_outputs:
        raise ShapeError("Labels have {} columns but the model outputs {}.".format(y.shape[1], n_outputs))
    return y


def loss_and_grad(kind: Union[str, LossKind], outputs: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Batch-mean loss and its exact gradient w.r.t. the outputs.

    squared_error: (1/N) sum_i sum_k (f_ik - y_ik)^2, gradient 2 (f - y) / N.
    softmax_cross_entropy: (1/N) sum_i [logsumexp(f_i) - f_i,y_i], gradient (softmax(f) - onehot(y)) / N;
    labels are class indices.
    """
    kind = LossKind(kind)
    f = np.asarray(outputs, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError("Outputs must be a matrix; got shape {}.".format(f.shape))
    check_finite(f, "model outputs")
    n = f.shape[0]

    if kind == LossKind.SQUARED_ERROR:
        y = as_target_matrix(labels, f.shape[1])
        if y.shape[0] != n:
            raise ShapeError("Got {} labels for {} outputs.".format(y.shape[0], n))
        if n == 0:
            return 0.0, np.zeros_like(f)
        resid = f - y
        loss = float(np.sum(resid * resid) / n)
        return loss, 2.0 * resid / n

    y = np.asarray(labels).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError("Got {} labels for {} outputs.".format(y.shape[0], n))
    if n == 0:
        return 0.0, np.zeros_like(f)
    if not np.all(np.equal(np.mod(y, 1), 0)):
        raise DomainError("Cross-entropy labels must be integer class indices.")
    y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= f.shape[1]):
        raise DomainError(
            "Class index out of range [0, {}): min={}, max={}.".format(f.shape[1], int(y.min()), int(y.max()))
        )
    rows = np.arange(n)
    loss = float(np.sum(logsumexp(f, axis=1) - f[rows, y]) / n)
    grad = softmax(f, axis=1)
    grad[rows, y] -= 1.0
    return loss, grad / n


def predict_classes(outputs: np.ndarray) -> np.ndarray:
    return np.argmax(outputs, axis=1)
