from enum import Enum
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import ConfigError, ShapeError
from ..nn.network import DenseNetwork, forward


class Significance(str, Enum):
    SIGNIFICANT = "significant"
    NON_SIGNIFICANT = "non_significant"


def default_replacement_grid(probe_samples: np.ndarray, j: int, n_points: int = 11) -> np.ndarray:
    """n_points evenly spaced values in [-3, 3] plus the observed min and max of input j."""
    col = np.asarray(probe_samples, dtype=np.float64)[:, j]
    return np.concatenate([np.linspace(-3.0, 3.0, n_points), [col.min(), col.max()]])


def check_significance(
    net: DenseNetwork,
    j: int,
    probe_samples: np.ndarray,
    replacement_grid: Optional[Sequence[float]] = None,
    tol: float = 0.0,
) -> Significance:
    """Perturbation probe of whether input j can change the network's output.

    Input j is non-significant when, for every probe row and every grid value s, setting x_j = s moves
    every output by at most `tol`. This is a finite-grid approximation: a significant verdict is always
    certain, a non-significant one only holds for the probed rows and values.

    Args:
        probe_samples: (n, input_dim) rows to perturb
        replacement_grid: values substituted for x_j; defaults to `default_replacement_grid`
        tol: 0 for structural (exact zero column) cases, around 1e-9 for trained models
    """
    x = np.asarray(probe_samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError("Probe samples must have {} columns; got shape {}.".format(net.input_dim, x.shape))
    if x.shape[0] == 0:
        raise ConfigError("check_significance needs at least one probe sample.")
    if not 0 <= j < net.input_dim:
        raise ShapeError("Input index {} outside [0, {}).".format(j, net.input_dim))
    grid = default_replacement_grid(x, j) if replacement_grid is None else np.asarray(replacement_grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigError("The replacement grid is empty.")

    base, _ = forward(net, x)
    for s in grid.reshape(-1):
        probe = x.copy()
        probe[:, j] = s
        out, _ = forward(net, probe)
        if np.max(np.abs(out - base)) > tol:
            return Significance.SIGNIFICANT
    return Significance.NON_SIGNIFICANT


def significance_table(
    net: DenseNetwork,
    probe_samples: np.ndarray,
    tol: float = 0.0,
    feature_names: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """Verdict of `check_significance` for every input, next to its first-layer column norm."""
    norms = np.linalg.norm(net.first_layer_weights, axis=0)
    names = list(feature_names) if feature_names is not None else ["x{}".format(j) for j in range(net.input_dim)]
    rows = [
        {
            "feature": names[j],
            "column_norm": float(norms[j]),
            "verdict": check_significance(net, j, probe_samples, tol=tol).value,
        }
        for j in range(net.input_dim)
    ]
    df = pd.DataFrame(rows)
    df.attrs["method"] = "finite-grid perturbation probe"
    return df
