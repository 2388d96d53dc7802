"""Run metrics: spurious-removal fraction, cost-to-target and the per-step time series of a run."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import ConfigError, ShapeError
from .nn.losses import LossKind
from .protocol.ledger import Phase, ledger_total_mb
from .protocol.system import VflSystem
from .protocol.training import evaluate
from .regularization import group_norms
from .utils import get_logger, to_jsonable

SERIES_COLUMNS = [
    "step",
    "epoch",
    "phase",
    "cumulative_mb",
    "train_loss",
    "train_accuracy",
    "test_loss",
    "test_accuracy",
    "stage_loss",
    "spurious_removed_fraction",
    "surviving_features",
    "significant_components",
]


def spurious_removed_fraction(mask: np.ndarray, flags: np.ndarray) -> float:
    """Share of flagged features whose mask entry is False; 1.0 when nothing is flagged."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    flags = np.asarray(flags, dtype=bool).reshape(-1)
    if mask.shape != flags.shape:
        raise ShapeError("Mask has {} entries but there are {} flags.".format(mask.shape[0], flags.shape[0]))
    n_flagged = int(np.sum(flags))
    if n_flagged == 0:
        return 1.0
    return float(np.sum(flags & ~mask)) / n_flagged


def live_masks(system: VflSystem) -> List[np.ndarray]:
    """Per-party survival masks read off the current first-layer weights."""
    return [group_norms(p.network) > 0.0 for p in system.parties]


@dataclass
class TargetSpec:
    """Joint goal of a run: accuracy within a fraction of a baseline and a minimum spurious removal."""

    accuracy_fraction: float = 0.9
    removal: float = 0.8

    def __post_init__(self):
        for name in ("accuracy_fraction", "removal"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError("targets.{} must lie in (0, 1]; got {}.".format(name, value))


@dataclass
class MetricsRecord:
    """Everything a run reports: the time series, the final selection and the ledger.

    Attributes:
        method: pipeline name
        rows: one dict per logged step, keyed by SERIES_COLUMNS
        final_mask: per-party survival masks after the run
        spurious_flags: per-party ground-truth flags aligned with final_mask
        components: per-party significant embedding components (None when the method does not select them)
        ledger: per-phase bytes and rounds
        extras: method-specific scalars (e.g. test loss right after pre-training)
        status: "ok" or "failed"
        error: failure message when status is "failed"
    """

    method: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    final_mask: List[List[bool]] = field(default_factory=list)
    spurious_flags: List[List[bool]] = field(default_factory=list)
    components: Optional[List[List[int]]] = None
    ledger: Dict[str, Dict[str, int]] = field(default_factory=dict)
    extras: Dict[str, Any] = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None

    def series(self) -> pd.DataFrame:
        df = pd.DataFrame(self.rows, columns=SERIES_COLUMNS)
        for col in ("surviving_features", "significant_components"):
            df[col] = df[col].apply(lambda x: None if x is None else ";".join(str(v) for v in x))
        return df

    def total_mb(self) -> float:
        return sum(c["bytes_up"] + c["bytes_down"] for c in self.ledger.values()) / 1e6

    def phase_mb(self) -> Dict[str, float]:
        return {p: (c["bytes_up"] + c["bytes_down"]) / 1e6 for p, c in self.ledger.items()}

    def removal(self) -> Optional[float]:
        if not self.final_mask:
            return None
        mask = np.concatenate([np.asarray(x, dtype=bool) for x in self.final_mask])
        flags = np.concatenate([np.asarray(x, dtype=bool) for x in self.spurious_flags])
        return spurious_removed_fraction(mask, flags)

    def best(self, column: str) -> Optional[float]:
        values = [r[column] for r in self.rows if r.get(column) is not None]
        return max(values) if values else None

    def last(self, column: str) -> Optional[float]:
        values = [r[column] for r in self.rows if r.get(column) is not None]
        return values[-1] if values else None

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(
            {
                "method": self.method,
                "status": self.status,
                "error": self.error,
                "final_mask": self.final_mask,
                "spurious_flags": self.spurious_flags,
                "components": self.components,
                "ledger": self.ledger,
                "extras": self.extras,
                "series": self.rows,
            }
        )

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "MetricsRecord":
        return cls(
            method=d["method"],
            rows=list(d.get("series", [])),
            final_mask=d.get("final_mask", []),
            spurious_flags=d.get("spurious_flags", []),
            components=d.get("components"),
            ledger=d.get("ledger", {}),
            extras=d.get("extras", {}),
            status=d.get("status", "ok"),
            error=d.get("error"),
        )


class MetricsTracker:
    """Collects one series row per communication epoch (and per local epoch in Stages 2 and 3).

    Evaluation is out-of-band: it reads the models directly and never touches the ledger.
    """

    def __init__(
        self,
        loss_kind: Union[str, LossKind],
        spurious_flags: Sequence[np.ndarray],
        evaluate_splits: Sequence[str] = ("train", "test"),
        logger: Optional[logging.Logger] = None,
    ):
        if logger is None:
            self.logger = get_logger("vflsel-experiments")
        else:
            self.logger = logger
        self.loss_kind = LossKind(loss_kind)
        self.spurious_flags = [np.asarray(x, dtype=bool) for x in spurious_flags]
        self.evaluate_splits = list(evaluate_splits)
        self.rows: List[Dict[str, Any]] = list()

    def _removal(self, masks: Sequence[np.ndarray]) -> float:
        if len(masks) != len(self.spurious_flags):
            raise ShapeError("Got masks for {} parties but flags for {}.".format(len(masks), len(self.spurious_flags)))
        return spurious_removed_fraction(np.concatenate(masks), np.concatenate(self.spurious_flags))

    def log_system(
        self,
        system: VflSystem,
        phase: Phase,
        epoch: int,
        stage_loss: Optional[float] = None,
        components: Optional[Sequence[int]] = None,
    ) -> None:
        """Evaluated row. `components` holds |K_m| per party once the server has selected; otherwise every
        transmitted component of a participating party counts."""
        masks = live_masks(system)
        if components is None:
            components = [len(p.components) if p.participating else 0 for p in system.parties]
        row = {
            "step": system.ledger.rounds,
            "epoch": int(epoch),
            "phase": Phase(phase).value,
            "cumulative_mb": ledger_total_mb(system.ledger),
            "stage_loss": stage_loss,
            "spurious_removed_fraction": self._removal(masks),
            "surviving_features": [int(np.sum(x)) for x in masks],
            "significant_components": [int(x) for x in components],
        }
        for split in ("train", "test"):
            loss, acc = (None, None)
            if split in self.evaluate_splits and split in system.labels:
                loss, acc = evaluate(system, split, self.loss_kind)
            row["{}_loss".format(split)] = loss
            row["{}_accuracy".format(split)] = acc
        self.rows.append({c: row[c] for c in SERIES_COLUMNS})

    def log_local(
        self,
        system: VflSystem,
        phase: Phase,
        epoch: int,
        masks: Sequence[np.ndarray],
        components: Sequence[int],
        stage_loss: Optional[float],
    ) -> None:
        """Row for a server- or party-local epoch; no model evaluation, cost is unchanged."""
        self.rows.append(
            {
                "step": system.ledger.rounds,
                "epoch": int(epoch),
                "phase": Phase(phase).value,
                "cumulative_mb": ledger_total_mb(system.ledger),
                "train_loss": None,
                "train_accuracy": None,
                "test_loss": None,
                "test_accuracy": None,
                "stage_loss": stage_loss,
                "spurious_removed_fraction": self._removal(masks),
                "surviving_features": [int(np.sum(x)) for x in masks],
                "significant_components": [int(x) for x in components],
            }
        )

    def epoch_hook(self, phase: Phase, components: Optional[Sequence[int]] = None):
        """Callback for `train_epochs(on_epoch=...)`."""

        def _hook(system: VflSystem, epoch: int, loss: float) -> None:
            self.log_system(system, phase, epoch, stage_loss=loss, components=components)

        return _hook


def cost_to_targets(
    record: MetricsRecord, baseline_best_accuracy: Optional[float], targets: TargetSpec
) -> Optional[float]:
    """Smallest cumulative MB at which test accuracy and spurious removal both meet their targets.

    Returns None when the targets are never met together, or when there is no baseline accuracy.
    """
    if baseline_best_accuracy is None:
        return None
    threshold = targets.accuracy_fraction * baseline_best_accuracy
    for row in record.rows:
        acc = row.get("test_accuracy")
        if acc is None:
            continue
        if acc >= threshold and row["spurious_removed_fraction"] >= targets.removal:
            return row["cumulative_mb"]
    return None


def phase_cost_to_targets(
    record: MetricsRecord, baseline_best_accuracy: Optional[float], targets: TargetSpec
) -> Optional[Dict[str, float]]:
    """`cost_to_targets` split into the bytes spent before and after feature selection."""
    total = cost_to_targets(record, baseline_best_accuracy, targets)
    if total is None:
        return None
    pre = 0.0
    for row in record.rows:
        if row["phase"] in (Phase.PRETRAIN.value, Phase.TRAIN.value):
            pre = min(row["cumulative_mb"], total)
    return {"before_selection": pre, "after_selection": total - pre}
