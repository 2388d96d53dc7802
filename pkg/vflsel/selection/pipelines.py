import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from ..errors import ConfigError, RunFailedError
from ..metrics import MetricsRecord, MetricsTracker, live_masks
from ..nn.losses import LossKind
from ..protocol.ledger import Phase
from ..protocol.system import VflSystem
from ..protocol.training import evaluate, train_epochs
from ..utils import derive_seed, get_logger
from .stages import (
    SignificantComponentSet,
    extract_mask,
    freeze_embeddings,
    pretrain,
    refine,
    select_components,
    select_local_features,
)


@dataclass
class SelectionSettings:
    """Hyper-parameters of one selection pipeline run.

    Attributes:
        loss_kind: training loss of the VFL task
        batch_size: mini-batch size of every stage
        seed: seed of the batch schedules (each stage derives its own)
        pretrain_epochs: communication epochs of Stage 1
        server_epochs: local epochs of Stage 2
        party_epochs: local epochs of Stage 3
        post_fs_epochs: communication epochs after selection
        train_epochs: communication epochs of the single-phase baselines
        lambda_server: group lasso strength of Stage 2
        lambda_party: group lasso strength per party (Stage 3, or in-loop for the group lasso baseline)
        server_step: constant P-SGD step size of Stage 2
        party_step: constant P-SGD step size of Stage 3
        prune_components: drop non-significant embedding components from the wire after selection
        n_jobs: parties run in parallel threads during Stage 3 when != 1
        plateau_patience: stop Stage 2/3 early once the loss stalls for this many epochs (None: fixed epochs)
        plateau_tol: minimum improvement that resets the plateau counter
        progress: show progress bars on communicating phases
    """

    loss_kind: LossKind = LossKind.SQUARED_ERROR
    batch_size: int = 128
    seed: int = 0
    pretrain_epochs: int = 10
    server_epochs: int = 150
    party_epochs: int = 150
    post_fs_epochs: int = 10
    train_epochs: int = 20
    lambda_server: float = 0.1
    lambda_party: Union[float, List[float]] = 0.1
    server_step: float = 0.01
    party_step: float = 0.01
    prune_components: bool = False
    n_jobs: int = 1
    plateau_patience: Optional[int] = None
    plateau_tol: float = 0.0
    progress: bool = False

    def __post_init__(self):
        self.loss_kind = LossKind(self.loss_kind)

    def party_lambdas(self, n_parties: int) -> List[float]:
        if isinstance(self.lambda_party, (int, float)):
            out = [float(self.lambda_party)] * n_parties
        else:
            out = [float(x) for x in self.lambda_party]
        if len(out) != n_parties:
            raise ConfigError("lambda_party lists {} values for {} parties.".format(len(out), n_parties))
        if any(x < 0 or not np.isfinite(x) for x in out):
            raise ConfigError("lambda_party must be finite and >= 0; got {}.".format(out))
        return out


class FeatureSelectionReport(MetricsRecord):
    """Outcome of one pipeline; a MetricsRecord filled by the selection stages."""


def _start(method: str, system: VflSystem, spurious_flags, tracker, logger):
    if system.n_samples("train") == 0:
        raise ConfigError("The training split is empty.")
    flags = [np.asarray(x, dtype=bool) for x in spurious_flags]
    if len(flags) != system.n_parties:
        raise ConfigError("Got spurious flags for {} parties; the system has {}.".format(len(flags), system.n_parties))
    report = FeatureSelectionReport(method=method, spurious_flags=[x.tolist() for x in flags])
    if logger is None:
        logger = get_logger("vflsel-selection")
    return report, logger


def _finish(report: FeatureSelectionReport, system: VflSystem, tracker: MetricsTracker, logger) -> None:
    report.final_mask = [x.tolist() for x in live_masks(system)]
    report.ledger = system.ledger.snapshot()
    report.rows = tracker.rows
    removed = [int(np.sum(~np.asarray(x))) for x in report.final_mask]
    logger.info(
        "[{}] removed features per party {}; total traffic {:.4f} MB.".format(
            report.method, removed, system.ledger.total_bytes / 1e6
        )
    )


def _fail(report, system, tracker, logger, e: Exception):
    _finish(report, system, tracker, logger)
    report.status = "failed"
    report.error = "{}: {}".format(type(e).__name__, e)
    logger.error("[{}] failed: {}".format(report.method, report.error))
    return RunFailedError(report.error, report=report)


def _selection_run(
    method: str,
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker],
    logger: Optional[logging.Logger],
    select_server: bool,
) -> FeatureSelectionReport:
    report, logger = _start(method, system, spurious_flags, tracker, logger)
    if tracker is None:
        tracker = MetricsTracker(settings.loss_kind, spurious_flags, logger=logger)
    lams = settings.party_lambdas(system.n_parties)
    try:
        tracker.log_system(system, Phase.PRETRAIN, epoch=system.pretrained_epochs - 1)
        # a system handed over part-way (a shared checkpoint) only trains the missing epochs
        remaining = settings.pretrain_epochs - system.pretrained_epochs
        if remaining > 0:
            pretrain(
                system,
                remaining,
                settings.loss_kind,
                batch_size=settings.batch_size,
                seed=derive_seed(settings.seed, "pretrain"),
                on_epoch=tracker.epoch_hook(Phase.PRETRAIN),
                progress=settings.progress,
            )
        for split in ("train", "test"):
            if split in system.labels:
                loss, acc = evaluate(system, split, settings.loss_kind)
                report.extras["pretrain_{}_loss".format(split)] = loss
                report.extras["pretrain_{}_accuracy".format(split)] = acc

        frozen = system.frozen if system.frozen is not None else freeze_embeddings(system)
        masks = live_masks(system)
        tracker.log_local(system, Phase.STAGE2_UPLOAD, 0, masks, [frozen.dims()[m] for m in frozen.parties], None)

        if select_server:

            def _stage2(net, epoch, loss):
                tracker.log_local(system, Phase.STAGE2_UPLOAD, epoch, masks, list(), loss)

            server, components, history = select_components(
                system.server,
                frozen,
                system.labels["train"],
                settings.lambda_server,
                settings.server_step,
                settings.server_epochs,
                settings.loss_kind,
                batch_size=settings.batch_size,
                seed=derive_seed(settings.seed, "stage2"),
                plateau_patience=settings.plateau_patience,
                plateau_tol=settings.plateau_tol,
                on_epoch=_stage2,
            )
            sizes = components.sizes(system.n_parties)
            for row in tracker.rows[-len(history):]:
                row["significant_components"] = sizes
            system.server = server
            report.extras["stage2_loss"] = history[-1]
            logger.info("[{}] significant components per party: {}".format(method, sizes))
        else:
            components = SignificantComponentSet.everything(frozen.dims())
            report.extras["components_override"] = "all"
        report.components = components.to_lists(system.n_parties)

        trails = select_local_features(
            system,
            frozen,
            components,
            lams,
            settings.party_step,
            settings.party_epochs,
            batch_size=settings.batch_size,
            seed=settings.seed,
            n_jobs=settings.n_jobs,
            plateau_patience=settings.plateau_patience,
            plateau_tol=settings.plateau_tol,
        )
        n_local = max([len(t["loss"]) for t in trails.values()], default=0)
        for epoch in range(n_local):
            epoch_masks = list()
            total = 0.0
            for m in range(system.n_parties):
                trail = trails.get(m)
                if trail is None or len(trail["surviving"]) == 0:
                    epoch_masks.append(masks[m])
                    continue
                t = min(epoch, len(trail["surviving"]) - 1)
                epoch_masks.append(trail["surviving"][t])
                total += trail["loss"][t]
            tracker.log_local(system, Phase.STAGE3, epoch, epoch_masks, components.sizes(system.n_parties), total)

        mask = extract_mask(system)
        for split in ("train", "test"):
            if split in system.labels:
                loss, acc = evaluate(system, split, settings.loss_kind)
                report.extras["selected_{}_loss".format(split)] = loss
                report.extras["selected_{}_accuracy".format(split)] = acc
        selected_sizes = components.sizes(system.n_parties)
        tracker.log_system(system, Phase.STAGE3, epoch=n_local, components=selected_sizes)

        refine(
            system,
            mask,
            settings.post_fs_epochs,
            settings.loss_kind,
            batch_size=settings.batch_size,
            seed=settings.seed,
            components=components,
            prune=settings.prune_components,
            on_epoch=tracker.epoch_hook(Phase.POST_FS, components=selected_sizes),
            progress=settings.progress,
        )
    except Exception as e:
        raise _fail(report, system, tracker, logger, e) from e
    _finish(report, system, tracker, logger)
    return report


def less_vfl_run(
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker] = None,
    logger: Optional[logging.Logger] = None,
) -> FeatureSelectionReport:
    """Pre-train, freeze embeddings, select embedding components on the server, select features locally on
    every party, then refine with the surviving features."""
    return _selection_run("less_vfl", system, settings, spurious_flags, tracker, logger, select_server=True)


def local_lasso_run(
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker] = None,
    logger: Optional[logging.Logger] = None,
) -> FeatureSelectionReport:
    """Same pipeline without server-side component selection: every component counts as significant."""
    return _selection_run("local_lasso", system, settings, spurious_flags, tracker, logger, select_server=False)


def _single_phase_run(
    method: str,
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker],
    logger: Optional[logging.Logger],
    regularized: bool,
) -> FeatureSelectionReport:
    report, logger = _start(method, system, spurious_flags, tracker, logger)
    if tracker is None:
        tracker = MetricsTracker(settings.loss_kind, spurious_flags, logger=logger)
    lams = settings.party_lambdas(system.n_parties) if regularized else None
    try:
        tracker.log_system(system, Phase.TRAIN, epoch=-1)
        train_epochs(
            system,
            settings.train_epochs,
            settings.loss_kind,
            Phase.TRAIN,
            batch_size=settings.batch_size,
            seed=derive_seed(settings.seed, "pretrain"),
            regularized=lams,
            on_epoch=tracker.epoch_hook(Phase.TRAIN),
            progress=settings.progress,
        )
    except Exception as e:
        raise _fail(report, system, tracker, logger, e) from e
    _finish(report, system, tracker, logger)
    return report


def vfl_run(
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker] = None,
    logger: Optional[logging.Logger] = None,
) -> FeatureSelectionReport:
    """Standard VFL training without any selection."""
    return _single_phase_run("vfl", system, settings, spurious_flags, tracker, logger, regularized=False)


def group_lasso_run(
    system: VflSystem,
    settings: SelectionSettings,
    spurious_flags: Sequence[np.ndarray],
    tracker: Optional[MetricsTracker] = None,
    logger: Optional[logging.Logger] = None,
) -> FeatureSelectionReport:
    """Standard VFL training where each party takes proximal steps on a group lasso penalty of its inputs."""
    return _single_phase_run("group_lasso", system, settings, spurious_flags, tracker, logger, regularized=True)
