import logging
import os
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..config import ExperimentConfig, resolve_lambda
from ..errors import RunFailedError
from ..nn.losses import LossKind
from ..protocol.ledger import Phase
from ..protocol.system import VflSystem
from ..selection.pipelines import SelectionSettings, group_lasso_run, less_vfl_run, local_lasso_run
from ..selection.stages import freeze_embeddings, pretrain
from ..utils import derive_seed, expand_grid, get_logger
from .runner import build_system, method_settings, prepare_data

GRID_FILE = "grid.csv"
GRID_RUNS_FILE = "grid_runs.csv"
PARAMS = ["method", "pretrain_epochs", "lambda_server", "lambda_party"]
METRICS = ["train_accuracy", "test_accuracy", "train_loss", "test_loss", "removal"]


def _run_point(
    run: Callable, system: VflSystem, settings: SelectionSettings, flags, row: Dict[str, Any], logger
) -> Dict[str, Any]:
    try:
        record = run(system, settings, flags)
    except RunFailedError as e:
        logger.error("Grid point {} failed: {}".format(row, e))
        row["status"] = "failed"
        return row
    row["status"] = "ok"
    row["train_accuracy"] = record.last("train_accuracy")
    row["test_accuracy"] = record.last("test_accuracy")
    row["train_loss"] = record.last("train_loss")
    row["test_loss"] = record.last("test_loss")
    row["removal"] = record.removal()
    for phase in Phase:
        row["{}_mb".format(phase.value)] = record.phase_mb().get(phase.value, 0.0)
    row["total_mb"] = record.total_mb()
    return row


def _selection_points(config: ExperimentConfig, method: str) -> List[Tuple[Optional[float], float]]:
    grid = config.grid
    if method == "less_vfl":
        lambdas = expand_grid({"lambda_server": grid.lambda_server, "lambda_party": grid.lambda_party})
        return [(float(s), float(m)) for s, m in lambdas.itertuples(index=False)]
    return [(None, float(m)) for m in grid.party_lambdas(method)]


def grid_search(
    config: ExperimentConfig, output_dir: Optional[str] = None, logger: Optional[logging.Logger] = None
) -> Tuple[pd.DataFrame, Dict[str, Optional[Dict[str, Any]]]]:
    """Sweep the configured selection methods over their settings, once per seed.

    LESS-VFL sweeps pre-training epochs and both lambdas, local lasso its party lambda and pre-training
    epochs. For every (seed, pre-training epochs) one checkpoint is pre-trained and frozen, and all their
    points start from copies of it, so the lambda sweep costs no extra communication. Group lasso trains
    from scratch for each party lambda. Per method, the winner has the highest mean final training accuracy
    (lowest training loss for regression) among settings that remove at least `targets.removal` of the
    spurious features on average.

    Returns:
        table aggregated over seeds (mean and std, one `method` column), and each method's winning row
        (None when no setting qualifies)
    """
    if logger is None:
        logger = get_logger("vflsel-experiments")
    data = prepare_data(config, logger=logger)
    grid = config.grid
    n_train = data.train.n_samples
    flags = data.party_flags()
    runs = {"less_vfl": less_vfl_run, "local_lasso": local_lasso_run}
    scalings = {"less_vfl": config.less_vfl.lambda_scaling, "local_lasso": config.local_lasso.lambda_scaling}
    selection = [m for m in ("less_vfl", "local_lasso") if m in grid.methods]

    rows = list()
    for seed in grid.seeds:
        if len(selection) > 0:
            settings = {m: method_settings(config, m, n_train, seed=seed) for m in selection}
            base = settings[selection[0]]
            checkpoint = build_system(config, data, seed=seed)
            for t0 in sorted(set(grid.pretrain_epochs)):
                # continue the same checkpoint up to t0 epochs; the batch plan resumes where it stopped
                pretrain(
                    checkpoint,
                    t0 - checkpoint.pretrained_epochs,
                    base.loss_kind,
                    batch_size=base.batch_size,
                    seed=derive_seed(base.seed, "pretrain"),
                )
                frozen_copy = checkpoint.copy()
                freeze_embeddings(frozen_copy)
                shared_mb = frozen_copy.ledger.total_bytes / 1e6
                for method in selection:
                    s = settings[method]
                    s.pretrain_epochs = t0
                    for lam_s, lam_m in _selection_points(config, method):
                        if lam_s is not None:
                            s.lambda_server = resolve_lambda(lam_s, scalings[method], n_train)
                        s.lambda_party = resolve_lambda(lam_m, scalings[method], n_train)
                        row = {
                            "seed": seed,
                            "method": method,
                            "pretrain_epochs": t0,
                            "lambda_server": lam_s,
                            "lambda_party": lam_m,
                            "shared_mb": shared_mb,
                        }
                        rows.append(_run_point(runs[method], frozen_copy.copy(), s, flags, row, logger))

        if "group_lasso" in grid.methods:
            s = method_settings(config, "group_lasso", n_train, seed=seed)
            for lam_m in grid.party_lambdas("group_lasso"):
                s.lambda_party = resolve_lambda(float(lam_m), config.group_lasso.lambda_scaling, n_train)
                row = {
                    "seed": seed,
                    "method": "group_lasso",
                    "pretrain_epochs": None,
                    "lambda_server": None,
                    "lambda_party": float(lam_m),
                    "shared_mb": 0.0,
                }
                system = build_system(config, data, seed=seed)
                rows.append(_run_point(group_lasso_run, system, s, flags, row, logger))

    runs_df = pd.DataFrame(rows)
    table = aggregate_grid(runs_df)
    winners = {m: pick_winner(table, config.loss_kind(), config.targets.removal, method=m) for m in grid.methods}
    out_dir = config.output_dir if output_dir is None else output_dir
    os.makedirs(out_dir, exist_ok=True)
    runs_df.to_csv(os.path.join(out_dir, GRID_RUNS_FILE), index=False, float_format="%.17g")
    table.to_csv(os.path.join(out_dir, GRID_FILE), index=False, float_format="%.17g")
    for method, winner in winners.items():
        if winner is None:
            logger.warning("No {} setting removes at least {:.0%} of the spurious features.".format(
                method, config.targets.removal))
        else:
            logger.info("Grid winner for {}: {}".format(method, {k: winner.get(k) for k in PARAMS}))
    return table, winners


def aggregate_grid(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and std over seeds of every metric, one row per (method, parameter setting).

    Parameters a method does not use stay empty in its rows.
    """
    ok = runs[runs["status"] == "ok"] if "status" in runs.columns else runs
    if len(ok) == 0:
        return pd.DataFrame(columns=PARAMS)
    ok = ok.copy()
    metrics = [c for c in METRICS if c in ok.columns]
    costs = [c for c in ok.columns if c.endswith("_mb")]
    for c in metrics + costs:
        ok[c] = pd.to_numeric(ok[c], errors="coerce")
    aggregations = dict()
    for c in metrics:
        aggregations[c + "_mean"] = (c, "mean")
        aggregations[c + "_std"] = (c, "std")
    for c in costs:
        aggregations[c] = (c, "mean")
    aggregations["n_seeds"] = ("seed", "count")
    aggregations["seeds"] = ("seed", lambda s: ";".join(str(x) for x in sorted(s)))

    tables = list()
    for _, sub in ok.groupby("method", sort=True):
        keys = [p for p in PARAMS if p in sub.columns and sub[p].notna().all()]
        tables.append(sub.groupby(keys, sort=True).agg(**aggregations).reset_index())
    table = pd.concat(tables, ignore_index=True, sort=False)
    for p in PARAMS:
        if p not in table.columns:
            table[p] = np.nan
    return table[PARAMS + [c for c in table.columns if c not in PARAMS]]


def pick_winner(
    table: pd.DataFrame, loss_kind: LossKind, removal_target: float, method: Optional[str] = None
) -> Optional[Dict[str, Any]]:
    if len(table) == 0 or "removal_mean" not in table.columns:
        return None
    if method is not None:
        table = table[table["method"] == method]
    eligible = table[table["removal_mean"] >= removal_target]
    if len(eligible) == 0:
        return None
    params = [p for p in PARAMS if p in eligible.columns]
    if LossKind(loss_kind) == LossKind.SOFTMAX_CROSS_ENTROPY:
        best = eligible.sort_values(["train_accuracy_mean"] + params, ascending=[False] + [True] * len(params))
    else:
        best = eligible.sort_values(["train_loss_mean"] + params, ascending=True)
    row = best.iloc[0].to_dict()
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in row.items()}
