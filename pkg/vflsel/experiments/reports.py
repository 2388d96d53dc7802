import json
import os
from typing import Any, Dict, List, Optional

import pandas as pd
from rich.console import Console
from rich.table import Table

from ..errors import DataError
from ..metrics import MetricsRecord
from ..utils import to_jsonable

REPORT_FILE = "report.json"
SERIES_FILE = "series.csv"


def write_report(method_dir: str, record: MetricsRecord, config) -> str:
    """Write report.json (config echo, seed table, record) and series.csv; output is byte-stable."""
    os.makedirs(method_dir, exist_ok=True)
    doc = {
        "config": config.to_dict(),
        "seed_table": config.seed_table(),
        "record": record.to_dict(),
    }
    path = os.path.join(method_dir, REPORT_FILE)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(doc), f, indent=2, sort_keys=True)
        f.write("\n")
    record.series().to_csv(os.path.join(method_dir, SERIES_FILE), index=False, float_format="%.17g")
    return path


def read_report(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError("Malformed report {}: {}".format(path, e))
    if not isinstance(doc, dict) or "record" not in doc:
        raise DataError("Malformed report {}: no 'record' entry.".format(path))
    return doc


def find_reports(run_dir: str) -> List[str]:
    if not os.path.isdir(run_dir):
        raise DataError("Run directory not found: {}".format(run_dir))
    out = list()
    for name in sorted(os.listdir(run_dir)):
        path = os.path.join(run_dir, name, REPORT_FILE)
        if os.path.isfile(path):
            out.append(path)
    return out


def summarize_run_dir(run_dir: str) -> pd.DataFrame:
    """One row per method report: traffic, cost to targets, final accuracy and spurious removal."""
    paths = find_reports(run_dir)
    if len(paths) == 0:
        raise DataError("No {} found under {}.".format(REPORT_FILE, run_dir))
    rows = list()
    for path in paths:
        record = MetricsRecord.from_dict(read_report(path)["record"])
        summary = record.extras.get("summary", dict())
        removal = record.removal()
        rows.append(
            {
                "method": record.method,
                "status": record.status,
                "total_mb": record.total_mb(),
                "cost_to_targets_mb": summary.get("cost_to_targets_mb"),
                "final_test_accuracy": record.last("test_accuracy"),
                "final_test_loss": record.last("test_loss"),
                "spurious_removed_pct": None if removal is None else 100.0 * removal,
            }
        )
    return pd.DataFrame(rows)


def _fmt(x: Optional[float], pattern: str) -> str:
    if x is None or (isinstance(x, float) and pd.isna(x)):
        return "-"
    return pattern.format(x)


def render_summary(df: pd.DataFrame, title: str = "run summary", console: Optional[Console] = None) -> None:
    table = Table(title=title)
    for col in ("method", "status", "total MB", "MB to targets", "test acc.", "test loss", "removed %"):
        table.add_column(col, justify="left" if col in ("method", "status") else "right")
    for row in df.to_dict(orient="records"):
        table.add_row(
            row["method"],
            row["status"],
            _fmt(row["total_mb"], "{:.4f}"),
            _fmt(row["cost_to_targets_mb"], "{:.4f}"),
            _fmt(row["final_test_accuracy"], "{:.4f}"),
            _fmt(row["final_test_loss"], "{:.6f}"),
            _fmt(row["spurious_removed_pct"], "{:.1f}"),
        )
    (console or Console()).print(table)
