"""Summaries of finished sweeps: a delimited table plus figures."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .experiment import FAILED, format_axis_value, table_column
from .training import read_report_csv


@dataclass
class ReportOutput:
    axis: str
    table_path: Path
    figures: list[Path] = field(default_factory=list)
    rows: list[list[str]] = field(default_factory=list)


def _load_sweep(sweep_dir: Path) -> dict:
    path = sweep_dir / "sweep.json"
    if not path.is_file():
        raise ConfigError(f"{sweep_dir}: no sweep.json; is this a sweep output directory?")
    return json.loads(path.read_text(encoding="utf-8"))


def _mean_curve(report_csv: Path, column: str) -> list[float]:
    by_epoch = defaultdict(list)
    for row in read_report_csv(report_csv):
        if row.get(column, "") != "":
            by_epoch[int(row["epoch"])].append(float(row[column]))
    return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def build_report(sweep_dirs: Sequence, out_dir, figures: bool = True) -> list[ReportOutput]:
    """One table (and figure set) per swept axis found among ``sweep_dirs``.

    Sweeps over the same axis on different datasets merge into one table whose
    columns are ``<dataset>/<model>``.  Cells read ``mean±std`` of the final
    validation accuracy across split seeds, or ``FAILED``.
    """
    if not sweep_dirs:
        raise ConfigError("report needs at least one sweep directory")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_axis = defaultdict(list)
    for d in sweep_dirs:
        sweep = _load_sweep(Path(d))
        by_axis[sweep["axis"]].append(sweep)

    outputs = []
    for axis, sweeps in by_axis.items():
        cells, columns, values = {}, [], []
        series = defaultdict(list)
        curves = defaultdict(dict)
        for sweep in sweeps:
            for leg in sweep["legs"]:
                col = table_column(sweep["dataset"], leg["model"])
                value = float(leg["axis_value"])
                if col not in columns:
                    columns.append(col)
                if value not in values:
                    values.append(value)
                cells[(value, col)] = leg
                if leg["status"] == FAILED:
                    continue
                series[col].append((value, leg["mean_val_accuracy"], leg["std_val_accuracy"]))
                report_csv = Path(leg["run_dir"]) / "report.csv"
                if report_csv.is_file():
                    curves[col][f"{axis}={format_axis_value(value)}"] = _mean_curve(report_csv, "val_accuracy")

        rows = [[axis] + columns]
        for value in sorted(values):
            row = [format_axis_value(value)]
            for col in columns:
                leg = cells.get((value, col))
                if leg is None:
                    row.append("")
                elif leg["status"] == FAILED:
                    row.append(FAILED)
                else:
                    row.append(f"{leg['mean_val_accuracy']:.4f}±{leg['std_val_accuracy']:.4f}")
            rows.append(row)

        table_path = out_dir / f"table_{axis}.csv"
        with open(table_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
        result = ReportOutput(axis, table_path, rows=rows)
        if figures:
            from . import plotting

            result.figures.append(
                plotting.plot_axis_summary(out_dir / f"accuracy_vs_{axis}.png", axis, series)
            )
            if curves:
                result.figures.append(
                    plotting.plot_curves(out_dir / f"val_curves_{axis}.png", curves, "validation accuracy")
                )
        outputs.append(result)
    return outputs
