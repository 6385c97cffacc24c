"""
Merges benchmark report CSVs into one comparison table and adds the
EE-minus-baseline accuracy delta (percentage points) for every EE row whose
baseline (same backbone, dataset and depth) is present.

Usage:
    python combine_reports.py report_a.csv report_b.csv [--out combined.csv]
"""

import argparse
import logging
import os

import numpy as np
import pandas as pd
from tabulate import tabulate

from gnn_train import REPORT_COLUMNS

# --- Configuration ---
COMBINED_FILE = "combined_report.csv"
KEY_COLUMNS = ["model", "dataset", "layers"]
EE_PREFIX = "EE-"


class ReportSchemaError(ValueError):
    def __init__(self, message, files):
        super().__init__(message)
        self.files = list(files)


def load_report(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in REPORT_COLUMNS if c not in df.columns]
    if missing:
        raise ReportSchemaError(f"{path}: missing column(s) {missing}", [path])
    return df[REPORT_COLUMNS]


def combine_reports(paths) -> pd.DataFrame:
    if not paths:
        raise ReportSchemaError("At least one report is required", [])
    frames = {}
    schema_problems = []
    for path in paths:
        try:
            frames[path] = load_report(path)
        except ReportSchemaError as e:
            schema_problems.append(str(e))
    if schema_problems:
        raise ReportSchemaError("; ".join(schema_problems), [p for p in paths if p not in frames])

    layer_sets = {path: sorted(set(df["layers"].astype(int))) for path, df in frames.items()}
    reference = layer_sets[paths[0]]
    conflicting = [p for p, layers in layer_sets.items() if layers != reference]
    if conflicting:
        listing = ", ".join(f"{p} (layers {layer_sets[p]})" for p in [paths[0]] + conflicting)
        raise ReportSchemaError(f"Conflicting layer counts across reports: {listing}", [paths[0]] + conflicting)

    combined = pd.concat(frames.values(), ignore_index=True)
    duplicated = combined.duplicated(subset=KEY_COLUMNS, keep="last")
    if duplicated.any():
        logging.warning(f"Dropping {int(duplicated.sum())} duplicated report rows (last file wins)")
        combined = combined[~duplicated]

    baseline = combined[~combined["model"].str.startswith(EE_PREFIX)].set_index(KEY_COLUMNS)["mean_acc"]
    deltas = []
    for row in combined.itertuples(index=False):
        if not row.model.startswith(EE_PREFIX):
            deltas.append(np.nan)
            continue
        key = (row.model[len(EE_PREFIX):], row.dataset, row.layers)
        deltas.append(row.mean_acc - baseline[key] if key in baseline.index else np.nan)
    combined = combined.assign(delta=deltas)
    return combined.sort_values(KEY_COLUMNS).reset_index(drop=True)


def print_combined(combined: pd.DataFrame) -> None:
    rows = []
    for row in combined.itertuples(index=False):
        delta = "" if np.isnan(row.delta) else f"{row.delta:+.2f}"
        rows.append([row.model, row.dataset, row.layers, f"{row.mean_acc:.2f} ± {row.std_acc:.2f}", row.seeds, delta])
    print(tabulate(rows, headers=["Model", "Dataset", "Layers", "Accuracy (%)", "Seeds", "EE delta"], tablefmt="simple"))


def main():
    parser = argparse.ArgumentParser(description="Merge benchmark reports and add EE-minus-baseline deltas.")
    parser.add_argument("reports", nargs="+", help="report CSV files")
    parser.add_argument("--out", default=COMBINED_FILE, help="combined CSV path")
    args = parser.parse_args()

    missing = [p for p in args.reports if not os.path.isfile(p)]
    if missing:
        print(f"Error: report file(s) not found: {missing}")
        return
    combined = combine_reports(args.reports)
    combined.to_csv(args.out, index=False)
    print_combined(combined)
    print(f"\nCombined {len(args.reports)} report(s) into {args.out}")


if __name__ == "__main__":
    main()
