# leaptt/plotting.py

import csv
import json
import os
from typing import Any, Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from leaptt.errors import ParseError  # noqa: E402

CSV_COLUMNS = ["source", "step", "meta_step", "loss", "valid_loss", "expected_distance"]

# (x key, y key) of every curve that is drawn when present
SERIES = [
    ("step", "loss"),
    ("step", "valid_loss"),
    ("meta_step", "expected_distance"),
]

Series = Dict[Tuple[str, str, str], List[Tuple[float, float]]]


def read_metrics(path: str) -> List[Dict[str, Any]]:
    """
    Reads a metrics JSONL file.

    Blank lines are ignored.

    Raises:
        ParseError: If a line is not a JSON object (1-based line number)
    """
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, number, f"invalid JSON: {e.msg}") from e
            if not isinstance(record, dict):
                raise ParseError(path, number, "expected a JSON object")
            records.append(record)
    return records


def collect_series(sources: Sequence[Tuple[str, List[Dict[str, Any]]]]) -> Series:
    """Groups (x, y) points per (source, x key, y key), in file order."""
    series: Series = {}
    for source, records in sources:
        for record in records:
            for x_key, y_key in SERIES:
                if x_key in record and y_key in record:
                    point = (float(record[x_key]), float(record[y_key]))
                    series.setdefault((source, x_key, y_key), []).append(point)
    return series


def plot_metrics(
    paths: Sequence[str], output_dir: str, name: str = "metrics"
) -> Tuple[str, str]:
    """
    Renders loss-vs-step and expected-distance-vs-meta-step curves.

    Writes ``<name>.svg`` (one panel per x axis) and ``<name>.csv`` with one
    row per JSONL record.

    Args:
        paths: Metrics JSONL files (ssl/leap/finetune)
        output_dir: Destination directory
        name: Base file name of both outputs

    Returns:
        (svg path, csv path)

    Raises:
        ParseError: If any input line is malformed
    """
    sources = [(os.path.basename(path), read_metrics(path)) for path in paths]
    os.makedirs(output_dir, exist_ok=True)

    csv_path = os.path.join(output_dir, f"{name}.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for source, records in sources:
            for record in records:
                writer.writerow([source] + [record.get(key, "") for key in CSV_COLUMNS[1:]])

    series = collect_series(sources)
    svg_path = os.path.join(output_dir, f"{name}.svg")
    fig, (loss_ax, distance_ax) = plt.subplots(1, 2, figsize=(10, 4))
    try:
        for (source, x_key, y_key), points in series.items():
            ax = distance_ax if x_key == "meta_step" else loss_ax
            xs, ys = zip(*points)
            ax.plot(xs, ys, label=f"{source}:{y_key}")

        loss_ax.set_xlabel("step")
        loss_ax.set_ylabel("loss")
        distance_ax.set_xlabel("meta step")
        distance_ax.set_ylabel("expected distance")
        for ax in (loss_ax, distance_ax):
            ax.grid(True, alpha=0.3)
            if ax.lines:
                ax.legend(fontsize="small")
        fig.tight_layout()

        with plt.rc_context({"svg.hashsalt": "leaptt"}):
            fig.savefig(svg_path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return svg_path, csv_path
