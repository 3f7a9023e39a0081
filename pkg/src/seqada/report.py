"""Delimited outputs (metrics, summary, ablation and sweep tables) and the
SVG figures rendered from them."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib
from matplotlib.figure import Figure

from .engine import RoundLog
from .errors import SchemaError

SCHEMA_LINE = "# seqada-metrics-schema: 1"
SCHEMA_VERSION = "1"

METRIC_COLUMNS = [
    "seed", "round", "budget_pct", "target_acc", "pseudo_acc", "high_mis", "low_mis",
    "class_cov", "mean_pair_dist", "L_loss", "L_im", "L_dis", "L_adv",
]
SUMMARY_METRICS = METRIC_COLUMNS[2:]
PLOT_KINDS = ("budget_curve", "pseudo_acc", "misprediction", "ablation_bars")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metric_rows(seed: int, logs: Iterable[RoundLog]) -> list[dict]:
    rows = []
    for entry in logs:
        m = entry.metrics
        rows.append({
            "seed": seed,
            "round": m.round,
            "budget_pct": m.budget_spent_percent,
            "target_acc": m.target_accuracy,
            "pseudo_acc": m.pseudo_label_accuracy,
            "high_mis": m.high_loss_misprediction_rate,
            "low_mis": m.low_loss_misprediction_rate,
            "class_cov": m.selected_class_coverage,
            "mean_pair_dist": m.selected_mean_pairwise_feature_distance,
            "L_loss": m.losses.get("L_loss", 0.0),
            "L_im": m.losses.get("L_im", 0.0),
            "L_dis": m.losses.get("L_dis", 0.0),
            "L_adv": m.losses.get("L_adv", 0.0),
        })
    return rows


def _write_table(path, columns: Sequence[str], rows: Iterable[dict], schema_line: str | None = None) -> None:
    buf = io.StringIO()
    if schema_line:
        buf.write(schema_line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_metrics(path, rows: Iterable[dict]) -> None:
    _write_table(path, METRIC_COLUMNS, rows, SCHEMA_LINE)


def read_metrics(path) -> list[dict]:
    """Parse a metrics file, checking the schema line and the columns."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"metrics file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# seqada-metrics-schema:"):
        raise SchemaError(f"{path}: missing schema line")
    version = lines[0].split(":", 1)[1].strip()
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema version {version!r}")
    reader = csv.DictReader(lines[1:])
    header = reader.fieldnames or []
    missing = [c for c in METRIC_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
    rows = []
    for raw in reader:
        row = {}
        for c in METRIC_COLUMNS:
            row[c] = int(raw[c]) if c in ("seed", "round", "class_cov") else float(raw[c])
        rows.append(row)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))


def summarize(rows: Sequence[dict]) -> list[dict]:
    """Mean and sample standard deviation of every metric per round."""
    by_round: dict[int, list[dict]] = defaultdict(list)
    for r in rows:
        by_round[r["round"]].append(r)
    out = []
    for rnd in sorted(by_round):
        group = by_round[rnd]
        entry = {"round": rnd, "n_seeds": len(group)}
        for c in SUMMARY_METRICS:
            entry[f"{c}_mean"], entry[f"{c}_sd"] = _mean_sd([float(g[c]) for g in group])
        out.append(entry)
    return out


def summary_columns() -> list[str]:
    return ["round", "n_seeds"] + [f"{c}_{s}" for c in SUMMARY_METRICS for s in ("mean", "sd")]


def write_summary(path, rows: Sequence[dict]) -> None:
    _write_table(path, summary_columns(), summarize(rows))


def write_table(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    _write_table(path, columns, rows)


def final_rows(rows: Sequence[dict]) -> list[dict]:
    last = max(r["round"] for r in rows)
    return [r for r in rows if r["round"] == last]


# ------------------------------------------------------------------ figures

_RC = {
    "svg.hashsalt": "seqada",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}


def _new_figure(width: float = 4.8, height: float = 3.2):
    fig = Figure(figsize=(width, height))
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def _per_round_means(rows: Sequence[dict], column: str) -> tuple[list[float], list[float], list[float]]:
    """(mean budget_pct, mean value, value sd) per round."""
    summary = summarize(rows)
    return ([s["budget_pct_mean"] for s in summary], [s[f"{column}_mean"] for s in summary],
            [s[f"{column}_sd"] for s in summary])


def plot_metrics(series: dict[str, Sequence[dict]], kind: str, path) -> Path:
    """Render one figure from metrics rows; ``series`` maps a legend label
    to the rows of one metrics file."""
    if kind not in PLOT_KINDS:
        raise SchemaError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    if not series or any(not rows for rows in series.values()):
        raise SchemaError("nothing to plot: empty metrics")
    with matplotlib.rc_context(_RC):
        fig, ax = _new_figure()
        if kind == "budget_curve":
            for label, rows in series.items():
                x, y, _ = _per_round_means(rows, "target_acc")
                ax.plot(x, [100 * v for v in y], marker="o", label=label)
            ax.set_xlabel("annotation budget (% of target)")
            ax.set_ylabel("target accuracy (%)")
        elif kind == "pseudo_acc":
            for label, rows in series.items():
                summary = summarize(rows)
                ax.plot([s["round"] for s in summary], [100 * s["pseudo_acc_mean"] for s in summary],
                        marker="o", label=label)
            ax.set_xlabel("round")
            ax.set_ylabel("pseudo-label accuracy (%)")
        elif kind == "misprediction":
            for label, rows in series.items():
                x, hi, _ = _per_round_means(rows, "high_mis")
                _, lo, _ = _per_round_means(rows, "low_mis")
                ax.plot(x, [100 * v for v in hi], marker="o", label=f"{label} high-loss")
                ax.plot(x, [100 * v for v in lo], marker="s", linestyle="--", label=f"{label} low-loss")
            ax.set_xlabel("annotation budget (% of target)")
            ax.set_ylabel("misprediction rate (%)")
        else:
            labels = list(series)
            stats = [_mean_sd([r["target_acc"] for r in final_rows(series[k])]) for k in labels]
            ax.bar(range(len(labels)), [100 * m for m, _ in stats], yerr=[100 * s for _, s in stats],
                   color="0.6", edgecolor="0.2", capsize=3)
            ax.set_xticks(range(len(labels)))
            ax.set_xticklabels(labels, rotation=30, ha="right")
            ax.set_ylabel("final target accuracy (%)")
        if kind != "ablation_bars":
            ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def plot_grid(cells: Sequence[dict], row_key: str, col_key: str, value_key: str, path) -> Path:
    """One line per ``col_key`` value tracing ``value_key`` against ``row_key``."""
    lines: dict = defaultdict(list)
    for c in cells:
        lines[c[col_key]].append((c[row_key], c[value_key]))
    with matplotlib.rc_context(_RC):
        fig, ax = _new_figure()
        for key in sorted(lines):
            pts = sorted(lines[key])
            ax.plot([p[0] for p in pts], [100 * p[1] for p in pts], marker="o", label=f"{col_key}={key}")
        ax.set_xlabel(row_key)
        ax.set_ylabel("final target accuracy (%)")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)
