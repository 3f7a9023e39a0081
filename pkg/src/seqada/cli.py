"""Command-line front end.

::

    seqada run    --config exp.ini --out results [--seeds 0,1,2] [--force] [--jobs 4]
    seqada ablate --config exp.ini --out results
    seqada sweep  --config exp.ini --out results [--axis gamma]
    seqada plot   results/exp/metrics.csv [...] --kind budget_curve --out curve.svg

Exit status is 0 on success, 1 on a configuration or input error and 2 on
a runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__, report
from .config import SWEEP_AXES, ExperimentSpec, load
from .engine import ABLATIONS, RunConfig, Strategy, ablation_config, baseline_config, run_active_loop
from .errors import ConfigError, CsvFormatError, SchemaError, SeqadaError

log = logging.getLogger("seqada")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

ABLATION_COLUMNS = ["setting", "selection", "cold_start", "s1", "s2_labels", "im", "stage_order",
                    "n_seeds", "final_acc_mean", "final_acc_sd", "final_acc_median"]
SWEEP_COLUMNS = ["axis", "value", "budget_pct", "n_seeds", "final_acc_mean", "final_acc_sd", "final_acc_median"]


def _seed_job(spec: ExperimentSpec, config: RunConfig, seed: int) -> tuple[list[dict], list[str]]:
    source, target = spec.build_data(seed)
    logs = run_active_loop(config.replace(seed=seed), source, target)
    return report.metric_rows(seed, logs), [entry.to_json() for entry in logs]


def run_cells(spec: ExperimentSpec, configs: Sequence[RunConfig], jobs: int = 1) -> list[tuple[list[dict], list[str]]]:
    """Run every (config, seed) pair; results come back per config, seeds merged in order."""
    tasks = [(cfg, seed) for cfg in configs for seed in spec.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_seed_job, spec, cfg, seed) for cfg, seed in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_seed_job(spec, cfg, seed) for cfg, seed in tasks]
    n = len(spec.seeds)
    merged = []
    for i in range(len(configs)):
        chunk = results[i * n:(i + 1) * n]
        merged.append(([row for rows, _ in chunk for row in rows], [line for _, lines in chunk for line in lines]))
    return merged


def _final_stats(rows: Sequence[dict]) -> dict:
    final = [r["target_acc"] for r in report.final_rows(rows)]
    return {
        "n_seeds": len(final),
        "final_acc_mean": statistics.fmean(final),
        "final_acc_sd": statistics.stdev(final) if len(final) > 1 else 0.0,
        "final_acc_median": float(statistics.median(final)),
    }


def prepare_out(out: Path, name: str, force: bool) -> Path:
    target = out / name
    if target.exists() and any(target.iterdir()):
        if not force:
            raise ConfigError(f"output directory {target} already exists; pass --force to overwrite", field="out")
        shutil.rmtree(target)
    target.mkdir(parents=True, exist_ok=True)
    return target


def _write_run(directory: Path, rows: list[dict], lines: list[str], figures: bool = True) -> None:
    report.write_metrics(directory / "metrics.csv", rows)
    report.write_summary(directory / "summary.csv", rows)
    (directory / "rounds.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    if figures:
        for kind in ("budget_curve", "pseudo_acc", "misprediction"):
            report.plot_metrics({directory.name: rows}, kind, directory / f"{kind}.svg")


def cmd_run(spec: ExperimentSpec, out: Path, force: bool = False, jobs: int = 1,
            baseline: str | None = None) -> Path:
    """Run every seed. ``baseline`` switches to the conventional protocol
    (random or entropy selection, queried samples merged into the source)."""
    config = spec.config if baseline is None else baseline_config(spec.config, Strategy(baseline))
    directory = prepare_out(out, spec.name, force)
    [(rows, lines)] = run_cells(spec, [config], jobs)
    _write_run(directory, rows, lines)
    return directory


def ablation_row(name: str, config: RunConfig) -> dict:
    return {
        "setting": name,
        "selection": "random+loss" if config.cold_start else config.strategy.value,
        "cold_start": int(config.cold_start),
        "s1": int(config.enable_s1),
        "s2_labels": "pseudo" if config.use_pseudo_labels else "ground_truth",
        "im": int(config.enable_im),
        "stage_order": "S2,S1" if config.swap_stage_order else "S1,S2",
    }


def cmd_ablate(spec: ExperimentSpec, out: Path, force: bool = False, jobs: int = 1) -> Path:
    directory = prepare_out(out, spec.name, force)
    names = list(ABLATIONS)
    configs = [ablation_config(spec.config, name) for name in names]
    results = run_cells(spec, configs, jobs)
    table, series = [], {}
    for name, cfg, (rows, lines) in zip(names, configs, results):
        sub = directory / name
        sub.mkdir()
        _write_run(sub, rows, lines, figures=False)
        table.append({**ablation_row(name, cfg), **_final_stats(rows)})
        series[name] = rows
    report.write_table(directory / "ablation.csv", ABLATION_COLUMNS, table)
    report.plot_metrics(series, "ablation_bars", directory / "ablation_bars.svg")
    report.plot_metrics(series, "budget_curve", directory / "budget_curve.svg")
    return directory


def budget_ticks(values: Sequence[float]) -> tuple[float, int]:
    """Check that budget values are the evenly spaced round ticks ``0, b, 2b, ...``
    of one run; returns (total budget percent, rounds)."""
    ticks = sorted(float(v) for v in values)
    if len(ticks) < 2 or ticks[0] != 0.0:
        raise ConfigError("budget_values must start at 0 and list at least one positive budget",
                          field="sweep.budget_values")
    step = ticks[1]
    if any(abs(t - i * step) > 1e-9 for i, t in enumerate(ticks)):
        raise ConfigError("budget_values must be evenly spaced round ticks 0, b, 2b, ...",
                          field="sweep.budget_values")
    return ticks[-1], len(ticks) - 1


def sweep_cells(spec: ExperimentSpec, axis: str) -> list[tuple[object, RunConfig]]:
    """(axis value, config) for every run of the sweep."""
    sweep = spec.sweep
    if sweep is None or not sweep.values:
        raise ConfigError("sweep needs a non-empty [sweep] values list", field="sweep.values")
    base = spec.config
    if axis == "budget":
        cells = [(v, base.replace(budget_percent=float(v))) for v in sweep.values]
    else:
        if sweep.budget_values:
            total, rounds = budget_ticks(sweep.budget_values)
            base = base.replace(budget_percent=total, rounds=rounds, per_round_quota=None)
        cells = [(v, base.replace(**{axis: v})) for v in sweep.values]
    for _, cfg in cells:
        cfg.validate()
    return cells


def cmd_sweep(spec: ExperimentSpec, out: Path, axis: str | None = None, force: bool = False, jobs: int = 1) -> Path:
    """Grid over one axis. With ``budget_values`` each axis value is run once
    at the largest budget and every round contributes one cell, so the budget
    ticks are the annotation checkpoints of a single trajectory."""
    axis = axis or (spec.sweep.axis if spec.sweep else None)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}", field="sweep.axis")
    cells = sweep_cells(spec, axis)
    directory = prepare_out(out, spec.name, force)
    results = run_cells(spec, [cfg for _, cfg in cells], jobs)
    table = []
    per_round = axis != "budget" and bool(spec.sweep.budget_values)
    for (value, cfg), (rows, _) in zip(cells, results):
        if not per_round:
            table.append({"axis": axis, "value": value, "budget_pct": cfg.budget_percent, **_final_stats(rows)})
            continue
        step = cfg.budget_percent / cfg.rounds
        for rnd in range(cfg.rounds + 1):
            at_round = [dict(r, round=0) for r in rows if r["round"] == rnd]
            table.append({"axis": axis, "value": value, "budget_pct": rnd * step, **_final_stats(at_round)})
    report.write_table(directory / "sweep.csv", SWEEP_COLUMNS, table)
    if axis == "budget":
        report.plot_grid(table, "value", "axis", "final_acc_median", directory / "sweep.svg")
    else:
        report.plot_grid(table, "budget_pct", "value", "final_acc_median", directory / "sweep.svg")
    return directory


def cmd_plot(paths: Sequence[Path], kind: str, out: Path) -> Path:
    series = {}
    for path in paths:
        label = path.parent.name or path.stem
        while label in series:
            label += "'"
        series[label] = report.read_metrics(path)
    return report.plot_metrics(series, kind, out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqada", description="Sequential active domain adaptation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per round")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="experiment file")
        p.add_argument("--out", required=True, type=Path, help="parent output directory")
        p.add_argument("--seeds", help="comma separated seeds, overrides [run] seeds")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        return p

    run = experiment("run", "run the active loop for every seed")
    run.add_argument("--baseline", choices=[Strategy.RANDOM.value, Strategy.ENTROPY.value],
                     help="run a conventional selection baseline instead")
    experiment("ablate", "run the six ablation settings")
    sweep = experiment("sweep", "grid over one hyperparameter (and budget)")
    sweep.add_argument("--axis", choices=SWEEP_AXES, help="overrides [sweep] axis")

    plot = sub.add_parser("plot", help="render metrics files to an SVG figure")
    plot.add_argument("metrics", nargs="+", type=Path, help="metrics.csv files, one series each")
    plot.add_argument("--kind", required=True, choices=report.PLOT_KINDS)
    plot.add_argument("--out", required=True, type=Path, help="SVG file to write")
    return parser


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds must be comma separated integers, got {text!r}", field="seeds") from None
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"--seeds needs at least one non-negative seed, got {text!r}", field="seeds")
    return seeds


def _dispatch(args: argparse.Namespace) -> Path:
    if args.command == "plot":
        return cmd_plot(args.metrics, args.kind, args.out)
    spec = load(args.config)
    if args.seeds:
        spec.seeds = _parse_seeds(args.seeds)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}", field="jobs")
    if args.command == "run":
        return cmd_run(spec, args.out, args.force, args.jobs, args.baseline)
    if args.command == "sweep":
        return cmd_sweep(spec, args.out, args.axis, args.force, args.jobs)
    return cmd_ablate(spec, args.out, args.force, args.jobs)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        written = _dispatch(args)
    except FileNotFoundError as exc:
        print(f"seqada: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        where = f" [{exc.field}]" if exc.field else ""
        print(f"seqada: config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, CsvFormatError) as exc:
        print(f"seqada: input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SeqadaError, ArithmeticError, OSError) as exc:
        print(f"seqada: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(written)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
