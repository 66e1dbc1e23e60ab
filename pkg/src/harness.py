"""
This module contains the experiment orchestrator: ensemble preparation with
cached C_max, cell scheduling over a process pool or Celery, append-only
persistence with resume, operational metrics and plot-data emission.

Results directory layout::

    graphs/<graph_id>.json   ensemble members
    cmax.json                brute-force optimum per graph
    records.jsonl            one ExperimentRecord per line
    failures.jsonl           one failed cell per line
    traces/                  per-stage traces referenced by records
    plotdata/<figure>.csv    figure data
    metrics.prom             Prometheus text-format counters
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Sequence

import pandas as pd
import structlog
from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

from .cells import ESCAPE_STRATEGY, Cell, CellOutcome, enumerate_cells
from .config import ExperimentConfig, settings
from .errors import ConfigError
from .graphs import (
    Graph,
    generate_ensemble,
    load_graph,
    max_cut_brute_force,
    save_graph,
)
from .logging_config import configure_logging
from .metrics import RunMetrics, aggregate, compare, fit_cost_exponent
from .tasks import execute_cell, run_cell_task

logger = structlog.get_logger()

FIGURES = ("eps_vs_p", "r_vs_p", "rc_vs_p", "alpha_vs_iter", "saturation", "cost_scaling")

FIGURE_COLUMNS: dict[str, list[str]] = {
    "eps_vs_p": ["optimizer", "initializer", "k", "p", "mean_eps", "std_eps", "n_graphs"],
    "r_vs_p": ["optimizer", "initializer", "k", "p", "mean_r", "std_r"],
    "rc_vs_p": ["optimizer", "initializer", "k", "p", "mean_rc", "std_rc"],
    "alpha_vs_iter": ["graph_id", "optimizer", "k", "p", "seed", "iteration", "alpha"],
    "saturation": [
        "graph_id",
        "optimizer",
        "p",
        "alpha_layerwise",
        "alpha_fo",
        "alpha_escaped",
    ],
    "cost_scaling": ["optimizer", "initializer", "strategy", "k", "m", "n_depths"],
}

_ADAPTIVE_RANK = {"half_p": 1000, "half_p_minus_1": 1001}


def _k_rank(label: Any) -> int:
    if label is None or (isinstance(label, float) and pd.isna(label)):
        return -1
    text = str(label)
    return int(text) if text.isdigit() else _ADAPTIVE_RANK.get(text, 2000)


# --- ensemble --------------------------------------------------------------


def prepare_graphs(
    config: ExperimentConfig, out: Path | None = None
) -> list[tuple[Graph, int]]:
    """
    Builds the ensemble and its C_max values. With `out`, graphs are saved
    under graphs/ and C_max is cached in cmax.json across runs.
    """
    graphs = generate_ensemble(config.graphs) if config.graphs else []
    graphs += [load_graph(path) for path in config.graph_files]
    unique: dict[str, Graph] = {}
    for graph in graphs:
        unique.setdefault(graph.graph_id, graph)

    cache_path = out / "cmax.json" if out else None
    cache: dict[str, dict[str, Any]] = {}
    if cache_path and cache_path.exists():
        cache = json.loads(cache_path.read_text(encoding="utf-8"))

    prepared = []
    for graph_id, graph in unique.items():
        if graph_id not in cache:
            solution = max_cut_brute_force(graph)
            cache[graph_id] = {"c_max": solution.c_max, "witness": solution.witness}
            logger.info("cmax_computed", graph_id=graph_id, c_max=solution.c_max)
        if out:
            target = out / "graphs" / f"{graph_id}.json"
            if not target.exists():
                save_graph(graph, target)
        prepared.append((graph, int(cache[graph_id]["c_max"])))

    if cache_path:
        cache_path.write_text(json.dumps(cache, indent=2, sort_keys=True), encoding="utf-8")
    return prepared


# --- persistence -----------------------------------------------------------


class RecordStore:
    """
    Append-only record and failure logs of one results directory.

    Trace files are written before the records that reference them, and all
    records of a cell go out in one write, so a completed key always has its
    full set of records.
    """

    def __init__(self, out: Path) -> None:
        self.out = out
        self.records_path = out / "records.jsonl"
        self.failures_path = out / "failures.jsonl"

    def _read(self, path: Path) -> list[dict[str, Any]]:
        if not path.exists():
            return []
        rows = []
        with path.open(encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError:
                    # an interrupted final write leaves a partial line
                    logger.warning("record_line_skipped", path=str(path), line=lineno)
        return rows

    def load_records(self) -> list[dict[str, Any]]:
        return self._read(self.records_path)

    def load_failures(self) -> list[dict[str, Any]]:
        return self._read(self.failures_path)

    def completed_keys(self) -> set[str]:
        return {row["cell_key"] for row in self.load_records()}

    def _ends_mid_line(self) -> bool:
        if not self.records_path.exists() or self.records_path.stat().st_size == 0:
            return False
        with self.records_path.open("rb") as handle:
            handle.seek(-1, 2)
            return handle.read(1) != b"\n"

    def append(self, outcome: CellOutcome) -> None:
        if outcome.status == "failed":
            with self.failures_path.open("a", encoding="utf-8") as handle:
                handle.write(
                    json.dumps(
                        {"cell_key": outcome.cell_key, "error": outcome.error},
                        sort_keys=True,
                    )
                    + "\n"
                )
            return
        for name, trace in outcome.traces.items():
            path = self.out / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(trace, indent=2), encoding="utf-8")
        lines = "".join(
            json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n"
            for record in outcome.records
        )
        if self._ends_mid_line():
            lines = "\n" + lines
        with self.records_path.open("a", encoding="utf-8") as handle:
            handle.write(lines)
            handle.flush()


# --- telemetry -------------------------------------------------------------


class ExperimentTelemetry:
    """Prometheus counters for one run, kept out of the global registry."""

    def __init__(self) -> None:
        self.registry = CollectorRegistry()
        self.cells = Counter(
            "itlw_cells_total",
            "Cells finished, by status",
            ["status"],
            registry=self.registry,
        )
        self.evaluations = Counter(
            "itlw_objective_evaluations_total",
            "Objective evaluations counted in record nfev",
            ["strategy", "optimizer"],
            registry=self.registry,
        )
        self.duration = Histogram(
            "itlw_cell_duration_seconds",
            "Wall-clock time per cell",
            buckets=(0.1, 0.5, 1, 5, 15, 60, 300, 900, 3600),
            registry=self.registry,
        )

    def observe(self, outcome: CellOutcome) -> None:
        self.cells.labels(status=outcome.status).inc()
        self.duration.observe(outcome.wall_time)
        for record in outcome.records:
            self.evaluations.labels(
                strategy=record.strategy, optimizer=record.optimizer
            ).inc(record.nfev)

    def write(self, out: Path) -> Path:
        path = out / "metrics.prom"
        write_to_textfile(str(path), self.registry)
        return path


# --- execution -------------------------------------------------------------


def _outcomes(
    payloads: Sequence[dict[str, Any]], executor: str, jobs: int
) -> Iterator[dict[str, Any]]:
    if executor == "celery":
        pending = [run_cell_task.delay(payload) for payload in payloads]
        for result in pending:
            yield result.get(timeout=settings.CELERY_RESULT_TIMEOUT)
        return
    if jobs == 1:
        for payload in payloads:
            yield execute_cell(payload)
        return
    with ProcessPoolExecutor(
        max_workers=jobs,
        initializer=configure_logging,
        initargs=(settings.LOG_LEVEL, settings.LOG_JSON),
    ) as pool:
        futures = [pool.submit(execute_cell, payload) for payload in payloads]
        for future in as_completed(futures):
            yield future.result()


@dataclass(frozen=True)
class RunSummary:
    out: Path
    total: int
    skipped: int
    succeeded: int
    failed: int

    @property
    def scheduled(self) -> int:
        return self.total - self.skipped


def run_experiment(
    config: ExperimentConfig,
    out: Path | None = None,
    executor: str | None = None,
    jobs: int | None = None,
    dry_run: bool = False,
) -> RunSummary:
    """
    Runs every cell of `config` not yet recorded in the results directory.

    Records are appended as cells finish; per-cell failures go to
    failures.jsonl and are retried by the next run.
    """
    out = Path(out or config.output_dir or settings.RESULTS_DIR)
    executor = executor or settings.EXECUTOR
    jobs = jobs or config.jobs or settings.JOBS
    if executor not in ("process", "celery"):
        raise ConfigError(f"unknown executor {executor!r}")

    graphs = prepare_graphs(config, None if dry_run else out)
    cells = enumerate_cells(config, graphs)
    store = RecordStore(out)
    done = store.completed_keys()
    todo: list[Cell] = [cell for cell in cells if cell.cell_key not in done]
    logger.info(
        "experiment_planned",
        name=config.name,
        graphs=len(graphs),
        cells=len(cells),
        skipped=len(cells) - len(todo),
        executor=executor,
        jobs=jobs,
    )
    if dry_run:
        return RunSummary(out, len(cells), len(cells) - len(todo), 0, 0)

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.model_dump_json(indent=2), encoding="utf-8")
    telemetry = ExperimentTelemetry()
    succeeded = failed = 0
    payloads = [cell.model_dump(mode="json") for cell in todo]
    for raw in _outcomes(payloads, executor, jobs):
        outcome = CellOutcome.model_validate(raw)
        store.append(outcome)
        telemetry.observe(outcome)
        if outcome.status == "ok":
            succeeded += 1
        else:
            failed += 1
    telemetry.write(out)
    logger.info("experiment_finished", succeeded=succeeded, failed=failed, out=str(out))
    return RunSummary(out, len(cells), len(cells) - len(todo), succeeded, failed)


# --- plot data -------------------------------------------------------------


def _run_metrics(out: Path) -> list[RunMetrics]:
    return [RunMetrics.model_validate(row) for row in RecordStore(out).load_records()]


def _comparison_frame(records: list[RunMetrics]) -> pd.DataFrame:
    rows = [item.model_dump() for item in compare(records)]
    frame = pd.DataFrame(rows)
    if not frame.empty:
        frame = frame.rename(columns={"k_rule": "k", "epsilon": "eps", "r_c": "rc"})
    return frame


def _sorted_by_k_p(frame: pd.DataFrame, extra: Sequence[str] = ()) -> pd.DataFrame:
    frame = frame.assign(_rank=frame["k"].map(_k_rank))
    order = ["_rank", "p", *extra]
    return frame.sort_values(order, kind="mergesort").drop(columns="_rank")


def _comparison_figure(
    comparisons: pd.DataFrame, value: str, columns: list[str]
) -> pd.DataFrame:
    if comparisons.empty:
        return pd.DataFrame(columns=columns)
    source = comparisons.dropna(subset=[value])
    if source.empty:
        return pd.DataFrame(columns=columns)
    summary = aggregate(
        source.to_dict("records"), ["optimizer", "initializer", "k", "p"], [value]
    )
    summary = summary.rename(columns={"count": "n_graphs"})
    return _sorted_by_k_p(summary, ["optimizer", "initializer"])[columns]


def _alpha_vs_iter(out: Path, columns: list[str]) -> pd.DataFrame:
    rows = [
        {
            "graph_id": row["graph_id"],
            "optimizer": row["optimizer"],
            "k": row.get("k_rule"),
            "p": row["p"],
            "seed": row["seed"],
            "iteration": iteration,
            "alpha": alpha,
        }
        for row in RecordStore(out).load_records()
        if row["strategy"] == "itlw"
        for iteration, alpha in enumerate(row.get("iteration_alphas", []), start=1)
    ]
    if not rows:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame(rows, columns=columns)
    return _sorted_by_k_p(frame, ["graph_id", "optimizer", "seed", "iteration"])


def _saturation(records: list[RunMetrics], columns: list[str]) -> pd.DataFrame:
    layerwise = [rec for rec in records if rec.strategy == "layerwise"]
    if not layerwise:
        return pd.DataFrame(columns=columns)
    best_fo: dict[tuple[str, str, int], float] = {}
    escaped: dict[tuple[str, str, int], float] = {}
    for rec in records:
        key = (rec.graph_id, rec.optimizer, rec.p)
        if rec.strategy == "fo":
            best_fo[key] = max(best_fo.get(key, 0.0), rec.alpha)
        elif rec.strategy == ESCAPE_STRATEGY:
            escaped[key] = rec.alpha
    rows = [
        {
            "graph_id": rec.graph_id,
            "optimizer": rec.optimizer,
            "p": rec.p,
            "alpha_layerwise": rec.alpha,
            "alpha_fo": best_fo.get((rec.graph_id, rec.optimizer, rec.p)),
            "alpha_escaped": escaped.get((rec.graph_id, rec.optimizer, rec.p)),
        }
        for rec in layerwise
    ]
    frame = pd.DataFrame(rows, columns=columns)
    return frame.sort_values(["graph_id", "optimizer", "p"], kind="mergesort")


def _cost_scaling(records: list[RunMetrics], columns: list[str]) -> pd.DataFrame:
    trained = [rec for rec in records if rec.strategy in ("itlw", "fo")]
    if not trained:
        return pd.DataFrame(columns=columns)
    frame = pd.DataFrame([rec.model_dump() for rec in trained])
    frame["k"] = frame["k_rule"].fillna("-")
    means = aggregate(
        frame.to_dict("records"), ["optimizer", "initializer", "strategy", "k", "p"], ["nfev"]
    )
    rows = []
    for (optimizer, initializer, strategy, k), group in means.groupby(
        ["optimizer", "initializer", "strategy", "k"], sort=True
    ):
        if group["p"].nunique() < 2:
            continue
        rows.append(
            {
                "optimizer": optimizer,
                "initializer": initializer,
                "strategy": strategy,
                "k": k,
                "m": fit_cost_exponent(group["p"].tolist(), group["mean_nfev"].tolist()),
                "n_depths": int(group["p"].nunique()),
            }
        )
    return pd.DataFrame(rows, columns=columns)


def figure_frame(out: Path, figure: str) -> pd.DataFrame:
    if figure not in FIGURE_COLUMNS:
        raise ConfigError(f"unknown figure {figure!r}; choose from {list(FIGURES)}")
    columns = FIGURE_COLUMNS[figure]
    if figure == "alpha_vs_iter":
        return _alpha_vs_iter(out, columns)
    records = _run_metrics(out)
    if figure == "saturation":
        return _saturation(records, columns)
    if figure == "cost_scaling":
        return _cost_scaling(records, columns)
    value = {"eps_vs_p": "eps", "r_vs_p": "r", "rc_vs_p": "rc"}[figure]
    return _comparison_figure(_comparison_frame(records), value, columns)


def emit_plot_data(out: str | Path, figures: Sequence[str] | None = None) -> list[Path]:
    """Writes one CSV per figure under plotdata/; no records gives header-only files."""
    out = Path(out)
    target = out / "plotdata"
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for figure in figures or FIGURES:
        frame = figure_frame(out, figure)
        path = target / f"{figure}.csv"
        frame.to_csv(path, index=False)
        written.append(path)
        logger.info("plot_data_written", figure=figure, rows=len(frame), path=str(path))
    return written


def summary_tables(out: str | Path) -> dict[str, pd.DataFrame]:
    """Mean epsilon and mean r per (optimizer, initializer, k, p), as aggregate() reports them."""
    comparisons = _comparison_frame(_run_metrics(Path(out)))
    return {
        "eps": _comparison_figure(comparisons, "eps", FIGURE_COLUMNS["eps_vs_p"]),
        "r": _comparison_figure(comparisons, "r", FIGURE_COLUMNS["r_vs_p"]),
    }
