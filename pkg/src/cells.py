"""
This module contains the experiment work unit.

A cell is one independent piece of work: a single depth for `direct` runs,
a whole bilinear depth chain for `progressive` runs, or one classic
layerwise run. Cells are plain JSON payloads so they can cross process and
Celery boundaries; `run_cell` turns one into records and trace documents.
"""

from __future__ import annotations

import hashlib
import json
import time
from typing import Any, Literal

import structlog
from pydantic import BaseModel, ConfigDict, Field

from .config import ExperimentConfig
from .errors import InputError
from .graphs import Graph, graph_from_dict, graph_to_dict
from .metrics import RunMetrics, approximation_ratio
from .optimizers import get_optimizer, nelder_mead
from .simulator import ParameterVector, QaoaSimulator
from .strategies import (
    KRule,
    StageRecord,
    StrategyTrace,
    bootstrap_depths,
    depth_progressive_run,
    escape_saturation,
    full_optimization,
    itlw,
    layerwise_classic,
    random_init,
    tqa_init,
)

logger = structlog.get_logger()

LAYERWISE_INIT = "repeat_last"
ESCAPE_STRATEGY = "layerwise-itlw"


class Cell(BaseModel):
    """Everything a worker needs to run one unit without the experiment config."""

    model_config = ConfigDict(frozen=True)

    graph: dict[str, Any]
    c_max: int = Field(ge=1)
    strategy: Literal["itlw", "fo", "layerwise"]
    optimizer: str
    initializer: str
    mode: Literal["progressive", "direct"]
    k_rule: str | None = None
    p_start: int = Field(ge=1)
    p_target: int = Field(ge=1)
    seed: int = 0
    global_seed: int = 0
    escape_k: int | None = None

    @property
    def graph_id(self) -> str:
        return graph_from_dict(self.graph).graph_id

    @property
    def cell_key(self) -> str:
        identity = self.model_dump(exclude={"graph", "c_max"})
        identity["graph_id"] = self.graph_id
        blob = json.dumps(identity, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class ExperimentRecord(RunMetrics):
    """One line of records.jsonl."""

    cell_key: str
    graph_class: str
    n: int
    c_max: int
    connected: bool
    params: dict[str, list[float]]
    trace_file: str
    wall_time: float
    init_nfev: int = 0
    bootstrap_nfev: int = 0
    converged: bool = True
    iteration_alphas: list[float] = Field(default_factory=list)


class CellOutcome(BaseModel):
    cell_key: str
    status: Literal["ok", "failed"]
    records: list[ExperimentRecord] = Field(default_factory=list)
    traces: dict[str, dict[str, Any]] = Field(default_factory=dict)
    error: str | None = None
    wall_time: float = 0.0


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary JSON-serializable parts."""
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def enumerate_cells(
    config: ExperimentConfig, graphs: list[tuple[Graph, int]]
) -> list[Cell]:
    """
    Every cell of the experiment, in a stable order.

    FO runs once per (graph, optimizer, initializer, depth, seed) and is
    shared by every k of ITLW. Only random initialization uses the seed list.
    """
    trains = bool({"itlw", "fo"} & set(config.strategies))
    cells: list[Cell] = []
    for graph, c_max in graphs:
        if c_max < 1:
            logger.warning("graph_skipped_no_edges", graph_id=graph.graph_id)
            continue
        payload = graph_to_dict(graph)
        for optimizer in config.optimizers:
            base = {
                "graph": payload,
                "c_max": c_max,
                "optimizer": optimizer,
                "global_seed": config.seed,
            }
            if "layerwise" in config.strategies:
                cells.append(
                    Cell(
                        **base,
                        strategy="layerwise",
                        initializer=LAYERWISE_INIT,
                        mode=config.mode,
                        p_start=config.p_start,
                        p_target=config.p_target,
                        escape_k=config.escape_k,
                    )
                )
            if not trains:
                continue
            for initializer in config.initializers:
                seeds = config.init_seeds if initializer == "random" else [0]
                ranges = (
                    [(config.p_start, config.p_target)]
                    if config.mode == "progressive"
                    else [(p, p) for p in config.depths()]
                )
                for seed in seeds:
                    for p_start, p_target in ranges:
                        shared = {
                            **base,
                            "initializer": initializer,
                            "mode": config.mode,
                            "p_start": p_start,
                            "p_target": p_target,
                            "seed": seed,
                        }
                        cells.append(Cell(**shared, strategy="fo"))
                        if "itlw" in config.strategies:
                            for rule in config.k_rules:
                                cells.append(
                                    Cell(**shared, strategy="itlw", k_rule=rule.label)
                                )
    return cells


class _CellRun:
    """Bookkeeping for one running cell: shared simulator, records and traces."""

    def __init__(self, cell: Cell) -> None:
        self.cell = cell
        self.graph = graph_from_dict(cell.graph)
        self.simulator = QaoaSimulator(self.graph)
        self.optimizer = get_optimizer(cell.optimizer)
        self.key = cell.cell_key
        self.started = time.perf_counter()
        self.records: list[dict[str, Any]] = []
        self.traces: dict[str, dict[str, Any]] = {}

    def alpha(self, value: float) -> float:
        return approximation_ratio(value, self.cell.c_max)

    def add(
        self,
        trace: StrategyTrace,
        strategy: str,
        name: str,
        *,
        p: int | None = None,
        params: ParameterVector | None = None,
        value: float | None = None,
        nfev: int | None = None,
        k: int | None = None,
        k_rule: str | None = None,
        bootstrap_nfev: int = 0,
    ) -> None:
        trace_file = f"traces/{self.key}-{name}.json"
        self.traces[trace_file] = trace.to_dict()
        final = trace.final_value if value is None else value
        self.records.append(
            {
                "cell_key": self.key,
                "graph_id": self.graph.graph_id,
                "graph_class": self.graph.class_tag,
                "n": self.graph.n_vertices,
                "c_max": self.cell.c_max,
                "connected": self.graph.connected,
                "strategy": strategy,
                "optimizer": self.cell.optimizer,
                "initializer": self.cell.initializer,
                "mode": self.cell.mode,
                "p": trace.depth if p is None else p,
                "k": k,
                "k_rule": k_rule,
                "seed": self.cell.seed,
                "alpha": self.alpha(final),
                "value": final,
                "nfev": trace.optimization_nfev if nfev is None else nfev,
                "init_nfev": trace.init_nfev,
                "bootstrap_nfev": bootstrap_nfev,
                "converged": trace.converged,
                "params": (params or trace.final_params).to_dict(),
                "trace_file": trace_file,
                "iteration_alphas": [
                    self.alpha(v) for v in trace.iteration_values()
                ],
            }
        )

    def finish(self) -> CellOutcome:
        elapsed = time.perf_counter() - self.started
        return CellOutcome(
            cell_key=self.key,
            status="ok",
            records=[
                ExperimentRecord(**record, wall_time=elapsed) for record in self.records
            ],
            traces=self.traces,
            wall_time=elapsed,
        )


def _run_progressive(run: _CellRun) -> None:
    cell = run.cell
    rule = KRule.parse(cell.k_rule) if cell.k_rule else None
    bootstrap = bootstrap_depths(run.graph, run.optimizer, simulator=run.simulator)
    traces = depth_progressive_run(
        run.graph,
        cell.p_target,
        "itlw" if cell.strategy == "itlw" else "fo",
        run.optimizer,
        k_rule=rule,
        p_start=cell.p_start,
        bootstrap=bootstrap,
        simulator=run.simulator,
    )
    for trace in traces:
        run.add(
            trace,
            cell.strategy,
            f"p{trace.depth}",
            k=rule.resolve(trace.depth) if rule else None,
            k_rule=cell.k_rule,
            bootstrap_nfev=bootstrap.nfev,
        )


def _run_direct(run: _CellRun) -> None:
    cell = run.cell
    p = cell.p_target
    trace = StrategyTrace(cell.strategy)
    if cell.initializer == "tqa":
        # T is refined gradient-free whatever the cell optimizer is
        start = tqa_init(run.graph, p, nelder_mead, simulator=run.simulator)
        init = start.params
        trace.add(
            StageRecord(
                label=f"tqa T={start.t_star:.6g}",
                kind="init",
                depth=p,
                params=init,
                value=start.value,
                nfev_delta=start.nfev,
            )
        )
    elif cell.initializer == "random":
        init = random_init(p, derive_seed(cell.global_seed, run.graph.graph_id, p, cell.seed))
    else:
        raise InputError(f"initializer {cell.initializer!r} needs progressive mode")

    rule = KRule.parse(cell.k_rule) if cell.k_rule else None
    if cell.strategy == "itlw":
        assert rule is not None
        trained = itlw(run.graph, init, rule.resolve(p), run.optimizer, simulator=run.simulator)
    else:
        trained = full_optimization(run.graph, init, run.optimizer, simulator=run.simulator)
    trace.stages.extend(trained.stages)
    run.add(
        trace,
        cell.strategy,
        f"p{p}",
        # F(T) calls of a TQA start are part of the run cost
        nfev=trace.nfev,
        k=rule.resolve(p) if rule else None,
        k_rule=cell.k_rule,
    )


def _run_layerwise(run: _CellRun) -> None:
    cell = run.cell
    trace = layerwise_classic(run.graph, cell.p_target, run.optimizer, simulator=run.simulator)
    spent = 0
    for stage in trace.stages:
        spent += stage.nfev_delta
        if stage.depth < cell.p_start:
            continue
        # cumulative cost of growing the circuit to this depth
        run.add(
            trace,
            "layerwise",
            "layerwise",
            p=stage.depth,
            params=stage.params,
            value=stage.value,
            nfev=spent,
        )
    escape_k = cell.escape_k or 1
    report = escape_saturation(
        run.graph, trace, escape_k, run.optimizer, simulator=run.simulator
    )
    logger.info(
        "saturation_escape",
        plateau=report.plateau_value,
        escaped=report.escaped_value,
        strict_improvement=report.strict_improvement,
    )
    run.add(report.trace, ESCAPE_STRATEGY, "escape", k=escape_k, k_rule=str(escape_k))


def run_cell(cell: Cell) -> CellOutcome:
    """Runs one cell to completion; exceptions propagate to the caller."""
    run = _CellRun(cell)
    if cell.strategy == "layerwise":
        _run_layerwise(run)
    elif cell.mode == "progressive":
        _run_progressive(run)
    else:
        _run_direct(run)
    return run.finish()
