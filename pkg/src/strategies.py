"""
This module contains the QAOA training strategies.

Optimization strategies decide which parameters are optimized when:
iterative layerwise (ITLW), classic layerwise and full optimization (FO).
Initialization strategies produce the starting point: random, bilinear
extrapolation from the two previous depths, and TQA.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Literal

import numpy as np
import structlog

from .errors import InputError
from .graphs import Graph
from .optimizers import Objective, Optimizer, nelder_mead, restrict
from .simulator import (
    BETA_PERIOD,
    GAMMA_PERIOD,
    ParameterVector,
    QaoaSimulator,
    box_bounds,
    wrap_into_box,
)

logger = structlog.get_logger()

StageKind = Literal["init", "layer", "depth", "full"]


@dataclass(frozen=True)
class KRule:
    """Number of ITLW sweeps, either constant or derived from the depth."""

    kind: Literal["constant", "half_p", "half_p_minus_1"]
    k: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "constant" and (self.k is None or self.k < 1):
            raise InputError(f"constant k must be >= 1, got {self.k}")

    @classmethod
    def constant(cls, k: int) -> "KRule":
        return cls("constant", k)

    @classmethod
    def parse(cls, value: "str | int | KRule") -> "KRule":
        if isinstance(value, KRule):
            return value
        text = str(value).strip()
        if text in ("half_p", "half_p_minus_1"):
            return cls(text)  # type: ignore[arg-type]
        try:
            return cls.constant(int(text))
        except ValueError:
            raise InputError(
                f"k must be a positive integer, 'half_p' or 'half_p_minus_1', got {value!r}"
            ) from None

    @property
    def label(self) -> str:
        return str(self.k) if self.kind == "constant" else self.kind

    def resolve(self, p: int) -> int:
        # floor(p/2) - 1 is 0 at p = 2, 3; never fewer than one sweep
        if self.kind == "constant":
            assert self.k is not None
            return self.k
        if self.kind == "half_p":
            return max(1, p // 2)
        return max(1, p // 2 - 1)


@dataclass(frozen=True)
class StageRecord:
    label: str
    kind: StageKind
    depth: int
    params: ParameterVector
    value: float
    nfev_delta: int
    iteration: int | None = None
    layer: int | None = None
    converged: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "kind": self.kind,
            "depth": self.depth,
            "iteration": self.iteration,
            "layer": self.layer,
            "value": self.value,
            "nfev_delta": self.nfev_delta,
            "converged": self.converged,
            "params": self.params.to_dict(),
        }


TraceSink = Callable[[StageRecord], None]


@dataclass
class StrategyTrace:
    strategy: str
    stages: list[StageRecord] = field(default_factory=list)

    def add(self, stage: StageRecord, sink: TraceSink | None = None) -> None:
        self.stages.append(stage)
        if sink is not None:
            sink(stage)

    @property
    def final_params(self) -> ParameterVector:
        return self.stages[-1].params

    @property
    def final_value(self) -> float:
        return self.stages[-1].value

    @property
    def depth(self) -> int:
        return self.final_params.p

    @property
    def nfev(self) -> int:
        return sum(stage.nfev_delta for stage in self.stages)

    @property
    def init_nfev(self) -> int:
        return sum(stage.nfev_delta for stage in self.stages if stage.kind == "init")

    @property
    def optimization_nfev(self) -> int:
        return self.nfev - self.init_nfev

    @property
    def converged(self) -> bool:
        return all(stage.converged for stage in self.stages)

    def iteration_values(self) -> list[float]:
        """F after each completed ITLW sweep, in sweep order."""
        last: dict[int, float] = {}
        for stage in self.stages:
            if stage.kind == "layer" and stage.iteration is not None:
                last[stage.iteration] = stage.value
        return [last[iteration] for iteration in sorted(last)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "nfev": self.nfev,
            "final_value": self.final_value,
            "final_params": self.final_params.to_dict(),
            "stages": [stage.to_dict() for stage in self.stages],
        }


def _context(graph: Graph, simulator: QaoaSimulator | None) -> QaoaSimulator:
    if simulator is None:
        return QaoaSimulator(graph)
    if simulator.graph != graph:
        raise InputError("simulator was built for a different graph")
    return simulator


def _objective(simulator: QaoaSimulator, p: int) -> Objective:
    return Objective(simulator.expectation_array, box_bounds(p))


def itlw(
    graph: Graph,
    init: ParameterVector,
    k: int,
    optimizer: Optimizer,
    sink: TraceSink | None = None,
    simulator: QaoaSimulator | None = None,
) -> StrategyTrace:
    """
    Iterative layerwise training, ITLW(k, p).

    Sweeps k times over layers l = 1..p; each step maximizes F over
    (gamma_l, beta_l) with every other entry of the buffer frozen, then
    writes the optimum back. The buffer carries over between sweeps.

    Args:
        graph (Graph): Problem instance.
        init (ParameterVector): Initial buffer; must lie in the parameter box.
        k (int): Number of sweeps, at least 1.
        optimizer (Optimizer): Solver for each two-parameter subproblem.
        sink (TraceSink | None): Receives every stage as it completes.

    Returns:
        StrategyTrace: One "layer" stage per subproblem, k * p in total.
    """
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    sim = _context(graph, simulator)
    p = init.p
    objective = _objective(sim, p)
    buffer = init.to_array()
    trace = StrategyTrace("itlw")
    for iteration in range(1, k + 1):
        for layer in range(1, p + 1):
            free = [layer - 1, p + layer - 1]
            result = optimizer(restrict(objective, buffer, free), buffer[free])
            buffer[free] = result.best_x
            stage = StageRecord(
                label=f"k'={iteration} l={layer}",
                kind="layer",
                depth=p,
                params=ParameterVector.from_array(buffer),
                value=result.best_value,
                nfev_delta=result.nfev,
                iteration=iteration,
                layer=layer,
                converged=result.converged,
            )
            trace.add(stage, sink)
            logger.debug(
                "itlw_layer_done",
                iteration=iteration,
                layer=layer,
                value=result.best_value,
                nfev=result.nfev,
            )
    return trace


LayerGuess = Callable[[int, ParameterVector | None], tuple[float, float]]


def repeat_last_layer(depth: int, previous: ParameterVector | None) -> tuple[float, float]:
    """New layer starts from the last optimized layer; the first from (pi/8, pi/8)."""
    if previous is None:
        return np.pi / 8, np.pi / 8
    return previous.layer(previous.p)


def constant_layer_guess(gamma: float, beta: float) -> LayerGuess:
    def guess(depth: int, previous: ParameterVector | None) -> tuple[float, float]:
        return gamma, beta

    return guess


def random_layer_guess(seed: int) -> LayerGuess:
    def guess(depth: int, previous: ParameterVector | None) -> tuple[float, float]:
        rng = np.random.default_rng([seed, depth])
        return float(rng.uniform(0, GAMMA_PERIOD)), float(rng.uniform(0, BETA_PERIOD))

    return guess


def layerwise_classic(
    graph: Graph,
    p_target: int,
    optimizer: Optimizer,
    layer_guess: LayerGuess = repeat_last_layer,
    sink: TraceSink | None = None,
    simulator: QaoaSimulator | None = None,
) -> StrategyTrace:
    """
    Classic layerwise training: grow the circuit one layer at a time and
    optimize only the newest (gamma_l, beta_l); earlier layers stay fixed.
    """
    if p_target < 1:
        raise InputError(f"p_target must be >= 1, got {p_target}")
    sim = _context(graph, simulator)
    trace = StrategyTrace("layerwise")
    previous: ParameterVector | None = None
    for depth in range(1, p_target + 1):
        gamma, beta = layer_guess(depth, previous)
        guess = wrap_into_box(ParameterVector([gamma], [beta]))
        prefix_gammas = [] if previous is None else previous.gammas.tolist()
        prefix_betas = [] if previous is None else previous.betas.tolist()
        buffer = np.array(
            prefix_gammas + guess.gammas.tolist() + prefix_betas + guess.betas.tolist()
        )
        free = [depth - 1, 2 * depth - 1]
        result = optimizer(restrict(_objective(sim, depth), buffer, free), buffer[free])
        buffer[free] = result.best_x
        previous = ParameterVector.from_array(buffer)
        trace.add(
            StageRecord(
                label=f"p={depth}",
                kind="depth",
                depth=depth,
                params=previous,
                value=result.best_value,
                nfev_delta=result.nfev,
                layer=depth,
                converged=result.converged,
            ),
            sink,
        )
        logger.debug("layerwise_depth_done", depth=depth, value=result.best_value)
    return trace


def full_optimization(
    graph: Graph,
    init: ParameterVector,
    optimizer: Optimizer,
    sink: TraceSink | None = None,
    simulator: QaoaSimulator | None = None,
) -> StrategyTrace:
    """Optimizes all 2p parameters jointly inside the parameter box."""
    sim = _context(graph, simulator)
    result = optimizer(_objective(sim, init.p), init.to_array())
    trace = StrategyTrace("fo")
    trace.add(
        StageRecord(
            label=f"fo p={init.p}",
            kind="full",
            depth=init.p,
            params=ParameterVector.from_array(result.best_x),
            value=result.best_value,
            nfev_delta=result.nfev,
            converged=result.converged,
        ),
        sink,
    )
    return trace


def random_init(p: int, seed: int) -> ParameterVector:
    """gamma_i ~ U[0, pi), beta_i ~ U[0, pi/2), reproducible per seed."""
    if p < 1:
        raise InputError(f"p must be >= 1, got {p}")
    rng = np.random.default_rng(seed)
    return ParameterVector(
        rng.uniform(0.0, GAMMA_PERIOD, p), rng.uniform(0.0, BETA_PERIOD, p)
    )


def _bilinear_sequence(previous: np.ndarray, before: np.ndarray) -> np.ndarray:
    p = previous.size + 1
    extended = np.empty(p)
    # i <= p-2: carry the depth-to-depth change forward
    extended[: p - 2] = 2.0 * previous[: p - 2] - before
    # i = p-1: no entry at depth p-2, borrow the change at index p-2
    extended[p - 2] = previous[p - 2] + (previous[p - 3] - before[p - 3])
    # i = p: continue the index-wise slope
    extended[p - 1] = 2.0 * extended[p - 2] - extended[p - 3]
    return extended


def bilinear_extrapolate(
    phi_star_pm1: ParameterVector, phi_star_pm2: ParameterVector
) -> ParameterVector:
    """Bilinear extrapolation to depth p before wrapping into the box."""
    if phi_star_pm2.p < 1 or phi_star_pm1.p != phi_star_pm2.p + 1:
        raise InputError(
            f"need optimized parameters at depths p-1 and p-2, "
            f"got depths {phi_star_pm1.p} and {phi_star_pm2.p}"
        )
    return ParameterVector(
        _bilinear_sequence(phi_star_pm1.gammas, phi_star_pm2.gammas),
        _bilinear_sequence(phi_star_pm1.betas, phi_star_pm2.betas),
    )


def bilinear_init(
    phi_star_pm1: ParameterVector, phi_star_pm2: ParameterVector
) -> ParameterVector:
    """Initial parameters at depth p from the optima at p-1 and p-2."""
    return wrap_into_box(bilinear_extrapolate(phi_star_pm1, phi_star_pm2))


def tqa_schedule(total_time: float, p: int) -> ParameterVector:
    """gamma_i = i*T/p^2, beta_i = (1 - i/p)*T/p for i = 1..p."""
    if p < 1:
        raise InputError(f"p must be >= 1, got {p}")
    index = np.arange(1, p + 1, dtype=np.float64)
    return ParameterVector(
        index * total_time / p**2, (1.0 - index / p) * total_time / p
    )


@dataclass(frozen=True)
class TqaInit:
    params: ParameterVector
    t_star: float
    value: float
    nfev: int


def tqa_init(
    graph: Graph,
    p: int,
    one_dim_optimizer: Optimizer = nelder_mead,
    simulator: QaoaSimulator | None = None,
    grid_points: int = 50,
    t_min: float = 0.1,
    t_max: float | None = None,
) -> TqaInit:
    """
    TQA initialization: maximize F(T) along the linear schedule.

    A coarse grid over [t_min, t_max] (default 4p) locates the best annealing
    time, which is then refined inside the neighbouring grid cells. Every
    evaluation of F(T) is counted in the returned nfev.
    """
    if p < 1:
        raise InputError(f"p must be >= 1, got {p}")
    sim = _context(graph, simulator)
    upper = 4.0 * p if t_max is None else t_max
    line = Objective(
        lambda t: sim.expectation(tqa_schedule(float(t[0]), p)), [(t_min, upper)]
    )
    grid = np.linspace(t_min, upper, grid_points)
    values = [line.evaluate(np.array([t])) for t in grid]
    best = int(np.argmax(values))
    window = Objective(
        line.evaluate,
        [(grid[max(best - 1, 0)], grid[min(best + 1, grid_points - 1)])],
    )
    refined = one_dim_optimizer(window, np.array([grid[best]]))
    t_star = float(refined.best_x[0])
    logger.debug("tqa_time_found", p=p, t_star=t_star, value=refined.best_value)
    return TqaInit(
        params=wrap_into_box(tqa_schedule(t_star, p)),
        t_star=t_star,
        value=refined.best_value,
        nfev=line.nfev,
    )


@dataclass(frozen=True)
class Bootstrap:
    """Optimized parameters at depths 1 and 2 that seed bilinear extrapolation."""

    depth1: ParameterVector
    depth2: ParameterVector
    traces: tuple[StrategyTrace, StrategyTrace]

    @property
    def nfev(self) -> int:
        return sum(trace.nfev for trace in self.traces)


def bootstrap_depths(
    graph: Graph,
    optimizer: Optimizer,
    simulator: QaoaSimulator | None = None,
    grid_size: int = 16,
) -> Bootstrap:
    """
    p=1: best point of a grid_size x grid_size grid over the box, refined by
    the optimizer. p=2: (gamma/2, gamma), (beta, beta/2) from the p=1 optimum,
    then fully optimized.
    """
    sim = _context(graph, simulator)
    objective = _objective(sim, 1)
    best_value, best_x = -np.inf, np.zeros(2)
    for gamma in np.linspace(0.0, GAMMA_PERIOD, grid_size, endpoint=False):
        for beta in np.linspace(0.0, BETA_PERIOD, grid_size, endpoint=False):
            value = objective.evaluate(np.array([gamma, beta]))
            if value > best_value:
                best_value, best_x = value, np.array([gamma, beta])
    first = StrategyTrace("bootstrap")
    first.add(
        StageRecord(
            label="grid p=1",
            kind="init",
            depth=1,
            params=ParameterVector.from_array(best_x),
            value=best_value,
            nfev_delta=objective.nfev,
        )
    )
    result = optimizer(objective, best_x)
    first.add(
        StageRecord(
            label="fo p=1",
            kind="full",
            depth=1,
            params=ParameterVector.from_array(result.best_x),
            value=result.best_value,
            nfev_delta=result.nfev,
            converged=result.converged,
        )
    )
    gamma, beta = first.final_params.layer(1)
    second = full_optimization(
        graph, ParameterVector([gamma / 2, gamma], [beta, beta / 2]), optimizer, simulator=sim
    )
    return Bootstrap(first.final_params, second.final_params, (first, second))


def depth_progressive_run(
    graph: Graph,
    p_target: int,
    strategy: Literal["itlw", "fo"],
    optimizer: Optimizer,
    k_rule: KRule | None = None,
    p_start: int = 3,
    bootstrap: Bootstrap | None = None,
    sink: TraceSink | None = None,
    simulator: QaoaSimulator | None = None,
) -> list[StrategyTrace]:
    """
    Raises the depth one layer at a time from 3 to p_target; each depth starts
    from the bilinear extrapolation of the two previous optima and is trained
    with ITLW(k) or FO. Returns one trace per depth from p_start on.
    """
    if p_start < 3:
        raise InputError(f"bilinear chains start at p >= 3, got p_start={p_start}")
    if p_target < p_start:
        raise InputError(f"p_target {p_target} is below p_start {p_start}")
    if strategy == "itlw" and k_rule is None:
        raise InputError("ITLW chains need a k rule")
    sim = _context(graph, simulator)
    seeds = bootstrap or bootstrap_depths(graph, optimizer, simulator=sim)
    before, previous = seeds.depth1, seeds.depth2
    traces: list[StrategyTrace] = []
    for depth in range(3, p_target + 1):
        init = bilinear_init(previous, before)
        if strategy == "itlw":
            assert k_rule is not None
            trace = itlw(graph, init, k_rule.resolve(depth), optimizer, sink, sim)
        else:
            trace = full_optimization(graph, init, optimizer, sink, sim)
        if depth >= p_start:
            traces.append(trace)
        before, previous = previous, trace.final_params
        logger.debug(
            "progressive_depth_done",
            strategy=strategy,
            depth=depth,
            value=trace.final_value,
            nfev=trace.nfev,
        )
    return traces


@dataclass(frozen=True)
class EscapeReport:
    plateau_value: float
    escaped_value: float
    trace: StrategyTrace

    @property
    def strict_improvement(self) -> bool:
        return self.escaped_value > self.plateau_value


def escape_saturation(
    graph: Graph,
    plateau: StrategyTrace,
    k: int,
    optimizer: Optimizer,
    simulator: QaoaSimulator | None = None,
) -> EscapeReport:
    """Runs ITLW(k) from the final parameters of a saturated layerwise run."""
    trace = itlw(graph, plateau.final_params, k, optimizer, simulator=simulator)
    return EscapeReport(plateau.final_value, trace.final_value, trace)
