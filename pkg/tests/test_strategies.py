from unittest.mock import patch

import numpy as np
import pytest

from src.errors import InputError
from src.graphs import Graph, generate_regular
from src.optimizers import Objective, bounded_quasi_newton, nelder_mead
from src.simulator import ParameterVector, QaoaSimulator, in_box
from src.strategies import (
    KRule,
    bilinear_extrapolate,
    bilinear_init,
    bootstrap_depths,
    constant_layer_guess,
    depth_progressive_run,
    escape_saturation,
    full_optimization,
    itlw,
    layerwise_classic,
    random_init,
    random_layer_guess,
    tqa_init,
    tqa_schedule,
)


@pytest.fixture
def graph():
    return generate_regular(6, 3, seed=1)


@pytest.fixture
def edge():
    return Graph.from_edges(2, [(0, 1)])


def test_k_rule_parsing():
    assert KRule.parse("3").resolve(10) == 3
    assert KRule.parse(2).label == "2"
    assert KRule.parse("half_p").resolve(9) == 4
    assert KRule.parse("half_p_minus_1").resolve(10) == 4


def test_k_rule_never_below_one():
    assert KRule.parse("half_p").resolve(1) == 1
    assert KRule.parse("half_p_minus_1").resolve(3) == 1


@pytest.mark.parametrize("text", ["0", "-2", "quarter_p"])
def test_k_rule_rejects(text):
    with pytest.raises(InputError):
        KRule.parse(text)


def test_itlw_structure(graph):
    """k*p two-parameter subproblems with a non-decreasing F trace."""
    init = random_init(3, seed=5)
    stages = []
    trace = itlw(graph, init, 2, nelder_mead, sink=stages.append)
    assert len(trace.stages) == 2 * 3 == len(stages)
    assert [(s.iteration, s.layer) for s in trace.stages] == [
        (1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)
    ]
    values = [QaoaSimulator(graph).expectation(init)] + [s.value for s in trace.stages]
    assert all(later >= earlier for earlier, later in zip(values, values[1:]))
    assert trace.nfev == sum(s.nfev_delta for s in trace.stages)


def test_itlw_freezes_other_layers(graph):
    init = random_init(3, seed=8)
    trace = itlw(graph, init, 1, bounded_quasi_newton)
    before = init.to_array()
    for stage in trace.stages:
        after = stage.params.to_array()
        free = [stage.layer - 1, 3 + stage.layer - 1]
        frozen = [index for index in range(6) if index not in free]
        assert np.array_equal(after[frozen], before[frozen])
        before = after


def test_itlw_subproblems_are_two_dimensional(graph):
    dims = []

    def spy(obj: Objective, x0):
        dims.append(obj.dim)
        return nelder_mead(obj, x0)

    itlw(graph, random_init(4, seed=1), 3, spy)
    assert dims == [2] * 12


def test_itlw_rejects_zero_sweeps(graph):
    with pytest.raises(InputError, match="k must be >= 1"):
        itlw(graph, random_init(2, seed=0), 0, nelder_mead)


def test_itlw_depth_one_matches_full_optimization(graph):
    init = random_init(1, seed=3)
    one = itlw(graph, init, 1, nelder_mead)
    full = full_optimization(graph, init, nelder_mead)
    assert one.final_value == pytest.approx(full.final_value, abs=1e-12)
    assert one.final_params == full.final_params


def test_iteration_values(graph):
    trace = itlw(graph, random_init(2, seed=4), 3, nelder_mead)
    values = trace.iteration_values()
    assert len(values) == 3
    assert values == sorted(values)
    assert values[-1] == trace.final_value


def test_full_optimization_single_edge(edge):
    trace = full_optimization(edge, ParameterVector([0.1], [0.1]), bounded_quasi_newton)
    assert trace.final_value == pytest.approx(1.0, abs=1e-6)
    assert trace.stages[0].kind == "full"


def test_layerwise_keeps_prefix_fixed(graph):
    trace = layerwise_classic(graph, 4, nelder_mead)
    assert [stage.depth for stage in trace.stages] == [1, 2, 3, 4]
    for shorter, longer in zip(trace.stages, trace.stages[1:]):
        depth = shorter.depth
        assert np.array_equal(longer.params.gammas[:depth], shorter.params.gammas)
        assert np.array_equal(longer.params.betas[:depth], shorter.params.betas)


def test_layerwise_depth_one_matches_itlw(graph):
    trace = layerwise_classic(graph, 1, nelder_mead)
    start = ParameterVector([np.pi / 8], [np.pi / 8])
    assert trace.final_value == itlw(graph, start, 1, nelder_mead).final_value


def test_layer_guess_rules(graph):
    guess = constant_layer_guess(0.2, 0.1)
    assert guess(3, None) == (0.2, 0.1)
    rule = random_layer_guess(7)
    assert rule(2, None) == rule(2, None)
    assert rule(2, None) != rule(3, None)
    trace = layerwise_classic(graph, 2, nelder_mead, layer_guess=guess)
    assert trace.depth == 2


def test_random_init_bounds_and_determinism():
    for seed in range(1000):
        params = random_init(2, seed)
        assert in_box(params)
    assert random_init(5, 11) == random_init(5, 11)
    assert random_init(5, 11).to_array().size == 10


def test_bilinear_worked_example():
    extended = bilinear_extrapolate(
        ParameterVector([0.25, 0.5], [0.45, 0.35]), ParameterVector([0.3], [0.4])
    )
    assert extended.gammas == pytest.approx([0.20, 0.45, 0.70], abs=1e-12)
    assert extended.betas == pytest.approx([0.50, 0.40, 0.30], abs=1e-12)


def test_bilinear_shift_equivariant():
    shift = 0.1
    older = ParameterVector([0.25, 0.5], [0.45, 0.35])
    newer = ParameterVector([0.3], [0.4])
    base = bilinear_extrapolate(older, newer)
    moved = bilinear_extrapolate(
        ParameterVector(older.gammas + shift, older.betas + shift),
        ParameterVector(newer.gammas + shift, newer.betas + shift),
    )
    assert moved.gammas == pytest.approx(base.gammas + shift, abs=1e-12)
    assert moved.betas == pytest.approx(base.betas + shift, abs=1e-12)


def test_bilinear_constant_sequences():
    params = bilinear_init(
        ParameterVector([0.6] * 4, [0.2] * 4), ParameterVector([0.6] * 3, [0.2] * 3)
    )
    assert params.gammas == pytest.approx([0.6] * 5)
    assert params.betas == pytest.approx([0.2] * 5)


def test_bilinear_wraps_into_box():
    params = bilinear_init(ParameterVector([1.0, 3.0], [0.2, 1.5]), ParameterVector([0.5], [0.3]))
    assert in_box(params)


def test_bilinear_depth_mismatch():
    with pytest.raises(InputError, match="depths"):
        bilinear_extrapolate(ParameterVector([0.1] * 3, [0.1] * 3), ParameterVector([0.1], [0.1]))


def test_tqa_schedule_shape():
    params = tqa_schedule(2.0, 4)
    assert np.all(np.diff(params.gammas) > 0)
    assert np.all(np.diff(params.betas) < 0)
    assert params.betas[-1] == 0.0
    assert params.gammas[0] == pytest.approx(2.0 / 16)


def test_tqa_init_counts_line_evaluations(edge):
    start = tqa_init(edge, 1, nelder_mead)
    assert start.nfev > 50
    # the T-line is a restriction of the two-dimensional landscape
    assert start.value <= 1.0 + 1e-12
    assert 0.1 <= start.t_star <= 4.0
    assert in_box(start.params)


def test_bootstrap_depths(graph):
    seeds = bootstrap_depths(graph, nelder_mead, grid_size=6)
    assert seeds.depth1.p == 1
    assert seeds.depth2.p == 2
    grid, refine = seeds.traces[0].stages
    assert grid.kind == "init"
    assert grid.nfev_delta == 36
    assert refine.value >= grid.value
    assert seeds.nfev == seeds.traces[0].nfev + seeds.traces[1].nfev


def test_depth_progressive_chain(graph):
    seeds = bootstrap_depths(graph, nelder_mead, grid_size=6)
    traces = depth_progressive_run(
        graph, 5, "itlw", nelder_mead, k_rule=KRule.parse("2"), p_start=4, bootstrap=seeds
    )
    assert [trace.depth for trace in traces] == [4, 5]
    assert [len(trace.stages) for trace in traces] == [2 * 4, 2 * 5]


def test_depth_progressive_extrapolates_previous_optimum(graph):
    seeds = bootstrap_depths(graph, nelder_mead, grid_size=6)
    with patch("src.strategies.full_optimization", wraps=full_optimization) as spy:
        traces = depth_progressive_run(graph, 4, "fo", nelder_mead, bootstrap=seeds)
    first_init = spy.call_args_list[0].args[1]
    assert first_init == bilinear_init(seeds.depth2, seeds.depth1)
    second_init = spy.call_args_list[1].args[1]
    assert second_init == bilinear_init(traces[0].final_params, seeds.depth2)


def test_depth_progressive_validation(graph):
    with pytest.raises(InputError, match="p_start"):
        depth_progressive_run(graph, 5, "fo", nelder_mead, p_start=2)
    with pytest.raises(InputError, match="k rule"):
        depth_progressive_run(graph, 4, "itlw", nelder_mead)


def test_escape_saturation_never_decreases(graph):
    plateau = layerwise_classic(graph, 3, nelder_mead)
    report = escape_saturation(graph, plateau, 2, nelder_mead)
    assert report.escaped_value >= report.plateau_value
    assert report.strict_improvement == (report.escaped_value > report.plateau_value)
    assert len(report.trace.stages) == 2 * 3


def test_simulator_must_match_graph(graph, edge):
    with pytest.raises(InputError, match="different graph"):
        full_optimization(graph, random_init(1, 0), nelder_mead, simulator=QaoaSimulator(edge))
