import numpy as np
import pytest

from src.errors import InputError
from src.metrics import (
    RunMetrics,
    aggregate,
    approximation_ratio,
    compare,
    cost_ratio,
    cumulative_cost_ratio,
    error_epsilon,
    fit_cost_exponent,
)


def make_run(strategy, p, alpha, nfev, graph_id="g1", k_rule=None, mode="progressive"):
    return RunMetrics(
        graph_id=graph_id,
        strategy=strategy,
        optimizer="nelder-mead",
        initializer="bilinear",
        mode=mode,
        p=p,
        k_rule=k_rule,
        alpha=alpha,
        value=alpha * 10,
        nfev=nfev,
    )


@pytest.mark.parametrize(
    "f_star, c_max, expected",
    [(2.0, 2, 1.0), (1.5, 2, 0.75), (1.0, 1, 1.0), (2.0 + 1e-10, 2, 1.0)],
)
def test_approximation_ratio(f_star, c_max, expected):
    assert approximation_ratio(f_star, c_max) == pytest.approx(expected)


def test_approximation_ratio_errors():
    with pytest.raises(InputError, match="C_max is 0"):
        approximation_ratio(0.0, 0)
    with pytest.raises(InputError, match="outside"):
        approximation_ratio(2.5, 2)


def test_error_epsilon():
    assert error_epsilon(0.95, 0.95) == 0.0
    assert error_epsilon(0.95, 0.946) == pytest.approx(0.004)
    assert error_epsilon(0.9, 0.95) < 0
    assert error_epsilon(0.3, 0.7) == -error_epsilon(0.7, 0.3)
    with pytest.raises(InputError):
        error_epsilon(1.2, 0.5)


def test_cost_ratios():
    assert cost_ratio(700, 700) == 1.0
    assert cost_ratio(500, 1000) == 0.5
    assert cumulative_cost_ratio([100, 200, 300], [400, 800, 1200]) == pytest.approx(0.25)
    with pytest.raises(InputError):
        cost_ratio(0, 10)
    with pytest.raises(InputError, match="differ in length"):
        cumulative_cost_ratio([1, 2], [3])


def test_fit_cost_exponent_recovers_power_law():
    depths = [3, 4, 5, 6, 8]
    nfevs = [int(round(7 * p**2.5)) for p in depths]
    assert fit_cost_exponent(depths, nfevs) == pytest.approx(2.5, abs=1e-2)
    with pytest.raises(InputError, match="two distinct depths"):
        fit_cost_exponent([3, 3], [10, 20])


def test_compare_joins_each_k_to_one_baseline():
    records = [
        make_run("fo", 3, 0.90, 1000),
        make_run("fo", 4, 0.92, 2000),
        make_run("itlw", 3, 0.89, 500, k_rule="1"),
        make_run("itlw", 4, 0.92, 1000, k_rule="1"),
        make_run("itlw", 3, 0.90, 800, k_rule="2"),
    ]
    comparisons = {(c.k_rule, c.p): c for c in compare(records)}
    assert len(comparisons) == 3
    assert comparisons[("1", 3)].epsilon == pytest.approx(0.01)
    assert comparisons[("1", 3)].r == 0.5
    assert comparisons[("1", 4)].r_c == pytest.approx(1500 / 3000)
    assert comparisons[("2", 3)].r == pytest.approx(0.8)


def test_compare_skips_missing_baseline():
    records = [make_run("itlw", 3, 0.8, 10, graph_id="other", k_rule="1")]
    assert compare(records) == []


def test_compare_direct_mode_has_no_cumulative_ratio():
    records = [
        make_run("fo", 2, 0.9, 100, mode="direct"),
        make_run("itlw", 2, 0.9, 50, k_rule="3", mode="direct"),
    ]
    (only,) = compare(records)
    assert only.r_c is None


def test_aggregate_mean_std_count():
    rows = [
        {"k": "1", "p": 3, "eps": 0.1},
        {"k": "1", "p": 3, "eps": 0.3},
        {"k": "2", "p": 3, "eps": 0.05},
    ]
    summary = aggregate(rows, ["k", "p"], ["eps"])
    first = summary.iloc[0]
    assert first["mean_eps"] == pytest.approx(0.2)
    assert first["std_eps"] == pytest.approx(0.1)
    assert first["sem_eps"] == pytest.approx(np.std([0.1, 0.3], ddof=1) / np.sqrt(2))
    single = summary.iloc[1]
    assert single["std_eps"] == 0.0
    assert single["sem_eps"] == 0.0
    assert summary["count"].sum() == len(rows)


def test_aggregate_ignores_input_order():
    rows = [{"k": str(i % 3), "p": i % 2, "x": float(i) / 7} for i in range(30)]
    forward = aggregate(rows, ["k", "p"], ["x"])
    backward = aggregate(list(reversed(rows)), ["k", "p"], ["x"])
    assert forward.equals(backward)


def test_aggregate_accepts_models():
    records = [make_run("fo", 3, 0.9, 100), make_run("fo", 3, 0.7, 300, graph_id="g2")]
    summary = aggregate(records, ["strategy", "p"], ["alpha", "nfev"])
    assert summary.loc[0, "mean_alpha"] == pytest.approx(0.8)
    assert summary.loc[0, "mean_nfev"] == pytest.approx(200)


def test_aggregate_empty_has_header():
    summary = aggregate([], ["k", "p"], ["eps"])
    assert summary.empty
    assert list(summary.columns) == ["k", "p", "mean_eps", "std_eps", "sem_eps", "count"]
