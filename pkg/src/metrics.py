"""
This module contains the evaluation quantities: approximation ratio, the
FO-minus-ITLW error, cost reduction ratios, and their ensemble aggregation.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ConfigDict, Field

from .errors import InputError

logger = structlog.get_logger()

# float noise allowed above C_max before a value is rejected instead of clamped
ALPHA_TOLERANCE = 1e-9


class RunMetrics(BaseModel):
    """Outcome of one optimized circuit: approximation ratio and its cost."""

    model_config = ConfigDict(frozen=True)

    graph_id: str
    strategy: str
    optimizer: str
    initializer: str
    mode: str
    p: int = Field(ge=1)
    k: int | None = None
    k_rule: str | None = None
    seed: int = 0
    alpha: float = Field(ge=0.0, le=1.0)
    value: float
    nfev: int = Field(ge=0)

    @property
    def match_key(self) -> tuple[Any, ...]:
        """Conditions an ITLW run must share with its FO baseline."""
        return (self.graph_id, self.optimizer, self.initializer, self.mode, self.p, self.seed)

    @property
    def chain_key(self) -> tuple[Any, ...]:
        return (self.graph_id, self.optimizer, self.initializer, self.mode, self.k_rule, self.seed)


class ComparisonMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    graph_id: str
    optimizer: str
    initializer: str
    mode: str
    p: int
    k_rule: str | None
    seed: int
    epsilon: float = Field(ge=-1.0, le=1.0)
    r: float = Field(gt=0.0)
    r_c: float | None = Field(default=None, gt=0.0)


def approximation_ratio(f_star: float, c_max: int) -> float:
    """alpha = F* / C_max, clamped into [0, 1]."""
    if c_max <= 0:
        raise InputError("C_max is 0: the approximation ratio is undefined without edges")
    if not -ALPHA_TOLERANCE <= f_star <= c_max + ALPHA_TOLERANCE:
        raise InputError(f"expectation {f_star} outside [0, C_max={c_max}]")
    return float(min(max(f_star / c_max, 0.0), 1.0))


def error_epsilon(alpha_fo: float, alpha_itlw: float) -> float:
    """epsilon = alpha_FO - alpha_ITLW; negative when ITLW does better."""
    for name, alpha in (("alpha_fo", alpha_fo), ("alpha_itlw", alpha_itlw)):
        if not 0.0 <= alpha <= 1.0:
            raise InputError(f"{name} must lie in [0, 1], got {alpha}")
    return alpha_fo - alpha_itlw


def cost_ratio(nfev_itlw: int, nfev_fo: int) -> float:
    """r = V_ITLW / V_FO at a single depth."""
    if nfev_itlw <= 0 or nfev_fo <= 0:
        raise InputError(f"evaluation counts must be positive, got {nfev_itlw}, {nfev_fo}")
    return nfev_itlw / nfev_fo


def cumulative_cost_ratio(nfev_itlw: Sequence[int], nfev_fo: Sequence[int]) -> float:
    """r_c = sum of ITLW costs over depths / sum of FO costs over the same depths."""
    if len(nfev_itlw) != len(nfev_fo):
        raise InputError(
            f"per-depth cost lists differ in length: {len(nfev_itlw)} vs {len(nfev_fo)}"
        )
    return cost_ratio(int(sum(nfev_itlw)), int(sum(nfev_fo)))


def fit_cost_exponent(depths: Sequence[int], nfevs: Sequence[int]) -> float:
    """Least-squares slope m of log V(p) against log p, i.e. V(p) ~ p^m."""
    if len(depths) != len(nfevs):
        raise InputError("depths and costs differ in length")
    if len(set(depths)) < 2:
        raise InputError("need at least two distinct depths to fit an exponent")
    if min(nfevs) <= 0 or min(depths) <= 0:
        raise InputError("depths and costs must be positive")
    slope, _ = np.polyfit(np.log(depths), np.log(nfevs), 1)
    return float(slope)


def compare(records: Iterable[RunMetrics]) -> list[ComparisonMetrics]:
    """
    Joins every ITLW record to the FO record with identical graph, optimizer,
    initializer, mode, depth and seed. FO carries no k, so one baseline serves
    every k. Progressive chains also get r_c over depths up to p.
    """
    records = list(records)
    baselines = {rec.match_key: rec for rec in records if rec.strategy == "fo"}
    chains: dict[tuple[Any, ...], list[RunMetrics]] = defaultdict(list)
    for rec in records:
        if rec.strategy == "itlw":
            chains[rec.chain_key].append(rec)

    comparisons = []
    for chain_key in sorted(chains, key=repr):
        itlw_costs: list[int] = []
        fo_costs: list[int] = []
        for rec in sorted(chains[chain_key], key=lambda item: item.p):
            base = baselines.get(rec.match_key)
            if base is None:
                logger.warning("fo_baseline_missing", graph_id=rec.graph_id, p=rec.p)
                continue
            itlw_costs.append(rec.nfev)
            fo_costs.append(base.nfev)
            comparisons.append(
                ComparisonMetrics(
                    graph_id=rec.graph_id,
                    optimizer=rec.optimizer,
                    initializer=rec.initializer,
                    mode=rec.mode,
                    p=rec.p,
                    k_rule=rec.k_rule,
                    seed=rec.seed,
                    epsilon=error_epsilon(base.alpha, rec.alpha),
                    r=cost_ratio(rec.nfev, base.nfev),
                    r_c=(
                        cumulative_cost_ratio(itlw_costs, fo_costs)
                        if rec.mode == "progressive"
                        else None
                    ),
                )
            )
    return comparisons


def aggregate(
    records: Iterable[BaseModel | dict[str, Any]],
    group_keys: Sequence[str],
    value_columns: Sequence[str],
) -> pd.DataFrame:
    """
    Mean, population std, standard error and count of each value column per
    group. Rows are ordered by the group keys; input order does not matter.
    """
    rows = [
        rec.model_dump() if isinstance(rec, BaseModel) else dict(rec) for rec in records
    ]
    columns = list(group_keys)
    for column in value_columns:
        columns += [f"mean_{column}", f"std_{column}", f"sem_{column}"]
    columns.append("count")
    if not rows:
        return pd.DataFrame(columns=columns)

    frame = pd.DataFrame(rows)
    # fixed summation order per group
    tiebreak = [c for c in ("graph_id", "seed", "p") if c in frame and c not in group_keys]
    order = list(group_keys) + tiebreak + [c for c in value_columns if c not in tiebreak]
    frame = frame.sort_values(order, kind="mergesort", na_position="last").reset_index(drop=True)
    grouped = frame.groupby(list(group_keys), dropna=False, sort=True)

    summary = pd.DataFrame(index=grouped.size().index)
    for column in value_columns:
        summary[f"mean_{column}"] = grouped[column].mean()
        summary[f"std_{column}"] = grouped[column].std(ddof=0)
        sem = grouped[column].std(ddof=1) / np.sqrt(grouped[column].count())
        summary[f"sem_{column}"] = sem.fillna(0.0)
    summary["count"] = grouped.size()
    return summary.reset_index()[columns]
