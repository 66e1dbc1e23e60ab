"""
This module contains the cell execution entry points shared by the local
process pool and the Celery workers.
"""

from __future__ import annotations

import time
from typing import Any

import structlog

from .cells import Cell, CellOutcome, run_cell
from .celery_app import celery_app

logger = structlog.get_logger()


def execute_cell(payload: dict[str, Any]) -> dict[str, Any]:
    """
    Runs one cell payload and returns its outcome as a JSON-ready dict.

    Failures are reported in the outcome instead of raised, so one bad cell
    never stops the experiment.
    """
    cell = Cell.model_validate(payload)
    key = cell.cell_key
    structlog.contextvars.bind_contextvars(cell_key=key)
    started = time.perf_counter()
    logger.info(
        "cell_start",
        strategy=cell.strategy,
        optimizer=cell.optimizer,
        initializer=cell.initializer,
        k_rule=cell.k_rule,
        p_target=cell.p_target,
    )
    try:
        outcome = run_cell(cell)
        logger.info(
            "cell_complete",
            records=len(outcome.records),
            nfev=sum(record.nfev for record in outcome.records),
            wall_time=outcome.wall_time,
        )
    except Exception as e:  # pylint: disable=broad-exception-caught
        logger.exception("cell_failed", error=str(e))
        outcome = CellOutcome(
            cell_key=key,
            status="failed",
            error=f"{type(e).__name__}: {e}",
            wall_time=time.perf_counter() - started,
        )
    finally:
        structlog.contextvars.unbind_contextvars("cell_key")
    return outcome.model_dump(mode="json")


@celery_app.task(bind=True, name="itlw.run_cell")
def run_cell_task(self, payload: dict[str, Any]) -> dict[str, Any]:
    """
    Celery wrapper around execute_cell.
    """
    logger.info("cell_task_received", task_id=self.request.id)
    return execute_cell(payload)
