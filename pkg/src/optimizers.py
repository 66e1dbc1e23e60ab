"""
This module contains the bounded maximizers used by every strategy.

Both methods run through scipy.optimize.minimize on the negated objective.
Evaluation counting, best-ever tracking and the finite-difference gradient
are done here, so `nfev` counts every call to the circuit exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import StrEnum
from typing import Callable, Protocol, Sequence

import numpy as np
import structlog
from scipy.optimize import OptimizeResult, minimize

from .errors import InputError

logger = structlog.get_logger()


class Termination(StrEnum):
    CONVERGED = "converged"
    MAX_EVALUATIONS = "max_evaluations"
    MAX_ITERATIONS = "max_iterations"
    ABNORMAL = "abnormal"


class Objective:
    """
    Function of a d-dimensional real vector with box bounds.

    `nfev` increases by exactly one per evaluate() call, including calls made
    while estimating gradients.
    """

    def __init__(
        self,
        fn: Callable[[np.ndarray], float],
        bounds: Sequence[tuple[float, float]],
    ) -> None:
        self._fn = fn
        self.bounds = [(float(low), float(high)) for low, high in bounds]
        if not self.bounds:
            raise InputError("objective needs at least one variable")
        if any(low > high for low, high in self.bounds):
            raise InputError(f"lower bound above upper bound in {self.bounds}")
        self.nfev = 0

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([low for low, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([high for _, high in self.bounds])

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def evaluate(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise InputError(f"expected a vector of length {self.dim}, got shape {x.shape}")
        self.nfev += 1
        return float(self._fn(x))

    __call__ = evaluate


def restrict(obj: Objective, fixed: np.ndarray, free_indices: Sequence[int]) -> Objective:
    """
    Objective over the coordinates in `free_indices`, the others frozen at `fixed`.

    Calls pass through to `obj`, so both counters advance together.
    """
    frozen = np.array(fixed, dtype=np.float64).reshape(-1)
    if frozen.size != obj.dim:
        raise InputError(f"fixed vector has length {frozen.size}, objective has {obj.dim}")
    free = [int(index) for index in free_indices]
    if not free:
        raise InputError("no free indices")
    if len(set(free)) != len(free):
        raise InputError(f"free indices must be distinct, got {free}")
    if any(not 0 <= index < obj.dim for index in free):
        raise InputError(f"free index out of range 0..{obj.dim - 1}: {free}")

    def evaluate(y: np.ndarray) -> float:
        full = frozen.copy()
        full[free] = y
        return obj.evaluate(full)

    return Objective(evaluate, [obj.bounds[index] for index in free])


@dataclass(frozen=True, eq=False)
class OptResult:
    best_x: np.ndarray
    best_value: float
    nfev: int
    converged: bool
    termination: Termination
    message: str = ""


@dataclass(frozen=True)
class NelderMeadOptions:
    xatol: float = 1e-4
    fatol: float = 1e-4
    # None means 200 * d
    maxfev: int | None = None


@dataclass(frozen=True)
class QuasiNewtonOptions:
    history: int = 10
    pgtol: float = 1e-5
    ftol: float = 2.220446049250313e-09
    fd_step: float = 1e-8
    maxfun: int = 15000
    maxiter: int = 15000


class Optimizer(Protocol):
    def __call__(self, obj: Objective, x0: np.ndarray) -> OptResult: ...


class _BestTracker:
    """Counts one optimizer run and remembers the best point it evaluated."""

    def __init__(self, obj: Objective) -> None:
        self.obj = obj
        self.start = obj.nfev
        self.best_x: np.ndarray | None = None
        self.best_value = -np.inf

    def value(self, x: np.ndarray) -> float:
        value = self.obj.evaluate(x)
        if value > self.best_value:
            self.best_value = value
            self.best_x = np.array(x, dtype=np.float64, copy=True)
        return value

    def negated(self, x: np.ndarray) -> float:
        return -self.value(x)

    def finish(self, method: str, result: OptimizeResult) -> OptResult:
        assert self.best_x is not None
        termination = _termination(result)
        outcome = OptResult(
            best_x=np.clip(self.best_x, self.obj.lower, self.obj.upper),
            best_value=float(self.best_value),
            nfev=self.obj.nfev - self.start,
            converged=termination is Termination.CONVERGED,
            termination=termination,
            message=str(result.message),
        )
        logger.debug(
            "optimizer_finished",
            method=method,
            dim=self.obj.dim,
            nfev=outcome.nfev,
            best_value=outcome.best_value,
            termination=str(termination),
        )
        return outcome


def _termination(result: OptimizeResult) -> Termination:
    if result.success:
        return Termination.CONVERGED
    message = str(result.message).lower()
    if "evaluations" in message:
        return Termination.MAX_EVALUATIONS
    if "iterations" in message:
        return Termination.MAX_ITERATIONS
    return Termination.ABNORMAL


def _check_start(obj: Objective, x0: Sequence[float] | np.ndarray) -> np.ndarray:
    start = np.array(x0, dtype=np.float64).reshape(-1)
    if start.size != obj.dim:
        raise InputError(f"x0 has length {start.size}, objective has {obj.dim}")
    if not obj.contains(start):
        raise InputError(f"x0 {start.tolist()} lies outside the bounds {obj.bounds}")
    return start


def nelder_mead(
    obj: Objective, x0: np.ndarray, options: NelderMeadOptions | None = None
) -> OptResult:
    """
    Maximizes `obj` with the Nelder-Mead simplex method.

    Candidate vertices are clipped into the box; x0 is the first point
    evaluated, so the returned best value is never below f(x0).
    """
    opts = options or NelderMeadOptions()
    start = _check_start(obj, x0)
    tracker = _BestTracker(obj)
    maxfev = opts.maxfev or 200 * obj.dim
    result = minimize(
        tracker.negated,
        start,
        method="Nelder-Mead",
        bounds=obj.bounds,
        options={
            "xatol": opts.xatol,
            "fatol": opts.fatol,
            "maxfev": maxfev,
            "maxiter": maxfev,
        },
    )
    return tracker.finish("nelder-mead", result)


def bounded_quasi_newton(
    obj: Objective, x0: np.ndarray, options: QuasiNewtonOptions | None = None
) -> OptResult:
    """
    Maximizes `obj` with L-BFGS-B.

    Gradients are forward differences with step max(h, h*|x_i|), taken
    backwards when the forward step would leave the box; each gradient costs
    d evaluations on top of the value itself.
    """
    opts = options or QuasiNewtonOptions()
    start = _check_start(obj, x0)
    tracker = _BestTracker(obj)
    upper = obj.upper

    def value_and_gradient(x: np.ndarray) -> tuple[float, np.ndarray]:
        base = tracker.value(x)
        gradient = np.empty(x.size)
        for index in range(x.size):
            step = max(opts.fd_step, opts.fd_step * abs(x[index]))
            if x[index] + step > upper[index]:
                step = -step
            point = np.array(x, dtype=np.float64, copy=True)
            point[index] += step
            gradient[index] = (tracker.value(point) - base) / step
        return -base, -gradient

    result = minimize(
        value_and_gradient,
        start,
        jac=True,
        method="L-BFGS-B",
        bounds=obj.bounds,
        options={
            "maxcor": opts.history,
            "ftol": opts.ftol,
            "gtol": opts.pgtol,
            "maxfun": opts.maxfun,
            "maxiter": opts.maxiter,
        },
    )
    return tracker.finish("l-bfgs-b", result)


OPTIMIZERS: dict[str, Optimizer] = {
    "nelder-mead": nelder_mead,
    "l-bfgs-b": bounded_quasi_newton,
}


def get_optimizer(name: str) -> Optimizer:
    try:
        return OPTIMIZERS[name]
    except KeyError:
        raise InputError(
            f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}"
        ) from None
