"""
This module contains the exact statevector simulator for the Max-Cut QAOA ansatz.

Basis index z stores vertex (qubit) q in bit q. Each layer applies the
diagonal cost phase exp(-i*gamma*C(z)) followed by exp(-i*beta*X) on every
qubit, starting from the uniform superposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import structlog

from .errors import InputError, SizeLimitError
from .graphs import MAX_ENUMERATION_VERTICES, Graph

GAMMA_PERIOD = np.pi
BETA_PERIOD = np.pi / 2
_GAMMA_UPPER = float(np.nextafter(GAMMA_PERIOD, 0.0))
_BETA_UPPER = float(np.nextafter(BETA_PERIOD, 0.0))

logger = structlog.get_logger()


def _frozen_vector(values: Any) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(-1)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """
    QAOA angles of a depth-p circuit.

    The flat layout used by optimizers is (gamma_1..gamma_p, beta_1..beta_p).
    Instances are immutable; strategies keep their mutable buffer as an array
    and convert at the boundaries.
    """

    gammas: np.ndarray
    betas: np.ndarray

    def __post_init__(self) -> None:
        gammas = _frozen_vector(self.gammas)
        betas = _frozen_vector(self.betas)
        if gammas.size == 0 or gammas.size != betas.size:
            raise InputError(
                f"need p >= 1 gammas and betas of equal length, "
                f"got {gammas.size} and {betas.size}"
            )
        if not (np.all(np.isfinite(gammas)) and np.all(np.isfinite(betas))):
            raise InputError("angles must be finite")
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "betas", betas)

    @property
    def p(self) -> int:
        return int(self.gammas.size)

    @classmethod
    def from_array(cls, x: Sequence[float] | np.ndarray) -> "ParameterVector":
        flat = np.asarray(x, dtype=np.float64).reshape(-1)
        if flat.size == 0 or flat.size % 2:
            raise InputError(f"flat parameter vector needs even length, got {flat.size}")
        depth = flat.size // 2
        return cls(flat[:depth], flat[depth:])

    @classmethod
    def zeros(cls, p: int) -> "ParameterVector":
        return cls(np.zeros(p), np.zeros(p))

    def to_array(self) -> np.ndarray:
        return np.concatenate((self.gammas, self.betas))

    def layer(self, index: int) -> tuple[float, float]:
        """(gamma_l, beta_l) for the 1-based layer index l."""
        if not 1 <= index <= self.p:
            raise InputError(f"layer {index} outside 1..{self.p}")
        return float(self.gammas[index - 1]), float(self.betas[index - 1])

    def to_dict(self) -> dict[str, list[float]]:
        return {"gammas": self.gammas.tolist(), "betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, raw: dict[str, Sequence[float]]) -> "ParameterVector":
        return cls(raw["gammas"], raw["betas"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return bool(
            np.array_equal(self.gammas, other.gammas)
            and np.array_equal(self.betas, other.betas)
        )

    def __hash__(self) -> int:
        return hash((self.gammas.tobytes(), self.betas.tobytes()))

    def __repr__(self) -> str:
        return f"ParameterVector(gammas={self.gammas.tolist()}, betas={self.betas.tolist()})"


def box_bounds(p: int) -> list[tuple[float, float]]:
    """
    Per-coordinate optimizer bounds in the flat layout.

    Upper bounds sit one ulp below each period so optimized angles stay in
    the half-open box.
    """
    return [(0.0, _GAMMA_UPPER)] * p + [(0.0, _BETA_UPPER)] * p


def _wrap(values: np.ndarray, period: float) -> np.ndarray:
    wrapped = np.mod(values, period)
    # np.mod of a tiny negative number can round up to the period itself
    wrapped[wrapped >= period] = 0.0
    return wrapped


def wrap_into_box(params: ParameterVector) -> ParameterVector:
    """
    Maps angles into gamma in [0, pi), beta in [0, pi/2) by periodicity.

    Shifting gamma by pi preserves F only when every vertex degree is even.
    """
    gammas = _wrap(params.gammas, GAMMA_PERIOD)
    moved = int(np.count_nonzero(gammas != params.gammas))
    if moved:
        logger.debug("gamma_wrapped", layers=moved, p=params.p)
    return ParameterVector(gammas, _wrap(params.betas, BETA_PERIOD))


def in_box(params: ParameterVector) -> bool:
    return bool(
        np.all((params.gammas >= 0) & (params.gammas < GAMMA_PERIOD))
        and np.all((params.betas >= 0) & (params.betas < BETA_PERIOD))
    )


@dataclass(frozen=True, eq=False)
class CutTable:
    """
    Diagonal of the cost Hamiltonian: values[z] is the cut value of basis state z.

    Index z stores vertex q in bit q (vertex 0 least significant). Witness
    strings from `max_cut_brute_force` print vertex 0 first, so a witness maps
    to the index `int(witness[::-1], 2)`.
    """

    values: np.ndarray

    @property
    def n_vertices(self) -> int:
        return int(self.values.size).bit_length() - 1

    @property
    def c_max(self) -> int:
        return int(self.values.max())


def build_cut_table(graph: Graph) -> CutTable:
    if graph.n_vertices > MAX_ENUMERATION_VERTICES:
        raise SizeLimitError(
            f"{graph.n_vertices} qubits exceeds the simulation limit "
            f"of {MAX_ENUMERATION_VERTICES}"
        )
    # 8-bit entries whenever the cut value fits, otherwise 16-bit
    dtype = np.uint8 if graph.n_edges <= np.iinfo(np.uint8).max else np.uint16
    states = np.arange(1 << graph.n_vertices, dtype=np.uint32)
    values = np.zeros(states.size, dtype=dtype)
    for u, v in graph.edges:
        values += (((states >> u) ^ (states >> v)) & 1).astype(dtype)
    values.setflags(write=False)
    return CutTable(values)


@dataclass(frozen=True, eq=False)
class Statevector:
    amplitudes: np.ndarray

    @property
    def n_qubits(self) -> int:
        return int(self.amplitudes.size).bit_length() - 1

    def probabilities(self) -> np.ndarray:
        return self.amplitudes.real**2 + self.amplitudes.imag**2

    def norm(self) -> float:
        return float(np.sqrt(self.probabilities().sum()))

    def expectation(self, table: CutTable) -> float:
        return float(self.probabilities() @ table.values.astype(np.float64))


class QaoaSimulator:
    """
    Evaluation context bound to one graph.

    Holds the cut table, the per-value phase lookup and a scratch state that
    is overwritten on every evaluation, so one instance must not be shared
    between concurrent optimization runs.
    """

    def __init__(self, graph: Graph) -> None:
        self.graph = graph
        self.cut_table = build_cut_table(graph)
        self._n = graph.n_vertices
        self._cuts = self.cut_table.values.astype(np.float64)
        self._levels = np.arange(graph.n_edges + 1, dtype=np.float64)
        self._psi = np.empty(1 << self._n, dtype=np.complex128)

    def _apply_mixer(self, beta: float) -> None:
        cos, sin = np.cos(beta), -1j * np.sin(beta)
        for qubit in range(self._n):
            pairs = self._psi.reshape(-1, 2, 1 << qubit)
            low = pairs[:, 0, :].copy()
            high = pairs[:, 1, :]
            pairs[:, 0, :] = cos * low + sin * high
            pairs[:, 1, :] = sin * low + cos * high

    def _evolve(self, gammas: np.ndarray, betas: np.ndarray) -> np.ndarray:
        self._psi.fill(1.0 / np.sqrt(self._psi.size))
        for gamma, beta in zip(gammas, betas):
            # cut values are small integers: exponentiate once per value, then gather
            self._psi *= np.exp(-1j * gamma * self._levels)[self.cut_table.values]
            self._apply_mixer(beta)
        return self._psi

    def statevector(self, params: ParameterVector) -> Statevector:
        return Statevector(self._evolve(params.gammas, params.betas).copy())

    def expectation(self, params: ParameterVector) -> float:
        return self._expectation(params.gammas, params.betas)

    def expectation_array(self, x: np.ndarray) -> float:
        """Expectation for a flat (gammas..., betas...) vector."""
        flat = np.asarray(x, dtype=np.float64)
        depth = flat.size // 2
        if depth == 0 or flat.size % 2:
            raise InputError(f"flat parameter vector needs even length, got {flat.size}")
        return self._expectation(flat[:depth], flat[depth:])

    def _expectation(self, gammas: np.ndarray, betas: np.ndarray) -> float:
        psi = self._evolve(gammas, betas)
        probabilities = psi.real**2 + psi.imag**2
        return float(probabilities @ self._cuts)


def prepare_ansatz(graph: Graph, params: ParameterVector) -> Statevector:
    """|psi_p(gamma, beta)> for the graph's Max-Cut Hamiltonian."""
    return QaoaSimulator(graph).statevector(params)


def expectation(graph: Graph, params: ParameterVector) -> float:
    """F(gamma, beta) = <psi|H_z|psi>, the mean cut value of the ansatz state."""
    return QaoaSimulator(graph).expectation(params)
