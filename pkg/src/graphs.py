"""
This module contains the Max-Cut problem instances.
It handles graph construction, random generation, persistence and the exact
(exhaustive) Max-Cut oracle used to compute approximation ratios.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import networkx as nx
import numpy as np
import structlog
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from .errors import GraphParseError, InputError, SizeLimitError

logger = structlog.get_logger()

# Exhaustive enumeration and the 2^n cut table refuse instances above this size
MAX_ENUMERATION_VERTICES = 24

CUSTOM_CLASS = "custom"
CLASS_TAG_PATTERN = r"^(custom|regular-\d+|erdos-renyi\([0-9.eE+-]+\))$"

Edge = tuple[int, int]

# File keys differ from attribute names; used to report schema errors in file terms
_FILE_FIELDS = {"n_vertices": "n", "edges": "edges", "class_tag": "class", "seed": "seed"}


class Graph(BaseModel):
    """
    Undirected, unweighted simple graph.

    Edges are stored canonically: every pair satisfies u < v and the tuple is
    sorted, so identical graphs always serialize and hash identically.
    """

    model_config = ConfigDict(frozen=True)

    n_vertices: int = Field(gt=0)
    edges: tuple[Edge, ...] = ()
    class_tag: str = Field(default=CUSTOM_CLASS, pattern=CLASS_TAG_PATTERN)
    seed: int | None = None

    @field_validator("edges")
    @classmethod
    def canonical_edges(
        cls, edges: tuple[Edge, ...], info: ValidationInfo
    ) -> tuple[Edge, ...]:
        """Rejects self-loops, out-of-range or non-canonical pairs and duplicates."""
        n = info.data.get("n_vertices")
        if n is None:
            return edges
        seen: set[Edge] = set()
        for index, (u, v) in enumerate(edges):
            if u == v:
                raise ValueError(f"edge {index} ({u}, {v}) is a self-loop")
            if not 0 <= u < v < n:
                raise ValueError(
                    f"edge {index} ({u}, {v}) must satisfy 0 <= u < v < {n}"
                )
            if (u, v) in seen:
                raise ValueError(f"edge {index} ({u}, {v}) is duplicated")
            seen.add((u, v))
        return tuple(sorted(edges))

    @classmethod
    def from_edges(
        cls,
        n_vertices: int,
        edges: Iterable[Sequence[int]],
        class_tag: str = CUSTOM_CLASS,
        seed: int | None = None,
    ) -> "Graph":
        """Builds a graph from pairs in any orientation; (v, u) becomes (u, v)."""
        pairs = [(min(int(u), int(v)), max(int(u), int(v))) for u, v in edges]
        try:
            return cls(
                n_vertices=n_vertices, edges=tuple(pairs), class_tag=class_tag, seed=seed
            )
        except ValidationError as exc:
            raise InputError(_describe_errors(exc)) from exc

    @classmethod
    def from_networkx(
        cls, graph: nx.Graph, class_tag: str = CUSTOM_CLASS, seed: int | None = None
    ) -> "Graph":
        """Converts a networkx graph, relabelling nodes to 0..n-1 in sorted order."""
        relabel = {node: index for index, node in enumerate(sorted(graph.nodes))}
        edges = [(relabel[u], relabel[v]) for u, v in graph.edges]
        return cls.from_edges(graph.number_of_nodes(), edges, class_tag, seed)

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.n_vertices))
        graph.add_edges_from(self.edges)
        return graph

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def graph_id(self) -> str:
        """Stable 12-hex identity of (n, edges)."""
        payload = json.dumps([self.n_vertices, self.edges], separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    @property
    def connected(self) -> bool:
        return bool(nx.is_connected(self.to_networkx()))

    def degrees(self) -> np.ndarray:
        counts = np.zeros(self.n_vertices, dtype=np.int64)
        for u, v in self.edges:
            counts[u] += 1
            counts[v] += 1
        return counts


class CutSolution(BaseModel):
    """Maximum cut value and the numerically smallest bitstring achieving it."""

    model_config = ConfigDict(frozen=True)

    c_max: int = Field(ge=0)
    witness: str = Field(pattern=r"^[01]+$")


class GraphSpec(BaseModel):
    """Recipe for a family of random graphs: shape parameters plus the first seed."""

    model_config = ConfigDict(frozen=True)

    family: Literal["regular", "erdos-renyi"]
    n: int = Field(ge=2, le=MAX_ENUMERATION_VERTICES)
    degree: int | None = Field(default=None, ge=0)
    prob: float | None = Field(default=None, ge=0.0, le=1.0)
    count: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_shape(self) -> "GraphSpec":
        if self.family == "regular":
            if self.degree is None:
                raise ValueError("regular graphs need a degree")
            if self.degree >= self.n or (self.n * self.degree) % 2:
                raise ValueError(
                    f"no simple {self.degree}-regular graph on {self.n} vertices"
                )
        elif self.prob is None:
            raise ValueError("erdos-renyi graphs need an edge probability")
        return self

    def build(self, seed: int) -> Graph:
        if self.family == "regular":
            assert self.degree is not None
            return generate_regular(self.n, self.degree, seed)
        assert self.prob is not None
        return generate_erdos_renyi(self.n, self.prob, seed)


def _describe_errors(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        loc = ".".join(_FILE_FIELDS.get(str(item), str(item)) for item in error["loc"])
        message = error["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {message}" if loc else message)
    return "; ".join(parts)


def _assignment_bits(graph: Graph, assignment: str | Sequence[int]) -> list[int]:
    if isinstance(assignment, str):
        if set(assignment) - {"0", "1"}:
            raise InputError(f"assignment {assignment!r} is not a bitstring")
        bits = [int(char) for char in assignment]
    else:
        bits = [int(bit) for bit in assignment]
        if any(bit not in (0, 1) for bit in bits):
            raise InputError("assignment entries must be 0 or 1")
    if len(bits) != graph.n_vertices:
        raise InputError(
            f"assignment has length {len(bits)}, graph has {graph.n_vertices} vertices"
        )
    return bits


def cut_value(graph: Graph, assignment: str | Sequence[int]) -> int:
    """
    Counts the edges crossing the partition.

    Args:
        graph (Graph): The problem instance.
        assignment (str | Sequence[int]): Side (0/1) of each vertex, vertex 0 first.

    Returns:
        int: Number of edges (u, v) with assignment[u] != assignment[v].
    """
    bits = _assignment_bits(graph, assignment)
    return sum(1 for u, v in graph.edges if bits[u] != bits[v])


def _check_enumerable(graph: Graph) -> None:
    if graph.n_vertices > MAX_ENUMERATION_VERTICES:
        raise SizeLimitError(
            f"{graph.n_vertices} vertices exceeds the enumeration limit "
            f"of {MAX_ENUMERATION_VERTICES}"
        )


def max_cut_brute_force(graph: Graph) -> CutSolution:
    """
    Solves Max-Cut exactly by enumerating the 2^(n-1) partitions with vertex 0
    on side 0.

    Bitstrings are read with vertex 0 as the most significant digit, so the
    first maximum found is the numerically smallest witness overall. The
    simulator's cut table uses the opposite bit order (see CutTable).
    """
    _check_enumerable(graph)
    n = graph.n_vertices
    codes = np.arange(1 << (n - 1), dtype=np.int64)
    cuts = np.zeros(codes.size, dtype=np.int16)
    for u, v in graph.edges:
        cuts += (((codes >> (n - 1 - u)) ^ (codes >> (n - 1 - v))) & 1).astype(
            np.int16
        )
    best = int(np.argmax(cuts))
    solution = CutSolution(c_max=int(cuts[best]), witness=format(best, f"0{n}b"))
    logger.debug(
        "max_cut_solved", graph_id=graph.graph_id, n=n, c_max=solution.c_max
    )
    return solution


def max_cut_naive(graph: Graph) -> CutSolution:
    """Full 2^n enumeration through cut_value; an independent cross-check."""
    _check_enumerable(graph)
    best_value, best_bits = -1, ""
    for bits in itertools.product("01", repeat=graph.n_vertices):
        candidate = "".join(bits)
        value = cut_value(graph, candidate)
        if value > best_value:
            best_value, best_bits = value, candidate
    return CutSolution(c_max=best_value, witness=best_bits)


def generate_regular(n: int, degree: int, seed: int) -> Graph:
    """
    Random simple d-regular graph from the pairing model; networkx restarts
    the pairing whenever it would create a self-loop or multi-edge.
    """
    if degree < 0 or degree >= n:
        raise InputError(f"degree must satisfy 0 <= degree < n, got {degree} for n={n}")
    if (n * degree) % 2:
        raise InputError(f"n * degree must be even, got n={n}, degree={degree}")
    graph = Graph.from_networkx(
        nx.random_regular_graph(degree, n, seed=seed),
        class_tag=f"regular-{degree}",
        seed=seed,
    )
    logger.debug("graph_generated", family="regular", n=n, degree=degree, seed=seed)
    return graph


def generate_erdos_renyi(n: int, prob: float, seed: int) -> Graph:
    """G(n, prob) graph; connectedness is reported by Graph.connected, not enforced."""
    if n < 2:
        raise InputError(f"erdos-renyi graphs need n >= 2, got {n}")
    if not 0.0 <= prob <= 1.0:
        raise InputError(f"edge probability must lie in [0, 1], got {prob}")
    graph = Graph.from_networkx(
        nx.gnp_random_graph(n, prob, seed=seed),
        class_tag=f"erdos-renyi({prob:g})",
        seed=seed,
    )
    logger.debug(
        "graph_generated",
        family="erdos-renyi",
        n=n,
        prob=prob,
        seed=seed,
        connected=graph.connected,
    )
    return graph


def fingerprint(graph: Graph) -> tuple[Any, ...]:
    """
    Cheap isomorphism invariant: size, sorted degree sequence and the rounded
    adjacency spectrum. Different fingerprints imply non-isomorphic graphs.
    """
    adjacency = np.zeros((graph.n_vertices, graph.n_vertices))
    for u, v in graph.edges:
        adjacency[u, v] = adjacency[v, u] = 1.0
    spectrum = np.round(np.linalg.eigvalsh(adjacency), 6) + 0.0
    return (
        graph.n_vertices,
        graph.n_edges,
        tuple(sorted(graph.degrees().tolist())),
        tuple(spectrum.tolist()),
    )


def generate_ensemble(specs: Sequence[GraphSpec], max_skips: int = 1000) -> list[Graph]:
    """
    Builds every graph the specs ask for. Seeds advance from each spec's first
    seed, skipping any graph whose fingerprint was already produced.
    """
    graphs: list[Graph] = []
    seen: set[tuple[Any, ...]] = set()
    for spec in specs:
        seed, skipped, made = spec.seed, 0, 0
        while made < spec.count:
            graph = spec.build(seed)
            seed += 1
            key = fingerprint(graph)
            if key in seen:
                skipped += 1
                logger.debug("ensemble_duplicate_skipped", seed=seed - 1, spec=spec.family)
                if skipped > max_skips:
                    raise InputError(
                        f"could not find {spec.count} non-isomorphic graphs for {spec}"
                    )
                continue
            seen.add(key)
            graphs.append(graph)
            made += 1
    logger.info("ensemble_generated", graph_count=len(graphs))
    return graphs


def graph_to_dict(graph: Graph) -> dict[str, Any]:
    return {
        "n": graph.n_vertices,
        "edges": [list(edge) for edge in graph.edges],
        "class": graph.class_tag,
        "seed": graph.seed,
    }


def graph_from_dict(raw: Any, source: str = "<graph>") -> Graph:
    """Validates a decoded graph object; errors name the offending field."""
    if not isinstance(raw, dict):
        raise GraphParseError(f"{source}: expected a JSON object")
    missing = [key for key in ("n", "edges") if key not in raw]
    if missing:
        raise GraphParseError(f"{source}: missing field(s) {', '.join(missing)}")
    try:
        return Graph(
            n_vertices=raw["n"],
            edges=raw["edges"],
            class_tag=raw.get("class", CUSTOM_CLASS),
            seed=raw.get("seed"),
        )
    except ValidationError as exc:
        raise GraphParseError(f"{source}: {_describe_errors(exc)}") from exc


def save_graph(graph: Graph, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(graph_to_dict(graph), indent=2) + "\n", encoding="utf-8")
    return path


def load_graph(path: str | Path) -> Graph:
    """
    Reads a graph file.

    Raises:
        GraphParseError: with `path:line:col` for JSON syntax errors, or
            `path: field: reason` for schema violations.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return graph_from_dict(raw, source=str(path))
