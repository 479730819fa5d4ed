"""Numerically-aware directed graph over number occurrences.

Every number occurrence in the question and the passage becomes its own
node. Two edge families encode order: a *Greater* edge ``a -> b`` exists
when ``n(a) > n(b)``, a *LowerOrEqual* edge ``a -> b`` when ``n(b) <= n(a)``.
Both families point from the larger to the smaller value, so a strictly
ordered pair carries one edge of each family and an equal pair carries two
LowerOrEqual edges, one in each direction. Self loops are never added.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from numnet.exceptions import ContractError
from numnet.textnum import NumberOccurrence, Source


class Comparison(enum.Enum):
    GREATER = "Greater"
    LOWER_OR_EQUAL = "LowerOrEqual"


class Pairing(enum.Enum):
    QQ = "QQ"
    PP = "PP"
    QP = "QP"
    PQ = "PQ"

    @classmethod
    def of(cls, src: Source, dst: Source) -> "Pairing":
        return cls(src.value + dst.value)


@dataclass(frozen=True, order=False)
class Relation:
    comparison: Comparison
    pairing: Pairing

    @property
    def name(self) -> str:
        return f"{self.comparison.value}-{self.pairing.value}"

    def __str__(self) -> str:
        return self.name


RELATIONS: tuple[Relation, ...] = tuple(
    Relation(c, p) for c in Comparison for p in Pairing
)
RELATION_INDEX = {r: i for i, r in enumerate(RELATIONS)}


@dataclass(frozen=True)
class GraphConfig:
    include_question_numbers: bool = True
    enable_greater_edges: bool = True
    enable_lower_equal_edges: bool = True

    def __post_init__(self):
        if not (self.enable_greater_edges or self.enable_lower_equal_edges):
            raise ContractError("at least one edge family must be enabled")


class Edge(NamedTuple):
    src: int
    dst: int
    rel: Relation


@dataclass
class NumGraph:
    nodes: list[NumberOccurrence]
    edges: list[Edge]
    config: GraphConfig = field(default_factory=GraphConfig)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def question_node_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.source is Source.QUESTION]

    @property
    def passage_node_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.source is Source.PASSAGE]

    def adjacency(self) -> np.ndarray:
        """Edge indicator tensor ``A[r, dst, src]`` over the 8 relations."""
        n = self.num_nodes
        adj = np.zeros((len(RELATIONS), n, n))
        for e in self.edges:
            adj[RELATION_INDEX[e.rel], e.dst, e.src] += 1.0
        return adj


def build_graph(
    q_nums: Sequence[NumberOccurrence],
    p_nums: Sequence[NumberOccurrence],
    config: GraphConfig = GraphConfig(),
) -> NumGraph:
    nodes = list(q_nums) if config.include_question_numbers else []
    nodes += list(p_nums)
    n = len(nodes)
    values = np.array([x.value for x in nodes], dtype=float)
    is_q = np.array([x.source is Source.QUESTION for x in nodes], dtype=bool)
    # pairing code 0..3 in Pairing order: QQ, PP, QP, PQ
    pair_code = np.where(is_q[:, None], np.where(is_q[None, :], 0, 2), np.where(is_q[None, :], 3, 1))
    pairings = list(Pairing)
    families = []
    if config.enable_greater_edges:
        families.append((Comparison.GREATER, values[:, None] > values[None, :]))
    if config.enable_lower_equal_edges:
        families.append((Comparison.LOWER_OR_EQUAL, values[None, :] <= values[:, None]))
    off_diag = ~np.eye(n, dtype=bool)
    # rel_table[f, code] is the Relation of family f with pairing code
    rel_table = np.empty((max(len(families), 1), 4), dtype=object)
    for f, (comparison, _) in enumerate(families):
        for code, pairing in enumerate(pairings):
            rel_table[f, code] = Relation(comparison, pairing)
    stacked = np.stack([m & off_diag for _, m in families], axis=-1) if n else np.zeros((0, 0, 1), bool)
    # row-major nonzero keeps (src, dst) order with Greater before LowerOrEqual
    src, dst, fam = np.nonzero(stacked)
    rels = rel_table[fam, pair_code[src, dst]] if len(src) else []
    edges = list(map(Edge, src.tolist(), dst.tolist(), list(rels)))
    return NumGraph(nodes, edges, config)


def neighbors_in(graph: NumGraph, node: int) -> list[tuple[int, Relation]]:
    if not 0 <= node < graph.num_nodes:
        raise IndexError(f"node {node} out of range for graph with {graph.num_nodes} nodes")
    found = [(e.src, e.rel) for e in graph.edges if e.dst == node]
    return sorted(found, key=lambda jr: (jr[0], RELATION_INDEX[jr[1]]))


def _format_value(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def dump_graph(graph: NumGraph, format: str = "dot") -> bytes:
    fmt = format.lower()
    if fmt == "json":
        doc = {
            "nodes": [
                {"id": i, "value": n.value, "source": n.source.value}
                for i, n in enumerate(graph.nodes)
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "cmp": e.rel.comparison.value, "pair": e.rel.pairing.value}
                for e in graph.edges
            ],
        }
        return json.dumps(doc, indent=1).encode("utf-8")
    if fmt != "dot":
        raise ValueError(f"unknown graph format {format!r}")
    lines = [
        "digraph numgraph {",
        '  label="solid: Greater (n(src) > n(dst)); dashed: LowerOrEqual (n(dst) <= n(src))";',
    ]
    for i, n in enumerate(graph.nodes):
        lines.append(f'  v{i} [label="v{i}:{_format_value(n.value)}:{n.source.value}"];')
    for e in graph.edges:
        style = "solid" if e.rel.comparison is Comparison.GREATER else "dashed"
        lines.append(f'  v{e.src} -> v{e.dst} [style={style}, label="{e.rel.pairing.value}"];')
    lines.append("}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_graph_json(data: bytes | str) -> NumGraph:
    """Rebuild a graph from :func:`dump_graph` JSON.

    Token indices are not serialized; each node's index stands in for it.
    """
    doc = json.loads(data)
    nodes = [
        NumberOccurrence(float(n["value"]), i, Source(n["source"]))
        for i, n in enumerate(doc["nodes"])
    ]
    edges = [
        Edge(e["from"], e["to"], Relation(Comparison(e["cmp"]), Pairing(e["pair"])))
        for e in doc["edges"]
    ]
    return NumGraph(nodes, edges)
