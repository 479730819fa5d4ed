import itertools
import json
import math
import time

import numpy as np
import pytest

from numnet.exceptions import ContractError
from numnet.graph import (
    RELATIONS,
    Comparison,
    GraphConfig,
    Pairing,
    Relation,
    build_graph,
    dump_graph,
    load_graph_json,
    neighbors_in,
)
from numnet.textnum import NumberOccurrence, Source


def occ(values, source):
    return [NumberOccurrence(float(v), i, source) for i, v in enumerate(values)]


def passage(*values):
    return build_graph([], occ(values, Source.PASSAGE))


def edge_set(graph):
    return {(e.src, e.dst, e.rel.name) for e in graph.edges}


def oracle_edges(nodes, greater=True, lower_eq=True):
    out = set()
    for a in range(len(nodes)):
        for b in range(len(nodes)):
            if a == b:
                continue
            pair = nodes[a].source.value + nodes[b].source.value
            if greater and nodes[a].value > nodes[b].value:
                out.add((a, b, f"Greater-{pair}"))
            if lower_eq and nodes[b].value <= nodes[a].value:
                out.add((a, b, f"LowerOrEqual-{pair}"))
    return out


def random_case(rng, n_max=12):
    nq, np_ = rng.integers(0, 4), rng.integers(0, n_max - 3)
    pool = rng.integers(0, 20, size=max(nq + np_, 1)).astype(float)
    if nq + np_ >= 2:
        pool[-1] = pool[0]
    return occ(pool[:nq], Source.QUESTION), occ(pool[nq:nq + np_], Source.PASSAGE)


def test_relations_are_eight_distinct():
    assert len(RELATIONS) == 8
    assert len({r.name for r in RELATIONS}) == 8


def test_six_five_greater_edge():
    g = passage(6, 5)
    assert (0, 1, "Greater-PP") in edge_set(g)
    assert (Relation(Comparison.GREATER, Pairing.PP)) in [r for j, r in neighbors_in(g, 1) if j == 0]


def test_single_node():
    g = passage(31)
    assert g.num_nodes == 1 and g.edges == []
    assert neighbors_in(g, 0) == []


def test_equal_values():
    g = passage(5, 5)
    assert edge_set(g) == {(0, 1, "LowerOrEqual-PP"), (1, 0, "LowerOrEqual-PP")}


def test_empty_graph():
    g = build_graph([], [])
    assert g.num_nodes == 0 and g.edges == []
    assert dump_graph(g).decode().startswith("digraph")


def test_node_order_question_first():
    q = occ([3], Source.QUESTION)
    p = occ([7, 1], Source.PASSAGE)
    g = build_graph(q, p)
    assert [n.source for n in g.nodes] == [Source.QUESTION, Source.PASSAGE, Source.PASSAGE]
    assert g.question_node_ids == [0] and g.passage_node_ids == [1, 2]
    assert (1, 0, "Greater-PQ") in edge_set(g)
    assert (0, 2, "Greater-QP") in edge_set(g)


def test_without_question_numbers():
    g = build_graph(occ([3], Source.QUESTION), occ([7, 1], Source.PASSAGE),
                    GraphConfig(include_question_numbers=False))
    assert g.num_nodes == 2 and all(n.source is Source.PASSAGE for n in g.nodes)


def test_both_families_disabled():
    with pytest.raises(ContractError):
        GraphConfig(enable_greater_edges=False, enable_lower_equal_edges=False)


def test_neighbors_bounds():
    with pytest.raises(IndexError):
        neighbors_in(passage(1, 2), 2)


def test_neighbors_order():
    g = passage(9, 9, 1)
    got = neighbors_in(g, 2)
    assert [j for j, _ in got] == [0, 0, 1, 1]
    assert [r.comparison for r, in [(r,) for _, r in got]][:2] == [Comparison.GREATER, Comparison.LOWER_OR_EQUAL]


@pytest.mark.parametrize("greater, lower_eq", [(True, True), (True, False), (False, True)])
def test_brute_force_oracle(greater, lower_eq):
    rng = np.random.default_rng(7)
    cfg = GraphConfig(enable_greater_edges=greater, enable_lower_equal_edges=lower_eq)
    for _ in range(300):
        q, p = random_case(rng)
        g = build_graph(q, p, cfg)
        assert edge_set(g) == oracle_edges(q + p, greater, lower_eq)
        assert len(edge_set(g)) == len(g.edges)


def test_edge_counts_and_complementarity():
    rng = np.random.default_rng(11)
    for _ in range(300):
        q, p = random_case(rng)
        g = build_graph(q, p)
        n = g.num_nodes
        values = [x.value for x in g.nodes]
        d = sum(values[a] == values[b] for a, b in itertools.combinations(range(n), 2))
        n_greater = sum(e.rel.comparison is Comparison.GREATER for e in g.edges)
        assert n_greater == math.comb(n, 2) - d
        assert len(g.edges) - n_greater == math.comb(n, 2) + d
        edges = edge_set(g)
        for a, b in itertools.permutations(range(n), 2):
            pair_ab = g.nodes[a].source.value + g.nodes[b].source.value
            pair_ba = g.nodes[b].source.value + g.nodes[a].source.value
            has_g = (a, b, f"Greater-{pair_ab}") in edges
            has_le = (b, a, f"LowerOrEqual-{pair_ba}") in edges
            if values[a] != values[b]:
                assert has_g != has_le
            else:
                assert not has_g and has_le
        assert all(e.src != e.dst for e in g.edges)


def test_adjacency_matches_edges():
    g = build_graph(occ([2], Source.QUESTION), occ([4, 2], Source.PASSAGE))
    adj = g.adjacency()
    assert adj.shape == (8, 3, 3)
    assert adj.sum() == len(g.edges)
    assert np.all(np.diagonal(adj, axis1=1, axis2=2) == 0)


def test_build_two_hundred_nodes_fast():
    values = np.random.default_rng(0).integers(0, 1000, size=200)
    nodes = occ(values, Source.PASSAGE)
    timings = []
    for _ in range(3):
        start = time.perf_counter()
        g = build_graph([], nodes)
        timings.append(time.perf_counter() - start)
    assert len(g.edges) == 2 * math.comb(200, 2)
    assert min(timings) < 0.1


def test_dump_dot_two_nodes():
    text = dump_graph(passage(6, 5), "dot").decode()
    assert 'label="v0:6:P"' in text and 'label="v1:5:P"' in text
    arrows = [line for line in text.splitlines() if "->" in line]
    # a strict pair gets one edge of each family, both larger -> smaller
    assert sum("style=solid" in a for a in arrows) == 1
    assert sum("style=dashed" in a for a in arrows) == 1
    assert all(a.strip().startswith("v0 -> v1") for a in arrows)
    assert "solid: Greater" in text and "dashed: LowerOrEqual" in text


def test_dump_json_round_trip():
    g = build_graph(occ([2.5], Source.QUESTION), occ([4, 2.5, 9], Source.PASSAGE))
    doc = json.loads(dump_graph(g, "json"))
    assert set(doc) == {"nodes", "edges"}
    assert set(doc["edges"][0]) == {"from", "to", "cmp", "pair"}
    again = load_graph_json(dump_graph(g, "json"))
    assert edge_set(again) == edge_set(g)
    assert [(n.value, n.source) for n in again.nodes] == [(n.value, n.source) for n in g.nodes]


def test_dump_unknown_format():
    with pytest.raises(ValueError):
        dump_graph(passage(1), "png")
