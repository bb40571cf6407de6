from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import random_flow_graph
from queryforge.cpg import (
    DATAFLOW_KINDS, CodePropertyGraph, Edge, EdgeKind, Node, NodeKind, Operators, dataflow_reach_oracle, dumps,
    export_cpg, import_cpg, loads,
)
from queryforge.errors import FormatError, InvalidNodeId, InvariantError, IoError


def closure_by_matrix_power(g: CodePropertyGraph) -> np.ndarray:
    """Reflexive-transitive closure of the data-flow relation via repeated
    boolean squaring of (I + A)."""
    ids = sorted(g.nodes)
    pos = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    m = np.eye(n, dtype=np.int64)
    for e in g.edges:
        if e.kind in DATAFLOW_KINDS:
            m[pos[e.src], pos[e.dst]] = 1
    steps = 1
    while steps < n:
        m = ((m @ m) > 0).astype(np.int64)
        steps *= 2
    return m > 0


# -- oracle -----------------------------------------------------------------


def test_oracle_empty_sources_reach_nothing(graph):
    g = graph("taint_chain")
    assert dataflow_reach_oracle(g, [], list(g.nodes)) == set()


def test_oracle_is_reflexive(graph):
    g = graph("taint_chain")
    n = next(iter(g.nodes))
    assert dataflow_reach_oracle(g, [n], [n]) == {n}


def test_oracle_taint_chain_fixture(graph):
    g = graph("taint_chain")
    (src,) = [n for n in g.nodes.values() if n.kind is NodeKind.CALL and n.name == "input"]
    (sink,) = [n for n in g.nodes.values() if n.kind is NodeKind.CALL and n.name == "exec"]
    arg = g.argument(sink.id, 1)
    assert dataflow_reach_oracle(g, [src.id], [arg]) == {arg}
    # input() -> a (def) -> a (use) -> b (def) -> b (use, exec's argument)
    path_nodes = dataflow_reach_oracle(g, [src.id], g.nodes)
    idents = sorted((g.nodes[n].line, g.nodes[n].name) for n in path_nodes if g.nodes[n].kind is NodeKind.IDENTIFIER)
    assert idents == [(1, "a"), (2, "a"), (2, "b"), (3, "b")]


def test_oracle_rejects_unknown_ids(graph):
    g = graph("taint_chain")
    with pytest.raises(InvalidNodeId):
        dataflow_reach_oracle(g, [10_000], [])


@pytest.mark.parametrize("seed", range(40))
def test_oracle_equals_matrix_closure(seed):
    rng = random.Random(seed)
    g = random_flow_graph(rng)
    closure = closure_by_matrix_power(g)
    ids = sorted(g.nodes)
    for i, s in enumerate(ids):
        expected = {ids[j] for j in np.flatnonzero(closure[i])}
        assert dataflow_reach_oracle(g, [s], ids) == expected


@given(st.integers(0, 2**32 - 1), st.data())
def test_oracle_monotone_in_sources(seed, data):
    g = random_flow_graph(random.Random(seed), max_nodes=30)
    ids = sorted(g.nodes)
    s2 = set(data.draw(st.lists(st.sampled_from(ids), max_size=10)))
    s1 = {n for n in s2 if data.draw(st.booleans())}
    targets = data.draw(st.lists(st.sampled_from(ids), max_size=20))
    assert dataflow_reach_oracle(g, s1, targets) <= dataflow_reach_oracle(g, s2, targets)


# -- serialization ------------------------------------------------------------


def test_empty_graph_exports_no_records():
    text = dumps(CodePropertyGraph())
    assert not [l for l in text.splitlines() if l.startswith(("N ", "E "))]
    assert loads(text) == CodePropertyGraph()


def test_one_node_graph_has_one_full_record():
    g = CodePropertyGraph({0: Node(0, NodeKind.METHOD, "main", "", 1, 0, "a.mini")})
    records = [l for l in dumps(g).splitlines() if l.startswith("N ")]
    assert len(records) == 1
    assert len(records[0].split(" ")[1:]) == 7


def test_empty_file_is_empty_graph(tmp_path):
    p = tmp_path / "empty.cpg"
    p.write_text("")
    assert import_cpg(p) == CodePropertyGraph()


def test_missing_edge_endpoint_is_invariant_error():
    text = "CPG v1\nN 0 METHOD main 1 0 a.mini =\nE 99 0 CFG\n"
    with pytest.raises(InvariantError, match="edge src 99"):
        loads(text)


@pytest.mark.parametrize("text", [
    "not a cpg\n",
    "CPG v1\nN 0 METHOD main\n",
    "CPG v1\nN x METHOD main 1 0 a.mini =\n",
    "CPG v1\nN 0 NOTAKIND main 1 0 a.mini =\n",
    "CPG v1\nQ what\n",
])
def test_malformed_files_are_format_errors(text):
    with pytest.raises(FormatError):
        loads(text)


def test_import_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        import_cpg(tmp_path / "nope.cpg")


def test_fixture_round_trip_is_byte_stable(graphs, tmp_path):
    for name, g in graphs.items():
        path = export_cpg(g, tmp_path / f"{name}.cpg")
        back = import_cpg(path)
        assert back == g, name
        assert dumps(back) == path.read_text(encoding="utf-8"), name


_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=12)


@st.composite
def ast_forests(draw):
    n = draw(st.integers(1, 25))
    nodes = {0: Node(0, NodeKind.METHOD, draw(_text), draw(_text), 1, 0, draw(_text))}
    edges = []
    labels: dict[int, int] = {}
    for i in range(1, n):
        parent = draw(st.integers(0, i - 1))
        kind = draw(st.sampled_from([k for k in NodeKind if k is not NodeKind.CALL]))
        nodes[i] = Node(i, kind, draw(_text), draw(_text), draw(st.integers(1, 500)),
                        draw(st.integers(0, 80)), draw(_text))
        labels[parent] = labels.get(parent, 0) + 1
        edges.append(Edge(parent, i, EdgeKind.AST, labels[parent]))
    for _ in range(draw(st.integers(0, 30))):
        a, b = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        edges.append(Edge(a, b, draw(st.sampled_from([k for k in EdgeKind if k is not EdgeKind.AST]))))
    files = draw(st.dictionaries(_text, _text, max_size=3))
    return CodePropertyGraph(nodes, tuple(dict.fromkeys(edges)), files)


@given(ast_forests())
def test_round_trip_property(g):
    g.validate()
    assert loads(dumps(g)) == g
    assert dumps(loads(dumps(g))) == dumps(g)


# -- invariants ---------------------------------------------------------------


def test_fixture_graphs_satisfy_invariants(graphs):
    for g in graphs.values():
        g.validate()
        for n in g.nodes.values():
            if n.kind is NodeKind.CALL and n.name.startswith("<operator>."):
                assert n.name in Operators.ALL


def test_two_ast_parents_rejected():
    nodes = {i: Node(i, NodeKind.METHOD if i == 0 else NodeKind.BLOCK, "", "", 1, 0, "f") for i in range(3)}
    edges = (Edge(0, 1, EdgeKind.AST, 1), Edge(0, 2, EdgeKind.AST, 2), Edge(1, 2, EdgeKind.AST, 1))
    with pytest.raises(InvariantError, match="more than one AST parent"):
        CodePropertyGraph(nodes, edges).validate()


def test_call_labels_must_be_contiguous():
    nodes = {
        0: Node(0, NodeKind.METHOD, "m", "", 1, 0, "f"),
        1: Node(1, NodeKind.CALL, "f", "f(x)", 1, 0, "f"),
        2: Node(2, NodeKind.IDENTIFIER, "x", "x", 1, 2, "f"),
    }
    edges = (Edge(0, 1, EdgeKind.AST, 1), Edge(1, 2, EdgeKind.AST, 2))
    with pytest.raises(InvariantError, match="not 1..k"):
        CodePropertyGraph(nodes, edges).validate()


def test_orphan_node_rejected():
    nodes = {0: Node(0, NodeKind.METHOD, "m", "", 1, 0, "f"), 1: Node(1, NodeKind.LITERAL, "1", "1", 1, 0, "f"),
             2: Node(2, NodeKind.LITERAL, "2", "2", 1, 0, "f")}
    with pytest.raises(InvariantError, match="not reachable"):
        CodePropertyGraph(nodes, (Edge(0, 1, EdgeKind.AST, 1),)).validate()
