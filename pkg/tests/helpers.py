"""Shared generators for the test suite."""

from __future__ import annotations

import random

from queryforge.cpg import CodePropertyGraph, Edge, EdgeKind, Node, NodeKind, dataflow_reach_oracle
from queryforge.query import QueryAst, execute
from queryforge.query.syntax import Chain


def random_flow_graph(rng: random.Random, max_nodes: int = 50, density: float = 0.08) -> CodePropertyGraph:
    """A METHOD root with ``n - 1`` identifier children and random data-flow
    edges between any two nodes."""
    n = rng.randint(1, max_nodes)
    nodes = {0: Node(0, NodeKind.METHOD, "m", "", 1, 0, "r.mini")}
    edges = []
    for i in range(1, n):
        nodes[i] = Node(i, NodeKind.IDENTIFIER, f"v{i}", f"v{i}", 1 + i, 0, "r.mini")
        edges.append(Edge(0, i, EdgeKind.AST, i))
    kinds = (EdgeKind.REACHING_DEF, EdgeKind.ARG_TO_PARAM, EdgeKind.RETURN_TO_CALL, EdgeKind.CFG)
    for a in range(n):
        for b in range(n):
            if a != b and rng.random() < density:
                edges.append(Edge(a, b, rng.choice(kinds)))
    return CodePropertyGraph(nodes, tuple(dict.fromkeys(edges)), {"r.mini": ""})


def _reachable_blocks(q: QueryAst):
    """(block index, source argument) for every top-level reachableBy step."""
    j = 0
    for _, chain in q.chains():
        j += 1
        for step in chain.steps:
            j += 1
            if step.name == "reachableBy":
                yield j, step.args[0]


def assert_reachable_matches_oracle(q: QueryAst, g) -> int:
    ps = execute(q, g, instrument=True).pstate
    checked = 0
    for j, src in _reachable_blocks(q):
        assert isinstance(src, Chain)
        if src.start.kind == "ref" and not src.steps:
            sources = ps.states[j - 2][src.start.name]
        else:
            sources = execute(QueryAst((), (src,)), g).result
        targets = ps.value(j - 1)
        assert ps.value(j) == dataflow_reach_oracle(g, sources, targets)
        checked += 1
    return checked


# One line per acceptance criterion, echoed again in the terminal summary.
ACCEPTANCE: list[str] = []
