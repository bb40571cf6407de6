"""Code property graph data model, canonical text serialization and the
brute-force data-flow reachability oracle.

A :class:`CodePropertyGraph` layers three edge families over one node set:
syntax (``AST``), control flow (``CFG``) and data flow (``REACHING_DEF``,
``ARG_TO_PARAM``, ``RETURN_TO_CALL``). ``CALL_EDGE`` links call sites to the
callee method. Graphs are immutable once built.
"""

from __future__ import annotations

import base64
import enum
from collections import defaultdict, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping
from urllib.parse import quote, unquote

from .errors import FormatError, InvalidNodeId, InvariantError, IoError


class NodeKind(str, enum.Enum):
    METHOD = "METHOD"
    PARAM = "PARAM"
    BLOCK = "BLOCK"
    CALL = "CALL"
    IDENTIFIER = "IDENTIFIER"
    LITERAL = "LITERAL"
    RETURN = "RETURN"


class EdgeKind(str, enum.Enum):
    AST = "AST"
    CFG = "CFG"
    REACHING_DEF = "REACHING_DEF"
    CALL_EDGE = "CALL_EDGE"
    ARG_TO_PARAM = "ARG_TO_PARAM"
    RETURN_TO_CALL = "RETURN_TO_CALL"


DATAFLOW_KINDS = frozenset({EdgeKind.REACHING_DEF, EdgeKind.ARG_TO_PARAM, EdgeKind.RETURN_TO_CALL})

OPERATOR_PREFIX = "<operator>."


class Operators:
    """Canonical operator call names."""

    assignment = "<operator>.assignment"
    indexAccess = "<operator>.indexAccess"
    fieldAccess = "<operator>.fieldAccess"
    addition = "<operator>.addition"
    equals = "<operator>.equals"

    ALL = (assignment, indexAccess, fieldAccess, addition, equals)


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    name: str
    code: str
    line: int
    column: int
    file: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NodeKind(self.kind))


@dataclass(frozen=True, order=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind
    label: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EdgeKind(self.kind))

    def sort_key(self) -> tuple[int, int, str, int]:
        return (self.src, self.dst, self.kind.value, -1 if self.label is None else self.label)


@dataclass(frozen=True, eq=False)
class CodePropertyGraph:
    nodes: Mapping[int, Node] = field(default_factory=dict)
    edges: tuple[Edge, ...] = ()
    source_files: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", dict(self.nodes))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=Edge.sort_key)))
        object.__setattr__(self, "source_files", dict(self.source_files))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CodePropertyGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges == other.edges
            and self.source_files == other.source_files
        )

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self.nodes)

    # -- derived indices ---------------------------------------------------

    @cached_property
    def roots(self) -> tuple[int, ...]:
        has_parent = {e.dst for e in self.edges if e.kind is EdgeKind.AST}
        return tuple(
            nid for nid in sorted(self.nodes)
            if self.nodes[nid].kind is NodeKind.METHOD and nid not in has_parent
        )

    @cached_property
    def _out(self) -> dict[EdgeKind, dict[int, list[Edge]]]:
        idx: dict[EdgeKind, dict[int, list[Edge]]] = {k: defaultdict(list) for k in EdgeKind}
        for e in self.edges:
            idx[e.kind][e.src].append(e)
        return idx

    @cached_property
    def _in(self) -> dict[EdgeKind, dict[int, list[Edge]]]:
        idx: dict[EdgeKind, dict[int, list[Edge]]] = {k: defaultdict(list) for k in EdgeKind}
        for e in self.edges:
            idx[e.kind][e.dst].append(e)
        return idx

    def out_edges(self, nid: int, kind: EdgeKind) -> list[Edge]:
        return self._out[kind].get(nid, [])

    def in_edges(self, nid: int, kind: EdgeKind) -> list[Edge]:
        return self._in[kind].get(nid, [])

    def ast_children(self, nid: int) -> list[int]:
        edges = sorted(self.out_edges(nid, EdgeKind.AST), key=lambda e: (e.label or 0, e.dst))
        return [e.dst for e in edges]

    def argument(self, nid: int, index: int) -> int | None:
        for e in self.out_edges(nid, EdgeKind.AST):
            if e.label == index:
                return e.dst
        return None

    def ast_parent(self, nid: int) -> int | None:
        parents = self.in_edges(nid, EdgeKind.AST)
        return parents[0].src if parents else None

    def enclosing_method(self, nid: int) -> int | None:
        cur: int | None = nid
        while cur is not None:
            if self.nodes[cur].kind is NodeKind.METHOD:
                return cur
            cur = self.ast_parent(cur)
        return None

    def nodes_of_kind(self, kind: NodeKind) -> list[int]:
        return [nid for nid, n in self.nodes.items() if n.kind is kind]

    def nodes_on_lines(self, file: str, start: int, end: int) -> list[int]:
        return sorted(
            nid for nid, n in self.nodes.items()
            if n.file == file and start <= n.line <= end
        )

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Raise :class:`InvariantError` unless every graph invariant holds."""
        for nid, node in self.nodes.items():
            if nid != node.id or nid < 0:
                raise InvariantError(f"node key {nid} does not match id {node.id}")
            if node.line < 1 or node.column < 0:
                raise InvariantError(f"node {nid} has invalid position {node.line}:{node.column}")
            if node.kind is NodeKind.CALL and not node.name:
                raise InvariantError(f"CALL node {nid} has empty name")
        for e in self.edges:
            if e.src not in self.nodes:
                raise InvariantError(f"edge src {e.src} ({e.src}->{e.dst} {e.kind.value}) not in graph")
            if e.dst not in self.nodes:
                raise InvariantError(f"edge dst {e.dst} ({e.src}->{e.dst} {e.kind.value}) not in graph")
        for nid in self.nodes:
            if len(self.in_edges(nid, EdgeKind.AST)) > 1:
                raise InvariantError(f"node {nid} has more than one AST parent")
            if self.nodes[nid].kind is NodeKind.CALL:
                labels = sorted(e.label or 0 for e in self.out_edges(nid, EdgeKind.AST))
                if labels != list(range(1, len(labels) + 1)):
                    raise InvariantError(f"AST labels out of CALL {nid} are not 1..k: {labels}")
        # AST edges must form a forest rooted at METHOD nodes.
        seen: set[int] = set()
        for root in self.roots:
            stack = [root]
            while stack:
                cur = stack.pop()
                if cur in seen:
                    raise InvariantError(f"AST cycle through node {cur}")
                seen.add(cur)
                stack.extend(self.ast_children(cur))
        orphans = sorted(set(self.nodes) - seen)
        if orphans:
            raise InvariantError(f"node {orphans[0]} is not reachable from any METHOD root")


# -- oracle ----------------------------------------------------------------


def dataflow_reach_oracle(g: CodePropertyGraph, sources: Iterable[int], targets: Iterable[int]) -> set[int]:
    """Targets reachable from any source over data-flow edges (paths of
    length zero included), by plain breadth-first transitive closure."""
    sources = set(sources)
    targets = set(targets)
    for nid in sorted(sources | targets):
        if nid not in g.nodes:
            raise InvalidNodeId(nid)
    succ: dict[int, list[int]] = defaultdict(list)
    for e in g.edges:
        if e.kind in DATAFLOW_KINDS:
            succ[e.src].append(e.dst)
    seen = set(sources)
    queue = deque(sources)
    while queue:
        cur = queue.popleft()
        for nxt in succ[cur]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen & targets


# -- serialization ---------------------------------------------------------

HEADER = "CPG v1"


def _enc(text: str) -> str:
    if text == "":
        return "-"
    if text == "-":
        return "%2D"
    return quote(text, safe="<>.!~*'()_/:@$[]{}+=,;&?#^`|\"-")


def _dec(token: str) -> str:
    return "" if token == "-" else unquote(token)


def _b64(text: str) -> str:
    return base64.b64encode(text.encode("utf-8")).decode("ascii") or "="


def _unb64(token: str) -> str:
    return "" if token == "=" else base64.b64decode(token.encode("ascii"), validate=True).decode("utf-8")


def dumps(g: CodePropertyGraph) -> str:
    lines = [HEADER]
    for nid in sorted(g.nodes):
        n = g.nodes[nid]
        lines.append(
            f"N {n.id} {n.kind.value} {_enc(n.name)} {n.line} {n.column} {_enc(n.file)} {_b64(n.code)}"
        )
    for e in g.edges:
        rec = f"E {e.src} {e.dst} {e.kind.value}"
        if e.label is not None:
            rec += f" {e.label}"
        lines.append(rec)
    for name in sorted(g.source_files):
        lines.append(f"S {_enc(name)} {_b64(g.source_files[name])}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> CodePropertyGraph:
    lines = text.splitlines()
    if not lines or (len(lines) == 1 and not lines[0].strip()):
        return CodePropertyGraph()
    if lines[0].strip() != HEADER:
        raise FormatError(1, f"expected header {HEADER!r}")
    nodes: dict[int, Node] = {}
    edges: list[Edge] = []
    files: dict[str, str] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(" ")
        tag = parts[0]
        try:
            if tag == "N":
                if len(parts) != 8:
                    raise ValueError(f"node record needs 8 fields, got {len(parts)}")
                _, nid, kind, name, line, col, file, code = parts
                node = Node(int(nid), NodeKind(kind), _dec(name), _unb64(code), int(line), int(col), _dec(file))
                if node.id in nodes:
                    raise ValueError(f"duplicate node id {node.id}")
                nodes[node.id] = node
            elif tag == "E":
                if len(parts) not in (4, 5):
                    raise ValueError(f"edge record needs 4 or 5 fields, got {len(parts)}")
                label = int(parts[4]) if len(parts) == 5 else None
                edges.append(Edge(int(parts[1]), int(parts[2]), EdgeKind(parts[3]), label))
            elif tag == "S":
                if len(parts) != 3:
                    raise ValueError("source record needs 3 fields")
                files[_dec(parts[1])] = _unb64(parts[2])
            else:
                raise ValueError(f"unknown record tag {tag!r}")
        except (ValueError, TypeError) as exc:
            raise FormatError(lineno, str(exc)) from None
    g = CodePropertyGraph(nodes, tuple(edges), files)
    g.validate()
    return g


def export_cpg(g: CodePropertyGraph, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.write_text(dumps(g), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def import_cpg(path: str | Path) -> CodePropertyGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return loads(text)
