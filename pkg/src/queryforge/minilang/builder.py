"""Lower MiniLang syntax trees into a :class:`CodePropertyGraph`.

Encoding conventions:

* assignments and ``let`` become CALL ``<operator>.assignment`` with the
  lvalue as argument 1 and the value as argument 2;
* ``e[i]`` is CALL ``<operator>.indexAccess`` (receiver 1, index 2), ``e.f``
  is ``<operator>.fieldAccess`` with the field name as a LITERAL argument 2;
* ``if`` / ``while`` are BLOCK nodes named after the keyword, holding the
  condition as child 1;
* top-level statements of a file live under a synthetic METHOD ``<main>``.

Data flow is statement-level reaching definitions plus value flow inside
expressions (operand to operator result, right-hand side to the defined
variable). A write through ``obj[k]`` or ``obj.f`` is a weak definition of
``obj``: it flows into later uses but kills nothing. ``sanitize(x)`` does not
propagate its argument to its result.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..cpg import CodePropertyGraph, Edge, EdgeKind, Node, NodeKind, Operators
from ..errors import IoError, QueryForgeError
from .ast import (
    Assign, Binary, Call, Expr, ExprStmt, Field, FunctionDecl, Ident, If, Index, Let,
    MiniLangAst, Num, ObjectLit, Pos, Return, Stmt, Str, While,
)
from .parser import parse_program

SOURCE_CALLS = frozenset({"input"})
SINK_CALLS = frozenset({"exec", "sql", "evalCode"})
SANITIZER_CALLS = frozenset({"sanitize"})

MAIN_METHOD = "<main>"


def builtin_table() -> dict[str, list[str]]:
    """Source, sink and sanitizer builtins, in a form the DSL spec can embed."""
    return {
        "sources": sorted(SOURCE_CALLS),
        "sinks": sorted(SINK_CALLS),
        "sanitizers": sorted(SANITIZER_CALLS),
    }


@dataclass
class _StmtInfo:
    defs: list[tuple[str, int, bool]] = field(default_factory=list)  # (var, def node, strong)
    uses: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class _Method:
    node: int
    params: list[tuple[str, int]]
    cfg_nodes: list[int] = field(default_factory=list)
    returns: list[int] = field(default_factory=list)


class _Builder:
    def __init__(self) -> None:
        self.nodes: dict[int, Node] = {}
        self.edges: list[Edge] = []
        self.files: dict[str, str] = {}
        self.methods: list[_Method] = []
        self.functions: dict[str, _Method] = {}
        self.stmt_info: dict[int, _StmtInfo] = {}
        self.user_calls: list[tuple[int, str, list[int]]] = []
        self.file = ""
        self.source = ""
        self._stmt_ids: dict[int, int] = {}
        self._args: dict[tuple[int, int], int] = {}

    # -- node helpers -----------------------------------------------------

    def node(self, kind: NodeKind, name: str, code: str, pos: Pos | None) -> int:
        nid = len(self.nodes)
        line, col = (pos.line, pos.column) if pos else (1, 0)
        self.nodes[nid] = Node(nid, kind, name, code, line, col, self.file)
        return nid

    def text(self, pos: Pos, end: int | None = None) -> str:
        return self.source[pos.start:pos.end if end is None else end].rstrip().rstrip(";").rstrip()

    def ast(self, parent: int, child: int, label: int) -> None:
        self.edges.append(Edge(parent, child, EdgeKind.AST, label))
        self._args[parent, label] = child

    def flow(self, src: int, dst: int, kind: EdgeKind = EdgeKind.REACHING_DEF) -> None:
        if src != dst:
            self.edges.append(Edge(src, dst, kind))

    # -- files and methods ------------------------------------------------

    def add_file(self, tree: MiniLangAst) -> None:
        self.file = tree.file
        self.source = tree.source
        self.files[tree.file] = tree.source
        main = self.node(NodeKind.METHOD, MAIN_METHOD, "", None)
        method = _Method(main, [])
        self.methods.append(method)
        body = self.node(NodeKind.BLOCK, "", "", None)
        self.ast(main, body, 1)
        pending: list[FunctionDecl] = []
        self.block(body, tree.statements, method, pending)
        self.cfg_seq(tree.statements, [main])
        while pending:
            self.function(pending.pop(0), pending)

    def function(self, fn: FunctionDecl, pending: list[FunctionDecl]) -> None:
        mid = self.node(NodeKind.METHOD, fn.name, self.text(fn.pos, fn.header_end), fn.pos)
        params = []
        for i, p in enumerate(fn.params, start=1):
            pid = self.node(NodeKind.PARAM, p.name, p.name, p.pos)
            self.ast(mid, pid, i)
            params.append((p.name, pid))
        method = _Method(mid, params)
        self.methods.append(method)
        self.functions.setdefault(fn.name, method)
        body = self.node(NodeKind.BLOCK, "", "", fn.pos)
        self.ast(mid, body, len(params) + 1)
        self.block(body, fn.body, method, pending)
        self.cfg_seq(fn.body, [mid])

    # -- statements -------------------------------------------------------

    def block(self, parent: int, stmts: Sequence[Stmt], method: _Method, pending: list[FunctionDecl]) -> None:
        label = 0
        for s in stmts:
            if isinstance(s, FunctionDecl):
                pending.append(s)
                continue
            label += 1
            self.ast(parent, self.statement(s, method, pending), label)

    def statement(self, s: Stmt, method: _Method, pending: list[FunctionDecl]) -> int:
        info = _StmtInfo()
        if isinstance(s, (Let, Assign)):
            nid = self.node(NodeKind.CALL, Operators.assignment, self.text(s.pos), s.pos)
            target = s.name if isinstance(s, Let) else s.target
            if isinstance(target, Ident):
                lhs = self.node(NodeKind.IDENTIFIER, target.name, target.name, target.pos)
                info.defs.append((target.name, lhs, True))
                def_node = lhs
            else:
                lhs = self.expr(target, info)
                base = self._base_ident(lhs)
                def_node = base
                if base is not None:
                    info.defs.append((self.nodes[base].name, base, False))
            rhs = self.expr(s.value, info)
            self.ast(nid, lhs, 1)
            self.ast(nid, rhs, 2)
            if def_node is not None:
                self.flow(rhs, def_node)
        elif isinstance(s, Return):
            nid = self.node(NodeKind.RETURN, "return", self.text(s.pos), s.pos)
            if s.value is not None:
                val = self.expr(s.value, info)
                self.ast(nid, val, 1)
                self.flow(val, nid)
            method.returns.append(nid)
        elif isinstance(s, ExprStmt):
            nid = self.expr(s.expr, info)
        elif isinstance(s, If):
            nid = self.node(NodeKind.BLOCK, "if", self.text(s.pos, s.header_end), s.pos)
            self.ast(nid, self.expr(s.cond, info), 1)
            then = self.node(NodeKind.BLOCK, "", "", s.pos)
            self.ast(nid, then, 2)
            self.block(then, s.then, method, pending)
            if s.orelse is not None:
                orelse = self.node(NodeKind.BLOCK, "", "", s.pos)
                self.ast(nid, orelse, 3)
                self.block(orelse, s.orelse, method, pending)
        elif isinstance(s, While):
            nid = self.node(NodeKind.BLOCK, "while", self.text(s.pos, s.header_end), s.pos)
            self.ast(nid, self.expr(s.cond, info), 1)
            body = self.node(NodeKind.BLOCK, "", "", s.pos)
            self.ast(nid, body, 2)
            self.block(body, s.body, method, pending)
        else:  # pragma: no cover - FunctionDecl is filtered by block()
            raise QueryForgeError(f"unexpected statement {type(s).__name__}")
        self.stmt_info[nid] = info
        self._stmt_ids[id(s)] = nid
        method.cfg_nodes.append(nid)
        return nid

    def _base_ident(self, nid: int) -> int | None:
        cur = nid
        while True:
            n = self.nodes[cur]
            if n.kind is NodeKind.IDENTIFIER:
                return cur
            if n.kind is NodeKind.CALL and n.name in (Operators.indexAccess, Operators.fieldAccess):
                cur = self._args[cur, 1]
                continue
            return None

    # -- expressions ------------------------------------------------------

    def expr(self, e: Expr, info: _StmtInfo) -> int:
        if isinstance(e, Num):
            return self.node(NodeKind.LITERAL, e.lexeme, e.lexeme, e.pos)
        if isinstance(e, Str):
            return self.node(NodeKind.LITERAL, e.value, e.lexeme, e.pos)
        if isinstance(e, ObjectLit):
            return self.node(NodeKind.LITERAL, "{}", "{}", e.pos)
        if isinstance(e, Ident):
            nid = self.node(NodeKind.IDENTIFIER, e.name, e.name, e.pos)
            info.uses.append((e.name, nid))
            return nid
        if isinstance(e, Binary):
            name = Operators.addition if e.op == "+" else Operators.equals
            nid = self.node(NodeKind.CALL, name, self.text(e.pos), e.pos)
            for label, sub in ((1, e.left), (2, e.right)):
                child = self.expr(sub, info)
                self.ast(nid, child, label)
                self.flow(child, nid)
            return nid
        if isinstance(e, Index):
            nid = self.node(NodeKind.CALL, Operators.indexAccess, self.text(e.pos), e.pos)
            for label, sub in ((1, e.obj), (2, e.index)):
                child = self.expr(sub, info)
                self.ast(nid, child, label)
                self.flow(child, nid)
            return nid
        if isinstance(e, Field):
            nid = self.node(NodeKind.CALL, Operators.fieldAccess, self.text(e.pos), e.pos)
            recv = self.expr(e.obj, info)
            self.ast(nid, recv, 1)
            self.flow(recv, nid)
            self.ast(nid, self.node(NodeKind.LITERAL, e.name, e.name, e.name_pos), 2)
            return nid
        if isinstance(e, Call):
            nid = self.node(NodeKind.CALL, e.callee, self.text(e.pos), e.pos)
            args = []
            for label, sub in enumerate(e.args, start=1):
                child = self.expr(sub, info)
                self.ast(nid, child, label)
                args.append(child)
            self.user_calls.append((nid, e.callee, args))
            return nid
        raise QueryForgeError(f"unexpected expression {type(e).__name__}")  # pragma: no cover

    # -- control flow -----------------------------------------------------

    def cfg_seq(self, stmts: Sequence[Stmt], preds: list[int]) -> list[int]:
        for s in stmts:
            if isinstance(s, FunctionDecl):
                continue
            nid = self._stmt_ids[id(s)]
            for p in preds:
                self.edges.append(Edge(p, nid, EdgeKind.CFG))
            if isinstance(s, If):
                exits = self.cfg_seq(s.then, [nid])
                exits += self.cfg_seq(s.orelse, [nid]) if s.orelse is not None else [nid]
                preds = exits
            elif isinstance(s, While):
                for p in self.cfg_seq(s.body, [nid]):
                    self.edges.append(Edge(p, nid, EdgeKind.CFG))
                preds = [nid]
            elif isinstance(s, Return):
                preds = []
            else:
                preds = [nid]
        return preds

    # -- interprocedural and reaching definitions -------------------------

    def link_calls(self) -> None:
        for call, callee, args in self.user_calls:
            target = self.functions.get(callee)
            if target is not None:
                self.edges.append(Edge(call, target.node, EdgeKind.CALL_EDGE))
                for arg, (_, param) in zip(args, target.params):
                    self.flow(arg, param, EdgeKind.ARG_TO_PARAM)
                for ret in target.returns:
                    self.flow(ret, call, EdgeKind.RETURN_TO_CALL)
            elif callee not in SANITIZER_CALLS:
                # unknown externals pass their arguments through
                for arg in args:
                    self.flow(arg, call)

    def reaching_definitions(self) -> None:
        succ: dict[int, list[int]] = defaultdict(list)
        pred: dict[int, list[int]] = defaultdict(list)
        for e in self.edges:
            if e.kind is EdgeKind.CFG:
                succ[e.src].append(e.dst)
                pred[e.dst].append(e.src)
        for method in self.methods:
            entry = _StmtInfo(defs=[(name, pid, True) for name, pid in method.params])
            info = {method.node: entry, **{n: self.stmt_info[n] for n in method.cfg_nodes}}
            order = [method.node] + method.cfg_nodes
            out: dict[int, frozenset[tuple[str, int]]] = {n: frozenset() for n in order}
            inn: dict[int, frozenset[tuple[str, int]]] = {n: frozenset() for n in order}
            changed = True
            while changed:
                changed = False
                for n in order:
                    reach_in = frozenset().union(*(out[p] for p in pred[n])) if pred[n] else frozenset()
                    strong = {var for var, _, is_strong in info[n].defs if is_strong}
                    reach_out = frozenset(d for d in reach_in if d[0] not in strong) | frozenset(
                        (var, node) for var, node, _ in info[n].defs
                    )
                    if reach_in != inn[n] or reach_out != out[n]:
                        inn[n], out[n] = reach_in, reach_out
                        changed = True
            for n in method.cfg_nodes:
                for var, use in info[n].uses:
                    for dvar, dnode in sorted(inn[n]):
                        if dvar == var:
                            self.flow(dnode, use)

    def finish(self) -> CodePropertyGraph:
        self.link_calls()
        self.reaching_definitions()
        return CodePropertyGraph(self.nodes, tuple(dict.fromkeys(self.edges)), self.files)


def build_cpg(asts: MiniLangAst | Iterable[MiniLangAst]) -> CodePropertyGraph:
    """Build one graph from one or more parsed files (node ids are dense and
    assigned in file-name order, then source order)."""
    if isinstance(asts, MiniLangAst):
        asts = [asts]
    b = _Builder()
    for tree in sorted(asts, key=lambda t: t.file):
        b.add_file(tree)
    return b.finish()


def project_files(project_dir: str | Path) -> list[Path]:
    root = Path(project_dir)
    return sorted(p for p in root.rglob("*.mini") if p.is_file())


def build_project(project_dir: str | Path) -> CodePropertyGraph:
    """Parse every ``.mini`` file under ``project_dir`` and build one graph.
    File names in the graph are posix paths relative to the project."""
    root = Path(project_dir)
    if not root.is_dir():
        raise IoError(f"{root}: not a directory")
    files = project_files(root)
    if not files:
        raise IoError(f"{root}: no source files (*.mini)")
    trees = [parse_program(p.read_text(encoding="utf-8"), p.relative_to(root).as_posix()) for p in files]
    return build_cpg(trees)
