"""Step-chain interpreter with optional per-block instrumentation.

Values are frozen sets of node ids. Each chain start and each top-level
step is one block; nested traversals (predicate bodies, ``reachableBy``
arguments) run inside their enclosing block. Argument names and types are
checked when a block starts, so a bad step fails even on an empty input.
"""

from __future__ import annotations

import re
from collections import defaultdict
from functools import cached_property
from typing import Callable, NamedTuple

from ..cpg import DATAFLOW_KINDS, CodePropertyGraph, NodeKind, Operators
from ..errors import ExecError
from .pstate import PState
from .registry import OPERATOR_CONSTANTS, REGISTRY
from .syntax import (
    Arg, Chain, Combinator, IntLit, OperatorRef, QueryAst, Start, Step, StringLit, format_step,
)


class Execution(NamedTuple):
    result: frozenset[int]
    pstate: PState | None


class _Fail(Exception):
    def __init__(self, kind: str, message: str, offending: str = "") -> None:
        self.kind, self.message, self.offending = kind, message, offending


class _Graph:
    """Indices over one graph, shared by all evaluations on it."""

    def __init__(self, g: CodePropertyGraph) -> None:
        self.g = g

    @cached_property
    def all(self) -> frozenset[int]:
        return frozenset(self.g.nodes)

    @cached_property
    def by_kind(self) -> dict[NodeKind, frozenset[int]]:
        out: dict[NodeKind, set[int]] = defaultdict(set)
        for nid, n in self.g.nodes.items():
            out[n.kind].add(nid)
        return {k: frozenset(v) for k, v in out.items()}

    @cached_property
    def flow_preds(self) -> dict[int, tuple[int, ...]]:
        preds: dict[int, list[int]] = defaultdict(list)
        for e in self.g.edges:
            if e.kind in DATAFLOW_KINDS:
                preds[e.dst].append(e.src)
        return {k: tuple(v) for k, v in preds.items()}

    def reached_from(self, targets: frozenset[int], sources: frozenset[int]) -> frozenset[int]:
        """Targets with a backward data-flow path to some source."""
        kept = set()
        for t in targets:
            stack, seen = [t], {t}
            while stack:
                cur = stack.pop()
                if cur in sources:
                    kept.add(t)
                    break
                for p in self.flow_preds.get(cur, ()):
                    if p not in seen:
                        seen.add(p)
                        stack.append(p)
        return frozenset(kept)


_graph_cache: dict[int, tuple[CodePropertyGraph, _Graph]] = {}


def _indexed(g: CodePropertyGraph) -> _Graph:
    hit = _graph_cache.get(id(g))
    if hit is not None and hit[0] is g:
        return hit[1]
    if len(_graph_cache) > 64:
        _graph_cache.clear()
    ig = _Graph(g)
    _graph_cache[id(g)] = (g, ig)
    return ig


# -- static checks ---------------------------------------------------------


def _check_chain(chain: Chain) -> None:
    for step in chain.steps:
        _check_step(step)


def _check_step(step: Step) -> None:
    entry = REGISTRY.get(step.name)
    if entry is None or entry.receiver != "node-set":
        raise _Fail("UnknownStep", f"no step named {step.name!r}", step.name)
    if entry.category == "predicate":
        raise _Fail("TypeMismatch", f"{step.name}(...) is a predicate, not a step; use it inside where()",
                    step.name)
    lo, hi = entry.arity
    if not lo <= step.arity <= hi:
        want = str(lo) if lo == hi else f"{lo}..{hi}"
        raise _Fail("ArityMismatch", f"{step.name} takes {want} argument(s), got {step.arity}", step.name)
    for i, arg in enumerate(step.args or ()):
        _check_arg(arg, entry.params[min(i, len(entry.params) - 1)], step.name)


def _check_arg(arg: Arg, want: str, owner: str) -> None:
    if isinstance(arg, OperatorRef) and arg.name not in OPERATOR_CONSTANTS:
        raise _Fail("UnknownOperatorName", f"Operators.{arg.name} is not defined", arg.name)
    if want in ("string", "regex"):
        if not isinstance(arg, (StringLit, OperatorRef)):
            raise _Fail("TypeMismatch", f"{owner} expects a {want}, got {_describe(arg)}", owner)
        if want == "regex":
            pattern = arg.value if isinstance(arg, StringLit) else OPERATOR_CONSTANTS[arg.name]
            try:
                re.compile(pattern)
            except re.error as exc:
                raise _Fail("RegexError", f"bad regex {pattern!r} in {owner}: {exc}", pattern) from None
    elif want == "integer":
        if not isinstance(arg, IntLit):
            raise _Fail("TypeMismatch", f"{owner} expects an integer, got {_describe(arg)}", owner)
    elif want == "predicate":
        if isinstance(arg, Combinator):
            entry = REGISTRY[arg.name]
            lo, hi = entry.arity
            if not lo <= len(arg.args) <= hi:
                raise _Fail("ArityMismatch", f"{arg.name} takes {lo}..{hi} predicate(s), got {len(arg.args)}",
                            arg.name)
            for sub in arg.args:
                _check_arg(sub, "predicate", arg.name)
        elif isinstance(arg, Chain) and arg.start.kind == "anon":
            _check_chain(arg)
        else:
            raise _Fail("TypeMismatch", f"{owner} expects a predicate such as _.isCall, got {_describe(arg)}",
                        owner)
    elif want == "traversal":
        if not (isinstance(arg, Chain) and arg.start.kind in ("root", "ref")):
            raise _Fail("TypeMismatch", f"{owner} expects a traversal such as cpg.call..., got {_describe(arg)}",
                        owner)
        _check_chain(arg)


def _describe(arg: Arg) -> str:
    if isinstance(arg, StringLit):
        return "a string"
    if isinstance(arg, IntLit):
        return "an integer"
    if isinstance(arg, OperatorRef):
        return "an operator name"
    if isinstance(arg, Combinator):
        return f"a {arg.name}() predicate"
    if arg.start.kind == "anon":
        return "a predicate"
    return "a traversal"


# -- evaluation ------------------------------------------------------------


def _string(arg: Arg) -> str:
    if isinstance(arg, OperatorRef):
        return OPERATOR_CONSTANTS[arg.name]
    assert isinstance(arg, StringLit)
    return arg.value


class _Evaluator:
    def __init__(self, g: CodePropertyGraph, env: dict[str, frozenset[int]]) -> None:
        self.g = g
        self.ix = _indexed(g)
        self.env = env

    def start(self, start: Start, seed: frozenset[int] | None = None) -> frozenset[int]:
        if start.kind == "anon":
            assert seed is not None
            return seed
        if start.kind == "ref":
            return self.env[start.name]
        if start.name == "cpg":
            return self.ix.all
        kind = {"cpg.call": NodeKind.CALL, "cpg.method": NodeKind.METHOD,
                "cpg.identifier": NodeKind.IDENTIFIER, "cpg.literal": NodeKind.LITERAL}[start.name]
        return self.ix.by_kind.get(kind, frozenset())

    def chain(self, chain: Chain, seed: frozenset[int] | None = None) -> frozenset[int]:
        value = self.start(chain.start, seed)
        for step in chain.steps:
            value = self.step(step, value)
        return value

    def predicate(self, arg: Arg, nid: int) -> bool:
        if isinstance(arg, Combinator):
            if arg.name == "not":
                return not self.predicate(arg.args[0], nid)
            if arg.name == "and":
                return all(self.predicate(a, nid) for a in arg.args)
            return any(self.predicate(a, nid) for a in arg.args)
        assert isinstance(arg, Chain)
        return bool(self.chain(arg, frozenset((nid,))))

    def step(self, step: Step, value: frozenset[int]) -> frozenset[int]:
        impl = _STEPS[step.name]
        return impl(self, value, step.args or ())


def _filter(pred: Callable[[object], bool]):
    def run(ev: _Evaluator, value, args):
        nodes = ev.g.nodes
        return frozenset(n for n in value if pred(nodes[n]))
    return run


def _regex_filter(attr: str):
    def run(ev: _Evaluator, value, args):
        rx = re.compile(_string(args[0]))
        nodes = ev.g.nodes
        return frozenset(n for n in value if rx.fullmatch(getattr(nodes[n], attr)))
    return run


def _name_exact(ev, value, args):
    want = _string(args[0])
    return frozenset(n for n in value if ev.g.nodes[n].name == want)


def _kind(ev, value, args):
    want = _string(args[0])
    return frozenset(n for n in value if ev.g.nodes[n].kind.value == want)


def _line(ev, value, args):
    return frozenset(n for n in value if ev.g.nodes[n].line == args[0].value)


def _where(ev, value, args):
    return frozenset(n for n in value if ev.predicate(args[0], n))


def _where_not(ev, value, args):
    return frozenset(n for n in value if not ev.predicate(args[0], n))


def _argument(ev, value, args):
    out = set()
    for n in value:
        if ev.g.nodes[n].kind is not NodeKind.CALL:
            continue
        if args:
            child = ev.g.argument(n, args[0].value)
            if child is not None:
                out.add(child)
        else:
            out.update(ev.g.ast_children(n))
    return frozenset(out)


def _access_part(index: int, names: tuple[str, ...]):
    def run(ev, value, args):
        out = set()
        for n in value:
            node = ev.g.nodes[n]
            if node.kind is NodeKind.CALL and node.name in names:
                child = ev.g.argument(n, index)
                if child is not None:
                    out.add(child)
        return frozenset(out)
    return run


def _ast_children(ev, value, args):
    return frozenset(c for n in value for c in ev.g.ast_children(n))


def _in_ast(ev, value, args):
    out = set()
    for n in value:
        p = ev.g.ast_parent(n)
        while p is not None:
            out.add(p)
            p = ev.g.ast_parent(p)
    return frozenset(out)


def _method(ev, value, args):
    return frozenset(m for m in (ev.g.enclosing_method(n) for n in value) if m is not None)


def _reachable_by(ev, value, args):
    sources = ev.chain(args[0])
    return ev.ix.reached_from(value, sources)


def _identity(ev, value, args):
    return value


def _empty(ev, value, args):
    return frozenset()


_STEPS: dict[str, Callable] = {
    "name": _regex_filter("name"),
    "nameExact": _name_exact,
    "code": _regex_filter("code"),
    "lineNumber": _line,
    "kind": _kind,
    "where": _where,
    "whereNot": _where_not,
    "filter": _where,
    "isCall": _filter(lambda n: n.kind is NodeKind.CALL),
    "isLiteral": _filter(lambda n: n.kind is NodeKind.LITERAL),
    "isIdentifier": _filter(lambda n: n.kind is NodeKind.IDENTIFIER),
    "arrayAccess": _filter(lambda n: n.kind is NodeKind.CALL and n.name == Operators.indexAccess),
    "fieldAccess": _filter(lambda n: n.kind is NodeKind.CALL and n.name == Operators.fieldAccess),
    "argument": _argument,
    "array": _access_part(1, (Operators.indexAccess, Operators.fieldAccess)),
    "index": _access_part(2, (Operators.indexAccess,)),
    "astChildren": _ast_children,
    "inAst": _in_ast,
    "method": _method,
    "reachableBy": _reachable_by,
    "dump": _identity,
    "size": _identity,
    "typeFullName": _empty,
}

assert set(_STEPS) == {e.name for e in REGISTRY.values() if e.receiver == "node-set" and e.category != "predicate"}


def execute(q: QueryAst, g: CodePropertyGraph, instrument: bool = False) -> Execution:
    """Evaluate ``q`` on ``g``.

    With ``instrument`` set, the returned :class:`PState` holds one state per
    block. On failure an :class:`ExecError` is raised carrying the failing
    block index; the partial trace is attached as ``err.pstate``.
    """
    env: dict[str, frozenset[int]] = {}
    ev = _Evaluator(g, env)
    pstate = PState() if instrument else None
    blocks = iter(q.blocks)
    for owner, chain in q.chains():
        block = next(blocks)
        try:
            value = ev.start(chain.start)
        except _Fail as f:  # pragma: no cover - starts are validated by the parser
            raise ExecError(block.index, f.kind, f.message, f.offending)
        env[owner] = value
        if pstate is not None:
            pstate.append(block, env)
        for step in chain.steps:
            block = next(blocks)
            try:
                _check_step(step)
                value = ev.step(step, value)
            except _Fail as f:
                err = ExecError(block.index, f.kind, f"{format_step(step)}: {f.message}", f.offending)
                err.pstate = pstate  # type: ignore[attr-defined]
                raise err from None
            env[owner] = value
            if pstate is not None:
                pstate.append(block, env)
    result = frozenset().union(*(env[o] for o in q.result_owners))
    return Execution(result, pstate)
