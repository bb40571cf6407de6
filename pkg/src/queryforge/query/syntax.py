"""Query syntax tree, parser and canonical formatter.

Accepted grammar (the published BNF is generated from the step registry by
:mod:`queryforge.dslspec`; this parser is the permissive superset that
leaves name and type checks to execution)::

    query      ::= binding* result?
    binding    ::= ("def" | "val") NAME "=" traversal
    result     ::= traversal ("++" traversal)*
    traversal  ::= cpg_start ("." step)*
    cpg_start  ::= "cpg" | "cpg.call" | "cpg.method" | "cpg.identifier"
                 | "cpg.literal" | <bound NAME>
    step       ::= NAME | NAME "(" [argument ("," argument)*] ")"
    argument   ::= STRING | INT | "Operators." NAME | predicate | traversal
    predicate  ::= "_" ("." step)* | ("not" | "and" | "or") "(" predicate ("," predicate)* ")"

A query without a result expression evaluates to its last binding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

from ..errors import GrammarError

ROOT_STEPS = ("call", "method", "identifier", "literal")
COMBINATORS = ("not", "and", "or")
RESERVED = frozenset({"def", "val", "cpg", "_", "Operators", *COMBINATORS})


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int = 1
    column: int = 0


@dataclass(frozen=True)
class StringLit:
    value: str
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class IntLit:
    value: int
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class OperatorRef:
    name: str
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class Start:
    kind: str  # root | ref | anon
    name: str
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class Step:
    name: str
    args: tuple["Arg", ...] | None = None  # None: written without parentheses
    span: Span = field(default=Span(0, 0), compare=False)

    @property
    def arity(self) -> int:
        return 0 if self.args is None else len(self.args)


@dataclass(frozen=True)
class Chain:
    start: Start
    steps: tuple[Step, ...] = ()
    span: Span = field(default=Span(0, 0), compare=False)


@dataclass(frozen=True)
class Combinator:
    name: str
    args: tuple["Arg", ...]
    span: Span = field(default=Span(0, 0), compare=False)


Arg = Union[StringLit, IntLit, OperatorRef, Chain, Combinator]


@dataclass(frozen=True)
class Binding:
    name: str
    chain: Chain
    keyword: str = "def"


@dataclass(frozen=True)
class Block:
    """One evaluation unit: the start of a chain or one step application."""

    index: int  # 1-based
    owner: str  # binding name, "result" or "result#k"
    position: int  # 0 for the chain start, i for the i-th step
    text: str


@dataclass(frozen=True)
class QueryAst:
    bindings: tuple[Binding, ...]
    result: tuple[Chain, ...] = ()
    blocks: tuple[Block, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.blocks:
            object.__setattr__(self, "blocks", tuple(_make_blocks(self)))

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def chains(self) -> list[tuple[str, Chain]]:
        """Evaluation-ordered (owner, chain) pairs."""
        out = [(b.name, b.chain) for b in self.bindings]
        out += [(_result_name(i, len(self.result)), c) for i, c in enumerate(self.result, start=1)]
        return out

    @property
    def result_owners(self) -> list[str]:
        if self.result:
            return [_result_name(i, len(self.result)) for i in range(1, len(self.result) + 1)]
        return [self.bindings[-1].name]


def _result_name(i: int, total: int) -> str:
    return "result" if total == 1 else f"result#{i}"


def _make_blocks(q: QueryAst) -> Iterator[Block]:
    n = 0
    for owner, chain in q.chains():
        n += 1
        yield Block(n, owner, 0, format_start(chain.start))
        for pos, step in enumerate(chain.steps, start=1):
            n += 1
            yield Block(n, owner, pos, format_step(step))


# -- tokenizer -------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<int>-?\d+)
  | (?P<name>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<op>\+\+|[.(),=;])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    start: int
    end: int
    line: int
    column: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, line_start = 0, 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise GrammarError("token", (i, i + 1), ["token"], f"unexpected character {text[i]!r}",
                               line, i - line_start)
        kind = m.lastgroup or ""
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), i, m.end(), line, i - line_start))
        for j, ch in enumerate(m.group()):
            if ch == "\n":
                line += 1
                line_start = i + j + 1
        i = m.end()
    toks.append(_Tok("eof", "", i, i, line, i - line_start))
    return toks


def _unquote(lexeme: str) -> str:
    body = lexeme[1:-1]
    return re.sub(r'\\([\\"nt])', lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), body)


def quote_string(value: str) -> str:
    out = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


# -- parser ----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.bound: list[str] = []

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def is_op(self, text: str, tok: _Tok | None = None) -> bool:
        t = tok or self.tok
        return t.kind == "op" and t.text == text

    def fail(self, rule: str, expected: list[str], tok: _Tok | None = None) -> GrammarError:
        t = tok or self.tok
        found = t.text or "end of query"
        return GrammarError(rule, (t.start, max(t.end, t.start + 1)), expected,
                            f"expected {' or '.join(expected)}, found {found!r}", t.line, t.column)

    def expect_op(self, text: str, rule: str) -> _Tok:
        if not self.is_op(text):
            raise self.fail(rule, [repr(text)])
        t = self.tok
        self.i += 1
        return t

    def span(self, first: _Tok) -> Span:
        last = self.toks[self.i - 1]
        return Span(first.start, last.end, first.line, first.column)

    # -- rules ------------------------------------------------------------

    def query(self) -> QueryAst:
        bindings: list[Binding] = []
        result: list[Chain] = []
        while True:
            while self.is_op(";"):
                self.i += 1
            t = self.tok
            if t.kind == "eof":
                break
            if t.kind == "name" and t.text in ("def", "val"):
                bindings.append(self.binding())
                continue
            result.append(self.traversal(allow_anon=False))
            while self.is_op("++"):
                self.i += 1
                result.append(self.traversal(allow_anon=False))
            while self.is_op(";"):
                self.i += 1
            if self.tok.kind != "eof":
                raise self.fail("query", ["end of query"])
            break
        if not bindings and not result:
            raise self.fail("query", ["binding", "traversal"])
        return QueryAst(tuple(bindings), tuple(result))

    def binding(self) -> Binding:
        kw = self.tok.text
        self.i += 1
        t = self.tok
        if t.kind != "name" or t.text in RESERVED:
            raise self.fail("binding", ["binding name"])
        if t.text in self.bound:
            raise GrammarError("binding", (t.start, t.end), ["fresh binding name"],
                               f"binding {t.text!r} is already defined", t.line, t.column)
        self.i += 1
        self.expect_op("=", "binding")
        chain = self.traversal(allow_anon=False)
        self.bound.append(t.text)
        return Binding(t.text, chain, kw)

    def start(self, allow_anon: bool) -> Start:
        t = self.tok
        if t.kind == "name" and t.text == "cpg":
            self.i += 1
            nxt = self.peek(1)
            if self.is_op(".") and nxt.kind == "name" and nxt.text in ROOT_STEPS:
                self.i += 2
                return Start("root", f"cpg.{nxt.text}", self.span(t))
            return Start("root", "cpg", self.span(t))
        if t.kind == "name" and t.text in self.bound:
            self.i += 1
            return Start("ref", t.text, self.span(t))
        if allow_anon and t.kind == "name" and t.text == "_":
            self.i += 1
            return Start("anon", "_", self.span(t))
        expected = ['"cpg"'] + [repr(b) for b in self.bound]
        if allow_anon:
            expected.append('"_"')
        raise self.fail("cpg_start", expected)

    def traversal(self, allow_anon: bool) -> Chain:
        first = self.tok
        start = self.start(allow_anon)
        steps = []
        while self.is_op("."):
            self.i += 1
            steps.append(self.step())
        return Chain(start, tuple(steps), self.span(first))

    def step(self) -> Step:
        t = self.tok
        if t.kind != "name":
            raise self.fail("step", ["step name"])
        self.i += 1
        args = None
        if self.is_op("("):
            args = self.arguments()
        return Step(t.text, args, self.span(t))

    def arguments(self) -> tuple[Arg, ...]:
        self.expect_op("(", "arguments")
        args: list[Arg] = []
        if not self.is_op(")"):
            while True:
                args.append(self.argument())
                if not self.is_op(","):
                    break
                self.i += 1
        self.expect_op(")", "arguments")
        return tuple(args)

    def argument(self) -> Arg:
        t = self.tok
        if t.kind == "str":
            self.i += 1
            return StringLit(_unquote(t.text), self.span(t))
        if t.kind == "int":
            self.i += 1
            return IntLit(int(t.text), self.span(t))
        if t.kind == "name" and t.text == "Operators":
            self.i += 1
            self.expect_op(".", "reference")
            name = self.tok
            if name.kind != "name":
                raise self.fail("reference", ["operator name"])
            self.i += 1
            return OperatorRef(name.text, self.span(t))
        if t.kind == "name" and t.text in COMBINATORS and self.is_op("(", self.peek()):
            self.i += 1
            args = self.arguments()
            return Combinator(t.text, args, self.span(t))
        if t.kind == "name":
            return self.traversal(allow_anon=True)
        raise self.fail("argument", ["string", "integer", '"Operators."', "predicate", "traversal"])


def parse_query(text: str) -> QueryAst:
    """Parse query text into a :class:`QueryAst`.

    Raises :class:`GrammarError` naming the violated rule and the source span.
    Chains may only start at ``cpg`` (or one of its root steps) or at a
    previously defined binding.
    """
    return _Parser(text).query()


# -- formatting ------------------------------------------------------------


def format_arg(arg: Arg) -> str:
    if isinstance(arg, StringLit):
        return quote_string(arg.value)
    if isinstance(arg, IntLit):
        return str(arg.value)
    if isinstance(arg, OperatorRef):
        return f"Operators.{arg.name}"
    if isinstance(arg, Combinator):
        return f"{arg.name}({', '.join(format_arg(a) for a in arg.args)})"
    return format_chain(arg)


def format_step(step: Step) -> str:
    if step.args is None:
        return step.name
    return f"{step.name}({', '.join(format_arg(a) for a in step.args)})"


def format_start(start: Start) -> str:
    return start.name


def format_chain(chain: Chain) -> str:
    return ".".join([format_start(chain.start)] + [format_step(s) for s in chain.steps])


def format_query(q: QueryAst) -> str:
    lines = [f"{b.keyword} {b.name} = {format_chain(b.chain)}" for b in q.bindings]
    if q.result:
        lines.append(" ++ ".join(format_chain(c) for c in q.result))
    return "\n".join(lines) + "\n"


# -- traversal helpers -----------------------------------------------------


def iter_args(arg: Arg) -> Iterator[Arg]:
    """Yield ``arg`` and every argument nested inside it."""
    yield arg
    if isinstance(arg, Combinator):
        for a in arg.args:
            yield from iter_args(a)
    elif isinstance(arg, Chain):
        for s in arg.steps:
            for a in s.args or ():
                yield from iter_args(a)


def iter_steps(chain: Chain) -> Iterator[Step]:
    """Every step of ``chain`` including steps of nested traversals."""
    for s in chain.steps:
        yield s
        for a in s.args or ():
            for sub in iter_args(a):
                if isinstance(sub, Chain):
                    yield from iter_steps(sub)


def api_names(q: QueryAst) -> set[str]:
    """Registry names a query uses: roots, steps, combinators and operator
    constants (``Operators.<name>``)."""
    names: set[str] = set()

    def visit_chain(c: Chain) -> None:
        if c.start.kind == "root":
            names.add(c.start.name)
        for s in c.steps:
            names.add(s.name)
            for a in s.args or ():
                visit_arg(a)

    def visit_arg(a: Arg) -> None:
        if isinstance(a, OperatorRef):
            names.add(f"Operators.{a.name}")
        elif isinstance(a, Combinator):
            names.add(a.name)
            for sub in a.args:
                visit_arg(sub)
        elif isinstance(a, Chain):
            visit_chain(a)

    for _, chain in q.chains():
        visit_chain(chain)
    return names
