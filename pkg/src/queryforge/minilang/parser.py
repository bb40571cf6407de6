"""Recursive-descent parser for MiniLang.

The language is a small JavaScript-flavoured subset: ``let`` bindings,
assignments to identifiers, index and field lvalues, ``if``/``else``,
``while``, function declarations, ``return`` and expression statements.
Expressions cover literals, identifiers, ``{}``, calls on a plain
identifier, ``e[e]``, ``e.id``, ``+`` and ``==``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import MiniLangSyntaxError
from .ast import (
    Assign, Binary, Call, Expr, ExprStmt, Field, FunctionDecl, Ident, If, Index, Let,
    MiniLangAst, Num, ObjectLit, Pos, Return, Stmt, Str, While,
)

KEYWORDS = frozenset({"let", "function", "if", "else", "while", "return"})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+(?:\.\d+)?)
  | (?P<str>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')
  | (?P<ident>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<op>==|[=+(){}\[\];,.])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", "\\": "\\", '"': '"', "'": "'"}


@dataclass(frozen=True)
class Token:
    kind: str  # num | str | ident | kw | op | eof
    text: str
    line: int
    column: int
    start: int
    end: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, i = 1, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise MiniLangSyntaxError(line, i - line_start, ["token"], source[i])
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line, i - line_start, i, m.end()))
        for j, ch in enumerate(text):
            if ch == "\n":
                line += 1
                line_start = i + j + 1
        i = m.end()
    tokens.append(Token("eof", "", line, i - line_start, i, i))
    return tokens


def _unescape(lexeme: str) -> str:
    body = lexeme[1:-1]
    return re.sub(r"\\(.)", lambda m: _ESCAPES.get(m.group(1), m.group(1)), body)


class _Parser:
    def __init__(self, source: str) -> None:
        self.source = source
        self.tokens = tokenize(source)
        self.i = 0

    # -- token helpers ----------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "kw") and self.tok.text == text

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail([repr(text)])
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            self.fail(["identifier"])
        return self.advance()

    def fail(self, expected: list[str]) -> None:
        t = self.tok
        raise MiniLangSyntaxError(t.line, t.column, expected, t.text or "end of input")

    def pos_from(self, first: Token) -> Pos:
        last = self.tokens[self.i - 1]
        return Pos(first.line, first.column, first.start, last.end)

    # -- statements -------------------------------------------------------

    def program(self) -> tuple[Stmt, ...]:
        stmts = []
        while self.tok.kind != "eof":
            stmts.append(self.statement())
        return tuple(stmts)

    def block(self) -> tuple[Stmt, ...]:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                self.fail(["'}'"])
            stmts.append(self.statement())
        self.expect("}")
        return tuple(stmts)

    def statement(self) -> Stmt:
        first = self.tok
        if self.at("let"):
            self.advance()
            name_tok = self.expect_ident()
            name = Ident(name_tok.text, Pos(name_tok.line, name_tok.column, name_tok.start, name_tok.end))
            self.expect("=")
            value = self.expression()
            self.expect(";")
            return Let(name, value, self.pos_from(first))
        if self.at("function"):
            self.advance()
            name = self.expect_ident().text
            self.expect("(")
            params: list[Ident] = []
            if not self.at(")"):
                while True:
                    p = self.expect_ident()
                    params.append(Ident(p.text, Pos(p.line, p.column, p.start, p.end)))
                    if not self.at(","):
                        break
                    self.advance()
            header_end = self.expect(")").end
            body = self.block()
            return FunctionDecl(name, tuple(params), body, self.pos_from(first), header_end)
        if self.at("if"):
            return self.if_statement()
        if self.at("while"):
            self.advance()
            self.expect("(")
            cond = self.expression()
            header_end = self.expect(")").end
            body = self.block()
            return While(cond, body, self.pos_from(first), header_end)
        if self.at("return"):
            self.advance()
            value = None if self.at(";") else self.expression()
            self.expect(";")
            return Return(value, self.pos_from(first))
        expr = self.expression()
        if self.at("="):
            if not isinstance(expr, (Ident, Index, Field)):
                self.fail(["';'"])
            self.advance()
            value = self.expression()
            self.expect(";")
            return Assign(expr, value, self.pos_from(first))
        self.expect(";")
        return ExprStmt(expr, self.pos_from(first))

    def if_statement(self) -> If:
        first = self.expect("if")
        self.expect("(")
        cond = self.expression()
        header_end = self.expect(")").end
        then = self.block()
        orelse = None
        if self.at("else"):
            self.advance()
            orelse = (self.if_statement(),) if self.at("if") else self.block()
        return If(cond, then, orelse, self.pos_from(first), header_end)

    # -- expressions ------------------------------------------------------

    def expression(self) -> Expr:
        first = self.tok
        left = self.additive()
        while self.at("=="):
            self.advance()
            right = self.additive()
            left = Binary("==", left, right, self.pos_from(first))
        return left

    def additive(self) -> Expr:
        first = self.tok
        left = self.postfix()
        while self.at("+"):
            self.advance()
            right = self.postfix()
            left = Binary("+", left, right, self.pos_from(first))
        return left

    def postfix(self) -> Expr:
        first = self.tok
        expr = self.primary()
        while True:
            if self.at("["):
                self.advance()
                index = self.expression()
                self.expect("]")
                expr = Index(expr, index, self.pos_from(first))
            elif self.at("."):
                self.advance()
                name = self.expect_ident()
                expr = Field(expr, name.text, Pos(name.line, name.column, name.start, name.end), self.pos_from(first))
            elif self.at("("):
                if not isinstance(expr, Ident):
                    # only plain identifiers may be called
                    self.fail(["';'", "operator"])
                self.advance()
                args: list[Expr] = []
                if not self.at(")"):
                    while True:
                        args.append(self.expression())
                        if not self.at(","):
                            break
                        self.advance()
                self.expect(")")
                expr = Call(expr.name, tuple(args), self.pos_from(first))
            else:
                return expr

    def primary(self) -> Expr:
        t = self.tok
        pos = Pos(t.line, t.column, t.start, t.end)
        if t.kind == "num":
            self.advance()
            return Num(t.text, pos)
        if t.kind == "str":
            self.advance()
            return Str(_unescape(t.text), t.text, pos)
        if t.kind == "ident":
            self.advance()
            return Ident(t.text, pos)
        if self.at("{"):
            self.advance()
            self.expect("}")
            return ObjectLit(self.pos_from(t))
        if self.at("("):
            self.advance()
            inner = self.expression()
            self.expect(")")
            return inner
        self.fail(["expression"])
        raise AssertionError("unreachable")


def parse_program(source: str, file: str = "<input>") -> MiniLangAst:
    """Parse MiniLang ``source``; raises :class:`MiniLangSyntaxError` on the
    first error with its line, column and the expected tokens."""
    return MiniLangAst(file, source, _Parser(source).program())
