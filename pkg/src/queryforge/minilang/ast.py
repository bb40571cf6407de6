"""Syntax tree for MiniLang programs.

Every node records its 1-based ``line``, 0-based ``column`` and the
``[start, end)`` character offsets of its source text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class Pos:
    line: int
    column: int
    start: int
    end: int


# -- expressions -----------------------------------------------------------


@dataclass(frozen=True)
class Num:
    lexeme: str
    pos: Pos


@dataclass(frozen=True)
class Str:
    value: str
    lexeme: str
    pos: Pos


@dataclass(frozen=True)
class Ident:
    name: str
    pos: Pos


@dataclass(frozen=True)
class ObjectLit:
    pos: Pos


@dataclass(frozen=True)
class Call:
    callee: str
    args: tuple["Expr", ...]
    pos: Pos


@dataclass(frozen=True)
class Index:
    obj: "Expr"
    index: "Expr"
    pos: Pos


@dataclass(frozen=True)
class Field:
    obj: "Expr"
    name: str
    name_pos: Pos
    pos: Pos


@dataclass(frozen=True)
class Binary:
    op: str  # "+" or "=="
    left: "Expr"
    right: "Expr"
    pos: Pos


Expr = Union[Num, Str, Ident, ObjectLit, Call, Index, Field, Binary]
LValue = Union[Ident, Index, Field]


# -- statements ------------------------------------------------------------


@dataclass(frozen=True)
class Let:
    name: Ident
    value: Expr
    pos: Pos


@dataclass(frozen=True)
class Assign:
    target: LValue
    value: Expr
    pos: Pos


@dataclass(frozen=True)
class If:
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] | None
    pos: Pos
    header_end: int


@dataclass(frozen=True)
class While:
    cond: Expr
    body: tuple["Stmt", ...]
    pos: Pos
    header_end: int


@dataclass(frozen=True)
class FunctionDecl:
    name: str
    params: tuple[Ident, ...]
    body: tuple["Stmt", ...]
    pos: Pos
    header_end: int


@dataclass(frozen=True)
class Return:
    value: Expr | None
    pos: Pos


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    pos: Pos


Stmt = Union[Let, Assign, If, While, FunctionDecl, Return, ExprStmt]


@dataclass(frozen=True)
class MiniLangAst:
    file: str
    source: str
    statements: tuple[Stmt, ...] = field(default_factory=tuple)

    @property
    def functions(self) -> list[FunctionDecl]:
        """All function declarations, nested ones included, in source order."""
        found: list[FunctionDecl] = []

        def walk(stmts: tuple[Stmt, ...]) -> None:
            for s in stmts:
                if isinstance(s, FunctionDecl):
                    found.append(s)
                    walk(s.body)
                elif isinstance(s, If):
                    walk(s.then)
                    if s.orelse:
                        walk(s.orelse)
                elif isinstance(s, While):
                    walk(s.body)

        walk(self.statements)
        return found

    @property
    def top_level(self) -> list[Stmt]:
        return [s for s in self.statements if not isinstance(s, FunctionDecl)]
