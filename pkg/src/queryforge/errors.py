"""Exception hierarchy shared by every queryforge module."""

from __future__ import annotations


class QueryForgeError(Exception):
    """Base class for all errors raised by queryforge."""


# -- graph layer -----------------------------------------------------------


class InvalidNodeId(QueryForgeError):
    def __init__(self, node_id: int) -> None:
        super().__init__(f"unknown node id {node_id}")
        self.node_id = node_id


class IoError(QueryForgeError, OSError):
    """A graph or report file could not be written or read."""


class FormatError(QueryForgeError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantError(QueryForgeError):
    """A structurally well-formed graph violates a graph invariant."""


# -- MiniLang frontend -----------------------------------------------------


class MiniLangSyntaxError(QueryForgeError):
    def __init__(self, line: int, column: int, expected: list[str], found: str = "") -> None:
        exp = " or ".join(expected) if expected else "?"
        got = f", found {found!r}" if found else ""
        super().__init__(f"{line}:{column}: expected {exp}{got}")
        self.line = line
        self.column = column
        self.expected = list(expected)
        self.found = found


class NoNodeAtLabel(QueryForgeError):
    """A labeled line range does not resolve to any graph node."""


# -- query DSL -------------------------------------------------------------


class GrammarError(QueryForgeError):
    """Query text violates the DSL grammar.

    ``rule`` names the grammar nonterminal that failed, ``span`` is the
    ``(start, end)`` character offset range, and ``expected`` lists what the
    parser would have accepted instead.
    """

    def __init__(self, rule: str, span: tuple[int, int], expected: list[str], message: str = "",
                 line: int = 1, column: int = 0) -> None:
        self.rule = rule
        self.span = span
        self.expected = list(expected)
        self.line = line
        self.column = column
        text = message or f"expected {' or '.join(expected)}"
        super().__init__(f"[{rule}] {line}:{column}: {text}")


EXEC_ERROR_KINDS = ("UnknownStep", "ArityMismatch", "TypeMismatch", "UnknownOperatorName", "RegexError")


class ExecError(QueryForgeError):
    def __init__(self, block: int, kind: str, message: str, offending: str = "") -> None:
        assert kind in EXEC_ERROR_KINDS, kind
        super().__init__(f"block {block}: {kind}: {message}")
        self.block = block
        self.kind = kind
        self.message = message
        self.offending = offending


class CoverageViolation(QueryForgeError):
    """Pruning an API would leave some example query inexpressible."""

    def __init__(self, api: str, query_index: int) -> None:
        super().__init__(f"cannot prune {api!r}: example query {query_index} has no rewrite")
        self.api = api
        self.query_index = query_index


class NotAnFp(QueryForgeError):
    """The node handed to FP localization is not in the final result."""


# -- generation ------------------------------------------------------------


class ProviderError(QueryForgeError):
    pass


class TransportError(ProviderError):
    pass


class ScriptExhausted(ProviderError):
    def __init__(self, example_id: str, attempt: int) -> None:
        super().__init__(f"transcript has no response for ({example_id!r}, attempt {attempt})")
        self.example_id = example_id
        self.attempt = attempt


class BudgetExhausted(QueryForgeError):
    def __init__(self, max_attempts: int, last_verdict: str) -> None:
        super().__init__(f"no passing query after {max_attempts} attempts (last verdict: {last_verdict})")
        self.max_attempts = max_attempts
        self.last_verdict = last_verdict


class ConfigError(QueryForgeError):
    pass
