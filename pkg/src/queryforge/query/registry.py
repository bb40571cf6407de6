"""The step registry: every name the query engine understands.

Each :class:`StepRegistryEntry` documents one root, step, predicate
combinator or operator constant. ``rewrite`` optionally gives an equivalent
expression over other registry names; ``_`` in a step template stands for
the original argument. Rewrite targets never carry rewrites themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..cpg import Operators
from .syntax import Chain, Combinator, QueryAst, Step, api_names, parse_query

CORE = "core"
DEBUG = "debug"
LANGUAGE_SPECIFIC = "language-specific"


@dataclass(frozen=True)
class StepRegistryEntry:
    name: str
    receiver: str  # root | node-set | constant
    params: tuple[str, ...]  # each of: string, regex, integer, predicate, traversal
    returns: str  # node-set | predicate | string
    description: str
    category: str  # root | filter | navigation | flow | predicate | constant | debug
    rewrite: str | None = None
    tags: frozenset[str] = field(default_factory=lambda: frozenset({CORE}))
    min_args: int | None = None  # defaults to len(params)
    max_args: int | None = None  # defaults to len(params)

    @property
    def arity(self) -> tuple[int, int]:
        lo = len(self.params) if self.min_args is None else self.min_args
        hi = len(self.params) if self.max_args is None else self.max_args
        return lo, hi

    @property
    def signature(self) -> str:
        if not self.params:
            return "none"
        parts = list(self.params)
        lo, hi = self.arity
        if hi > len(parts):
            parts.append(f"{parts[-1]}...")
        if lo < len(self.params):
            parts = [f"{p}?" if i >= lo else p for i, p in enumerate(parts)]
        return ", ".join(parts)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "receiver": self.receiver,
            "params": list(self.params),
            "returns": self.returns,
            "description": self.description,
            "category": self.category,
            "rewrite": self.rewrite,
            "tags": sorted(self.tags),
            "min_args": self.min_args,
            "max_args": self.max_args,
        }

    @classmethod
    def from_json(cls, data: dict) -> "StepRegistryEntry":
        return cls(
            name=data["name"], receiver=data["receiver"], params=tuple(data["params"]),
            returns=data["returns"], description=data["description"], category=data["category"],
            rewrite=data.get("rewrite"), tags=frozenset(data.get("tags", [CORE])),
            min_args=data.get("min_args"), max_args=data.get("max_args"),
        )


def _e(name, receiver, params, returns, category, description, rewrite=None, tags=(CORE,), **kw):
    return StepRegistryEntry(name, receiver, tuple(params), returns, description, category,
                             rewrite, frozenset(tags), **kw)


_ENTRIES = [
    # roots
    _e("cpg", "root", (), "node-set", "root", "every node of the graph"),
    _e("cpg.call", "root", (), "node-set", "root", "all call sites, operator calls included"),
    _e("cpg.method", "root", (), "node-set", "root", "all methods",
       rewrite='cpg.kind("METHOD")'),
    _e("cpg.identifier", "root", (), "node-set", "root", "all identifier uses and definitions",
       rewrite='cpg.kind("IDENTIFIER")'),
    _e("cpg.literal", "root", (), "node-set", "root", "all literals",
       rewrite='cpg.kind("LITERAL")'),
    # filters
    _e("name", "node-set", ("regex",), "node-set", "filter", "keep nodes whose name fully matches the regex"),
    _e("nameExact", "node-set", ("string",), "node-set", "filter", "keep nodes whose name equals the string"),
    _e("code", "node-set", ("regex",), "node-set", "filter", "keep nodes whose source code fully matches the regex"),
    _e("lineNumber", "node-set", ("integer",), "node-set", "filter", "keep nodes on the given line"),
    _e("kind", "node-set", ("string",), "node-set", "filter",
       "keep nodes of the given kind (METHOD, PARAM, BLOCK, CALL, IDENTIFIER, LITERAL, RETURN)"),
    _e("where", "node-set", ("predicate",), "node-set", "filter", "keep nodes for which the predicate holds"),
    _e("whereNot", "node-set", ("predicate",), "node-set", "filter",
       "keep nodes for which the predicate does not hold", rewrite="where(not(_))"),
    _e("filter", "node-set", ("predicate",), "node-set", "filter",
       "keep nodes for which the predicate holds", rewrite="where(_)"),
    _e("isCall", "node-set", (), "node-set", "filter", "keep call nodes"),
    _e("isLiteral", "node-set", (), "node-set", "filter", "keep literal nodes", rewrite='kind("LITERAL")'),
    _e("isIdentifier", "node-set", (), "node-set", "filter", "keep identifier nodes",
       rewrite='kind("IDENTIFIER")'),
    _e("arrayAccess", "node-set", (), "node-set", "filter", "keep index-access calls obj[key]"),
    _e("fieldAccess", "node-set", (), "node-set", "filter", "keep field-access calls obj.field",
       rewrite="nameExact(Operators.fieldAccess)"),
    # navigation
    _e("argument", "node-set", ("integer",), "node-set", "navigation",
       "arguments of calls; argument(i) selects the i-th (1-based), bare argument selects all", min_args=0),
    _e("array", "node-set", (), "node-set", "navigation", "receiver (argument 1) of index and field accesses"),
    _e("index", "node-set", (), "node-set", "navigation", "key (argument 2) of index accesses"),
    _e("astChildren", "node-set", (), "node-set", "navigation", "direct syntax children"),
    _e("inAst", "node-set", (), "node-set", "navigation", "all syntax ancestors"),
    _e("method", "node-set", (), "node-set", "navigation", "enclosing method"),
    # flow
    _e("reachableBy", "node-set", ("traversal",), "node-set", "flow",
       "keep nodes that data flows into from some node of the traversal"),
    # predicates
    _e("not", "node-set", ("predicate",), "predicate", "predicate", "negate a predicate"),
    _e("and", "node-set", ("predicate", "predicate"), "predicate", "predicate",
       "all predicates hold", max_args=8),
    _e("or", "node-set", ("predicate", "predicate"), "predicate", "predicate",
       "at least one predicate holds", max_args=8),
    # operator constants
    _e("Operators.assignment", "constant", (), "string", "constant", f'the name "{Operators.assignment}"'),
    _e("Operators.indexAccess", "constant", (), "string", "constant", f'the name "{Operators.indexAccess}"'),
    _e("Operators.fieldAccess", "constant", (), "string", "constant", f'the name "{Operators.fieldAccess}"'),
    # debugging aids
    _e("dump", "node-set", (), "node-set", "debug", "record the full node listing in the trace; no filtering",
       tags=(DEBUG,)),
    _e("size", "node-set", (), "node-set", "debug", "record the set size in the trace; no filtering",
       tags=(DEBUG,)),
    # constructs MiniLang has no data for
    _e("typeFullName", "node-set", ("regex",), "node-set", "filter",
       "keep nodes whose static type matches; MiniLang is untyped so this is always empty",
       tags=(LANGUAGE_SPECIFIC,)),
]

REGISTRY: dict[str, StepRegistryEntry] = {e.name: e for e in _ENTRIES}

OPERATOR_CONSTANTS: dict[str, str] = {
    "assignment": Operators.assignment,
    "indexAccess": Operators.indexAccess,
    "fieldAccess": Operators.fieldAccess,
}


def list_api_catalog() -> list[StepRegistryEntry]:
    """Every registry entry, sorted by name."""
    return [REGISTRY[name] for name in sorted(REGISTRY)]


# -- rewrites --------------------------------------------------------------


def rewrite_names(entry: StepRegistryEntry) -> set[str]:
    """Registry names referenced by ``entry.rewrite``."""
    if entry.rewrite is None:
        return set()
    return api_names(parse_query(_template_query(entry)))


def _template_query(entry: StepRegistryEntry) -> str:
    if entry.receiver == "root":
        return entry.rewrite or ""
    return f"cpg.{entry.rewrite}"


def _fill_hole(arg, filler):
    """Replace the bare ``_`` placeholder inside a template argument."""
    if isinstance(arg, Chain):
        if arg.start.kind == "anon" and not arg.steps:
            return filler
        return replace(arg, steps=tuple(_fill_step(s, filler) for s in arg.steps))
    if isinstance(arg, Combinator):
        return replace(arg, args=tuple(_fill_hole(a, filler) for a in arg.args))
    return arg


def _fill_step(step: Step, filler) -> Step:
    if step.args is None:
        return step
    return replace(step, args=tuple(_fill_hole(a, filler) for a in step.args))


def _expand_step(step: Step, entry: StepRegistryEntry) -> tuple[Step, ...]:
    template = parse_query(_template_query(entry)).result[0]
    filler = step.args[0] if step.args else None
    return tuple(_fill_step(s, filler) for s in template.steps)


def rewrite_query(q: QueryAst, names: set[str], registry: dict[str, StepRegistryEntry] | None = None) -> QueryAst:
    """Replace every use of the given registry names by its declared rewrite."""
    registry = registry or REGISTRY

    def chain(c: Chain) -> Chain:
        start, steps = c.start, []
        if start.kind == "root" and start.name in names:
            template = parse_query(_template_query(registry[start.name])).result[0]
            start = template.start
            steps.extend(template.steps)
        for s in c.steps:
            s = replace(s, args=None if s.args is None else tuple(arg(a) for a in s.args))
            if s.name in names and registry[s.name].receiver == "node-set":
                steps.extend(_expand_step(s, registry[s.name]))
            else:
                steps.append(s)
        return replace(c, start=start, steps=tuple(steps))

    def arg(a):
        if isinstance(a, Chain):
            return chain(a)
        if isinstance(a, Combinator):
            return replace(a, args=tuple(arg(x) for x in a.args))
        return a

    bindings = tuple(replace(b, chain=chain(b.chain)) for b in q.bindings)
    return QueryAst(bindings, tuple(chain(c) for c in q.result))


def _check_registry() -> None:
    for entry in _ENTRIES:
        if entry.rewrite is None:
            continue
        deps = rewrite_names(entry)
        unknown = deps - set(REGISTRY)
        assert not unknown, (entry.name, unknown)
        assert all(REGISTRY[d].rewrite is None for d in deps), entry.name


_check_registry()

__all__ = [
    "StepRegistryEntry", "REGISTRY", "OPERATOR_CONSTANTS", "list_api_catalog", "rewrite_names",
    "rewrite_query", "CORE", "DEBUG", "LANGUAGE_SPECIFIC",
]
