"""Machine-readable DSL specification: extraction from the step registry,
core-subset selection and grammar-prompt rendering.

The grammar is generated from the API catalog, so subsetting the catalog
and regenerating the grammar always yields a consistent pair.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .cpg import CodePropertyGraph, Operators
from .errors import CoverageViolation, ProviderError
from .minilang.builder import builtin_table
from .query.interpreter import execute
from .query.registry import (
    DEBUG, LANGUAGE_SPECIFIC, REGISTRY, StepRegistryEntry, list_api_catalog, rewrite_names, rewrite_query,
)
from .query.syntax import ROOT_STEPS, QueryAst, api_names, format_query

log = logging.getLogger(__name__)

SPEC_VERSION = "queryforge-dsl/1"

# Lexical nonterminals are described, not expanded, in the published grammar.
LEXICAL_RULES = {
    "binding_name": r"/[A-Za-z][A-Za-z0-9_]*/",
    "binding_ref": r"/[A-Za-z][A-Za-z0-9_]*/",
    "string": r'/"([^"\\]|\\.)*"/',
    "integer": r"/-?[0-9]+/",
}

_PARAM_SYMBOL = {
    "string": "<string_arg>",
    "regex": "<string_arg>",
    "integer": "<integer>",
    "predicate": "<predicate>",
    "traversal": "<traversal>",
}


@dataclass(frozen=True)
class Rule:
    lhs: str
    alternatives: tuple[tuple[str, ...], ...]  # tokens: '"terminal"' or '<nonterminal>'
    lexical: str | None = None

    def render(self) -> str:
        if self.lexical is not None:
            return f"<{self.lhs}> ::= {self.lexical}"
        return f"<{self.lhs}> ::= " + " | ".join(" ".join(alt) for alt in self.alternatives)


_RULE_RE = re.compile(r"^<([A-Za-z_]+)> ::= (.*)$")
_SYM_RE = re.compile(r'"(?:[^"\\]|\\.)*"|<[A-Za-z_]+>|\|')


def parse_rule(text: str) -> Rule:
    m = _RULE_RE.match(text.strip())
    if m is None:
        raise ValueError(f"not a BNF rule: {text!r}")
    lhs, rhs = m.groups()
    if rhs.startswith("/"):
        return Rule(lhs, (), rhs)
    alts: list[tuple[str, ...]] = [()]
    pos = 0
    for sym in _SYM_RE.finditer(rhs):
        if rhs[pos:sym.start()].strip():
            raise ValueError(f"unexpected text in rule {lhs}: {rhs[pos:sym.start()]!r}")
        pos = sym.end()
        if sym.group() == "|":
            alts.append(())
        else:
            alts[-1] = alts[-1] + (sym.group(),)
    return Rule(lhs, tuple(alts))


def _t(text: str) -> str:
    return json.dumps(text)


def _step_alternatives(entry: StepRegistryEntry) -> list[tuple[str, ...]]:
    lo, _ = entry.arity
    if not entry.params:
        return [(_t(entry.name),)]
    args: list[str] = []
    for i, p in enumerate(entry.params):
        if i:
            args.append(_t(","))
        args.append(_PARAM_SYMBOL[p])
    alts = [(_t(entry.name + "("), *args, _t(")"))]
    if lo == 0:
        alts.append((_t(entry.name),))
    return alts


def build_grammar(apis: Sequence[StepRegistryEntry]) -> list[Rule]:
    roots = [a.name for a in apis if a.category == "root"]
    filters = [a for a in apis if a.category == "filter" and a.name != "filter"]
    complex_ = [a for a in apis if a.category in ("navigation", "flow", "debug") or a.name == "filter"]
    combinators = [a for a in apis if a.category == "predicate"]
    operators = [a.name.split(".", 1)[1] for a in apis if a.category == "constant"]

    rules = [
        Rule("query", (("<bindings>", "<result>"), ("<bindings>",), ("<result>",))),
        Rule("bindings", (("<binding>",), ("<binding>", "<bindings>"))),
        Rule("binding", ((_t("def"), "<binding_name>", _t("="), "<traversal>"),
                         (_t("val"), "<binding_name>", _t("="), "<traversal>"))),
        Rule("result", (("<traversal>",), ("<traversal>", _t("++"), "<result>"))),
        Rule("traversal", (("<cpg_start>",), ("<cpg_start>", _t("."), "<step_chain>"))),
        Rule("cpg_start", tuple((_t(r),) for r in roots) + (("<binding_ref>",),)),
        Rule("step_chain", (("<step>",), ("<step>", _t("."), "<step_chain>"))),
    ]
    step_alts = []
    if filters:
        step_alts.append(("<filter_step>",))
    if complex_:
        step_alts.append(("<complex_step>",))
    rules.append(Rule("step", tuple(step_alts)))
    if filters:
        rules.append(Rule("filter_step", tuple(alt for a in filters for alt in _step_alternatives(a))))
    if complex_:
        rules.append(Rule("complex_step", tuple(alt for a in complex_ for alt in _step_alternatives(a))))
    pred_alts = [(_t("_"),), (_t("_."), "<step_chain>")]
    for c in combinators:
        pred_alts.append(tuple(_step_alternatives(c)[0]))
    rules.append(Rule("predicate", tuple(pred_alts)))
    string_alts = [("<string>",)]
    if operators:
        string_alts.append(("<reference>",))
    rules.append(Rule("string_arg", tuple(string_alts)))
    if operators:
        rules.append(Rule("reference", ((_t("Operators."), "<operator>"),)))
        rules.append(Rule("operator", tuple((_t(o),) for o in sorted(operators))))
    for lex, pattern in LEXICAL_RULES.items():
        rules.append(Rule(lex, (), pattern))
    # drop rules whose nonterminal no api needs
    used = {tok[1:-1] for r in rules for alt in r.alternatives for tok in alt if tok.startswith("<")}
    return [r for r in rules if r.lhs == "query" or r.lhs in used]


# -- spec ------------------------------------------------------------------


@dataclass(frozen=True)
class DslSpec:
    grammar: tuple[Rule, ...]
    apis: tuple[StepRegistryEntry, ...]
    operators: tuple[str, ...]
    builtins: dict = field(default_factory=dict, compare=True, hash=False)
    version: str = SPEC_VERSION

    def api(self, name: str) -> StepRegistryEntry | None:
        for a in self.apis:
            if a.name == name:
                return a
        return None

    @property
    def api_names(self) -> list[str]:
        return [a.name for a in self.apis]

    def rule(self, lhs: str) -> Rule | None:
        for r in self.grammar:
            if r.lhs == lhs:
                return r
        return None

    def to_json(self) -> dict:
        return {
            "grammar": [r.render() for r in self.grammar],
            "apis": [a.to_json() for a in self.apis],
            "operators": list(self.operators),
            "builtins": self.builtins,
            "version": self.version,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DslSpec":
        return cls(
            grammar=tuple(parse_rule(r) for r in data["grammar"]),
            apis=tuple(StepRegistryEntry.from_json(a) for a in data["apis"]),
            operators=tuple(data["operators"]),
            builtins=dict(data.get("builtins", {})),
            version=data.get("version", SPEC_VERSION),
        )

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DslSpec":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _make_spec(apis: Sequence[StepRegistryEntry], version: str = SPEC_VERSION) -> DslSpec:
    apis = sorted(apis, key=lambda a: a.name)
    return DslSpec(tuple(build_grammar(apis)), tuple(apis), Operators.ALL, builtin_table(), version)


def extract_spec() -> DslSpec:
    """Specification of the full engine, read off the step registry."""
    return _make_spec(list_api_catalog())


# -- random derivations ----------------------------------------------------


def derive_random(spec: DslSpec, rng: random.Random, max_depth: int = 8) -> str:
    """One random sentence of ``spec.grammar``, tokens joined by spaces.

    Binding references only name bindings completed earlier, matching the
    parser's scoping rule; lexical nonterminals draw from small pools.
    """
    rules = {r.lhs: r for r in spec.grammar}
    min_cost = _min_costs(rules)
    bound: list[str] = []
    counter = [0]
    out: list[str] = []

    def cost(alt: tuple[str, ...]) -> int:
        return max((min_cost.get(tok[1:-1], 0) for tok in alt if tok.startswith("<")), default=0)

    def expand(sym: str, depth: int) -> None:
        if sym.startswith('"'):
            out.append(json.loads(sym))
            return
        name = sym[1:-1]
        if name == "binding_name":
            counter[0] += 1
            out.append(f"v{counter[0]}")
            return
        if name == "binding_ref":
            out.append(rng.choice(bound))
            return
        if name == "string":
            out.append(rng.choice(['"x"', '".*"', '"exec"', '"<operator>.assignment"', '"a\\"b"']))
            return
        if name == "integer":
            out.append(str(rng.randint(0, 9)))
            return
        alts = [a for a in rules[name].alternatives if bound or "<binding_ref>" not in a]
        if out[-2:] == ["cpg", "."]:
            # "cpg.method" and friends always read as roots, never as cpg + step
            alts = [a for a in alts if not (a[0].startswith('"') and json.loads(a[0]) in ROOT_STEPS)] or alts
        if depth >= max_depth:
            best = min(cost(a) for a in alts)
            alts = [a for a in alts if cost(a) == best]
        alt = rng.choice(alts)
        if name == "binding":
            new_name = None
            for tok in alt:
                if tok == "<binding_name>":
                    counter[0] += 1
                    new_name = f"v{counter[0]}"
                    out.append(new_name)
                else:
                    expand(tok, depth + 1)
            bound.append(new_name)
            return
        for tok in alt:
            expand(tok, depth + 1)

    expand("<query>", 0)
    return " ".join(out)


def _min_costs(rules: dict[str, Rule]) -> dict[str, int]:
    cost = {lhs: 0 for lhs, r in rules.items() if r.lexical is not None}
    changed = True
    while changed:
        changed = False
        for lhs, r in rules.items():
            if r.lexical is not None:
                continue
            best = None
            for alt in r.alternatives:
                subs = [cost.get(tok[1:-1]) for tok in alt if tok.startswith("<")]
                if any(c is None for c in subs):
                    continue
                c = 1 + max(subs, default=0)
                best = c if best is None else min(best, c)
            if best is not None and cost.get(lhs) != best:
                cost[lhs] = best
                changed = True
    return cost


# -- subsetting ------------------------------------------------------------


@dataclass
class SubsetReport:
    mode: str
    kept: list[str]
    removed: list[tuple[str, str]]
    coverage_proof: list[str]
    cancelled: list[CoverageViolation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def removed_fraction(self) -> float:
        total = len(self.kept) + len(self.removed)
        return len(self.removed) / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "kept": self.kept,
            "removed": [{"api": a, "reason": r} for a, r in self.removed],
            "coverage_proof": self.coverage_proof,
            "cancelled": [str(c) for c in self.cancelled],
            "warnings": self.warnings,
        }


def _lookup(name: str, catalog: dict[str, StepRegistryEntry]) -> StepRegistryEntry | None:
    return catalog.get(name) or REGISTRY.get(name)


def _deterministic_removals(catalog: dict[str, StepRegistryEntry]) -> dict[str, str]:
    removed: dict[str, str] = {}
    for name in sorted(catalog):
        tags = catalog[name].tags
        if DEBUG in tags:
            removed[name] = "debug"
        elif LANGUAGE_SPECIFIC in tags:
            removed[name] = "language-specific"
    for name in sorted(catalog):
        entry = catalog[name]
        if name in removed or entry.rewrite is None:
            continue
        deps = rewrite_names(entry)
        if all(d in catalog and d not in removed for d in deps):
            removed[name] = "redundant-rewrite"
    return removed


def _enforce_coverage(
    catalog: dict[str, StepRegistryEntry], removed: dict[str, str], queries: Sequence[QueryAst],
) -> list[CoverageViolation]:
    """Cancel prunes that leave some example query inexpressible."""
    cancelled: list[CoverageViolation] = []
    changed = True
    while changed:
        changed = False
        kept = set(catalog) - set(removed)
        for i, q in enumerate(queries):
            for name in sorted(api_names(q)):
                if name in kept:
                    continue
                entry = _lookup(name, catalog)
                deps = rewrite_names(entry) if entry is not None else None
                if deps is not None and entry.rewrite is not None and deps <= kept:
                    continue
                if name in removed:
                    cancelled.append(CoverageViolation(name, i))
                    del removed[name]
                    changed = True
                # names the catalog never had cannot be restored; surfaced via proof re-execution
    return cancelled


def _proofs(
    queries: Sequence[QueryAst], kept: set[str], catalog: dict[str, StepRegistryEntry],
    graphs: Sequence[CodePropertyGraph],
) -> list[str]:
    proofs = []
    for q in queries:
        missing = api_names(q) - kept
        if not missing:
            proofs.append("unchanged")
            continue
        merged = dict(REGISTRY)
        merged.update(catalog)
        rewritten = rewrite_query(q, missing, merged)
        for g in graphs:
            if execute(q, g).result != execute(rewritten, g).result:
                raise AssertionError(f"rewrite changed results:\n{format_query(q)}")
        proofs.append(format_query(rewritten))
    return proofs


def _parse_keep_list(text: str) -> list[str]:
    match = re.search(r"\[.*\]", text, re.DOTALL)
    if match:
        try:
            items = json.loads(match.group())
        except json.JSONDecodeError:
            items = None
        if isinstance(items, list) and all(isinstance(x, str) for x in items):
            return items
    names = [ln.strip().lstrip("-*").strip().strip("`") for ln in text.splitlines()]
    names = [n for n in names if n and re.fullmatch(r"[A-Za-z_.]+", n)]
    if not names:
        raise ProviderError("model reply holds no API keep-list")
    return names


def subset_prompt(spec: DslSpec, queries: Sequence[QueryAst]) -> list[tuple[str, str]]:
    catalog = "\n".join(f"{a.name}({a.signature}) -> {a.returns}: {a.description}" for a in spec.apis)
    examples = "\n\n".join(format_query(q) for q in queries)
    return [
        ("system", "You curate the API surface of a code-query language. Answer with a JSON array of API names."),
        ("user", "Select the core APIs needed to express vulnerability-detection queries. Drop redundant, "
                 "debugging-only and language-specific APIs.\n\nAPI catalog:\n" + catalog
                 + "\n\nExample queries:\n" + examples),
    ]


def subset_spec(
    spec: DslSpec,
    example_queries: Sequence[QueryAst],
    mode: str = "deterministic",
    *,
    provider=None,
    graphs: Sequence[CodePropertyGraph] = (),
    extra_keep: Sequence[str] = (),
) -> tuple[DslSpec, SubsetReport]:
    """Prune ``spec`` to a core subset that still expresses every example.

    ``graphs`` (optional) are fixtures on which each rewritten example is
    re-executed and compared with the original. ``extra_keep`` lists API
    names an analyst wants retained regardless of the pruning rules.
    """
    if mode not in ("deterministic", "model"):
        raise ValueError(f"unknown subset mode {mode!r}")
    catalog = {a.name: a for a in spec.apis}
    warnings: list[str] = []
    removed: dict[str, str] | None = None
    if mode == "model":
        try:
            if provider is None:
                raise ProviderError("model mode needs a provider")
            reply = provider.complete(subset_prompt(spec, example_queries), ("#subset", 1))
            keep = set(_parse_keep_list(reply)) & set(catalog)
            rule_based = _deterministic_removals(catalog)
            removed = {n: rule_based.get(n, "model-pruned") for n in sorted(set(catalog) - keep)}
        except ProviderError as exc:
            warnings.append(f"model subsetting failed ({exc}); fell back to deterministic mode")
            log.warning(warnings[-1])
            removed = None
    if removed is None:
        removed = _deterministic_removals(catalog)
    for name in extra_keep:
        removed.pop(name, None)
    cancelled = _enforce_coverage(catalog, removed, example_queries)
    kept = set(catalog) - set(removed)
    proofs = _proofs(example_queries, kept, catalog, graphs)
    new_spec = _make_spec([catalog[n] for n in kept], spec.version)
    report = SubsetReport(
        mode=mode,
        kept=sorted(kept),
        removed=sorted(removed.items()),
        coverage_proof=proofs,
        cancelled=cancelled,
        warnings=warnings,
    )
    return new_spec, report


# -- prompt ----------------------------------------------------------------


def api_summary(entry: StepRegistryEntry) -> str:
    return f"{entry.name}({entry.signature}) -> {entry.returns}: {entry.description}"


def render_prompt(spec: DslSpec) -> str:
    """Grammar-prompt text: the BNF (one rule per line) and one summary line
    per API."""
    lines = ["# Query grammar (BNF)"]
    lines += [r.render() for r in spec.grammar]
    lines.append("")
    lines.append("# APIs")
    lines += [api_summary(a) for a in spec.apis]
    if spec.builtins:
        lines.append("")
        lines.append("# Builtin calls of the analyzed language")
        for role in sorted(spec.builtins):
            lines.append(f"{role}: {', '.join(spec.builtins[role])}")
    lines.append("")
    lines.append("# Operator call names")
    lines.append(", ".join(spec.operators))
    return "\n".join(lines) + "\n"
