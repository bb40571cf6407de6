"""Trace-driven validation of detection queries against one labeled example.

The validator parses, executes with instrumentation and checks the result
against the example's sink lines, returning a :class:`ValidationReport`
whose verdict and attached program states are meant to be shown to the
query generator as feedback.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .cpg import CodePropertyGraph, Operators
from .dslspec import DslSpec
from .errors import ExecError, GrammarError, NoNodeAtLabel, NotAnFp
from .minilang.builder import builtin_table
from .minilang.slicing import VulnExample, slice_example, slice_lines
from .query.interpreter import execute
from .query.pstate import PState
from .query.syntax import Chain, Combinator, QueryAst, Step, StringLit, parse_query

SAMPLE_FP_LIMIT = 20

# -- fix suggestions -------------------------------------------------------


@dataclass(frozen=True)
class FixSuggestion:
    kind: str  # rename-operator | rename-step | arity | signature
    original: str
    candidates: tuple[tuple[str, int], ...]

    def to_json(self) -> dict:
        return {"kind": self.kind, "original": self.original,
                "candidates": [{"name": n, "distance": d} for n, d in self.candidates]}

    def render(self) -> str:
        if not self.candidates:
            return f"{self.kind}: no close match for {self.original!r}"
        names = ", ".join(f"{n} (distance {d})" for n, d in self.candidates)
        return f"{self.kind}: {self.original!r} is unknown or misused; did you mean {names}?"


def levenshtein(a: str, b: str) -> int:
    """Case-insensitive edit distance (insert, delete, substitute)."""
    a, b = a.lower(), b.lower()
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _name_distance(original: str, name: str) -> int:
    d = levenshtein(original, name)
    for prefix in ("<operator>.", "Operators."):
        if name.startswith(prefix):
            d = min(d, levenshtein(original, name[len(prefix):]))
    return d


def threshold(original: str) -> int:
    return max(3, math.ceil(len(original) / 3))


def rank_names(original: str, names: Iterable[str], limit: int = 5) -> tuple[tuple[str, int], ...]:
    cutoff = threshold(original)
    scored = {(n, _name_distance(original, n)) for n in names}
    ranked = sorted((p for p in scored if p[1] <= cutoff), key=lambda p: (p[1], p[0]))
    return tuple(ranked[:limit])


_KIND_FOR_ERROR = {
    "UnknownStep": "rename-step",
    "UnknownOperatorName": "rename-operator",
    "ArityMismatch": "arity",
    "TypeMismatch": "signature",
    "RegexError": "signature",
}


def suggest_fix(err: ExecError | str, spec: DslSpec) -> list[FixSuggestion]:
    """Close spec names for the identifier an error (or empty stage) points at.

    A plain string is treated as an operator-name argument that matched
    nothing, the empty-stage signal.
    """
    if isinstance(err, ExecError):
        original, kind = err.offending, _KIND_FOR_ERROR[err.kind]
    else:
        original, kind = err, "rename-operator"
    if not original:
        return []
    if kind in ("arity", "signature"):
        entry = spec.api(original)
        if entry is None:
            return []
        return [FixSuggestion(kind, original, ((entry.name, 0),))]
    if kind == "rename-operator" and isinstance(err, ExecError):
        pool = [a.name for a in spec.apis if a.category == "constant"]
    elif kind == "rename-operator":
        pool = list(spec.operators) + builtin_names(spec)
    else:
        pool = [a.name for a in spec.apis if a.receiver == "node-set"]
    return [FixSuggestion(kind, original, rank_names(original, pool))]


def builtin_names(spec: DslSpec) -> list[str]:
    return sorted({n for names in spec.builtins.values() for n in names})


# -- overfitting -----------------------------------------------------------


@dataclass(frozen=True)
class OverfitFlag:
    kind: str  # ExactConstant | StructuralOverSpecific
    block: int
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "block": self.block, "detail": self.detail}


ALLOWED_CONSTANTS = frozenset(
    set(Operators.ALL)
    | {op.split(".", 1)[1] for op in Operators.ALL}
    | {n for names in builtin_table().values() for n in names}
    | {"__proto__", "prototype", "constructor"}
)

MAX_AST_DEPTH = 3


def _steps_with_blocks(q: QueryAst) -> Iterator[tuple[int, Chain]]:
    """(block index, chain) for every chain, nested ones included; nested
    chains report the top-level block they are evaluated in."""
    blocks = iter(q.blocks)
    for _, chain in q.chains():
        start_block = next(blocks).index
        yield start_block, chain
        for step in chain.steps:
            block = next(blocks).index
            for arg in step.args or ():
                yield from _nested(arg, block)


def _nested(arg, block: int) -> Iterator[tuple[int, Chain]]:
    if isinstance(arg, Combinator):
        for sub in arg.args:
            yield from _nested(sub, block)
    elif isinstance(arg, Chain):
        yield block, arg
        for step in arg.steps:
            for sub in step.args or ():
                yield from _nested(sub, block)


def _step_blocks(q: QueryAst) -> Iterator[tuple[int, Step, Chain]]:
    blocks = iter(q.blocks)
    for _, chain in q.chains():
        next(blocks)
        for step in chain.steps:
            block = next(blocks).index
            yield block, step, chain
            for arg in step.args or ():
                for _, sub in _nested(arg, block):
                    for s in sub.steps:
                        yield block, s, sub


def detect_overfit(q: QueryAst, slice_text: str) -> list[OverfitFlag]:
    flags: list[OverfitFlag] = []
    for block, step, _ in _step_blocks(q):
        if step.name in ("nameExact", "code") and step.args:
            arg = step.args[0]
            if isinstance(arg, StringLit) and arg.value and arg.value not in ALLOWED_CONSTANTS \
                    and arg.value in slice_text:
                flags.append(OverfitFlag("ExactConstant", block,
                                         f"{step.name}({json.dumps(arg.value)}) names a constant of this example"))
        if step.name == "lineNumber":
            flags.append(OverfitFlag("StructuralOverSpecific", block, "lineNumber ties the query to one location"))
    seen_depth: set[int] = set()
    for block, chain in _steps_with_blocks(q):
        run = 0
        for i, step in enumerate(chain.steps):
            run = run + 1 if step.name == "astChildren" else 0
            if run == MAX_AST_DEPTH + 1 and id(chain) not in seen_depth:
                seen_depth.add(id(chain))
                flags.append(OverfitFlag("StructuralOverSpecific", _chain_step_block(q, chain, i, block),
                                         f"astChildren chain deeper than {MAX_AST_DEPTH}"))
    return sorted(flags, key=lambda f: (f.block, f.kind, f.detail))


def _chain_step_block(q: QueryAst, chain: Chain, i: int, fallback: int) -> int:
    blocks = iter(q.blocks)
    for _, c in q.chains():
        start = next(blocks)
        if c is chain:
            return start.index + i + 1
        for _ in c.steps:
            next(blocks)
    return fallback


# -- false-positive localization -------------------------------------------


def localize_fp(q: QueryAst, pstate: PState, fp: int) -> int:
    """Block where ``fp`` entered the chain it reached the result through.

    Follows binding references backwards when the node was already present
    in the value a chain started from.
    """
    final = pstate.states[-1] if len(pstate) else {}
    owner = next((o for o in q.result_owners if fp in final.get(o, ())), None)
    if owner is None:
        raise NotAnFp(f"node {fp} is not in the final result")
    chains = dict(q.chains())
    while True:
        positions = [j for j in range(1, len(pstate) + 1) if pstate.blocks[j - 1].owner == owner]
        first = positions[-1]
        for j in reversed(positions):
            if fp not in pstate.value(j):
                break
            first = j
        block = pstate.blocks[first - 1]
        start = chains[owner].start
        if block.position == 0 and start.kind == "ref":
            owner = start.name
            continue
        return first


# -- validation ------------------------------------------------------------


VERDICTS = ("SyntaxError", "ExecError", "SemanticMiss", "FalsePositives", "Pass")


@dataclass
class ValidationReport:
    verdict: str
    detail: dict
    query: QueryAst | None = None
    pstate: PState | None = None
    example_states: PState | None = None
    result: frozenset[int] = frozenset()
    fp_nodes: frozenset[int] = frozenset()
    empty_stages: list[int] = field(default_factory=list)
    suggestions: list[FixSuggestion] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "Pass"

    @property
    def retrieved(self) -> bool:
        return self.verdict in ("FalsePositives", "Pass")

    def states_text(self, g: CodePropertyGraph) -> str:
        states = self.example_states if self.verdict == "SemanticMiss" else self.pstate
        return states.to_text(g) if states is not None else ""

    def feedback(self, g: CodePropertyGraph) -> str:
        """Human- and model-readable account of the verdict."""
        lines = [f"Verdict: {self.verdict}"]
        d = self.detail
        if self.verdict == "SyntaxError":
            lines.append(f"Grammar rule <{d['rule']}> failed at {d['line']}:{d['column']}: {d['message']}")
        elif self.verdict == "ExecError":
            lines.append(f"Block {d['block']} raised {d['kind']}: {d['message']}")
        elif self.verdict == "SemanticMiss":
            lines.append(f"The result does not contain the vulnerable code at "
                         f"{d['expected_file']}:{d['expected_lines'][0]}-{d['expected_lines'][1]}.")
            if self.empty_stages:
                lines.append("Blocks whose output became empty: " + ", ".join(map(str, self.empty_stages)))
        elif self.verdict == "FalsePositives":
            lines.append("The example is retrieved, but these results are not labeled vulnerable:")
            for nid in sorted(self.fp_nodes)[:SAMPLE_FP_LIMIT]:
                n = g.nodes[nid]
                lines.append(f"  #{nid} {n.file}:{n.line} {n.code}")
        for s in self.suggestions:
            lines.append("Suggestion: " + s.render())
        text = self.states_text(g)
        if text:
            lines.append("Program states per block (count and up to 8 sample nodes):")
            lines.append(text.rstrip("\n"))
        return "\n".join(lines) + "\n"

    def to_json(self, g: CodePropertyGraph) -> dict:
        return {
            "verdict": self.verdict,
            "detail": self.detail,
            "pstate": self.pstate.to_text(g) if self.pstate is not None else None,
            "example_states": self.example_states.to_text(g) if self.example_states is not None else None,
            "result": sorted(self.result),
            "fp_nodes": sorted(self.fp_nodes),
            "empty_stages": self.empty_stages,
            "suggestions": [s.to_json() for s in self.suggestions],
        }

    def dump(self, path: str | Path, g: CodePropertyGraph) -> None:
        Path(path).write_text(json.dumps(self.to_json(g), indent=2) + "\n", encoding="utf-8")


def _slice_files(g: CodePropertyGraph, ex: VulnExample) -> set[str]:
    try:
        return {f for f, _ in slice_lines(g, ex)}
    except NoNodeAtLabel:
        return {ex.sink_file}


def _empty_stage_suggestions(q: QueryAst, pstate: PState, spec: DslSpec) -> list[FixSuggestion]:
    out = []
    known = set(spec.operators) | set(builtin_names(spec))
    for j in pstate.empty_stages():
        block = pstate.blocks[j - 1]
        chain = dict(q.chains())[block.owner]
        if block.position == 0:
            continue
        step = chain.steps[block.position - 1]
        if step.name in ("name", "nameExact") and step.args and isinstance(step.args[0], StringLit):
            value = step.args[0].value
            if value not in known:
                s = suggest_fix(value, spec)[0]
                if s.candidates:
                    out.append(s)
    return out


def validate(
    q_text: str,
    g: CodePropertyGraph,
    ex: VulnExample,
    project_labels: Sequence[VulnExample] | None = None,
    spec: DslSpec | None = None,
) -> ValidationReport:
    """Classify ``q_text`` against example ``ex`` on the graph ``g``.

    ``project_labels`` are all labeled sinks of the project (defaults to the
    example alone); result nodes outside every one of them are false
    positives. Never raises.
    """
    if spec is None:
        from .dslspec import extract_spec
        spec = extract_spec()
    labels = list(project_labels) if project_labels else [ex]
    try:
        q = parse_query(q_text)
    except GrammarError as exc:
        return ValidationReport("SyntaxError", {
            "rule": exc.rule, "span": list(exc.span), "line": exc.line, "column": exc.column,
            "expected": exc.expected, "message": str(exc),
        })
    try:
        run = execute(q, g, instrument=True)
    except ExecError as exc:
        return ValidationReport(
            "ExecError",
            {"block": exc.block, "kind": exc.kind, "message": exc.message, "offending": exc.offending},
            query=q, pstate=getattr(exc, "pstate", None) or PState(),
            suggestions=suggest_fix(exc, spec),
        )
    except Exception as exc:  # noqa: BLE001 - validation is total
        return ValidationReport("ExecError", {"block": 0, "kind": "Internal", "message": repr(exc),
                                              "offending": ""}, query=q, pstate=PState())
    pstate = run.pstate
    result = run.result
    nodes = g.nodes
    retrieved = any(ex.covers(nodes[n].file, nodes[n].line) for n in result)
    empty = pstate.empty_stages()
    if not retrieved:
        files = _slice_files(g, ex)
        return ValidationReport(
            "SemanticMiss",
            {"expected_file": ex.sink_file, "expected_lines": list(ex.sink_lines),
             "found": sorted(result)[:SAMPLE_FP_LIMIT], "found_count": len(result)},
            query=q, pstate=pstate, result=result,
            example_states=pstate.restrict(lambda n: nodes[n].file in files),
            empty_stages=empty, suggestions=_empty_stage_suggestions(q, pstate, spec),
        )
    fps = frozenset(n for n in result if not any(l.covers(nodes[n].file, nodes[n].line) for l in labels))
    if fps:
        return ValidationReport(
            "FalsePositives",
            {"fp_count": len(fps), "fp_lines": sorted({(nodes[n].file, nodes[n].line) for n in fps})},
            query=q, pstate=pstate, result=result, fp_nodes=fps, empty_stages=empty,
        )
    return ValidationReport("Pass", {"result_count": len(result)}, query=q, pstate=pstate, result=result,
                            empty_stages=empty)


def example_slice(g: CodePropertyGraph, ex: VulnExample) -> str:
    try:
        return slice_example(g, ex)
    except NoNodeAtLabel:
        return ""
