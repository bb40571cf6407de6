"""The generate-validate-refine loop and its optimization passes.

Every model call goes through a :class:`~.provider.Provider` under a key
``(example id, attempt)``; stage-specific calls use suffixed ids such as
``proto-1#fp`` or ``sqli#merge`` so a scripted transcript can address them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from ..cpg import CodePropertyGraph
from ..dslspec import DslSpec, extract_spec, render_prompt
from ..errors import BudgetExhausted, ConfigError, QueryForgeError
from ..minilang.builder import build_project
from ..minilang.slicing import Dataset, VulnExample
from ..query.pstate import summarize
from ..query.syntax import Chain, Combinator, QueryAst, Start, format_query, parse_query
from ..validator import OverfitFlag, ValidationReport, detect_overfit, example_slice, localize_fp, validate
from .provider import Message, Provider

log = logging.getLogger(__name__)

FP_SHOWN = 5


@dataclass(frozen=True)
class Budgets:
    max_attempts: int = 50
    fp: int = 5
    generalize: int = 5
    merge: int = 5

    @classmethod
    def from_mapping(cls, data: dict) -> "Budgets":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generation setting(s): {', '.join(sorted(unknown))}")
        b = cls(**{k: int(v) for k, v in data.items()})
        if min(b.max_attempts, b.fp, b.generalize, b.merge) < 1:
            raise ConfigError("all budgets must be at least 1")
        return b


@dataclass
class GenerationTask:
    vuln_type: str
    description: str
    examples: list[VulnExample]
    max_attempts: int = 50
    subtasks: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.examples:
            raise ConfigError(f"task {self.vuln_type!r} has no examples")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")

    @classmethod
    def from_dataset(cls, dataset: Dataset, vuln_type: str, max_attempts: int = 50,
                     example_ids: Sequence[str] | None = None) -> "GenerationTask":
        examples = dataset.of_type(vuln_type)
        if example_ids:
            examples = [ex for ex in examples if ex.id in set(example_ids)]
        return cls(vuln_type, dataset.task_description(vuln_type), examples, max_attempts)

    def to_json(self) -> dict:
        return {"vuln_type": self.vuln_type, "description": self.description,
                "examples": [ex.id for ex in self.examples], "max_attempts": self.max_attempts,
                "subtasks": list(self.subtasks)}


@dataclass
class ExampleContext:
    """Everything validation needs for one example."""

    example: VulnExample
    graph: CodePropertyGraph
    labels: list[VulnExample]
    slice_text: str

    @classmethod
    def load(cls, dataset: Dataset, ex: VulnExample, graph: CodePropertyGraph | None = None) -> "ExampleContext":
        g = graph if graph is not None else build_project(dataset.project_path(ex))
        return cls(ex, g, dataset.labels_for_project(ex.project_dir) or [ex], example_slice(g, ex))


# -- session ---------------------------------------------------------------


@dataclass
class IterationLog:
    example_id: str
    stage: str  # decompose | generate | fp | generalize | merge
    attempt: int
    prompt: str
    response: str
    verdict: str
    pstate_digest: str
    accepted: bool
    note: str = ""


def _approx_tokens(text: str) -> int:
    return len(text.split())


class Session:
    """Append-only record of one generation run.

    Entries are kept in per-example shards so concurrent example loops
    export in a fixed order; with ``log_path`` set, each entry is also
    flushed to a JSONL file as soon as it is recorded.
    """

    def __init__(self, task: GenerationTask, log_path: str | Path | None = None) -> None:
        self.task = task
        self.shards: dict[str, list[IterationLog]] = {}
        self.queries: dict[str, str] = {}
        self.verdicts: dict[str, str] = {}
        self.failures: dict[str, str] = {}
        self.warnings: list[str] = []
        self.merged: str | None = None
        self.merge_method: str | None = None
        self.system_digest: str | None = None
        self.log_path = Path(log_path) if log_path else None
        self.started = time.time()
        self.finished: float | None = None
        self._lock = threading.Lock()

    def record(self, entry: IterationLog) -> None:
        shard = {"decompose": "#decompose", "merge": "#merge"}.get(entry.stage, entry.example_id.split("#", 1)[0])
        with self._lock:
            self.shards.setdefault(shard, []).append(entry)
            if self.log_path is not None:
                with open(self.log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(entry), ensure_ascii=False) + "\n")
                    fh.flush()

    def warn(self, message: str) -> None:
        log.warning(message)
        with self._lock:
            self.warnings.append(message)

    @property
    def logs(self) -> list[IterationLog]:
        order = ["#decompose"] + [ex.id for ex in self.task.examples]
        keys = order + sorted(k for k in self.shards if k not in order and k != "#merge") + ["#merge"]
        return [e for k in keys for e in self.shards.get(k, ())]

    def iterations(self, example_id: str, stage: str = "generate") -> list[IterationLog]:
        return [e for e in self.shards.get(example_id, ()) if e.stage == stage]

    def to_json(self, timing: bool = True) -> dict:
        logs = self.logs
        data = {
            "task": self.task.to_json(),
            "system_prompt_digest": self.system_digest,
            "logs": [asdict(e) for e in logs],
            "queries": dict(sorted(self.queries.items())),
            "verdicts": dict(sorted(self.verdicts.items())),
            "failures": dict(sorted(self.failures.items())),
            "merged": self.merged,
            "merge_method": self.merge_method,
            "warnings": list(self.warnings),
            "tokens": {
                "prompt": sum(_approx_tokens(e.prompt) for e in logs),
                "response": sum(_approx_tokens(e.response) for e in logs),
            },
        }
        if timing:
            end = self.finished if self.finished is not None else time.time()
            data["timing"] = {"started": self.started, "finished": end, "wall_seconds": end - self.started}
        return data

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# -- prompting -------------------------------------------------------------

_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_query(reply: str) -> str:
    """First fenced code block of a model reply, else the whole reply."""
    m = _FENCE_RE.search(reply)
    text = m.group(1) if m else reply
    return text.strip() + "\n"


def _example_section(ctx: ExampleContext) -> str:
    ex = ctx.example
    lo, hi = ex.sink_lines
    where = f"{ex.sink_file}:{lo}" if lo == hi else f"{ex.sink_file}:{lo}-{hi}"
    return f"Vulnerable example {ex.id} (sink at {where}):\n```\n{ctx.slice_text}```"


def compose_messages(spec_prompt: str, task: GenerationTask, ctx: ExampleContext,
                     feedback: str | None = None) -> list[Message]:
    parts = [f"Task: {task.description}"]
    if task.subtasks:
        parts.append("Steps:\n" + "\n".join(f"{i}. {s}" for i, s in enumerate(task.subtasks, start=1)))
    parts.append(_example_section(ctx))
    parts.append("Write one detection query that retrieves this example. "
                 "Reply with the query in a fenced code block.")
    if feedback:
        parts.append("Feedback on your previous attempt:\n" + feedback)
    return [("system", spec_prompt), ("user", "\n\n".join(parts))]


def _previous(text: str) -> str:
    return f"Previous query:\n```\n{text.rstrip()}\n```\n"


def _flags_text(flags: Sequence[OverfitFlag]) -> str:
    return "\n".join(f"- {f.kind} at block {f.block}: {f.detail}" for f in flags)


def _digest(report: ValidationReport) -> str:
    return report.pstate.digest() if report.pstate is not None else ""


# -- decomposition ---------------------------------------------------------

_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s+(.+?)\s*$")


def parse_subtasks(reply: str) -> list[str] | None:
    items = [m.group(2) for m in map(_ITEM_RE.match, reply.splitlines()) if m]
    return items if 3 <= len(items) <= 6 else None


def decompose_task(task: GenerationTask, provider: Provider, session: Session | None = None) -> list[str]:
    """Split the task description into ordered detection steps (one call)."""
    if not task.description.strip():
        raise ConfigError(f"task {task.vuln_type!r} has an empty description")
    messages: list[Message] = [
        ("system", "You plan static-analysis detection queries."),
        ("user", f"Break this detection task into 3 to 6 numbered steps, one per line.\n\nTask: {task.description}"),
    ]
    key = (f"{task.vuln_type}#decompose", 1)
    try:
        reply = provider.complete(messages, key)
    except QueryForgeError as exc:
        if session is not None:
            session.failures[key[0]] = str(exc)
        raise
    items = parse_subtasks(reply)
    parsed = items is not None
    if not parsed:
        items = [task.description]
    task.subtasks = items
    if session is not None:
        note = "" if parsed else "unparseable decomposition; using the description as the only step"
        session.record(IterationLog(key[0], "decompose", 1, messages[-1][1], reply, "", "", parsed, note))
    return items


# -- per-example generation ------------------------------------------------


@dataclass
class Accepted:
    text: str
    report: ValidationReport
    warnings: list[str] = field(default_factory=list)


def gen_per_example(
    task: GenerationTask,
    ctx: ExampleContext,
    spec_prompt: str,
    provider: Provider,
    *,
    spec: DslSpec | None = None,
    session: Session | None = None,
    budgets: Budgets = Budgets(),
) -> Accepted:
    """Generate a query for one example, refining from validator feedback.

    Makes at most ``task.max_attempts`` main-loop provider calls. A query
    that retrieves the example then goes through FP elimination and, if it
    looks overfitted, generalization.
    """
    spec = spec or extract_spec()
    ex = ctx.example
    feedback = None
    report = None
    text = ""
    for attempt in range(1, task.max_attempts + 1):
        messages = compose_messages(spec_prompt, task, ctx, feedback)
        reply = provider.complete(messages, (ex.id, attempt))
        text = extract_query(reply)
        report = validate(text, ctx.graph, ex, ctx.labels, spec)
        if session is not None:
            session.record(IterationLog(ex.id, "generate", attempt, messages[-1][1], reply, report.verdict,
                                        _digest(report), report.retrieved))
        if report.retrieved:
            break
        feedback = _previous(text) + report.feedback(ctx.graph)
    else:
        raise BudgetExhausted(task.max_attempts, report.verdict if report else "none")

    warnings: list[str] = []
    if report.verdict == "FalsePositives":
        text, report = eliminate_fps(text, ctx, report, provider, spec_prompt=spec_prompt, task=task,
                                     spec=spec, session=session, budget=budgets.fp)
        if not report.passed:
            warnings.append(f"{ex.id}: false positives remain after elimination")
    flags = detect_overfit(report.query, ctx.slice_text)
    if flags:
        text, report = generalize(text, flags, ctx, provider, spec_prompt=spec_prompt, task=task,
                                  spec=spec, session=session, budget=budgets.generalize, report=report)
        if detect_overfit(report.query, ctx.slice_text):
            warnings.append(f"{ex.id}: generalization did not clear all overfitting flags")
    if session is not None:
        for w in warnings:
            session.warn(w)
    return Accepted(text, report, warnings)


def eliminate_fps(
    text: str,
    ctx: ExampleContext,
    report: ValidationReport,
    provider: Provider,
    *,
    spec_prompt: str,
    task: GenerationTask,
    spec: DslSpec | None = None,
    session: Session | None = None,
    budget: int = 5,
) -> tuple[str, ValidationReport]:
    """Revise ``text`` until no false positives remain or the budget runs out.

    A revision is accepted only if it still retrieves the example and drops
    at least one current false positive. Returns the best query seen.
    """
    if report.verdict != "FalsePositives":
        return text, report
    spec = spec or extract_spec()
    g = ctx.graph
    best_text, best = text, report
    cur_text, cur = text, report
    note = ""
    for attempt in range(1, budget + 1):
        lines = [_previous(cur_text), "It retrieves the example but also these unlabeled results:"]
        for fp in sorted(cur.fp_nodes)[:FP_SHOWN]:
            n = g.nodes[fp]
            j = localize_fp(cur.query, cur.pstate, fp)
            block = cur.pstate.blocks[j - 1]
            value = summarize(g, cur.pstate.value(j))
            sample = ", ".join(f"#{nid} L{line} {code}" for nid, _, code, line in value.samples)
            lines.append(f"- #{fp} {n.file}:{n.line} {n.code}: enters at block {j} ({block.owner}: {block.text}); "
                         f"S_{j} holds {value.count} node(s): {sample}")
        if len(cur.fp_nodes) > FP_SHOWN:
            lines.append(f"... and {len(cur.fp_nodes) - FP_SHOWN} more")
        lines.append("Revise the query so these results are excluded while the example is still found.")
        if note:
            lines.append(note)
        messages = compose_messages(spec_prompt, task, ctx, "\n".join(lines))
        reply = provider.complete(messages, (f"{ctx.example.id}#fp", attempt))
        new_text = extract_query(reply)
        new = validate(new_text, g, ctx.example, ctx.labels, spec)
        accepted = new.retrieved and (new.passed or bool(cur.fp_nodes - new.fp_nodes))
        if not new.retrieved:
            note = "Your last revision was rejected: it no longer retrieves the example.\n" + new.feedback(g)
        elif not accepted:
            note = "Your last revision was rejected: it removes none of the false positives."
        else:
            note = ""
        if session is not None:
            session.record(IterationLog(f"{ctx.example.id}#fp", "fp", attempt, messages[-1][1], reply,
                                        new.verdict, _digest(new), accepted))
        if accepted:
            cur_text, cur = new_text, new
            if len(new.fp_nodes) < len(best.fp_nodes):
                best_text, best = new_text, new
            if new.passed:
                break
    return best_text, best


def generalize(
    text: str,
    flags: Sequence[OverfitFlag],
    ctx: ExampleContext,
    provider: Provider,
    *,
    spec_prompt: str,
    task: GenerationTask,
    spec: DslSpec | None = None,
    session: Session | None = None,
    budget: int = 5,
    report: ValidationReport | None = None,
) -> tuple[str, ValidationReport]:
    """Ask for a revision free of overfitting flags that still passes.

    Best effort: when the budget runs out the flagged query is kept.
    """
    spec = spec or extract_spec()
    if report is None:
        report = validate(text, ctx.graph, ctx.example, ctx.labels, spec)
    if not flags:
        return text, report
    note = ""
    for attempt in range(1, budget + 1):
        fb = (_previous(text) + "It works on this example but looks tied to it:\n" + _flags_text(flags)
              + "\nExpress the same pattern in a more general form.")
        if note:
            fb += "\n" + note
        messages = compose_messages(spec_prompt, task, ctx, fb)
        reply = provider.complete(messages, (f"{ctx.example.id}#generalize", attempt))
        new_text = extract_query(reply)
        new = validate(new_text, ctx.graph, ctx.example, ctx.labels, spec)
        remaining = detect_overfit(new.query, ctx.slice_text) if new.query is not None else []
        accepted = new.passed and not remaining
        if session is not None:
            session.record(IterationLog(f"{ctx.example.id}#generalize", "generalize", attempt, messages[-1][1],
                                        reply, new.verdict, _digest(new), accepted))
        if accepted:
            return new_text, new
        if not new.passed:
            note = "Your last revision was rejected:\n" + new.feedback(ctx.graph)
        else:
            note = "Your last revision was rejected; it is still flagged:\n" + _flags_text(remaining)
    if session is not None:
        session.warn(f"{ctx.example.id}: generalization budget exhausted; keeping the flagged query")
    return text, report


# -- merging ---------------------------------------------------------------


def rename_bindings(q: QueryAst, mapping: dict[str, str]) -> QueryAst:
    def chain(c: Chain) -> Chain:
        start = c.start
        if start.kind == "ref" and start.name in mapping:
            start = replace(start, name=mapping[start.name])
        steps = tuple(replace(s, args=None if s.args is None else tuple(arg(a) for a in s.args)) for s in c.steps)
        return replace(c, start=start, steps=steps)

    def arg(a):
        if isinstance(a, Chain):
            return chain(a)
        if isinstance(a, Combinator):
            return replace(a, args=tuple(arg(x) for x in a.args))
        return a

    bindings = tuple(replace(b, name=mapping.get(b.name, b.name), chain=chain(b.chain)) for b in q.bindings)
    return QueryAst(bindings, tuple(chain(c) for c in q.result))


def or_union(queries: Sequence[QueryAst]) -> QueryAst:
    """One query whose result is the union of the inputs' results.

    Bindings get a ``_<k>`` suffix (k = 1-based input index) so names from
    different inputs cannot collide.
    """
    taken: set[str] = set()
    bindings = []
    results = []
    for k, q in enumerate(queries, start=1):
        mapping = {}
        for b in q.bindings:
            new = f"{b.name}_{k}"
            while new in taken:
                new += "_"
            taken.add(new)
            mapping[b.name] = new
        r = rename_bindings(q, mapping)
        bindings.extend(r.bindings)
        if r.result:
            results.extend(r.result)
        else:
            results.append(Chain(Start("ref", r.bindings[-1].name)))
    return QueryAst(tuple(bindings), tuple(results))


@dataclass
class Merged:
    text: str
    method: str  # single | model | or-union
    reports: list[ValidationReport]


def merge_queries(
    texts: Sequence[str],
    contexts: Sequence[ExampleContext],
    provider: Provider,
    *,
    spec_prompt: str,
    task: GenerationTask,
    spec: DslSpec | None = None,
    session: Session | None = None,
    budget: int = 5,
) -> Merged:
    """Merge per-example queries into one that passes on every example,
    falling back to the OR-union of the inputs."""
    spec = spec or extract_spec()
    if len(texts) == 1:
        return Merged(texts[0], "single", [])
    key = f"{task.vuln_type}#merge"
    shown = "\n\n".join(f"Query for {c.example.id}:\n```\n{t.rstrip()}\n```" for t, c in zip(texts, contexts))
    examples = "\n\n".join(_example_section(c) for c in contexts)
    feedback = ""
    for attempt in range(1, budget + 1):
        user = (f"Task: {task.description}\n\nThese queries each detect one example. Merge them into a single "
                f"query that detects all examples. Reply with the query in a fenced code block.\n\n"
                f"{shown}\n\n{examples}")
        if feedback:
            user += "\n\nFeedback on your previous merge:\n" + feedback
        messages: list[Message] = [("system", spec_prompt), ("user", user)]
        reply = provider.complete(messages, (key, attempt))
        text = extract_query(reply)
        reports = [validate(text, c.graph, c.example, c.labels, spec) for c in contexts]
        failing = [(c, r) for c, r in zip(contexts, reports) if not r.passed]
        verdict = "Pass" if not failing else ";".join(f"{c.example.id}:{r.verdict}" for c, r in failing)
        if session is not None:
            session.record(IterationLog(key, "merge", attempt, user, reply, verdict, "", not failing))
        if not failing:
            return Merged(text, "model", reports)
        feedback = _previous(text) + "\n".join(
            f"On example {c.example.id}:\n{r.feedback(c.graph)}" for c, r in failing)
    union = or_union([parse_query(t) for t in texts])
    text = format_query(union)
    if session is not None:
        session.warn(f"{task.vuln_type}: merge budget exhausted; using the OR-union of per-example queries")
    return Merged(text, "or-union", [validate(text, c.graph, c.example, c.labels, spec) for c in contexts])


# -- pipeline --------------------------------------------------------------


def generate(
    task: GenerationTask,
    dataset: Dataset,
    provider: Provider,
    *,
    spec: DslSpec | None = None,
    budgets: Budgets = Budgets(),
    session: Session | None = None,
    decompose: bool = True,
    workers: int = 1,
) -> Session:
    """Decompose, generate per example, then merge; returns the session."""
    spec = spec or extract_spec()
    spec_prompt = render_prompt(spec)
    session = session or Session(task)
    session.system_digest = _sha(spec_prompt)
    if decompose:
        decompose_task(task, provider, session)
    contexts = {ex.id: ExampleContext.load(dataset, ex) for ex in task.examples}

    def one(ex: VulnExample) -> None:
        try:
            acc = gen_per_example(task, contexts[ex.id], spec_prompt, provider, spec=spec, session=session,
                                  budgets=budgets)
        except BudgetExhausted as exc:
            session.failures[ex.id] = str(exc)
            return
        session.queries[ex.id] = acc.text
        session.verdicts[ex.id] = acc.report.verdict

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(one, task.examples))
    else:
        for ex in task.examples:
            one(ex)

    ids = [ex.id for ex in task.examples]
    if all(session.verdicts.get(i) == "Pass" for i in ids):
        merged = merge_queries([session.queries[i] for i in ids], [contexts[i] for i in ids], provider,
                               spec_prompt=spec_prompt, task=task, spec=spec, session=session,
                               budget=budgets.merge)
        session.merged = merged.text
        session.merge_method = merged.method
    else:
        session.warn(f"{task.vuln_type}: not every example produced a passing query; no merged query")
    session.finished = time.time()
    return session


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
