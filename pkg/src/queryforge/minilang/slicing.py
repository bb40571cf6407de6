"""Vulnerability examples, dataset manifests and statement-level backward
slices used to show an example to the query generator."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from ..cpg import DATAFLOW_KINDS, CodePropertyGraph, NodeKind
from ..errors import ConfigError, NoNodeAtLabel
from .builder import MAIN_METHOD


@dataclass(frozen=True)
class VulnExample:
    id: str
    vuln_type: str
    project_dir: str
    sink_file: str
    sink_lines: tuple[int, int]
    description: str = ""

    def __post_init__(self) -> None:
        start, end = self.sink_lines
        if start < 1 or end < start:
            raise ConfigError(f"example {self.id}: invalid sink_lines {self.sink_lines}")
        object.__setattr__(self, "sink_lines", (int(start), int(end)))

    def covers(self, file: str, line: int) -> bool:
        return file == self.sink_file and self.sink_lines[0] <= line <= self.sink_lines[1]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "vuln_type": self.vuln_type,
            "project_dir": self.project_dir,
            "sink_file": self.sink_file,
            "sink_lines": list(self.sink_lines),
            "description": self.description,
        }


@dataclass(frozen=True)
class Dataset:
    """A parsed ``dataset.json``; project directories resolve against ``root``."""

    root: Path
    examples: tuple[VulnExample, ...]
    tasks: dict

    def project_path(self, ex: VulnExample) -> Path:
        return self.root / ex.project_dir

    def example(self, example_id: str) -> VulnExample:
        for ex in self.examples:
            if ex.id == example_id:
                return ex
        raise ConfigError(f"no example with id {example_id!r}")

    def of_type(self, vuln_type: str) -> list[VulnExample]:
        return [ex for ex in self.examples if ex.vuln_type == vuln_type]

    def labels_for_project(self, project_dir: str) -> list[VulnExample]:
        key = Path(project_dir).as_posix().rstrip("/")
        return [ex for ex in self.examples if Path(ex.project_dir).as_posix().rstrip("/") == key]

    def task_description(self, vuln_type: str) -> str:
        if vuln_type in self.tasks:
            return str(self.tasks[vuln_type])
        return " ".join(ex.description for ex in self.of_type(vuln_type)).strip()


_EXAMPLE_FIELDS = ("id", "vuln_type", "project_dir", "sink_file", "sink_lines")


def parse_dataset(data: object, root: str | Path = ".") -> Dataset:
    if not isinstance(data, dict) or not isinstance(data.get("examples"), list):
        raise ConfigError("dataset manifest must be an object with an 'examples' list")
    examples = []
    for i, raw in enumerate(data["examples"]):
        if not isinstance(raw, dict):
            raise ConfigError(f"examples[{i}] is not an object")
        missing = [f for f in _EXAMPLE_FIELDS if f not in raw]
        if missing:
            raise ConfigError(f"examples[{i}] lacks field(s) {', '.join(missing)}")
        lines = raw["sink_lines"]
        if (not isinstance(lines, list) or len(lines) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in lines)):
            raise ConfigError(f"examples[{i}].sink_lines must be [start, end] integers")
        examples.append(VulnExample(
            str(raw["id"]), str(raw["vuln_type"]), str(raw["project_dir"]), str(raw["sink_file"]),
            (lines[0], lines[1]), str(raw.get("description", "")),
        ))
    ids = [ex.id for ex in examples]
    if len(set(ids)) != len(ids):
        raise ConfigError("example ids must be unique")
    tasks = data.get("tasks", {})
    if not isinstance(tasks, dict):
        raise ConfigError("'tasks' must map vulnerability types to descriptions")
    return Dataset(Path(root), tuple(examples), dict(tasks))


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load dataset {path}: {exc}") from exc
    return parse_dataset(data, path.parent)


# -- slicing ---------------------------------------------------------------


def statement_of(g: CodePropertyGraph, nid: int) -> int | None:
    """Nearest ancestor-or-self that sits directly in a statement list."""
    cur: int | None = nid
    while cur is not None:
        parent = g.ast_parent(cur)
        if parent is None:
            return None
        pnode = g.nodes[parent]
        if pnode.kind is NodeKind.BLOCK and pnode.name == "":
            return cur
        cur = parent
    return None


def backward_flow(g: CodePropertyGraph, targets: set[int]) -> set[int]:
    seen = set(targets)
    queue = deque(targets)
    while queue:
        cur = queue.popleft()
        for kind in DATAFLOW_KINDS:
            for e in g.in_edges(cur, kind):
                if e.src not in seen:
                    seen.add(e.src)
                    queue.append(e.src)
    return seen


def slice_lines(g: CodePropertyGraph, ex: VulnExample) -> list[tuple[str, int]]:
    sinks = {n for n in g.nodes_on_lines(ex.sink_file, *ex.sink_lines) if g.nodes[n].code}
    if not sinks:
        raise NoNodeAtLabel(f"{ex.sink_file}:{ex.sink_lines[0]}-{ex.sink_lines[1]} holds no node")
    lines: set[tuple[str, int]] = {(g.nodes[n].file, g.nodes[n].line) for n in sinks}
    for nid in backward_flow(g, sinks):
        node = g.nodes[nid]
        stmt = statement_of(g, nid)
        if stmt is not None:
            lines.add((node.file, g.nodes[stmt].line))
        method = g.enclosing_method(nid)
        if method is not None:
            m = g.nodes[method]
            if m.name != MAIN_METHOD:
                lines.add((m.file, m.line))
    return sorted(lines)


def slice_example(g: CodePropertyGraph, ex: VulnExample) -> str:
    """Source lines relevant to the example's sink, each prefixed with its
    original line number and grouped under a ``// <file>`` header."""
    out: list[str] = []
    current = None
    for file, line in slice_lines(g, ex):
        if file != current:
            out.append(f"// {file}")
            current = file
        text = g.source_files.get(file, "").splitlines()
        src = text[line - 1] if 0 < line <= len(text) else ""
        out.append(f"{line:>4} | {src}")
    return "\n".join(out) + "\n"
