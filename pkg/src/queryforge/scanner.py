"""Running detection queries over projects and scoring findings against a
labeled dataset."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

from .cpg import CodePropertyGraph, import_cpg
from .errors import ConfigError
from .minilang.builder import build_project
from .minilang.slicing import Dataset, VulnExample
from .query.interpreter import execute
from .query.syntax import QueryAst, parse_query


@dataclass(frozen=True)
class Finding:
    query: str
    node: int
    project: str
    file: str
    line: int
    code: str
    vuln_type: str = ""

    @property
    def location(self) -> tuple[str, str, int]:
        return (self.project, self.file, self.line)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "Finding":
        try:
            return cls(str(data["query"]), int(data.get("node", -1)), str(data.get("project", "")),
                       str(data["file"]), int(data["line"]), str(data.get("code", "")),
                       str(data.get("vuln_type", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad finding record {data!r}: {exc}") from exc


def load_graph(project: str | Path) -> CodePropertyGraph:
    """A project directory is built; a file is read as an exported graph."""
    path = Path(project)
    if path.is_file():
        return import_cpg(path)
    return build_project(path)


def scan(
    query: str | Path | QueryAst,
    project: str | Path,
    *,
    query_id: str | None = None,
    vuln_type: str = "",
    graph: CodePropertyGraph | None = None,
) -> list[Finding]:
    """Execute ``query`` on one project; findings sorted by (file, line, node).

    ``query`` may be query text, a path to a ``.q`` file or a parsed query.
    """
    if isinstance(query, QueryAst):
        q, qid = query, query_id or "query"
    elif isinstance(query, Path) or (isinstance(query, str) and "\n" not in query and query.endswith(".q")):
        path = Path(query)
        q, qid = parse_query(path.read_text(encoding="utf-8")), query_id or path.stem
    else:
        q, qid = parse_query(query), query_id or "query"
    g = graph if graph is not None else load_graph(project)
    result = execute(q, g).result
    project_name = Path(project).as_posix()
    out = [Finding(qid, nid, project_name, g.nodes[nid].file, g.nodes[nid].line, g.nodes[nid].code, vuln_type)
           for nid in result]
    return sorted(out, key=lambda f: (f.file, f.line, f.node))


def dump_findings(findings: Sequence[Finding], path: str | Path) -> None:
    Path(path).write_text(json.dumps([f.to_json() for f in findings], indent=2) + "\n", encoding="utf-8")


def load_findings(path: str | Path) -> list[Finding]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read findings {path}: {exc}") from exc
    if not isinstance(data, list):
        raise ConfigError("findings file must hold a JSON list")
    return [Finding.from_json(d) for d in data]


# -- metrics ---------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    vuln_type: str
    tp: int
    fp: int
    fn: int
    tp_total: int
    recall: float
    precision: float
    f1: float

    def to_json(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2 * precision * recall, precision + recall)


def make_row(vuln_type: str, tp: int, fp: int, tp_total: int) -> MetricsRow:
    if min(tp, fp, tp_total) < 0 or tp > tp_total:
        raise ValueError(f"inconsistent counts tp={tp} fp={fp} tp_total={tp_total}")
    recall = _ratio(tp, tp_total)
    precision = _ratio(tp, tp + fp)
    return MetricsRow(vuln_type, tp, fp, tp_total - tp, tp_total, recall, precision, f1_score(precision, recall))


def _path_suffix(full: PurePosixPath, tail: PurePosixPath) -> bool:
    n = len(tail.parts)
    return n > 0 and full.parts[-n:] == tail.parts


def _matches(f: Finding, label: VulnExample) -> bool:
    if not label.sink_lines[0] <= f.line <= label.sink_lines[1]:
        return False
    full = PurePosixPath(f.project) / f.file if f.project else PurePosixPath(f.file)
    return _path_suffix(full, PurePosixPath(label.project_dir) / label.sink_file)


MICRO = "overall (micro)"
MACRO = "overall (macro)"


def compute_metrics(findings: Iterable[Finding], dataset: Dataset) -> list[MetricsRow]:
    """Per-type rows, then a micro- and a macro-averaged overall row.

    Findings are deduplicated by location first: several result nodes on one
    line count once. A location inside a labeled sink range of its type is a
    hit for that label (each label counts once); any other location is a
    false positive.
    """
    locations: dict[str, set[tuple[str, str, int]]] = {}
    for f in findings:
        locations.setdefault(f.vuln_type, set()).add(f.location)
    types = sorted({ex.vuln_type for ex in dataset.examples} | set(locations))
    rows = []
    for t in types:
        labels = dataset.of_type(t)
        hit: set[str] = set()
        fp = 0
        for project, file, line in sorted(locations.get(t, ())):
            probe = Finding("", -1, project, file, line, "", t)
            matched = [ex.id for ex in labels if _matches(probe, ex)]
            if matched:
                hit.update(matched)
            else:
                fp += 1
        rows.append(make_row(t, len(hit), fp, len(labels)))
    tp = sum(r.tp for r in rows)
    fp = sum(r.fp for r in rows)
    total = sum(r.tp_total for r in rows)
    rows.append(make_row(MICRO, tp, fp, total))
    if types:
        per = rows[:-1]
        k = len(per)
        rows.append(MetricsRow(MACRO, tp, fp, total - tp, total,
                               sum(r.recall for r in per) / k, sum(r.precision for r in per) / k,
                               sum(r.f1 for r in per) / k))
    return rows


def format_metrics(rows: Sequence[MetricsRow]) -> str:
    width = max([len("type")] + [len(r.vuln_type) for r in rows])
    head = f"{'type':<{width}}  {'TP':>4} {'FP':>4} {'FN':>4} {'total':>5}  {'recall':>6} {'prec':>6} {'f1':>6}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.vuln_type:<{width}}  {r.tp:>4} {r.fp:>4} {r.fn:>4} {r.tp_total:>5}  "
                     f"{r.recall:>6.3f} {r.precision:>6.3f} {r.f1:>6.3f}")
    return "\n".join(lines) + "\n"
