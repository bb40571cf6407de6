"""Command-line interface.

Exit codes: 0 success, 1 a command ran but failed (bad query, failed
validation or generation), 2 usage errors such as missing paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from pathlib import Path
from typing import Sequence

import tomli

from . import resources
from .cpg import dumps, export_cpg
from .dslspec import DslSpec, derive_random, extract_spec, render_prompt, subset_spec
from .errors import ConfigError, ExecError, GrammarError, QueryForgeError
from .generator.loop import Budgets, GenerationTask, Session, generate
from .generator.provider import ProviderConfig, make_provider
from .minilang.builder import build_project
from .minilang.slicing import load_dataset
from .query.syntax import parse_query
from .scanner import compute_metrics, dump_findings, format_metrics, load_findings, load_graph, scan
from .validator import suggest_fix, validate

log = logging.getLogger("queryforge")

CONFIG_NAME = "queryforge.toml"


class UsageError(Exception):
    pass


def load_config(path: str | None) -> tuple[dict, Path]:
    """Read ``queryforge.toml``: an explicit path, else one in the working
    directory, else empty defaults."""
    candidate = Path(path) if path else Path(CONFIG_NAME)
    if not candidate.is_file():
        if path:
            raise UsageError(f"config file {path} not found")
        return {}, Path.cwd()
    try:
        return tomli.loads(candidate.read_text(encoding="utf-8")), candidate.parent
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{candidate}: {exc}") from exc


def _emit(args, data, text: str) -> None:
    if args.format == "json":
        sys.stdout.write(json.dumps(data, indent=2, ensure_ascii=False) + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _existing(path: str, what: str, kind: str = "any") -> Path:
    p = Path(path)
    if not p.exists() or (kind == "dir" and not p.is_dir()) or (kind == "file" and not p.is_file()):
        raise UsageError(f"{what} {path} does not exist")
    return p


def _load_spec(path: str | None) -> DslSpec:
    return DslSpec.load(_existing(path, "spec file", "file")) if path else extract_spec()


# -- commands --------------------------------------------------------------


def cmd_build(args) -> int:
    g = build_project(_existing(args.dir, "project directory", "dir"))
    if args.output:
        export_cpg(g, args.output)
    elif args.format == "text":
        sys.stdout.write(dumps(g))
        return 0
    _emit(args, {"nodes": len(g.nodes), "edges": len(g.edges), "files": sorted(g.source_files),
                 "output": args.output},
          f"built {len(g.nodes)} nodes, {len(g.edges)} edges from {len(g.source_files)} file(s) -> {args.output}")
    return 0


def cmd_extract_spec(args) -> int:
    spec = extract_spec()
    if args.output:
        spec.dump(args.output)
    samples = []
    if args.samples:
        rng = random.Random(args.seed)
        samples = [derive_random(spec, rng) for _ in range(args.samples)]
    if args.output:
        text = f"wrote {len(spec.apis)} APIs and {len(spec.grammar)} grammar rules to {args.output}"
        data = {"output": args.output, "apis": len(spec.apis), "rules": len(spec.grammar)}
    else:
        data = spec.to_json()
        text = json.dumps(data, indent=2)
    if samples:
        data = dict(data, samples=samples)
        text += "\n" + "\n".join(samples)
    _emit(args, data, text)
    return 0


def cmd_subset(args, config: dict, base: Path) -> int:
    spec = _load_spec(args.spec)
    query_files = [Path(q) for q in args.queries] if args.queries else \
        [resources.query_path(n) for n in resources.example_query_names()]
    queries = [parse_query(_existing(str(p), "query file", "file").read_text(encoding="utf-8"))
               for p in query_files]
    settings = config.get("subset", {})
    mode = args.mode or settings.get("mode", "deterministic")
    keep = list(settings.get("keep", [])) + list(args.keep or [])
    provider = None
    if mode == "model":
        provider = make_provider(_provider_config(args, config, base))
    graphs = [build_project(p) for p in resources.fixture_projects()] if args.verify else []
    new_spec, report = subset_spec(spec, queries, mode, provider=provider, graphs=graphs, extra_keep=keep)
    if args.output:
        new_spec.dump(args.output)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    lines = [f"kept {len(report.kept)} of {len(report.kept) + len(report.removed)} APIs "
             f"(removed {report.removed_fraction:.0%})"]
    lines += [f"  - {api}: {reason}" for api, reason in report.removed]
    lines += [f"warning: {w}" for w in report.warnings]
    lines += [f"cancelled: {c}" for c in report.cancelled]
    _emit(args, report.to_json(), "\n".join(lines))
    return 0


def cmd_render_prompt(args) -> int:
    spec = _load_spec(args.spec)
    prompt = render_prompt(spec)
    _emit(args, {"prompt": prompt, "chars": len(prompt)}, prompt)
    return 0


def _provider_config(args, config: dict, base: Path) -> ProviderConfig:
    if getattr(args, "provider_config", None):
        return ProviderConfig.from_toml(_existing(args.provider_config, "provider config", "file"))
    if "provider" in config:
        return ProviderConfig.from_mapping(config["provider"], base)
    raise UsageError("no provider configured; pass --provider-config or add [provider] to queryforge.toml")


def cmd_generate(args, config: dict, base: Path) -> int:
    dataset = load_dataset(_existing(args.dataset, "dataset", "file"))
    budgets_cfg = dict(config.get("generation", {}))
    if args.provider_config:
        extra = tomli.loads(Path(args.provider_config).read_text(encoding="utf-8")).get("generation", {})
        budgets_cfg.update(extra)
    if args.max_attempts:
        budgets_cfg["max_attempts"] = args.max_attempts
    budgets = Budgets.from_mapping(budgets_cfg)
    ids = args.examples.split(",") if args.examples else None
    task = GenerationTask.from_dataset(dataset, args.vuln_type, budgets.max_attempts, ids)
    cfg = _provider_config(args, config, base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    provider = make_provider(cfg)
    session = Session(task, log_path=out / "session.log.jsonl" if args.log else None)
    try:
        generate(task, dataset, provider, spec=_load_spec(args.spec), budgets=budgets, session=session,
                 decompose=not args.no_decompose, workers=args.workers)
    finally:
        provider.close()
        session.dump(out / "session.json")
        with open(out / "transcript.jsonl", "w", encoding="utf-8") as fh:
            for rec in provider.records:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    if session.merged:
        (out / f"{args.vuln_type}.q").write_text(session.merged, encoding="utf-8")
    lines = [f"{ex}: {v}" for ex, v in sorted(session.verdicts.items())]
    lines += [f"{ex}: failed ({msg})" for ex, msg in sorted(session.failures.items())]
    lines.append(f"merged query ({session.merge_method}):" if session.merged else "no merged query")
    if session.merged:
        lines.append(session.merged.rstrip())
    _emit(args, session.to_json(timing=False), "\n".join(lines))
    return 0 if session.merged else 1


def cmd_validate(args) -> int:
    query = _existing(args.query, "query file", "file").read_text(encoding="utf-8")
    project = _existing(args.project, "project directory", "dir")
    dataset_path = Path(args.dataset) if args.dataset else project.parent / "dataset.json"
    dataset = load_dataset(_existing(str(dataset_path), "dataset", "file"))
    ex = dataset.example(args.example_id)
    g = build_project(project)
    report = validate(query, g, ex, dataset.labels_for_project(ex.project_dir), _load_spec(args.spec))
    if args.report:
        report.dump(args.report, g)
    _emit(args, report.to_json(g), report.feedback(g))
    return 0 if report.passed else 1


def cmd_scan(args) -> int:
    query_file = _existing(args.query, "query file", "file")
    projects = [_existing(d, "project", "any") for d in args.dirs]
    try:
        q = parse_query(query_file.read_text(encoding="utf-8"))
    except GrammarError as exc:
        print(f"error: {query_file}: {exc}", file=sys.stderr)
        return 1
    findings = []
    for p in projects:
        try:
            findings.extend(scan(q, p, query_id=args.id or query_file.stem, vuln_type=args.vuln_type,
                                 graph=load_graph(p)))
        except ExecError as exc:
            hints = "; ".join(s.render() for s in suggest_fix(exc, extract_spec()))
            print(f"error: {query_file}: {exc}" + (f" ({hints})" if hints else ""), file=sys.stderr)
            return 1
    if args.output:
        dump_findings(findings, args.output)
    text = "\n".join(f"{f.project}/{f.file}:{f.line}: {f.code}" for f in findings) or "no findings"
    _emit(args, [f.to_json() for f in findings], text)
    return 0


def cmd_metrics(args) -> int:
    findings = load_findings(_existing(args.findings, "findings file", "file"))
    dataset = load_dataset(_existing(args.dataset, "dataset", "file"))
    rows = compute_metrics(findings, dataset)
    _emit(args, [r.to_json() for r in rows], format_metrics(rows))
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("json", "text"), default="text", help="output format")
    common.add_argument("--seed", type=int, default=0, help="seed for any randomized choice")
    common.add_argument("--config", help=f"settings file (default: ./{CONFIG_NAME} if present)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="queryforge",
                                     description="Build code property graphs, run and generate detection queries.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="build a CPG from a MiniLang project")
    p.add_argument("dir")
    p.add_argument("-o", "--output", help="write the graph here (default: print it)")

    p = sub.add_parser("extract-spec", parents=[common], help="export the DSL specification")
    p.add_argument("-o", "--output", help="write dslspec.json here")
    p.add_argument("--samples", type=int, default=0, help="also print N random grammar derivations")

    p = sub.add_parser("subset", parents=[common], help="prune the DSL to a core subset")
    p.add_argument("--mode", choices=("deterministic", "model"))
    p.add_argument("--spec", help="input dslspec.json (default: the full engine spec)")
    p.add_argument("--queries", nargs="+", help="example query files (default: the shipped examples)")
    p.add_argument("--keep", nargs="+", help="API names to retain regardless")
    p.add_argument("--provider-config", help="provider settings for model mode")
    p.add_argument("--verify", action="store_true", help="re-execute rewritten examples on the fixture corpus")
    p.add_argument("-o", "--output", help="write the subset dslspec.json here")
    p.add_argument("--report", help="write subset_report.json here")

    p = sub.add_parser("render-prompt", parents=[common], help="print the grammar prompt")
    p.add_argument("--spec", help="dslspec.json to render (default: the full engine spec)")

    p = sub.add_parser("generate", parents=[common], help="generate a detection query for a vulnerability type")
    p.add_argument("dataset")
    p.add_argument("vuln_type")
    p.add_argument("--provider-config")
    p.add_argument("--spec", help="dslspec.json for the grammar prompt")
    p.add_argument("--max-attempts", type=int)
    p.add_argument("--examples", help="comma-separated example ids (default: all of the type)")
    p.add_argument("--out", default=".", help="directory for session.json and the merged query")
    p.add_argument("--no-decompose", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log", action="store_true", help="also stream iterations to session.log.jsonl")

    p = sub.add_parser("validate", parents=[common], help="validate a query against one labeled example")
    p.add_argument("query")
    p.add_argument("project")
    p.add_argument("example_id")
    p.add_argument("--dataset", help="dataset.json (default: next to the project directory)")
    p.add_argument("--spec")
    p.add_argument("--report", help="write report.json here")

    p = sub.add_parser("scan", parents=[common], help="run a query over projects")
    p.add_argument("query")
    p.add_argument("dirs", nargs="+", metavar="dir")
    p.add_argument("--vuln-type", default="")
    p.add_argument("--id", help="query id recorded in findings (default: file stem)")
    p.add_argument("-o", "--output", help="write findings.json here")

    p = sub.add_parser("metrics", parents=[common], help="score findings against a dataset")
    p.add_argument("findings")
    p.add_argument("dataset")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    random.seed(args.seed)
    try:
        config, base = load_config(args.config)
        handlers = {
            "build": lambda: cmd_build(args),
            "extract-spec": lambda: cmd_extract_spec(args),
            "subset": lambda: cmd_subset(args, config, base),
            "render-prompt": lambda: cmd_render_prompt(args),
            "generate": lambda: cmd_generate(args, config, base),
            "validate": lambda: cmd_validate(args),
            "scan": lambda: cmd_scan(args),
            "metrics": lambda: cmd_metrics(args),
        }
        return handlers[args.command]()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except QueryForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
