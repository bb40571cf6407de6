"""Paths to the bundled fixture corpus, example queries and transcripts."""

from __future__ import annotations

from pathlib import Path

from .query.syntax import QueryAst, parse_query

DATA_DIR = Path(__file__).resolve().parent / "data"
CORPUS_DIR = DATA_DIR / "corpus"
QUERIES_DIR = DATA_DIR / "queries"
TRANSCRIPTS_DIR = DATA_DIR / "transcripts"
DATASET_PATH = CORPUS_DIR / "dataset.json"
SCRIPTED_CONFIG = DATA_DIR / "scripted.toml"

# Shipped queries that are not part of the curated example set: one does
# not parse, the other is deliberately tied to a single example.
NON_EXAMPLE_QUERIES = frozenset({"proto_broken", "proto_overfit"})


def project(name: str) -> Path:
    return CORPUS_DIR / name


def fixture_projects() -> list[Path]:
    """Every corpus project that holds at least one source file."""
    return sorted(p for p in CORPUS_DIR.iterdir() if p.is_dir() and any(p.rglob("*.mini")))


def query_path(name: str) -> Path:
    return QUERIES_DIR / f"{name}.q"


def query_text(name: str) -> str:
    return query_path(name).read_text(encoding="utf-8")


def example_query_names() -> list[str]:
    return sorted(p.stem for p in QUERIES_DIR.glob("*.q") if p.stem not in NON_EXAMPLE_QUERIES)


def example_queries() -> list[QueryAst]:
    return [parse_query(query_text(n)) for n in example_query_names()]


def transcript(name: str) -> Path:
    return TRANSCRIPTS_DIR / f"{name}.jsonl"
