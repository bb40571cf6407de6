"""Query generation: model providers and the validate-and-refine loop."""

from .loop import (
    Accepted, Budgets, ExampleContext, GenerationTask, IterationLog, Merged, Session, compose_messages,
    decompose_task, eliminate_fps, extract_query, gen_per_example, generalize, generate, merge_queries,
    or_union, parse_subtasks, rename_bindings,
)
from .provider import (
    HttpProvider, Provider, ProviderConfig, ScriptedProvider, make_provider, read_transcript, request_digest,
    transcript_record,
)

__all__ = [
    "Accepted", "Budgets", "ExampleContext", "GenerationTask", "IterationLog", "Merged", "Session",
    "compose_messages", "decompose_task", "eliminate_fps", "extract_query", "gen_per_example", "generalize",
    "generate", "merge_queries", "or_union", "parse_subtasks", "rename_bindings",
    "HttpProvider", "Provider", "ProviderConfig", "ScriptedProvider", "make_provider", "read_transcript",
    "request_digest", "transcript_record",
]
