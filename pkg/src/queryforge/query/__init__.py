"""The detection-query DSL: syntax, step registry and interpreter."""

from .interpreter import Execution, execute
from .pstate import PState, ValueSummary, parse_pstate_text, summarize
from .registry import REGISTRY, StepRegistryEntry, list_api_catalog, rewrite_query
from .syntax import QueryAst, api_names, format_query, parse_query

__all__ = [
    "QueryAst", "parse_query", "format_query", "api_names",
    "StepRegistryEntry", "REGISTRY", "list_api_catalog", "rewrite_query",
    "execute", "Execution", "PState", "ValueSummary", "summarize", "parse_pstate_text",
]
