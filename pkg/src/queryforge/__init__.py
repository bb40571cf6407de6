"""queryforge: code property graphs, a Joern-style detection-query DSL, and
a trace-driven validate-and-refine loop for generating detection queries."""

from .cpg import CodePropertyGraph, Edge, EdgeKind, Node, NodeKind, Operators, dataflow_reach_oracle
from .dslspec import DslSpec, SubsetReport, extract_spec, render_prompt, subset_spec
from .minilang import VulnExample, build_cpg, build_project, load_dataset, parse_program, slice_example
from .query import PState, QueryAst, execute, format_query, parse_query
from .scanner import Finding, MetricsRow, compute_metrics, scan
from .validator import FixSuggestion, OverfitFlag, ValidationReport, detect_overfit, localize_fp, suggest_fix, validate

__version__ = "0.1.0"

__all__ = [
    "CodePropertyGraph", "Node", "Edge", "NodeKind", "EdgeKind", "Operators", "dataflow_reach_oracle",
    "parse_program", "build_cpg", "build_project", "VulnExample", "load_dataset", "slice_example",
    "QueryAst", "parse_query", "format_query", "execute", "PState",
    "DslSpec", "SubsetReport", "extract_spec", "subset_spec", "render_prompt",
    "ValidationReport", "FixSuggestion", "OverfitFlag", "validate", "suggest_fix", "detect_overfit", "localize_fp",
    "Finding", "MetricsRow", "scan", "compute_metrics",
]
