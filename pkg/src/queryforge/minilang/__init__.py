"""MiniLang frontend: parsing, graph construction and example slicing."""

from .ast import MiniLangAst
from .builder import (
    SANITIZER_CALLS, SINK_CALLS, SOURCE_CALLS, build_cpg, build_project, builtin_table, project_files,
)
from .parser import parse_program
from .slicing import Dataset, VulnExample, load_dataset, parse_dataset, slice_example, slice_lines

__all__ = [
    "MiniLangAst", "parse_program", "build_cpg", "build_project", "project_files", "builtin_table",
    "SOURCE_CALLS", "SINK_CALLS", "SANITIZER_CALLS",
    "VulnExample", "Dataset", "load_dataset", "parse_dataset", "slice_example", "slice_lines",
]
