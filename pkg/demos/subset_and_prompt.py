"""Prune the step catalog to what the example queries need and show the
grammar prompt that a generator would receive.

    python3 demos/subset_and_prompt.py
"""

from __future__ import annotations

from queryforge import extract_spec
from queryforge.dslspec import render_prompt, subset_spec
from queryforge.resources import example_queries


def main() -> None:
    full = extract_spec()
    small, report = subset_spec(full, example_queries())
    print(f"{len(full.apis)} APIs -> {len(small.apis)} ({report.removed_fraction:.0%} removed)")
    for api, reason in report.removed:
        print(f"  drop {api:<16} {reason}")
    prompt = render_prompt(small)
    print(f"\nprompt: {len(prompt)} chars (full spec: {len(render_prompt(full))})\n")
    print(prompt)


if __name__ == "__main__":
    main()
