"""Scan every bundled project with the shipped queries and score the findings.

    python3 demos/scan_and_score.py
"""

from __future__ import annotations

from queryforge import load_dataset
from queryforge.resources import DATASET_PATH, fixture_projects, query_path
from queryforge.scanner import compute_metrics, format_metrics, scan

QUERIES = {
    "proto-pollution": "proto_generalized",
    "cmd-injection": "cmdi_merged",
    "sqli": "sqli_refined",
}


def main() -> None:
    dataset = load_dataset(DATASET_PATH)
    findings = []
    for vuln_type, name in QUERIES.items():
        for proj in fixture_projects():
            hits = scan(query_path(name), proj, vuln_type=vuln_type)
            for f in hits:
                print(f"{vuln_type:<16} {proj.name}/{f.file}:{f.line}  {f.code}")
            findings.extend(hits)
    print()
    print(format_metrics(compute_metrics(findings, dataset)), end="")


if __name__ == "__main__":
    main()
