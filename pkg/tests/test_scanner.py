from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from queryforge.errors import ConfigError, IoError
from queryforge.minilang import load_dataset
from queryforge.resources import DATASET_PATH, project, query_path, query_text
from queryforge.scanner import (
    MACRO, MICRO, Finding, compute_metrics, dump_findings, f1_score, format_metrics, load_findings, make_row, scan,
)

GOLDEN = Path(__file__).parent / "golden"


# -- metrics -----------------------------------------------------------------------


def test_sqli_reference_row():
    row = make_row("sqli", 16, 14, 19)
    assert row.recall == pytest.approx(0.84, abs=0.005)
    assert row.precision == pytest.approx(0.53, abs=0.005)
    assert round(row.recall, 3) == 0.842 and round(row.precision, 3) == 0.533
    assert row.fn == 3


def test_f1_from_rounded_inputs():
    assert f1_score(0.533, 0.842) == pytest.approx(0.65, abs=0.005)
    assert round(f1_score(0.533, 0.842), 3) == 0.653


def test_zero_findings_row():
    row = make_row("x", 0, 0, 5)
    assert (row.tp, row.fp, row.fn, row.recall, row.precision, row.f1) == (0, 0, 5, 0.0, 0.0, 0.0)
    assert make_row("x", 0, 0, 0).recall == 0.0


def test_inconsistent_counts_are_rejected():
    with pytest.raises(ValueError):
        make_row("x", 3, 0, 2)
    with pytest.raises(ValueError):
        make_row("x", 0, -1, 2)


@given(tp_total=st.integers(0, 500), tp_frac=st.floats(0, 1), fp=st.integers(0, 500))
def test_metrics_algebra(tp_total, tp_frac, fp):
    tp = int(tp_total * tp_frac)
    row = make_row("t", tp, fp, tp_total)
    p, r = row.precision, row.recall
    assert row.tp + row.fn == row.tp_total
    for v in (p, r, row.f1):
        assert 0.0 <= v <= 1.0
    assert row.f1 <= 2 * min(p, r) + 1e-12
    assert row.f1 <= max(p, r) + 1e-12
    if p + r == 0:
        assert row.f1 == 0.0


def test_golden_metrics_are_reproduced():
    rows = compute_metrics(load_findings(GOLDEN / "sqli_findings.json"), load_dataset(GOLDEN / "sqli_dataset.json"))
    assert format_metrics(rows) == (GOLDEN / "sqli_metrics.txt").read_text()
    assert [(r.tp, r.fp, r.tp_total) for r in rows] == [(16, 14, 19)] * 3


def test_duplicate_locations_count_once(dataset):
    f = Finding("q", 1, "corpus/sqli_two_writes", "handler.mini", 4, "sql(q)", "sqli")
    same_line = Finding("q", 2, "corpus/sqli_two_writes", "handler.mini", 4, "q", "sqli")
    fp = Finding("q", 3, "corpus/sqli_two_writes", "handler.mini", 6, "sql(q)", "sqli")
    rows = {r.vuln_type: r for r in compute_metrics([f, same_line, fp, fp], dataset)}
    assert (rows["sqli"].tp, rows["sqli"].fp) == (1, 1)
    assert rows["proto-pollution"].fn == 2


def test_label_matching_needs_type_and_path_suffix(dataset):
    wrong_type = Finding("q", 1, "sqli_two_writes", "handler.mini", 4, "", "cmd-injection")
    wrong_dir = Finding("q", 1, "other_sqli_two_writes", "handler.mini", 4, "", "sqli")
    rows = {r.vuln_type: r for r in compute_metrics([wrong_type, wrong_dir], dataset)}
    assert rows["cmd-injection"].tp == 0 and rows["cmd-injection"].fp == 1
    assert rows["sqli"].tp == 0 and rows["sqli"].fp == 1


def test_micro_and_macro_rows(dataset):
    findings = [Finding("q", 1, "cmdi_exec", "app.mini", 2, "", "cmd-injection"),
                Finding("q", 2, "sqli_two_writes", "handler.mini", 4, "", "sqli"),
                Finding("q", 3, "sqli_two_writes", "handler.mini", 6, "", "sqli")]
    rows = {r.vuln_type: r for r in compute_metrics(findings, dataset)}
    micro, macro = rows[MICRO], rows[MACRO]
    assert (micro.tp, micro.fp, micro.tp_total) == (2, 1, 5)
    assert micro.recall == pytest.approx(2 / 5) and micro.precision == pytest.approx(2 / 3)
    assert macro.recall == pytest.approx((0.5 + 0 + 1) / 3)
    assert macro.precision == pytest.approx((1 + 0 + 0.5) / 3)


def test_findings_round_trip(tmp_path):
    findings = [Finding("q", 7, "p", "a.mini", 3, "x = 1", "sqli")]
    dump_findings(findings, tmp_path / "f.json")
    assert load_findings(tmp_path / "f.json") == findings


def test_bad_findings_file(tmp_path):
    (tmp_path / "f.json").write_text(json.dumps({"not": "a list"}))
    with pytest.raises(ConfigError):
        load_findings(tmp_path / "f.json")
    (tmp_path / "g.json").write_text(json.dumps([{"line": 3}]))
    with pytest.raises(ConfigError):
        load_findings(tmp_path / "g.json")


# -- scanning ------------------------------------------------------------------------


def test_fig1_scan_finds_the_labeled_line(dataset):
    findings = scan(query_path("proto_fig1"), project("proto_pollution"), vuln_type="proto-pollution")
    assert [(f.file, f.line) for f in findings] == [("proto_pollution.mini", 3)]
    assert findings[0].query == "proto_fig1"
    rows = {r.vuln_type: r for r in compute_metrics(findings, dataset)}
    assert rows["proto-pollution"].tp == 1 and rows["proto-pollution"].fp == 0


def test_sanitized_variant_has_no_findings():
    assert scan(query_text("proto_fig1"), project("proto_pollution_sanitized")) == []


def test_findings_resolve_to_nodes(graphs):
    for name, g in graphs.items():
        for f in scan("cpg.call", project(name), graph=g):
            node = g.nodes[f.node]
            assert (node.file, node.line) == (f.file, f.line)


def test_scan_is_deterministic():
    a = scan("cpg.call", project("sqli_two_writes"))
    b = scan("cpg.call", project("sqli_two_writes"))
    assert a == b
    assert [(f.file, f.line, f.node) for f in a] == sorted((f.file, f.line, f.node) for f in a)


def test_empty_project_is_an_error(tmp_path):
    with pytest.raises(IoError, match="no source files"):
        scan("cpg.call", tmp_path)


def test_manifest_schema_violation(tmp_path):
    (tmp_path / "dataset.json").write_text(json.dumps({"examples": [{"id": "x"}]}))
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "dataset.json")


def test_shipped_manifest_loads():
    assert len(load_dataset(DATASET_PATH).examples) == 5
