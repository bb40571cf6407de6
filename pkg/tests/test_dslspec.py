from __future__ import annotations

import json
import random
import re

import pytest

from queryforge.dslspec import (
    DslSpec, api_summary, build_grammar, derive_random, parse_rule, render_prompt, subset_spec,
)
from queryforge.errors import CoverageViolation
from queryforge.generator import ProviderConfig, ScriptedProvider, transcript_record
from queryforge.query import api_names, execute, list_api_catalog, parse_query
from queryforge.query.registry import REGISTRY
from queryforge.resources import example_queries


def terminal_apis(spec: DslSpec) -> set[str]:
    """API names that the grammar can emit as terminals."""
    names = set()
    for rule in spec.grammar:
        if rule.lhs == "operator":
            continue
        for alt in rule.alternatives:
            for sym in alt:
                if sym.startswith('"'):
                    names.add(json.loads(sym).rstrip("("))
    ops = spec.rule("operator")
    if ops is not None:
        names |= {"Operators." + json.loads(alt[0]) for alt in ops.alternatives}
    return names


def test_step_rule_has_expected_shape(spec):
    assert spec.rule("step").render() == "<step> ::= <filter_step> | <complex_step>"


def test_every_registry_entry_is_an_api(spec):
    assert len(spec.apis) == len(list_api_catalog())
    assert spec.api_names == sorted(REGISTRY)


def test_grammar_is_complete(spec):
    terminals = terminal_apis(spec)
    assert set(spec.api_names) <= terminals
    keywords = {"def", "val", "=", "++", ".", "_", "_.", ",", ")", "Operators."}
    assert terminals - set(spec.api_names) <= keywords


def test_every_nonterminal_is_defined(spec):
    defined = {r.lhs for r in spec.grammar}
    for rule in spec.grammar:
        for alt in rule.alternatives:
            for sym in alt:
                if sym.startswith("<"):
                    assert sym.strip("<>") in defined, (rule.lhs, sym)


def test_rules_round_trip_through_text(spec):
    for rule in spec.grammar:
        assert parse_rule(rule.render()) == rule


def test_thousand_random_derivations_parse(spec):
    rng = random.Random(7)
    for _ in range(1000):
        parse_query(derive_random(spec, rng))


def test_random_derivations_on_subset_only_use_kept_apis(spec):
    small, _ = subset_spec(spec, example_queries())
    rng = random.Random(11)
    for _ in range(200):
        assert api_names(parse_query(derive_random(small, rng))) <= set(small.api_names)


def test_json_round_trip(spec, tmp_path):
    assert DslSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec
    spec.dump(tmp_path / "dslspec.json")
    assert DslSpec.load(tmp_path / "dslspec.json") == spec


# -- subsetting ----------------------------------------------------------------


def test_minimal_examples_keep_their_apis(spec):
    q = parse_query('cpg.call.nameExact("exec")')
    small, report = subset_spec(spec, [q])
    assert {"cpg.call", "nameExact"} <= set(report.kept)
    assert ("whereNot", "redundant-rewrite") in report.removed


def test_empty_example_list(spec):
    _, report = subset_spec(spec, [])
    reasons = dict(report.removed)
    assert not report.cancelled
    assert reasons["dump"] == reasons["size"] == "debug"
    assert reasons["typeFullName"] == "language-specific"
    expected = {a.name for a in spec.apis if a.rewrite} | {"dump", "size", "typeFullName"}
    assert set(reasons) == expected
    assert set(report.kept) == set(spec.api_names) - expected


def test_shipped_subset_removes_a_third(spec, graphs):
    queries = example_queries()
    assert len(queries) == 12
    small, report = subset_spec(spec, queries, graphs=list(graphs.values()))
    assert report.removed_fraction >= 0.30
    assert len(report.coverage_proof) == 12
    for q, proof in zip(queries, report.coverage_proof):
        rewritten = q if proof == "unchanged" else parse_query(proof)
        assert api_names(rewritten) <= set(small.api_names)
        for g in graphs.values():
            assert execute(rewritten, g).result == execute(q, g).result


def test_subsetting_is_idempotent(spec):
    queries = example_queries()
    once, _ = subset_spec(spec, queries)
    twice, report = subset_spec(once, queries)
    assert twice == once
    assert not report.removed


def test_coverage_cancels_prunes_of_used_apis(spec):
    # lineNumber has no rewrite, so a rule that would drop it must be cancelled;
    # the debug step "dump" is used directly by this example
    q = parse_query("cpg.call.dump.lineNumber(3)")
    _, report = subset_spec(spec, [q])
    assert "dump" in report.kept
    assert [c.api for c in report.cancelled] == ["dump"]
    assert isinstance(report.cancelled[0], CoverageViolation)


def test_extra_keep_overrides_rules(spec):
    _, report = subset_spec(spec, [], extra_keep=["whereNot"])
    assert "whereNot" in report.kept


def _scripted(tmp_path, reply):
    path = tmp_path / "subset.jsonl"
    path.write_text(json.dumps(transcript_record(("#subset", 1), [], reply)) + "\n")
    return ScriptedProvider(ProviderConfig(mode="scripted", transcript=path))


def test_model_mode_only_prunes(spec, tmp_path):
    keep = ["cpg", "cpg.call", "nameExact", "name", "where", "argument", "reachableBy", "not-a-real-api"]
    small, report = subset_spec(spec, example_queries(), "model", provider=_scripted(tmp_path, json.dumps(keep)))
    assert report.mode == "model" and not report.warnings
    assert set(report.kept) <= set(spec.api_names)
    assert "not-a-real-api" not in report.kept
    # the model dropped APIs that the examples need: coverage restores them
    assert report.cancelled
    assert {"arrayAccess", "array", "isCall"} <= set(report.kept)


def test_model_mode_falls_back_on_provider_error(spec, tmp_path):
    provider = _scripted(tmp_path, "I would rather not say.")
    small, report = subset_spec(spec, example_queries(), "model", provider=provider)
    det, det_report = subset_spec(spec, example_queries())
    assert small == det
    assert report.warnings and "fell back" in report.warnings[0]
    # an exhausted script is also a provider error
    provider.script.clear()
    _, again = subset_spec(spec, [], "model", provider=provider)
    assert again.warnings


def test_unknown_mode_is_rejected(spec):
    with pytest.raises(ValueError):
        subset_spec(spec, [], "random")


# -- prompt ----------------------------------------------------------------------


def test_prompt_with_one_api():
    entry = REGISTRY["cpg.call"]
    spec = DslSpec(tuple(build_grammar([entry])), (entry,), ("<operator>.assignment",))
    prompt = render_prompt(spec)
    section = prompt.split("# APIs\n", 1)[1].split("\n\n", 1)[0]
    assert section.strip().splitlines() == [api_summary(entry)]


def test_subset_prompt_contains_reference_rule_and_each_api_once(spec):
    small, _ = subset_spec(spec, example_queries())
    prompt = render_prompt(small)
    assert '<reference> ::= "Operators." <operator>' in prompt
    assert len(prompt) <= 6000
    api_lines = prompt.split("# APIs\n", 1)[1].split("\n\n", 1)[0].splitlines()
    for name in small.api_names:
        assert sum(1 for l in api_lines if re.match(re.escape(name) + r"\(", l)) == 1
    assert render_prompt(small) == prompt
