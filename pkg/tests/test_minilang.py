from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from queryforge.cpg import Edge, EdgeKind, NodeKind, Operators, dataflow_reach_oracle
from queryforge.errors import ConfigError, IoError, MiniLangSyntaxError, NoNodeAtLabel
from queryforge.minilang import (
    VulnExample, build_cpg, build_project, builtin_table, parse_dataset, parse_program, slice_example, slice_lines,
)
from queryforge.minilang.ast import Assign, Binary, Call, ExprStmt, Field, Ident, If, Index, Let, Num, Str


def cpg_of(src: str, file: str = "t.mini"):
    return build_cpg(parse_program(src, file))


def calls_named(g, name):
    return [n for n in g.nodes.values() if n.kind is NodeKind.CALL and n.name == name]


# -- parsing ----------------------------------------------------------------


def test_empty_source_is_empty_ast():
    assert parse_program("").statements == ()


def test_let_with_number():
    (s,) = parse_program("let x = 1;").statements
    assert isinstance(s, Let) and s.name.name == "x" and isinstance(s.value, Num)


def test_proto_access_assignment():
    (s,) = parse_program('p = obj["__proto__"];').statements
    assert isinstance(s, Assign) and isinstance(s.target, Ident)
    assert isinstance(s.value, Index)
    assert isinstance(s.value.obj, Ident) and s.value.obj.name == "obj"
    assert isinstance(s.value.index, Str) and s.value.index.value == "__proto__"


def test_statement_and_expression_forms():
    src = (
        "function f(a, b) {\n"
        "  if (a == b) { return a + b; } else { a.k = b; }\n"
        "  while (a) { a[b] = {}; }\n"
        "}\n"
        'f("s", 2);\n'
    )
    tree = parse_program(src)
    (fn,) = tree.functions
    assert fn.name == "f" and [p.name for p in fn.params] == ["a", "b"]
    assert isinstance(fn.body[0], If) and isinstance(fn.body[0].cond, Binary)
    assert isinstance(fn.body[0].orelse[0].target, Field)
    assert isinstance(tree.statements[1], ExprStmt) and isinstance(tree.statements[1].expr, Call)


@pytest.mark.parametrize("src, line", [
    ("let = 1;", 1),
    ("let x = 1", 1),
    ("\n\nexec(;", 3),
    ("1 + 2 = x;", 1),
    ("if (x) { let y = 1;", 1),
])
def test_syntax_errors_carry_position(src, line):
    with pytest.raises(MiniLangSyntaxError) as info:
        parse_program(src)
    assert info.value.line == line
    assert info.value.expected


# -- encoding ----------------------------------------------------------------


def test_let_encodes_as_assignment_call():
    g = cpg_of("let x = 1;")
    (assign,) = calls_named(g, Operators.assignment)
    lhs, rhs = g.argument(assign.id, 1), g.argument(assign.id, 2)
    assert g.nodes[lhs].kind is NodeKind.IDENTIFIER and g.nodes[lhs].name == "x"
    assert g.nodes[rhs].kind is NodeKind.LITERAL and g.nodes[rhs].code == "1"


def test_proto_access_is_index_access_argument():
    g = cpg_of('p = obj["__proto__"];')
    (assign,) = calls_named(g, Operators.assignment)
    rhs = g.nodes[g.argument(assign.id, 2)]
    assert rhs.name == Operators.indexAccess
    assert g.nodes[g.argument(rhs.id, 1)].name == "obj"
    assert g.nodes[g.argument(rhs.id, 2)].code == '"__proto__"'


def test_sanitizer_blocks_flow():
    g = cpg_of("let a=input(); exec(sanitize(a));")
    (src,) = calls_named(g, "input")
    (sink,) = calls_named(g, "exec")
    assert dataflow_reach_oracle(g, [src.id], [g.argument(sink.id, 1)]) == set()


def test_without_sanitizer_flow_reaches_sink():
    g = cpg_of("let a=input(); exec(a);")
    (src,) = calls_named(g, "input")
    (sink,) = calls_named(g, "exec")
    arg = g.argument(sink.id, 1)
    assert dataflow_reach_oracle(g, [src.id], [arg]) == {arg}


def test_interprocedural_flow_through_user_function():
    g = cpg_of("function id(v) { return v; }\nlet a = input();\nexec(id(a));")
    (src,) = calls_named(g, "input")
    (sink,) = calls_named(g, "exec")
    arg = g.argument(sink.id, 1)
    assert dataflow_reach_oracle(g, [src.id], [arg]) == {arg}
    kinds = {e.kind for e in g.edges}
    assert {EdgeKind.CALL_EDGE, EdgeKind.ARG_TO_PARAM, EdgeKind.RETURN_TO_CALL} <= kinds


def test_every_syntax_node_keeps_its_line():
    src = "let a = input();\n\nlet b = a + \"x\";\nexec(b);\n"
    g = cpg_of(src)
    lines = src.splitlines()
    for n in g.nodes.values():
        if n.kind in (NodeKind.IDENTIFIER, NodeKind.LITERAL):
            assert n.code in lines[n.line - 1]


def test_builtin_table_lists_sources_sinks_sanitizers():
    table = builtin_table()
    assert "input" in table["sources"] and "exec" in table["sinks"] and "sanitize" in table["sanitizers"]


def test_empty_project_and_missing_dir(tmp_path):
    with pytest.raises(IoError, match="no source files"):
        build_project(tmp_path)
    with pytest.raises(IoError, match="not a directory"):
        build_project(tmp_path / "missing")


# -- reaching definitions against brute-force path enumeration ----------------

VARS = ("x", "y", "z")


@st.composite
def expressions(draw, depth=0):
    choice = draw(st.integers(0, 4 if depth < 2 else 1))
    if choice == 0:
        return draw(st.sampled_from(VARS))
    if choice == 1:
        return str(draw(st.integers(0, 9)))
    if choice == 2:
        return f"{draw(expressions(depth + 1))} + {draw(expressions(depth + 1))}"
    if choice == 3:
        return f"{draw(st.sampled_from(('f', 'sanitize', 'input')))}({draw(expressions(depth + 1))})"
    return f"{draw(st.sampled_from(VARS))}[{draw(expressions(depth + 1))}]"


@st.composite
def statements(draw, depth=0):
    kind = draw(st.integers(0, 4 if depth < 2 else 3))
    v = draw(st.sampled_from(VARS))
    if kind == 0:
        return [f"let {v} = {draw(expressions())};"]
    if kind == 1:
        return [f"{v} = {draw(expressions())};"]
    if kind == 2:
        return [f"{v}[{draw(expressions(1))}] = {draw(expressions())};"]
    if kind == 3:
        return [f"g({draw(expressions())});"]
    then = [l for s in draw(st.lists(statements(depth + 1), max_size=3)) for l in s]
    out = [f"if ({draw(expressions(1))}) {{", *then]
    if draw(st.booleans()):
        out += ["} else {", *[l for s in draw(st.lists(statements(depth + 1), max_size=3)) for l in s]]
    return out + ["}"]


def _idents(e, out):
    if isinstance(e, Ident):
        out.append((e.name, (e.pos.line, e.pos.column)))
    elif isinstance(e, Binary):
        _idents(e.left, out)
        _idents(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _idents(a, out)
    elif isinstance(e, Index):
        _idents(e.obj, out)
        _idents(e.index, out)
    elif isinstance(e, Field):
        _idents(e.obj, out)
    return out


def _effects(s):
    """(uses, defs) of a statement header; defs are (var, position, strong)."""
    if isinstance(s, (Let, Assign)):
        target = s.name if isinstance(s, Let) else s.target
        uses = _idents(s.value, [])
        if isinstance(target, Ident):
            return uses, [(target.name, (target.pos.line, target.pos.column), True)]
        uses = _idents(target, uses)
        base = target
        while isinstance(base, (Index, Field)):
            base = base.obj
        defs = [(base.name, (base.pos.line, base.pos.column), False)] if isinstance(base, Ident) else []
        return uses, defs
    if isinstance(s, If):
        return _idents(s.cond, []), []
    return _idents(s.expr, []), []


def brute_force_def_use(stmts):
    """Every (def position, use position) pair along every path of a
    loop-free program, enumerated path by path."""
    pairs = set()

    def run(seq, reaching):
        # returns the list of reaching-def maps at the end of every path
        states = [reaching]
        for s in seq:
            nxt = []
            for r in states:
                uses, defs = _effects(s)
                for var, upos in uses:
                    for dpos in r.get(var, ()):
                        pairs.add((dpos, upos))
                r2 = dict(r)
                for var, dpos, strong in defs:
                    r2[var] = frozenset({dpos}) if strong else r2.get(var, frozenset()) | {dpos}
                if isinstance(s, If):
                    nxt += run(s.then, r2)
                    nxt += run(s.orelse, r2) if s.orelse is not None else [r2]
                else:
                    nxt.append(r2)
            states = nxt
        return states

    run(stmts, {})
    return pairs


@given(st.lists(statements(), min_size=1, max_size=8))
def test_reaching_definitions_match_path_enumeration(stmts):
    src = "\n".join(l for s in stmts for l in s) + "\n"
    tree = parse_program(src, "r.mini")
    g = build_cpg(tree)
    expected = brute_force_def_use(tree.statements)
    defs = {d for d, _ in expected} | {
        (var_pos) for s in _all_statements(tree.statements) for _, var_pos, _ in _effects(s)[1]
    }
    uses = {u for s in _all_statements(tree.statements) for _, u in _effects(s)[0]}
    pos = {(n.line, n.column): n.id for n in g.nodes.values() if n.kind is NodeKind.IDENTIFIER}
    back = {v: k for k, v in pos.items()}
    actual = set()
    for e in g.edges:
        if e.kind is not EdgeKind.REACHING_DEF or e.src not in back or e.dst not in back:
            continue
        s, d = back[e.src], back[e.dst]
        if s in defs and d in uses and g.nodes[e.src].name == g.nodes[e.dst].name:
            actual.add((s, d))
    assert actual == expected


def _all_statements(stmts):
    for s in stmts:
        yield s
        if isinstance(s, If):
            yield from _all_statements(s.then)
            if s.orelse:
                yield from _all_statements(s.orelse)


def test_while_loop_definitions_reach_around_the_back_edge():
    g = cpg_of("let x = 0;\nwhile (x) {\n  g(x);\n  x = 1;\n}\n")
    xs = {(n.line, n.column): n.id for n in g.nodes.values() if n.name == "x"}
    rd = {(e.src, e.dst) for e in g.edges if e.kind is EdgeKind.REACHING_DEF}
    assert (xs[4, 2], xs[3, 4]) in rd  # loop-carried
    assert (xs[1, 4], xs[3, 4]) in rd  # from before the loop


# -- slicing and datasets -------------------------------------------------------


def test_taint_chain_slice_has_all_three_lines(graph):
    g = graph("taint_chain")
    ex = VulnExample("t", "cmd-injection", "taint_chain", "main.mini", (3, 3))
    assert [line for _, line in slice_lines(g, ex)] == [1, 2, 3]
    text = slice_example(g, ex)
    assert "input()" in text and "exec(b)" in text


def test_slice_without_incoming_flow_is_the_sink_alone():
    g = cpg_of('let a = 1;\nexec("ls");\n', "s.mini")
    ex = VulnExample("s", "cmd-injection", ".", "s.mini", (2, 2))
    assert slice_lines(g, ex) == [("s.mini", 2)]


def test_slice_includes_enclosing_signature(graph):
    g = graph("cmdi_exec")
    ex = VulnExample("c", "cmd-injection", "cmdi_exec", "app.mini", (2, 2))
    lines = [line for _, line in slice_lines(g, ex)]
    assert 1 in lines and 2 in lines


def test_blank_sink_line_has_no_node():
    g = cpg_of("let a = 1;\n\nexec(a);\n", "b.mini")
    with pytest.raises(NoNodeAtLabel):
        slice_lines(g, VulnExample("b", "x", ".", "b.mini", (2, 2)))


@given(st.lists(statements(), min_size=1, max_size=6), st.integers(0, 2**16))
def test_slice_is_monotone_in_flow_edges(stmts, pick):
    src = "\n".join(l for s in stmts for l in s) + "\nexec(x);\n"
    g = cpg_of(src, "m.mini")
    sink_line = src.count("\n")
    ex = VulnExample("m", "x", ".", "m.mini", (sink_line, sink_line))
    before = set(slice_lines(g, ex))
    assert ("m.mini", sink_line) in before
    ids = sorted(g.nodes)
    extra = Edge(ids[pick % len(ids)], ids[(pick // 7) % len(ids)], EdgeKind.REACHING_DEF)
    g2 = type(g)(g.nodes, g.edges + (extra,), g.source_files)
    assert before <= set(slice_lines(g2, ex))


@pytest.mark.parametrize("data, message", [
    ([], "examples"),
    ({"examples": [{"id": "a"}]}, "lacks field"),
    ({"examples": [{"id": "a", "vuln_type": "t", "project_dir": "p", "sink_file": "f", "sink_lines": [3]}]},
     "sink_lines"),
    ({"examples": [{"id": "a", "vuln_type": "t", "project_dir": "p", "sink_file": "f", "sink_lines": [3, 1]}]},
     "invalid sink_lines"),
])
def test_dataset_schema_violations(data, message):
    with pytest.raises(ConfigError, match=message):
        parse_dataset(data)


def test_shipped_dataset_labels_point_at_code(dataset, graphs):
    for ex in dataset.examples:
        g = graphs[ex.project_dir]
        assert slice_lines(g, ex), ex.id
