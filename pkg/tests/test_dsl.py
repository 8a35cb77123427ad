import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import shared
from ttcrank.costs import TaskSizes
from ttcrank.dsl import (CHANNEL_PRIMS, DEFAULTS, FUSE_OPS, NATIVE_EQUIVALENTS, ROUND_PRIMS, Binding, Fuse,
                         PipelineAst, canonical, compile_source, parse, round_trip, to_source)
from ttcrank.errors import DSLError
from ttcrank.programs import REGISTRY

CROSS_ROUND = NATIVE_EQUIVALENTS["cross_round_rrf"]


def test_minimal_program():
    ast = parse("channel d = dense()\nfuse rrf(d)")
    assert ast == PipelineAst((Binding("channel", "d", "dense"),), Fuse("rrf", ("d",)))


def test_comments_and_blank_lines_ignored():
    src = "# header\n\nchannel d = dense()   # trailing\n   \nfuse rrf(d) # done\n"
    assert parse(src) == parse("channel d = dense()\nfuse rrf(d)")


def test_inline_channel():
    ast = parse("fuse rrf(dense)")
    assert ast.bindings == () and ast.fuse.args == ("dense",)


def _err(src):
    with pytest.raises(DSLError) as info:
        parse(src)
    return info.value


@pytest.mark.parametrize("src,line,col,needle", [
    ("channel d = dense()\nround r = rrf(d, x)\nfuse rrf(r)", 2, 18, "undefined name 'x'"),
    ("round r = rocchio(d)\nchannel d = dense()\nfuse rrf(r)", 1, 19, "undefined name 'd'"),
    ("channel d = dense()\nchannel d = bigram()\nfuse rrf(d)", 2, 9, "duplicate name"),
    ("channel d = magic()\nfuse rrf(d)", 1, 13, "unknown channel primitive"),
    ("channel d = dense()\nround r = magic(d)\nfuse rrf(r)", 2, 11, "unknown round primitive"),
    ("channel d = dense()\n", 2, 1, "missing terminal fuse"),
    ("channel d = dense()\nfuse rrf(d)\nfuse rrf(d)", 3, 1, "after the terminal fuse"),
    ("channel m = maxsim(granularity=word)\nfuse rrf(m)", 1, 20, "invalid value 'word'"),
    ("channel m = maxsim(size=3)\nfuse rrf(m)", 1, 20, "no parameter 'size'"),
    ("channel d = dense()\nfuse max(d)", 2, 6, "unknown fuse operator"),
    ("channel d = dense()\nfuse rrf()", 2, 6, "at least one input"),
    ("channel d = dense()\nround r = rocchio(d, d)\nfuse rrf(r)", 2, 11, "takes 1 input"),
    ("channel d = dense() extra\nfuse rrf(d)", 1, 21, "unexpected 'extra'"),
    ("channel d = dense(\nfuse rrf(d)", 1, 19, "got end of line"),
    ("channel d = dense()\nfuse rrf(d) ;", 2, 13, "unexpected character ';'"),
    ("channel rrf = dense()\nfuse rrf(dense)", 1, 9, "reserved"),
    ("round r = rocchio(expand)\nfuse rrf(r)", 1, 19, "cannot be used inline"),
])
def test_parse_errors_carry_position(src, line, col, needle):
    e = _err(src)
    assert (e.line, e.column) == (line, col), str(e)
    assert needle in str(e)
    assert str(e).startswith(f"line {line}, column {col}: ")


# -- round trips ---------------------------------------------------------------

NAME_POOL = [f"v{i}" for i in range(12)] + ["alpha", "beta_2", "Gamma"]
NORM = ("none", "zcol", "zrow")


def _params(draw, allowed):
    allowed = dict(allowed, norm=NORM)
    keys = draw(st.lists(st.sampled_from(sorted(allowed)), unique=True, max_size=len(allowed)))
    return tuple(sorted((k, draw(st.sampled_from(allowed[k]))) for k in keys))


@st.composite
def asts(draw):
    n = draw(st.integers(1, 7))
    names = draw(st.lists(st.sampled_from(NAME_POOL), min_size=n, max_size=n, unique=True))
    bindings, declared = [], []
    inline = sorted(CHANNEL_PRIMS)
    for name in names:
        if not declared or draw(st.booleans()):
            prim = draw(st.sampled_from(sorted(CHANNEL_PRIMS)))
            bindings.append(Binding("channel", name, prim, (), _params(draw, CHANNEL_PRIMS[prim])))
        else:
            prim = draw(st.sampled_from(sorted(ROUND_PRIMS) + list(FUSE_OPS)))
            allowed, lo, hi = ROUND_PRIMS.get(prim, ({}, 1, None))
            k = draw(st.integers(lo, hi if hi is not None else 4))
            args = tuple(draw(st.sampled_from(declared + inline)) for _ in range(k))
            bindings.append(Binding("round", name, prim, args, _params(draw, allowed)))
        declared.append(name)
    k = draw(st.integers(1, 4))
    fuse = Fuse(draw(st.sampled_from(FUSE_OPS)), tuple(draw(st.sampled_from(declared + inline)) for _ in range(k)))
    return PipelineAst(tuple(bindings), fuse)


def test_three_depths_round_trip():
    shallow = parse("fuse rrf(dense)")
    middle = parse("channel s = maxsim(granularity=pair, norm=zcol)\nround r = rocchio(s)\nfuse zmax(s, r)")
    deep = parse(CROSS_ROUND)
    for ast in (shallow, middle, deep):
        assert parse(round_trip(ast)) == ast


@settings(max_examples=200)
@given(asts())
def test_parse_print_identity(ast):
    text = to_source(ast)
    assert parse(text) == ast
    assert to_source(parse(text)) == text


@settings(max_examples=100)
@given(asts())
def test_canonical_idempotent_and_name_free(ast):
    c = canonical(ast)
    assert canonical(parse(c)) == c
    rename = {b.name: f"x_{b.name}" for b in ast.bindings}
    renamed = PipelineAst(
        tuple(Binding(b.kind, rename[b.name], b.prim, tuple(rename.get(a, a) for a in b.args), b.params)
              for b in ast.bindings),
        Fuse(ast.fuse.op, tuple(rename.get(a, a) for a in ast.fuse.args)))
    assert canonical(renamed) == c


def test_canonical_fills_defaults_and_inlines():
    a = parse("channel m = maxsim()\nfuse rrf(m, dense)")
    b = parse("channel q = maxsim(granularity=sentence, debiased=false, norm=none)\n"
              "channel d = dense()\nfuse rrf(q, d)")
    assert canonical(a) == canonical(b)
    assert canonical(a) != canonical(parse("channel m = maxsim(granularity=pair)\nfuse rrf(m, dense)"))
    assert set(DEFAULTS) <= set(CHANNEL_PRIMS) | set(ROUND_PRIMS)


# -- compilation ---------------------------------------------------------------

@pytest.mark.parametrize("has_adapters", [True, False], ids=["adapters", "no-adapters"])
@pytest.mark.parametrize("pid", list(NATIVE_EQUIVALENTS))
def test_compiled_equals_native(pid, has_adapters):
    ctx = shared.context(has_adapters)
    native = REGISTRY[pid](ctx.fork())
    run = ctx.fork()
    prog = compile_source(NATIVE_EQUIVALENTS[pid], pid)
    compiled = prog(run)
    assert np.array_equal(compiled, native)
    snap = run.meter.snapshot()
    measured = {"query-time": snap["query-time"], "index-time": snap["index-time"]}
    assert measured == prog.predict(TaskSizes.from_texts(ctx.texts))


def test_static_cost_examples():
    ctx = shared.context()
    sizes = TaskSizes.from_texts(ctx.texts)
    assert compile_source("fuse rrf(dense)").predicted_cost([sizes]) == 1.0
    bidir = compile_source(NATIVE_EQUIVALENTS["bidir_zscore"])
    assert bidir.predict(sizes) == {"query-time": 0, "index-time": len(shared.DOCS)}


def test_rrf_of_identical_channels_keeps_order():
    ctx = shared.context()
    one = compile_source("channel s = maxsim()\nfuse rrf(s)")(ctx.fork())
    two = compile_source("channel s = maxsim()\nfuse rrf(s, s, s)")(ctx.fork())
    for a, b in zip(one, two):
        assert np.array_equal(np.argsort(-a, kind="stable"), np.argsort(-b, kind="stable"))


def test_every_primitive_compiles_and_runs():
    ctx = shared.context()
    for prim in CHANNEL_PRIMS:
        for op in ("rrf", "zmax", "zmean", "sum"):
            out = compile_source(f"channel c = {prim}()\nround r = rocchio(c)\nfuse {op}(c, r)")(ctx.fork())
            assert out.shape == ctx.S.shape and np.all(np.isfinite(out))
    for prim in ROUND_PRIMS:
        args = "d, s" if prim == "stability" else "d"
        src = f"channel d = dense()\nchannel s = maxsim()\nround r = {prim}({args})\nfuse rrf(r)"
        out = compile_source(src)(ctx.fork())
        assert out.shape == ctx.S.shape and np.all(np.isfinite(out))


def test_single_doc_returns_baseline():
    from ttcrank.programs import ProgramContext
    ctx = ProgramContext.build(shared.QUERIES, shared.DOCS[:1], shared.encoder())
    assert np.array_equal(compile_source(CROSS_ROUND)(ctx), ctx.S)
