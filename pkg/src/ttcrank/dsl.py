"""A line-oriented pipeline language for fusion programs.

::

    # comments run to end of line
    channel d  = dense()
    channel s  = maxsim(granularity=sentence)
    channel i  = idf_overlap()
    round   r1 = rrf(d, s, i)
    round   r2 = rocchio(r1)
    fuse rrf(r1, r2)

``channel`` lines bind a primitive view of the shortlist, ``round`` lines
bind an operation over earlier names, and the single ``fuse`` line
produces the program output. A bare primitive name with no parameters
(``fuse rrf(dense)``) is an inline channel. Any channel or round may
take ``norm=none|zcol|zrow``. A fuse over one input returns that input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .costs import TaskSizes, predict_phases, predict_ratio
from .embedding import zscore_columns, zscore_rows
from .encoder import EXPANSION_ADAPTERS, Adapter
from .errors import DSLError
from .fusion import ranks_from_scores
from .programs import blocks as B
from .programs.context import Channel, ProgramContext, fuse_rrf

ADAPTER_NAMES = tuple(a.value for a in EXPANSION_ADAPTERS)
GRANULARITY = ("sentence", "pair", "paragraph")
NORMS = ("none", "zcol", "zrow")
BOOL = ("true", "false")

CHANNEL_PRIMS = {
    "dense": {},
    "maxsim": {"granularity": GRANULARITY, "debiased": BOOL},
    "topmean": {"granularity": GRANULARITY, "debiased": BOOL},
    "idf_overlap": {},
    "bigram": {},
    "coverage": {},
    "rare_term": {},
    "bidir": {"side": ("docs", "queries"), "adapter": ADAPTER_NAMES},
}
# name -> (allowed params, min args, max args)
ROUND_PRIMS = {
    "rocchio": ({}, 1, 1),
    "residual": ({}, 1, 1),
    "expand": ({"anchor": ("top", "bottom"), "adapter": ADAPTER_NAMES}, 1, 1),
    "fisher": ({}, 1, 1),
    "stability": ({}, 2, None),
}
FUSE_OPS = ("rrf", "zmax", "zmean", "sum")
PRIMS = set(CHANNEL_PRIMS) | set(ROUND_PRIMS)
DEFAULTS = {
    "maxsim": {"granularity": "sentence", "debiased": "false"},
    "topmean": {"granularity": "sentence", "debiased": "false"},
    "bidir": {"side": "docs", "adapter": Adapter.QUERY.value},
    "expand": {"anchor": "top", "adapter": Adapter.QUERY.value},
}

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_VALUE = r"[A-Za-z0-9_.\-]+"
_TOKEN_RE = re.compile(rf"\s*(?:(?P<word>{_VALUE})|(?P<punct>[=(),]))")
_NAME_RE = re.compile(rf"{_NAME}\Z")


# -- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class Binding:
    kind: str  # "channel" | "round"
    name: str
    prim: str
    args: tuple[str, ...] = ()
    params: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Fuse:
    op: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class PipelineAst:
    bindings: tuple[Binding, ...]
    fuse: Fuse

    def names(self) -> list[str]:
        return [b.name for b in self.bindings]


# -- parsing -------------------------------------------------------------------

class _Line:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if not m or m.end() == pos:
                col = pos + len(text[pos:]) - len(text[pos:].lstrip()) + 1
                raise DSLError(f"unexpected character {text[col - 1]!r}", lineno, col)
            group = m.lastgroup
            col = m.start(group) + 1
            word = m.group(group)
            kind = "punct" if group == "punct" else ("name" if _NAME_RE.match(word) else "value")
            self.toks.append((kind, word, col))
            pos = m.end()
        self.i = 0

    def err(self, msg: str, col: Optional[int] = None) -> DSLError:
        if col is None:
            col = self.toks[self.i][2] if self.i < len(self.toks) else len(self.text.rstrip()) + 1
        return DSLError(msg, self.lineno, col)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, kind: str | None = None, value: str | None = None, what: str = ""):
        tok = self.peek()
        if tok is None:
            raise self.err(f"expected {what or value or kind}, got end of line")
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            raise self.err(f"expected {what or value or kind}, got {tok[1]!r}")
        self.i += 1
        return tok

    def done(self):
        if self.peek() is not None:
            raise self.err(f"unexpected {self.peek()[1]!r}")


def _call(line: _Line) -> tuple[list[tuple[str, int]], list[tuple[str, str, int]]]:
    """Parse ``( item, ... )`` where items are names or key=value pairs."""
    line.take("punct", "(")
    args, params = [], []
    if line.peek() and line.peek()[1] == ")":
        line.take("punct", ")")
        return args, params
    while True:
        kind, val, col = line.take(what="argument")
        if kind not in ("name", "value"):
            raise line.err(f"expected argument, got {val!r}", col)
        nxt = line.peek()
        if nxt and nxt[1] == "=":
            line.take("punct", "=")
            vkind, vval, vcol = line.take(what="parameter value")
            if vkind == "punct":
                raise line.err(f"expected parameter value, got {vval!r}", vcol)
            params.append((val, vval, col))
        else:
            if kind != "name":
                raise line.err(f"expected a name, got {val!r}", col)
            if params:
                raise line.err("positional argument after parameters", col)
            args.append((val, col))
        sep = line.take("punct", what="',' or ')'")
        if sep[1] == ")":
            return args, params
        if sep[1] != ",":
            raise line.err(f"expected ',' or ')', got {sep[1]!r}", sep[2])


def _check_params(line, prim, params, allowed):
    allowed = dict(allowed, norm=NORMS)
    seen = {}
    for key, val, col in params:
        if key not in allowed:
            raise line.err(f"{prim} takes no parameter {key!r}", col)
        if key in seen:
            raise line.err(f"duplicate parameter {key!r}", col)
        if val not in allowed[key]:
            raise line.err(f"invalid value {val!r} for {key}; expected one of {', '.join(allowed[key])}", col)
        seen[key] = val
    return tuple(sorted(seen.items()))


def parse(source: str) -> PipelineAst:
    bindings: list[Binding] = []
    declared: dict[str, int] = {}
    fuse: Optional[Fuse] = None

    def resolve(line, name, col):
        if name in declared:
            return name
        if name in CHANNEL_PRIMS:
            return name  # inline zero-parameter channel
        if name in PRIMS or name in FUSE_OPS:
            raise line.err(f"{name!r} needs arguments and cannot be used inline", col)
        raise line.err(f"undefined name {name!r}", col)

    for lineno, raw in enumerate(source.splitlines(), 1):
        text = raw.split("#", 1)[0]
        if not text.strip():
            continue
        line = _Line(text, lineno)
        kw = line.take("name", what="'channel', 'round' or 'fuse'")
        if fuse is not None:
            raise line.err("statements after the terminal fuse", kw[2])
        if kw[1] in ("channel", "round"):
            _, name, ncol = line.take("name", what="a name")
            if name in declared:
                raise line.err(f"duplicate name {name!r}", ncol)
            if name in PRIMS or name in FUSE_OPS or name in ("channel", "round", "fuse"):
                raise line.err(f"{name!r} is reserved", ncol)
            line.take("punct", "=")
            _, prim, pcol = line.take("name", what="a primitive")
            args, params = _call(line)
            line.done()
            if kw[1] == "channel":
                if prim not in CHANNEL_PRIMS:
                    raise line.err(f"unknown channel primitive {prim!r}", pcol)
                if args:
                    raise line.err(f"channel {prim} takes no positional arguments", args[0][1])
                b = Binding("channel", name, prim, (), _check_params(line, prim, params, CHANNEL_PRIMS[prim]))
            else:
                if prim in ROUND_PRIMS:
                    allowed, lo, hi = ROUND_PRIMS[prim]
                elif prim in FUSE_OPS:
                    allowed, lo, hi = {}, 1, None
                else:
                    raise line.err(f"unknown round primitive {prim!r}", pcol)
                if len(args) < lo or (hi is not None and len(args) > hi):
                    want = f"{lo}" if hi == lo else f"at least {lo}"
                    raise line.err(f"{prim} takes {want} input(s), got {len(args)}", pcol)
                refs = tuple(resolve(line, a, c) for a, c in args)
                b = Binding("round", name, prim, refs, _check_params(line, prim, params, allowed))
            bindings.append(b)
            declared[name] = lineno
        elif kw[1] == "fuse":
            _, op, ocol = line.take("name", what="a fuse operator")
            if op not in FUSE_OPS:
                raise line.err(f"unknown fuse operator {op!r}", ocol)
            args, params = _call(line)
            line.done()
            if params:
                raise line.err("fuse takes no parameters", params[0][2])
            if not args:
                raise line.err("fuse needs at least one input", ocol)
            fuse = Fuse(op, tuple(resolve(line, a, c) for a, c in args))
        else:
            raise line.err(f"expected 'channel', 'round' or 'fuse', got {kw[1]!r}", kw[2])
    if fuse is None:
        raise DSLError("missing terminal fuse", len(source.splitlines()) + 1, 1)
    return PipelineAst(tuple(bindings), fuse)


# -- printing ------------------------------------------------------------------

def _fmt_call(prim, args, params):
    items = list(args) + [f"{k}={v}" for k, v in params]
    return f"{prim}({', '.join(items)})"


def to_source(ast: PipelineAst) -> str:
    lines = [f"{b.kind} {b.name} = {_fmt_call(b.prim, b.args, b.params)}" for b in ast.bindings]
    lines.append(f"fuse {_fmt_call(ast.fuse.op, ast.fuse.args, ())}")
    return "\n".join(lines) + "\n"


round_trip = to_source


def explicit(ast: PipelineAst) -> PipelineAst:
    """Replace inline primitive references by channel bindings declared on first use."""
    declared = set(ast.names())
    out: list[Binding] = []

    def bind(names):
        for a in names:
            if a not in declared:
                declared.add(a)
                out.append(Binding("channel", a, a))

    for b in ast.bindings:
        bind(b.args)
        out.append(b)
    bind(ast.fuse.args)
    return PipelineAst(tuple(out), ast.fuse)


def canonical(ast: PipelineAst) -> str:
    """Source with positional names (n1, n2, ...), inline channels made explicit,
    default params filled in and ``norm=none`` dropped; equal for structurally
    identical programs."""
    ast = explicit(ast)
    rename = {}
    out = []
    for i, b in enumerate(ast.bindings, 1):
        rename[b.name] = f"n{i}"
        params = dict(DEFAULTS.get(b.prim, {}))
        params.update(b.params)
        if params.get("norm") == "none":
            del params["norm"]
        out.append(Binding(b.kind, rename[b.name], b.prim, tuple(rename.get(a, a) for a in b.args),
                           tuple(sorted(params.items()))))
    fuse = Fuse(ast.fuse.op, tuple(rename.get(a, a) for a in ast.fuse.args))
    return to_source(PipelineAst(tuple(out), fuse))


# -- compilation ---------------------------------------------------------------

def _param(b: Binding, key: str) -> str:
    return dict(b.params).get(key, DEFAULTS.get(b.prim, {}).get(key, "none"))


def _norm(ch: Channel, how: str, eps: float) -> Channel:
    if how == "zcol":
        return Channel(ch.label, zscore_columns(ch.scores, eps), ch.active)
    if how == "zrow":
        return Channel(ch.label, zscore_rows(ch.scores, eps), ch.active)
    return ch


def _anchors(src: np.ndarray, which: str) -> list[int]:
    pos = 0 if which == "top" else -1
    return [int(ranks_from_scores(row).order[pos]) for row in src]


def _channel(ctx: ProgramContext, b: Binding) -> Channel:
    p = b.prim
    if p == "dense":
        return B.dense(ctx)
    if p in ("maxsim", "topmean"):
        fn = B.maxsim if p == "maxsim" else B.topmean
        return fn(ctx, _param(b, "granularity"), _param(b, "debiased") == "true")
    if p == "idf_overlap":
        return B.idf_overlap_channel(ctx)
    if p == "bigram":
        return B.bigram_channel(ctx)
    if p == "coverage":
        return B.coverage_channel(ctx)
    if p == "rare_term":
        return B.rare_term_channel(ctx)
    if p == "bidir":
        fn = B.bidir_docs if _param(b, "side") == "docs" else B.bidir_queries
        return fn(ctx, _param(b, "adapter"))
    raise AssertionError(p)


def fuse_op(op: str, chans: list[Channel], ctx: ProgramContext) -> Channel:
    if len(chans) == 1:
        return chans[0]
    eps = ctx.constants.zscore_eps
    if op == "rrf":
        return Channel("rrf", fuse_rrf(chans, ctx.constants.rrf_k))
    if op == "sum":
        out = chans[0].scores
        for c in chans[1:]:
            out = out + c.scores
        return Channel("sum", out)
    zs = [zscore_rows(c.scores, eps) for c in chans]
    if op == "zmax":
        out = zs[0]
        for z in zs[1:]:
            out = np.maximum(out, z)
        return Channel("zmax", out)
    if op == "zmean":
        out = np.zeros_like(zs[0])
        for z in zs:
            out = out + z
        return Channel("zmean", out / len(zs))
    raise AssertionError(op)


def _round(ctx: ProgramContext, b: Binding, inputs: list[Channel]) -> Channel:
    p = b.prim
    if p in FUSE_OPS:
        return fuse_op(p, inputs, ctx)
    src = inputs[0].scores
    if p == "rocchio":
        return B.rocchio(ctx, src)
    if p == "residual":
        return B.residual(ctx, src)
    if p == "expand":
        return B.expand(ctx, _anchors(src, _param(b, "anchor")), _param(b, "adapter"))[0]
    if p == "fisher":
        return B.fisher(ctx, src)
    if p == "stability":
        return B.stability(inputs)
    raise AssertionError(p)


@dataclass
class CompiledProgram:
    ast: PipelineAst
    id: str = "dsl"
    source: str = field(default="")

    def __post_init__(self):
        if not self.source:
            self.source = to_source(self.ast)

    def __call__(self, ctx: ProgramContext) -> np.ndarray:
        if ctx.n_docs <= 1:
            return ctx.S.copy()
        eps = ctx.constants.zscore_eps
        env: dict[str, Channel] = {}

        def get(name):
            if name not in env:
                env[name] = _channel(ctx, Binding("channel", name, name))
            return env[name]

        for b in self.ast.bindings:
            if b.kind == "channel":
                ch = _channel(ctx, b)
            else:
                ch = _round(ctx, b, [get(a) for a in b.args])
            env[b.name] = _norm(ch, _param(b, "norm"), eps)
        out = fuse_op(self.ast.fuse.op, [get(a) for a in self.ast.fuse.args], ctx).scores
        return np.array(out, dtype=np.float64, copy=True)

    def resources(self, has_adapters: bool = True) -> frozenset:
        """Distinct encoded resources; each is charged once per task."""
        res = set()
        for b in explicit(self.ast).bindings:
            if b.prim in ("maxsim", "topmean"):
                res.add(("chunks", _param(b, "granularity")))
            elif b.prim == "bidir":
                if _param(b, "side") == "docs":
                    res.add(("docs", _param(b, "adapter"), None))
                else:
                    res.add(("queries", _param(b, "adapter")))
            elif b.prim == "expand":
                res.add(("chunks", "sentence"))
                res.add(("expand", _param(b, "adapter"), (b.args[0], _param(b, "anchor"))))
        return frozenset(res)

    def predict(self, sizes: TaskSizes) -> dict[str, int]:
        return predict_phases(self.resources(), sizes)

    def predicted_cost(self, sizes: list[TaskSizes]) -> float:
        return predict_ratio(self.resources(), sizes)


def compile_ast(ast: PipelineAst, program_id: str = "dsl") -> CompiledProgram:
    return CompiledProgram(ast, program_id)


def compile_source(source: str, program_id: str = "dsl") -> CompiledProgram:
    return CompiledProgram(parse(source), program_id, source)


# DSL forms of the frontier programs the primitive set can express
NATIVE_EQUIVALENTS = {
    "p0": "fuse rrf(dense)\n",
    "bidir_zscore": (
        "channel s = dense(norm=zcol)\n"
        "channel r = bidir(side=docs, adapter=retrieval.query, norm=zcol)\n"
        "fuse sum(s, r)\n"
    ),
    "sent_maxsim": "channel m = maxsim(granularity=sentence)\nfuse rrf(m)\n",
    "adapt_granularity": (
        "channel p = maxsim(granularity=paragraph)\n"
        "channel s = maxsim(granularity=sentence)\n"
        "fuse zmax(p, s)\n"
    ),
    "lex_hybrid_rrf": (
        "channel d = dense()\n"
        "channel s = maxsim(granularity=sentence)\n"
        "channel i = idf_overlap()\n"
        "channel b = bigram()\n"
        "fuse rrf(d, s, i, b)\n"
    ),
    "cross_round_rrf": (
        "channel d = dense()\n"
        "channel s = maxsim(granularity=sentence)\n"
        "channel i = idf_overlap()\n"
        "channel b = bigram()\n"
        "channel c = coverage()\n"
        "channel r = rare_term()\n"
        "round r1 = rrf(d, s, i, b, c, r)\n"
        "round r2 = rocchio(r1)\n"
        "round r3 = residual(r1)\n"
        "fuse rrf(r1, r2, r3)\n"
    ),
}
