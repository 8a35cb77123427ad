"""Command-line entry point: ``ttcrank <subcommand>``.

Exit codes: 0 success, 1 internal error, 2 input error, 3 every search
generation lost to proposer failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shlex
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import programs as registry
from .config import RunConfig, apply_overrides, load_config
from .dsl import compile_source
from .encoder import Encoder
from .errors import DSLError, ProposerError, TaskLoadError
from .fixtures import FixtureSpec, generate, load_spec
from .fusion import ranks_from_scores
from .harness import Evaluator, read_summary, summary_row, write_report, write_summary
from .heads import KINDS, TrainConfig, head_program, read_checkpoint, save_head, train_head, training_pairs
from .metrics import FrontierPoint, pareto_frontier
from .programs import DEFAULT_CONSTANTS
from .search import (CommandProposer, HttpProposer, Ledger, ReplayProposer, SearchConfig, SearchLoop,
                     export_trajectory, verify_ledger)
from .tasks import load_task_dir, write_task

log = logging.getLogger("ttcrank")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_PROPOSER = 0, 1, 2, 3


class InputError(Exception):
    """Bad user input: missing files, unknown program ids, invalid flags."""


# -- helpers -------------------------------------------------------------------

def _config(args) -> RunConfig:
    try:
        cfg = load_config(getattr(args, "config", None))
        flags = dict(tasks=getattr(args, "tasks", None), programs=getattr(args, "programs", None),
                     output=getattr(args, "out", None), seed=getattr(args, "seed", None),
                     gain=getattr(args, "gain", None), threads=getattr(args, "threads", None),
                     resamples=getattr(args, "resamples", None),
                     provider_backend=getattr(args, "backend", None),
                     provider_native_dim=getattr(args, "dim", None),
                     provider_endpoint=getattr(args, "endpoint", None),
                     provider_cache_path=getattr(args, "cache", None),
                     provider_latency_per_text=getattr(args, "latency", None),
                     search_generations=getattr(args, "generations", None),
                     search_proposer=getattr(args, "proposer", None),
                     search_replay_dir=getattr(args, "replay_dir", None),
                     search_command=getattr(args, "command", None),
                     search_url=getattr(args, "url", None))
        if getattr(args, "no_adapters", False):
            flags["provider_has_adapters"] = False
        return apply_overrides(cfg, **flags)
    except (OSError, ValueError) as exc:
        raise InputError(f"config: {exc}") from exc


def _load_tasks(cfg: RunConfig):
    if not cfg.tasks:
        raise InputError("no tasks given (use --tasks or [run] tasks)")
    return [load_task_dir(p) for p in cfg.tasks]


def _select_programs(spec: str) -> list:
    out = []
    for item in (p.strip() for p in spec.split(",") if p.strip()):
        if item == "frontier":
            out.extend(registry.FRONTIER.values())
        elif item == "all":
            out.extend(registry.REGISTRY.values())
        elif item.endswith(".ttc"):
            path = Path(item)
            if not path.exists():
                raise InputError(f"program file not found: {item}")
            out.append(compile_source(path.read_text(encoding="utf-8"), path.stem))
        elif item in registry.REGISTRY:
            out.append(registry.REGISTRY[item])
        else:
            raise InputError(f"unknown program {item!r}; see `ttcrank programs list`")
    seen, unique = set(), []
    for p in out:
        if p.id not in seen:
            seen.add(p.id)
            unique.append(p)
    return unique


def _write_config(cfg: RunConfig, out: Path, command: str, extra: Optional[dict] = None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": cfg.seed,
           "constants": DEFAULT_CONSTANTS.as_dict(), "version": __version__, **(extra or {})}
    doc["config"].pop("output")
    doc["config"].pop("threads")
    path = out / "config.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_timing(out: Path, timing: dict) -> Path:
    path = out / "timing.json"
    path.write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class _TimedBackend:
    """Backend wrapper accumulating wall-clock time spent encoding."""

    def __init__(self, inner):
        self.inner = inner
        self.seconds = 0.0

    def embed(self, *args, **kwargs):
        t = time.perf_counter()
        try:
            return self.inner.embed(*args, **kwargs)
        finally:
            self.seconds += time.perf_counter() - t


# -- subcommands ---------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg = _config(args)
    tasks = _load_tasks(cfg)
    progs = _select_programs(cfg.programs)
    heads = [read_checkpoint(p)[0] for p in (args.head or [])]
    progs.extend(head_program(h) for h in heads)
    out = Path(cfg.output)
    t0 = time.perf_counter()
    ev = Evaluator(tasks, Encoder(cfg.provider), DEFAULT_CONSTANTS, cfg.k, cfg.gain, cfg.threads)
    timing = {"setup_s": time.perf_counter() - t0, "programs": {}}
    evals = []
    for p in progs:
        t = time.perf_counter()
        evals.append(ev.evaluate(p, p.id))
        timing["programs"][p.id] = time.perf_counter() - t
    h = cfg.hash()
    write_report(evals, out / "report.jsonl", h, cfg.seed)
    write_summary([summary_row(e, h, cfg.seed, cfg.resamples) for e in evals], out / "summary.csv")
    _write_config(cfg, out, "eval", {"heads": list(args.head or [])})
    _write_timing(out, timing)
    for e in evals:
        w, ti, lo = e.wtl
        print(f"{e.program_id}\tmean_delta={e.mean_delta:+.4f}\tW/T/L={w}/{ti}/{lo}\tc={e.cost():.3f}")
    return EXIT_OK


def cmd_run(args) -> int:
    """Write a TREC-style run file for one program on one task."""
    cfg = _config(args)
    task = load_task_dir(args.task)
    progs = _select_programs(args.program)
    if len(progs) != 1:
        raise InputError("run takes exactly one program")
    prog = progs[0]
    ev = Evaluator([task], Encoder(cfg.provider), DEFAULT_CONSTANTS, cfg.k, cfg.gain)
    S = np.asarray(prog(ev.contexts[task.task_id].fork()), dtype=np.float64)
    tag = f"{prog.id}.{cfg.hash()}.s{cfg.seed}"
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc_ids = task.doc_ids
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for i, qid in enumerate(task.query_ids):
            for rank, j in enumerate(ranks_from_scores(S[i]).order[: args.depth], 1):
                fh.write(f"{qid}\tQ0\t{doc_ids[j]}\t{rank}\t{S[i, j]:.10f}\t{tag}\n")
    print(out)
    return EXIT_OK


def _proposer(cfg: RunConfig):
    s = cfg.search
    if s.proposer == "replay":
        if not s.replay_dir or not Path(s.replay_dir).is_dir():
            raise InputError("replay proposer needs an existing --replay-dir")
        return ReplayProposer(s.replay_dir)
    if s.proposer == "command":
        if not s.command:
            raise InputError("command proposer needs --command")
        return CommandProposer(shlex.split(s.command), s.timeout)
    if not s.url:
        raise InputError("http proposer needs --url")
    return HttpProposer(s.url, s.timeout)


def cmd_search(args) -> int:
    cfg = _config(args)
    tasks = _load_tasks(cfg)
    proposer = _proposer(cfg)
    out = Path(cfg.output)
    ledger_path = out / "ledger.jsonl"
    if ledger_path.exists():
        raise InputError(f"{ledger_path} exists; choose a fresh --out directory")
    ev = Evaluator(tasks, Encoder(cfg.provider), DEFAULT_CONSTANTS, cfg.k, cfg.gain, cfg.threads)
    ledger = Ledger(ledger_path)
    scfg = SearchConfig(cfg.search.generations, cfg.seed, DEFAULT_CONSTANTS.digest(), cfg.hash())
    t = time.perf_counter()
    state = SearchLoop(ev, proposer, ledger, scfg).run()
    export_trajectory(ledger.records, [tk.task_id for tk in tasks], out / "trajectory.csv")
    _write_config(cfg, out, "search")
    _write_timing(out, {"search_s": time.perf_counter() - t})
    print(f"{len(ledger.records)} generations; frontier: {' '.join(state.frontier)}")
    if state.failures == cfg.search.generations:
        print("every generation failed at the proposer", file=sys.stderr)
        return EXIT_PROPOSER
    return EXIT_OK


def cmd_frontier(args) -> int:
    try:
        rows = read_summary(args.summary)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read summary {args.summary}: {exc}") from exc
    key = "c_amortized" if args.amortized else "c_logical"
    pts = [FrontierPoint(r["program"], r[key], r["mean_delta"]) for r in rows]
    front = pareto_frontier(pts)
    for p in front:
        print(f"{p.label}\t{p.cost:g}\t{p.delta:+.6f}")
    if args.out:
        meta = sorted({(r["config_hash"], r["seed"]) for r in rows})
        doc = {"cost": key, "frontier": [{"program": p.label, "cost": p.cost, "mean_delta": p.delta}
                                         for p in front],
               "sources": [{"config_hash": h, "seed": s} for h, s in meta]}
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_train_head(args) -> int:
    cfg = _config(args)
    tasks = _load_tasks(cfg)
    try:
        tc = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         temperature=args.temperature, seed=cfg.seed, holdout_fraction=args.holdout)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    ev = Evaluator(tasks, Encoder(cfg.provider), DEFAULT_CONSTANTS, cfg.k, cfg.gain)
    Q, D = [], []
    for task in tasks:
        ctx = ev.contexts[task.task_id]
        q, d = training_pairs(task, ctx.Q, ctx.D)
        Q.append(q)
        D.append(d)
    t = time.perf_counter()
    res = train_head((np.vstack(Q), np.vstack(D)), args.kind, tc)
    seconds = time.perf_counter() - t
    meta = {"config_hash": cfg.hash(), "seed": cfg.seed, "train": dataclasses.asdict(tc),
            "best_epoch": res.best_epoch, "losses": [round(x, 10) for x in res.losses],
            "tasks": [tk.task_id for tk in tasks]}
    path = save_head(res.head, args.out, meta)
    _write_timing(Path(args.out).parent, {"train_s": seconds})
    print(f"{path}\t{args.kind}\tbest_epoch={res.best_epoch}\tparams={res.head.n_params}")
    return EXIT_OK


def cmd_bench(args) -> int:
    """Wall-clock split between encoder calls and score algebra."""
    cfg = _config(args)
    tasks = _load_tasks(cfg)
    progs = _select_programs(cfg.programs)
    base = Encoder(cfg.provider)
    timed = _TimedBackend(base.backend)
    enc = Encoder(cfg.provider, _backend=timed, _cache=base.cache)
    t = time.perf_counter()
    ev = Evaluator(tasks, enc, DEFAULT_CONSTANTS, cfg.k, cfg.gain)
    rows = {"baseline": {"encode_s": timed.seconds, "total_s": time.perf_counter() - t}}
    for p in progs:
        before, t = timed.seconds, time.perf_counter()
        ev.evaluate(p, p.id)
        total = time.perf_counter() - t
        enc_s = timed.seconds - before
        rows[p.id] = {"encode_s": enc_s, "algebra_s": total - enc_s, "total_s": total}
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(cfg, out, "bench")
    _write_timing(out, {"latency_per_text": cfg.provider.latency_per_text, "programs": rows})
    print("program\tencode_s\talgebra_s")
    for pid, r in rows.items():
        print(f"{pid}\t{r['encode_s']:.4f}\t{r.get('algebra_s', 0.0):.4f}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    try:
        spec = load_spec(args.spec) if args.spec else FixtureSpec()
        changes = {k: v for k, v in (("seed", args.seed), ("variant", args.variant),
                                     ("family", args.family)) if v is not None}
        spec = FixtureSpec.from_dict({**spec.to_dict(), **changes})
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"fixture spec: {exc}") from exc
    task = generate(spec)
    out = write_task(task, args.out)
    (Path(args.out) / "fixture.json").write_text(
        json.dumps({"spec": spec.to_dict(), "seed": spec.seed, "task_id": task.task_id},
                   indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(out)
    return EXIT_OK


def cmd_programs(args) -> int:
    print("id\tnominal_c\tfamily\tadapters")
    for line in registry.listing():
        print(line)
    return EXIT_OK


def cmd_ledger(args) -> int:
    ok, msg = verify_ledger(args.path)
    print(("OK: " if ok else "FAIL: ") + msg)
    return EXIT_OK if ok else EXIT_INPUT


# -- parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, programs: bool = True, out: bool = True) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--tasks", nargs="+", help="task directories (corpus.jsonl, queries.jsonl, qrels.tsv)")
    if programs:
        p.add_argument("--programs", help='"frontier", "all", ids and/or .ttc files, comma-separated')
    if out:
        p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="run seed (env TTC_SEED)")
    p.add_argument("--gain", choices=("exponential", "linear"))
    p.add_argument("--threads", type=int)
    p.add_argument("--resamples", type=int, help="bootstrap resamples")
    p.add_argument("--backend", choices=("synthetic", "file-cache", "http"))
    p.add_argument("--dim", type=int, help="encoder dimension")
    p.add_argument("--endpoint", help="HTTP encoder endpoint (env TTC_ENCODER_ENDPOINT)")
    p.add_argument("--cache", help="file-cache directory")
    p.add_argument("--no-adapters", action="store_true", help="encoder without task adapters")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ttcrank", description="Test-time reranking programs over frozen embeddings.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate programs against the cosine baseline")
    _common(p)
    p.add_argument("--head", action="append", help="head checkpoint to evaluate as an extra program")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="write a TREC run file for one program on one task")
    _common(p, programs=False, out=False)
    p.add_argument("--task", required=True)
    p.add_argument("--program", required=True, help="program id or .ttc file")
    p.add_argument("--out", required=True, help="run file path")
    p.add_argument("--depth", type=int, default=100)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("search", help="run the proposal/evaluation loop")
    _common(p, programs=False)
    p.add_argument("--generations", type=int)
    p.add_argument("--proposer", choices=("replay", "command", "http"))
    p.add_argument("--replay-dir")
    p.add_argument("--command", help="proposer command line (JSON on stdin/stdout)")
    p.add_argument("--url", help="proposer base URL; POSTs to {url}/propose")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("frontier", help="Pareto set of a summary CSV")
    p.add_argument("summary")
    p.add_argument("--amortized", action="store_true", help="use the amortized cost ratio")
    p.add_argument("--out", help="write the frontier as JSON")
    p.set_defaults(fn=cmd_frontier)

    p = sub.add_parser("train-head", help="train a head and write a checkpoint")
    _common(p, programs=False, out=False)
    p.add_argument("--kind", choices=KINDS, default="linear")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--temperature", type=float, default=0.05)
    p.add_argument("--holdout", type=float, default=0.2)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train_head)

    p = sub.add_parser("bench", help="time encoder calls vs score algebra")
    _common(p)
    p.add_argument("--latency", type=float, help="seconds slept per encoded text (synthetic backend)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("fixtures", help="synthetic benchmarks")
    fsub = p.add_subparsers(dest="action", required=True)
    g = fsub.add_parser("generate", help="write a synthetic task directory")
    g.add_argument("--spec", help="JSON fixture spec")
    g.add_argument("--seed", type=int)
    g.add_argument("--variant", choices=("topical", "needle", "mismatch"))
    g.add_argument("--family")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_fixtures)

    p = sub.add_parser("programs", help="program registry")
    psub = p.add_subparsers(dest="action", required=True)
    psub.add_parser("list").set_defaults(fn=cmd_programs)

    p = sub.add_parser("ledger", help="search ledger tools")
    lsub = p.add_subparsers(dest="action", required=True)
    v = lsub.add_parser("verify", help="check the hash chain")
    v.add_argument("path")
    v.set_defaults(fn=cmd_ledger)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (InputError, TaskLoadError, DSLError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProposerError as exc:
        print(f"proposer error: {exc}", file=sys.stderr)
        return EXIT_PROPOSER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
