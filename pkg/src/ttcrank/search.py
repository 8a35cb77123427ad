"""The generation loop: propose, validate, evaluate once, admit, record.

Ledger rows are JSON objects, one per line, each carrying the SHA-256 of
its predecessor (``prev_hash``) and of itself (``hash``), so any edit to
an earlier row breaks the chain.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx

from .dsl import canonical, compile_ast, parse
from .errors import DSLError, ProposerError
from .harness import Evaluator
from .metrics import frontier_admission

log = logging.getLogger(__name__)

GENESIS_HASH = "0" * 64
HISTORY_SOURCE_CHARS = 200


@dataclass(frozen=True)
class Proposal:
    source: str
    novelty: str = ""
    hypothesis: str = ""
    parent: Optional[str] = None


def _proposal_from(doc) -> Proposal:
    if not isinstance(doc, dict) or not isinstance(doc.get("source"), str):
        raise ProposerError("proposer output must be a JSON object with a string 'source'")
    return Proposal(doc["source"], str(doc.get("novelty", "")), str(doc.get("hypothesis", "")),
                    doc.get("parent"))


class Proposer(Protocol):
    def propose(self, payload: dict) -> Proposal: ...


class ReplayProposer:
    """Reads proposals from a directory in file-name order.

    ``*.json`` files hold ``{source, novelty, hypothesis}``; ``*.ttc`` files
    hold bare DSL source.
    """

    def __init__(self, directory):
        self.files = sorted(p for p in Path(directory).iterdir() if p.suffix in (".json", ".ttc"))
        self.i = 0

    def __len__(self) -> int:
        return len(self.files)

    def propose(self, payload: dict) -> Proposal:
        if self.i >= len(self.files):
            raise ProposerError("replay directory exhausted")
        path = self.files[self.i]
        self.i += 1
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".ttc":
            return Proposal(text, novelty=path.stem)
        try:
            return _proposal_from(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ProposerError(f"{path.name}: invalid JSON ({exc})") from exc


class CommandProposer:
    """Spawns ``argv`` per generation: one JSON document in, one out."""

    def __init__(self, argv: Sequence[str], timeout: float = 120.0):
        self.argv = list(argv)
        self.timeout = timeout

    def propose(self, payload: dict) -> Proposal:
        try:
            proc = subprocess.run(self.argv, input=json.dumps(payload), capture_output=True,
                                  text=True, timeout=self.timeout, check=False)
        except subprocess.TimeoutExpired as exc:
            raise ProposerError(f"proposer timed out after {self.timeout}s") from exc
        except OSError as exc:
            raise ProposerError(f"cannot start proposer: {exc}") from exc
        if proc.returncode != 0:
            raise ProposerError(f"proposer exited {proc.returncode}: {proc.stderr.strip()[:200]}")
        try:
            return _proposal_from(json.loads(proc.stdout))
        except json.JSONDecodeError as exc:
            raise ProposerError(f"proposer wrote invalid JSON ({exc})") from exc


class HttpProposer:
    def __init__(self, url: str, timeout: float = 120.0):
        self.url = url.rstrip("/") + "/propose"
        self.timeout = timeout

    def propose(self, payload: dict) -> Proposal:
        try:
            resp = httpx.post(self.url, json=payload, timeout=self.timeout)
            resp.raise_for_status()
            return _proposal_from(resp.json())
        except (httpx.HTTPError, ValueError) as exc:
            raise ProposerError(f"proposer request failed: {exc}") from exc


# -- ledger --------------------------------------------------------------------

def record_hash(record: dict) -> str:
    body = {k: v for k, v in record.items() if k != "hash"}
    blob = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Ledger:
    """Append-only, hash-chained JSON-lines memory."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.records: list[dict] = []
        if self.path.exists():
            self.records = read_ledger(self.path)

    @property
    def last_hash(self) -> str:
        return self.records[-1]["hash"] if self.records else GENESIS_HASH

    def append(self, record: dict) -> dict:
        if self.records and record["generation"] <= self.records[-1]["generation"]:
            raise ValueError("generations must strictly increase")
        record = dict(record, prev_hash=self.last_hash)
        record["hash"] = record_hash(record)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        self.records.append(record)
        return record


def read_ledger(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def verify_ledger(path) -> tuple[bool, str]:
    try:
        records = read_ledger(path)
    except (OSError, json.JSONDecodeError) as exc:
        return False, f"unreadable ledger: {exc}"
    prev, gen = GENESIS_HASH, None
    for i, rec in enumerate(records, 1):
        if rec.get("prev_hash") != prev:
            return False, f"record {i}: prev_hash does not match record {i - 1}"
        if rec.get("hash") != record_hash(rec):
            return False, f"record {i}: content hash mismatch"
        if gen is not None and rec.get("generation", -1) <= gen:
            return False, f"record {i}: generation does not increase"
        prev, gen = rec["hash"], rec.get("generation")
    return True, f"{len(records)} records verified"


# -- loop ----------------------------------------------------------------------

@dataclass
class SearchConfig:
    generations: int
    seed: int = 0
    constants_digest: str = ""
    config_hash: str = ""
    inspirations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.generations < 1:
            raise ValueError("generations must be >= 1")


@dataclass
class SearchState:
    generation: int = 0
    registry: dict[str, str] = field(default_factory=dict)  # canonical source -> program id
    frontier: list[str] = field(default_factory=lambda: ["p0"])
    admitted_means: list[float] = field(default_factory=list)
    failures: int = 0


def _round(x: float) -> float:
    return round(float(x), 10)


class SearchLoop:
    def __init__(self, evaluator: Evaluator, proposer: Proposer, ledger: Ledger, config: SearchConfig):
        self.evaluator = evaluator
        self.proposer = proposer
        self.ledger = ledger
        self.config = config
        self.state = SearchState()
        self.task_ids = [t.task_id for t in evaluator.tasks]

    def payload(self) -> dict:
        by_id = {r["program_id"]: r for r in self.ledger.records if r["status"] == "evaluated"}
        frontier = [{"id": pid, "source": by_id[pid]["source"],
                     "metrics": {"mean_delta": by_id[pid]["mean_delta"], "cost": by_id[pid]["cost"]}}
                    for pid in self.state.frontier if pid in by_id]
        history = []
        for r in self.ledger.records:
            if r["status"] != "evaluated":
                continue
            src = r["source"] if r["program_id"] in self.state.frontier else r["source"][:HISTORY_SOURCE_CHARS]
            history.append({"id": r["program_id"], "per_task_delta": r["per_task_delta"], "wtl": r["wtl"],
                            "cost": r["cost"], "novelty": r["novelty"], "hypothesis": r["hypothesis"],
                            "source": src})
        return {"frontier": frontier, "history": history, "inspirations": list(self.config.inspirations)}

    def _base(self, g: int, program_id: str) -> dict:
        return {"generation": g, "program_id": program_id, "seed": self.config.seed,
                "constants": self.config.constants_digest, "config_hash": self.config.config_hash}

    def run_generation(self, g: int) -> dict:
        program_id = f"g{g:04d}"
        rec = self._base(g, program_id)
        try:
            prop = self.proposer.propose(self.payload())
        except ProposerError as exc:
            log.warning("generation %d: proposer failed: %s", g, exc)
            self.state.failures += 1
            return self.ledger.append(dict(rec, status="failed", reason=f"proposer: {exc}"))
        rec.update(source=prop.source, novelty=prop.novelty, hypothesis=prop.hypothesis,
                   parent=prop.parent if prop.parent is not None else self.state.frontier[-1])
        try:
            ast = parse(prop.source)
        except DSLError as exc:
            return self.ledger.append(dict(rec, status="rejected", reason=f"parse: {exc}"))
        canon = canonical(ast)
        if canon in self.state.registry:
            return self.ledger.append(dict(rec, status="rejected", reason="duplicate-structure",
                                           duplicate_of=self.state.registry[canon]))
        self.state.registry[canon] = program_id
        program = compile_ast(ast, program_id)
        before = self.evaluator.n_evaluations
        try:
            ev = self.evaluator.evaluate(program, program_id)
        except Exception as exc:  # evaluation failures are recorded, never fatal
            log.warning("generation %d: evaluation failed: %s", g, exc)
            return self.ledger.append(dict(rec, status="failed", reason=f"evaluation: {exc}"))
        assert self.evaluator.n_evaluations == before + 1, "program evaluated more than once"
        mean = ev.mean_delta
        admitted = frontier_admission(self.state.admitted_means, mean)
        if admitted:
            self.state.admitted_means.append(mean)
            self.state.frontier.append(program_id)
        w, t, l = ev.wtl
        rec.update(status="evaluated", canonical=canon,
                   per_task_delta={tid: _round(ev.per_task[tid].mean_delta) for tid in self.task_ids},
                   mean_delta=_round(mean), wtl=[w, t, l], cost=_round(ev.cost(False)),
                   cost_amortized=_round(ev.cost(True)), admitted=admitted,
                   frontier=list(self.state.frontier))
        return self.ledger.append(rec)

    def run(self) -> SearchState:
        start = self.ledger.records[-1]["generation"] if self.ledger.records else 0
        for g in range(start + 1, start + self.config.generations + 1):
            self.run_generation(g)
            self.state.generation = g
        return self.state


def export_trajectory(records: Sequence[dict], task_ids: Sequence[str], path) -> Path:
    """One row per evaluated program: generation, cost, then per-task deltas in ``task_ids`` order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["program_id", "generation", "cost", "mean_delta", "admitted", "config_hash", "seed",
                    *task_ids])
        for r in records:
            if r.get("status") != "evaluated":
                continue
            w.writerow([r["program_id"], r["generation"], r["cost"], r["mean_delta"], int(r["admitted"]),
                        r.get("config_hash", ""), r.get("seed", ""), *[r["per_task_delta"][t] for t in task_ids]])
    return path
