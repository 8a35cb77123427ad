"""Cost-metered evaluation of programs against the cosine baseline."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .encoder import CostMeter, Encoder, Phase
from .fusion import ranks_from_scores
from .metrics import WTL_THRESHOLD, ndcg_at_k, paired_bootstrap, pooled_stats, wtl
from .programs import DEFAULT_CONSTANTS, ProgramConstants, ProgramContext
from .tasks import Task

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("program", "c_logical", "c_amortized", "mean_delta", "median_delta", "win_rate",
                  "p_value", "config_hash", "seed")


@dataclass
class TaskResult:
    task_id: str
    mean_ndcg: float
    mean_delta: float
    per_query_deltas: list[float]
    baseline_texts: int
    phases: dict[str, int]

    def cost_ratio(self, amortized: bool = False) -> float:
        extra = sum(v for k, v in self.phases.items() if k != Phase.BASELINE.value)
        if amortized:
            extra -= self.phases.get(Phase.INDEX_TIME.value, 0)
        return (self.baseline_texts + extra) / self.baseline_texts


@dataclass
class ProgramEvaluation:
    program_id: str
    per_task: dict[str, TaskResult] = field(default_factory=dict)

    @property
    def task_deltas(self) -> list[float]:
        return [r.mean_delta for r in self.per_task.values()]

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.task_deltas))

    @property
    def wtl(self) -> tuple[int, int, int]:
        return wtl(self.task_deltas, WTL_THRESHOLD)

    @property
    def all_query_deltas(self) -> np.ndarray:
        return np.concatenate([np.asarray(r.per_query_deltas) for r in self.per_task.values()])

    def cost(self, amortized: bool = False) -> float:
        """Pooled ratio: summed program and baseline work over all tasks."""
        base = sum(r.baseline_texts for r in self.per_task.values())
        total = sum(r.cost_ratio(amortized) * r.baseline_texts for r in self.per_task.values())
        return total / base


def query_ndcgs(S: np.ndarray, task: Task, k: int = 10, gain: str = "exponential") -> np.ndarray:
    doc_ids = task.doc_ids
    out = np.empty(S.shape[0])
    for i, qid in enumerate(task.query_ids):
        order = [doc_ids[j] for j in ranks_from_scores(S[i]).order]
        out[i] = ndcg_at_k(order, task.rels(qid), k, gain)
    return out


class Evaluator:
    """Holds one context per task; baseline nDCG is computed once and reused."""

    def __init__(self, tasks: Sequence[Task], encoder: Encoder,
                 constants: ProgramConstants = DEFAULT_CONSTANTS, k: int = 10,
                 gain: str = "exponential", threads: int = 1):
        self.tasks = list(tasks)
        self.threads = max(1, int(threads))
        self.encoder = encoder
        self.constants = constants
        self.k = k
        self.gain = gain
        self.contexts: dict[str, ProgramContext] = {}
        self.baseline: dict[str, np.ndarray] = {}
        self.n_evaluations = 0
        for task in self.tasks:
            ctx = ProgramContext.build(task.query_texts, task.doc_texts,
                                       encoder.with_meter(CostMeter()), constants)
            self.contexts[task.task_id] = ctx
            self.baseline[task.task_id] = query_ndcgs(ctx.S, task, k, gain)

    def evaluate_task(self, program: Callable[[ProgramContext], np.ndarray], task: Task) -> TaskResult:
        ctx = self.contexts[task.task_id].fork()
        S_new = np.asarray(program(ctx), dtype=np.float64)
        if S_new.shape != ctx.S.shape or not np.all(np.isfinite(S_new)):
            raise ValueError(f"program output on {task.task_id} must be a finite {ctx.S.shape} matrix")
        nd = query_ndcgs(S_new, task, self.k, self.gain)
        deltas = nd - self.baseline[task.task_id]
        return TaskResult(task.task_id, float(nd.mean()), float(deltas.mean()), deltas.tolist(),
                          ctx.meter.baseline_texts, ctx.meter.snapshot())

    def evaluate(self, program: Callable[[ProgramContext], np.ndarray],
                 program_id: str | None = None) -> ProgramEvaluation:
        program_id = program_id or getattr(program, "id", getattr(program, "__name__", "program"))
        ev = ProgramEvaluation(program_id)
        if self.threads > 1 and len(self.tasks) > 1:
            # tasks are independent; results are collected in task order
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda t: self.evaluate_task(program, t), self.tasks))
        else:
            results = [self.evaluate_task(program, t) for t in self.tasks]
        for task, res in zip(self.tasks, results):
            ev.per_task[task.task_id] = res
        self.n_evaluations += 1
        log.info("%s: mean delta %+.4f, c=%.3f", program_id, ev.mean_delta, ev.cost())
        return ev


def summary_row(ev: ProgramEvaluation, config_hash: str, seed: int, resamples: int = 10_000) -> dict:
    pooled = pooled_stats(ev.task_deltas)
    return {
        "program": ev.program_id,
        "c_logical": round(ev.cost(False), 6),
        "c_amortized": round(ev.cost(True), 6),
        "mean_delta": round(ev.mean_delta, 6),
        "median_delta": round(pooled.median, 6),
        "win_rate": round(pooled.win_rate, 6),
        "p_value": round(paired_bootstrap(ev.all_query_deltas, resamples, seed), 6),
        "config_hash": config_hash,
        "seed": seed,
    }


def write_report(evals: Sequence[ProgramEvaluation], path, config_hash: str, seed: int) -> Path:
    """JSON-lines with one row per (program, task)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in evals:
            for r in ev.per_task.values():
                w, t, l = wtl([r.mean_delta])
                row = {"program": ev.program_id, "task": r.task_id,
                       "mean_ndcg": round(r.mean_ndcg, 10), "mean_delta": round(r.mean_delta, 10),
                       "wtl": [w, t, l], "c_logical": round(r.cost_ratio(False), 6),
                       "c_amortized": round(r.cost_ratio(True), 6),
                       "baseline_texts": r.baseline_texts, "phases": r.phases,
                       "per_query_deltas": [round(x, 10) for x in r.per_query_deltas],
                       "config_hash": config_hash, "seed": seed}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def write_summary(rows: Sequence[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_summary(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("c_logical", "c_amortized", "mean_delta", "median_delta", "win_rate", "p_value"):
            row[key] = float(row[key])
        row["seed"] = int(row["seed"])
    return rows
