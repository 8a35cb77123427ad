"""Task ingestion in the corpus.jsonl / queries.jsonl / qrels.tsv convention."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import TaskLoadError

CORPUS_FILE = "corpus.jsonl"
QUERIES_FILE = "queries.jsonl"
QRELS_FILE = "qrels.tsv"


@dataclass
class Task:
    """One retrieval task: a shared shortlist (corpus) scored for every query."""

    task_id: str
    queries: dict[str, str]
    corpus: dict[str, str]
    qrels: dict[str, dict[str, int]] = field(default_factory=dict)
    titles: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def query_ids(self) -> list[str]:
        return list(self.queries)

    @property
    def doc_ids(self) -> list[str]:
        return list(self.corpus)

    @property
    def query_texts(self) -> list[str]:
        return list(self.queries.values())

    @property
    def doc_texts(self) -> list[str]:
        return list(self.corpus.values())

    def rels(self, qid: str) -> dict[str, int]:
        return self.qrels.get(qid, {})

    def validate(self) -> None:
        missing_q = sorted(q for q in self.qrels if q not in self.queries)
        missing_d = sorted({d for rel in self.qrels.values() for d in rel if d not in self.corpus})
        if missing_q or missing_d:
            parts = []
            if missing_q:
                parts.append("unknown query ids: " + ", ".join(missing_q))
            if missing_d:
                parts.append("unknown doc ids: " + ", ".join(missing_d))
            raise TaskLoadError(f"task {self.task_id}: dangling qrels ({'; '.join(parts)})")
        for rel in self.qrels.values():
            for d, g in rel.items():
                if g < 0:
                    raise TaskLoadError(f"task {self.task_id}: negative grade for doc {d}")
        if not any(g > 0 for rel in self.qrels.values() for g in rel.values()):
            raise TaskLoadError(f"task {self.task_id}: no query has a relevant document")


def _read_jsonl(path: Path, kind: str) -> tuple[dict[str, str], dict[str, str]]:
    texts: dict[str, str] = {}
    titles: dict[str, str] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TaskLoadError(f"cannot read {kind} file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rid = str(rec["_id"])
            title = str(rec.get("title") or "")
            body = str(rec.get("text") or "")
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise TaskLoadError(f"{path}:{lineno}: malformed {kind} record ({exc})") from exc
        if rid in texts:
            raise TaskLoadError(f"{path}:{lineno}: duplicate {kind} id {rid}")
        texts[rid] = f"{title} {body}" if title and body else (title or body)
        if title:
            titles[rid] = title
    return texts, titles


def _read_qrels(path: Path) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TaskLoadError(f"cannot read qrels file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        cols = line.rstrip("\r\n").split("\t")
        if len(cols) == 4:
            qid, _, did, grade = cols
        elif len(cols) == 3:
            qid, did, grade = cols
        else:
            raise TaskLoadError(f"{path}:{lineno}: expected 3 or 4 tab-separated columns, got {len(cols)}")
        try:
            g = int(grade)
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise TaskLoadError(f"{path}:{lineno}: grade {grade!r} is not an integer") from None
        qrels.setdefault(qid.strip(), {})[did.strip()] = g
    return qrels


def load_task(corpus_path, queries_path, qrels_path, task_id: str | None = None) -> Task:
    corpus_path, queries_path, qrels_path = Path(corpus_path), Path(queries_path), Path(qrels_path)
    corpus, titles = _read_jsonl(corpus_path, "corpus")
    queries, _ = _read_jsonl(queries_path, "query")
    qrels = _read_qrels(qrels_path)
    return Task(task_id or corpus_path.parent.name, queries, corpus, qrels, titles)


def load_task_dir(path) -> Task:
    path = Path(path)
    if not path.is_dir():
        raise TaskLoadError(f"task directory {path} does not exist")
    qrels = path / QRELS_FILE
    if not qrels.exists() and (path / "qrels" / "test.tsv").exists():
        qrels = path / "qrels" / "test.tsv"
    return load_task(path / CORPUS_FILE, path / QUERIES_FILE, qrels, task_id=path.name)


def write_task(task: Task, out_dir) -> Path:
    """Write the three-file format; output bytes are a pure function of the task."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / CORPUS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for did, text in task.corpus.items():
            fh.write(json.dumps({"_id": did, "title": "", "text": text}, ensure_ascii=False) + "\n")
    with open(out / QUERIES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for qid, text in task.queries.items():
            fh.write(json.dumps({"_id": qid, "text": text}, ensure_ascii=False) + "\n")
    with open(out / QRELS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query-id\tcorpus-id\tscore\n")
        for qid, rel in task.qrels.items():
            for did, g in rel.items():
                fh.write(f"{qid}\t{did}\t{g}\n")
    return out
