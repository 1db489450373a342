"""HTTP service for the human validation study.

Serves (query, hard negative) pairs to annotators one at a time, persists
binary labels to an append-only JSONL log, and exports them in the format
the agreement metrics consume. Annotators never see model verdicts: task
payloads are built from the training instances only.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Response
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .cascade import DetectionRecord
from .corpus import TrainingInstance
from .metrics import LabelRecord
from .prompting import passage_text

DEFAULT_SAMPLE_SIZE = 670


@dataclass(frozen=True)
class AnnotationTask:
    pair_id: str
    query: str
    positives: tuple[str, ...]
    negative: str


def sample_validation_pairs(
    records: list[DetectionRecord],
    instances: list[TrainingInstance],
    n: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    only_detected: bool = True,
) -> list[AnnotationTask]:
    """Sample n (query, negative) pairs from instances with detected false negatives.

    With `only_detected` the negative is one of the detected false negatives;
    otherwise any negative of a flagged instance qualifies.
    """
    by_id = {i.instance_id: i for i in instances}
    pool: list[tuple[TrainingInstance, int]] = []
    for record in records:
        if not record.final_false_negatives:
            continue
        inst = by_id.get(record.instance_id)
        if inst is None:
            continue
        indices = (
            sorted(record.final_false_negatives)
            if only_detected
            else range(len(inst.negatives))
        )
        pool.extend((inst, idx) for idx in indices)
    if n > len(pool):
        raise ValueError(f"requested {n} pairs but pool has only {len(pool)}")
    rng = random.Random(seed)
    sampled = rng.sample(pool, n)
    return [
        AnnotationTask(
            pair_id=f"{inst.instance_id}:{idx}",
            query=inst.query,
            positives=tuple(passage_text(p) for p in inst.positives),
            negative=passage_text(inst.negatives[idx]),
        )
        for inst, idx in sampled
    ]


def write_tasks(tasks: list[AnnotationTask], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        for t in tasks:
            obj = asdict(t)
            obj["positives"] = list(t.positives)
            f.write(json.dumps(obj, ensure_ascii=False))
            f.write("\n")


def read_tasks(path: str | Path) -> list[AnnotationTask]:
    tasks = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                tasks.append(
                    AnnotationTask(
                        pair_id=obj["pair_id"],
                        query=obj["query"],
                        positives=tuple(obj["positives"]),
                        negative=obj["negative"],
                    )
                )
    return tasks


class LabelStore:
    """Append-only label log; replaying the file reconstructs exact state."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: list[LabelRecord] = []
        self._seen: set[tuple[str, str]] = set()
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    record = LabelRecord(obj["pair_id"], obj["source"], int(obj["label"]))
                    self._records.append(record)
                    self._seen.add((record.source, record.pair_id))

    def has(self, source: str, pair_id: str) -> bool:
        return (source, pair_id) in self._seen

    def append(self, record: LabelRecord) -> bool:
        """Persist one label; False when this (source, pair) is already labeled."""
        with self._lock:
            key = (record.source, record.pair_id)
            if key in self._seen:
                return False
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(record), ensure_ascii=False))
                f.write("\n")
                f.flush()
            self._records.append(record)
            self._seen.add(key)
            return True

    def records(self) -> list[LabelRecord]:
        return list(self._records)


class LabelSubmission(BaseModel):
    annotator: str
    pair_id: str
    label: int


def create_app(
    tasks: list[AnnotationTask],
    store: LabelStore,
    static_dir: Optional[str | Path] = None,
) -> FastAPI:
    app = FastAPI(title="rlhn annotation service")
    task_index = {t.pair_id: t for t in tasks}

    @app.get("/api/tasks/next")
    def next_task(annotator: str):
        source = f"human:{annotator}"
        labeled = sum(1 for t in tasks if store.has(source, t.pair_id))
        for t in tasks:
            if not store.has(source, t.pair_id):
                return {
                    "done": False,
                    "labeled": labeled,
                    "total": len(tasks),
                    "task": {
                        "pair_id": t.pair_id,
                        "query": t.query,
                        "positives": list(t.positives),
                        "negative": t.negative,
                    },
                }
        return {"done": True, "labeled": labeled, "total": len(tasks), "task": None}

    @app.post("/api/labels")
    def submit_label(submission: LabelSubmission, response: Response):
        if submission.pair_id not in task_index:
            response.status_code = 404
            return {"error": f"unknown pair_id {submission.pair_id!r}"}
        if submission.label not in (0, 1):
            response.status_code = 422
            return {"error": "label must be 0 or 1"}
        record = LabelRecord(
            pair_id=submission.pair_id,
            source=f"human:{submission.annotator}",
            label=submission.label,
        )
        if not store.append(record):
            response.status_code = 409
            return {"error": "already labeled"}
        response.status_code = 201
        return {"ok": True}

    @app.get("/api/export")
    def export_labels():
        lines = "".join(
            json.dumps(asdict(r), ensure_ascii=False) + "\n" for r in store.records()
        )
        return PlainTextResponse(lines, media_type="application/jsonl")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    else:

        @app.get("/")
        def index():
            return HTMLResponse(
                "<html><body><p>rlhn annotation service is running; "
                "no UI bundle is installed.</p></body></html>"
            )

    return app
