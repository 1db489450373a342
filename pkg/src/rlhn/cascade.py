"""Two-stage judging cascade: cheap recall pass, accurate precision pass.

Stage 1 judges every non-skipped instance; any instance with at least one
negative in either tag is forwarded. Stage 2 re-judges the full forwarded
instance, and its better-set union becomes the final false-negative set.
Instances with more than ``k`` detected false negatives are marked
ambiguous and dropped by the relabeling transform.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional

from .corpus import TrainingInstance
from .judge import ChunkRequest, RawResponse
from .prompting import MAX_NEGATIVES_PER_CALL, PromptChunk, chunk_negatives, render_prompt
from .verdict import JudgeVerdict, ParseFailure, merge_chunk_verdicts, parse_verdict

logger = logging.getLogger(__name__)

DEFAULT_SKIP_DATASETS = frozenset({"arguana"})
DEFAULT_K = 7

SubmitFn = Callable[[list[ChunkRequest]], list[RawResponse]]


@dataclass(frozen=True)
class DetectionRecord:
    instance_id: str
    dataset: str
    stage1_better: frozenset[int] = frozenset()
    stage1_worse: frozenset[int] = frozenset()
    stage1_parse: str = "skipped"  # ok | partial | failed | skipped
    forwarded: bool = False
    stage2_better: Optional[frozenset[int]] = None
    stage2_parse: Optional[str] = None
    final_false_negatives: frozenset[int] = frozenset()
    dropped_ambiguous: bool = False

    def to_json(self) -> dict:
        obj: dict = {
            "instance_id": self.instance_id,
            "dataset": self.dataset,
            "stage1": {
                "better": sorted(self.stage1_better),
                "worse": sorted(self.stage1_worse),
                "parse": self.stage1_parse,
            },
            "forwarded": self.forwarded,
            "final": sorted(self.final_false_negatives),
            "dropped": self.dropped_ambiguous,
        }
        if self.stage2_parse is not None:
            obj["stage2"] = {
                "better": sorted(self.stage2_better or frozenset()),
                "parse": self.stage2_parse,
            }
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "DetectionRecord":
        stage2 = obj.get("stage2")
        return cls(
            instance_id=obj["instance_id"],
            dataset=obj["dataset"],
            stage1_better=frozenset(obj["stage1"]["better"]),
            stage1_worse=frozenset(obj["stage1"]["worse"]),
            stage1_parse=obj["stage1"]["parse"],
            forwarded=obj["forwarded"],
            stage2_better=frozenset(stage2["better"]) if stage2 else None,
            stage2_parse=stage2["parse"] if stage2 else None,
            final_false_negatives=frozenset(obj["final"]),
            dropped_ambiguous=obj["dropped"],
        )


def write_records(records: Iterable[DetectionRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True))
            f.write("\n")


def read_records(path: str | Path) -> list[DetectionRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(DetectionRecord.from_json(json.loads(line)))
    return records


def _judge_instance(
    instance: TrainingInstance,
    submit: SubmitFn,
    max_per_call: int,
) -> tuple[frozenset[int], frozenset[int], str]:
    """Judge all chunks of one instance; returns (better, worse, parse_status).

    Chunks whose responses fail to parse get exactly one re-ask; remaining
    failures leave the instance partially judged.
    """
    chunks = chunk_negatives(instance, max_per_call)
    if not chunks:
        return frozenset(), frozenset(), "ok"
    requests = []
    for chunk in chunks:
        system, user = render_prompt(instance, chunk)
        requests.append(
            ChunkRequest(instance.instance_id, chunk.chunk_index, system, user)
        )
    responses = submit(requests)
    verdicts: list[JudgeVerdict] = []
    retry: list[tuple[PromptChunk, ChunkRequest]] = []
    n_failed = 0
    for chunk, request, response in zip(chunks, requests, responses):
        if response.failed:
            n_failed += 1
            continue
        try:
            verdicts.append(parse_verdict(response.content, chunk))
        except ParseFailure:
            retry.append((chunk, replace(request, ask=1)))
    if retry:
        retry_responses = submit([req for _, req in retry])
        for (chunk, _), response in zip(retry, retry_responses):
            if response.failed:
                n_failed += 1
                continue
            try:
                verdicts.append(parse_verdict(response.content, chunk))
            except ParseFailure:
                n_failed += 1
                logger.warning(
                    "instance %s chunk %d unparseable after re-ask",
                    instance.instance_id, chunk.chunk_index,
                )
    better, worse = merge_chunk_verdicts(verdicts)
    if n_failed == 0:
        status = "ok"
    elif verdicts:
        status = "partial"
    else:
        status = "failed"
    return better, worse, status


def run_stage1(
    instances: list[TrainingInstance],
    submit: SubmitFn,
    skip_datasets: frozenset[str] = DEFAULT_SKIP_DATASETS,
    max_per_call: int = MAX_NEGATIVES_PER_CALL,
) -> list[DetectionRecord]:
    """Recall stage: judge every non-skipped instance with the cheap judge."""
    records = []
    for instance in instances:
        if instance.dataset.lower() in skip_datasets:
            records.append(
                DetectionRecord(instance.instance_id, instance.dataset, stage1_parse="skipped")
            )
            continue
        better, worse, status = _judge_instance(instance, submit, max_per_call)
        records.append(
            DetectionRecord(
                instance_id=instance.instance_id,
                dataset=instance.dataset,
                stage1_better=better,
                stage1_worse=worse,
                stage1_parse=status,
                forwarded=bool(better | worse),
            )
        )
    return records


def run_stage2(
    instances: list[TrainingInstance],
    records: list[DetectionRecord],
    submit: SubmitFn,
    max_per_call: int = MAX_NEGATIVES_PER_CALL,
) -> list[DetectionRecord]:
    """Precision stage: re-judge the full instance for every forwarded record."""
    by_id = {(i.dataset, i.instance_id): i for i in instances}
    out = []
    for record in records:
        if not record.forwarded:
            out.append(record)
            continue
        instance = by_id.get((record.dataset, record.instance_id))
        if instance is None:
            raise KeyError(f"record references unknown instance {record.instance_id!r}")
        better, _worse, status = _judge_instance(instance, submit, max_per_call)
        final = better if status != "failed" else frozenset()
        out.append(
            replace(record, stage2_better=better, stage2_parse=status, final_false_negatives=final)
        )
    return out


def apply_threshold(records: list[DetectionRecord], k: int = DEFAULT_K) -> list[DetectionRecord]:
    """Mark records with strictly more than `k` false negatives as ambiguous."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return [replace(r, dropped_ambiguous=len(r.final_false_negatives) > k) for r in records]


def run_cascade(
    instances: list[TrainingInstance],
    submit_stage1: SubmitFn,
    submit_stage2: SubmitFn,
    k: int = DEFAULT_K,
    skip_datasets: frozenset[str] = DEFAULT_SKIP_DATASETS,
    max_per_call: int = MAX_NEGATIVES_PER_CALL,
) -> list[DetectionRecord]:
    records = run_stage1(instances, submit_stage1, skip_datasets, max_per_call)
    records = run_stage2(instances, records, submit_stage2, max_per_call)
    return apply_threshold(records, k)


def fn_histogram(records: list[DetectionRecord]) -> dict[int, float]:
    """Distribution of false-negative counts over flagged instances; sums to 1."""
    counts: dict[int, int] = {}
    for r in records:
        n = len(r.final_false_negatives)
        if n > 0:
            counts[n] = counts.get(n, 0) + 1
    total = sum(counts.values())
    if total == 0:
        return {}
    return {n: c / total for n, c in sorted(counts.items())}
