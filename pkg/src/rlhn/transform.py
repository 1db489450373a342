"""Dataset rewrites driven by detection records, plus baseline filters.

Three correction strategies: drop flagged instances entirely (remove), drop
only the detected negatives (remove-HN), or promote them to positives
(relabel). The score-based TopK-PercPos filter and leave-one-dataset-out
pruning live here too.
"""

from __future__ import annotations

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Iterable

from .cascade import DEFAULT_K, DetectionRecord
from .corpus import TrainingInstance

logger = logging.getLogger(__name__)


class TransformError(ValueError):
    """Records do not join cleanly to the instances being rewritten."""


def _join(
    instances: list[TrainingInstance], records: list[DetectionRecord]
) -> dict[str, DetectionRecord]:
    known = {i.instance_id for i in instances}
    by_id: dict[str, DetectionRecord] = {}
    for r in records:
        if r.instance_id not in known:
            raise TransformError(f"record references unknown instance_id {r.instance_id!r}")
        by_id[r.instance_id] = r
    return by_id


def transform_remove(
    instances: list[TrainingInstance], records: list[DetectionRecord]
) -> list[TrainingInstance]:
    """Drop every instance with at least one detected false negative."""
    by_id = _join(instances, records)
    out = []
    for inst in instances:
        record = by_id.get(inst.instance_id)
        if record is not None and record.final_false_negatives:
            continue
        out.append(inst)
    return out


def transform_remove_hn(
    instances: list[TrainingInstance], records: list[DetectionRecord]
) -> list[TrainingInstance]:
    """Drop only the detected false negatives; every instance survives."""
    by_id = _join(instances, records)
    out = []
    for inst in instances:
        record = by_id.get(inst.instance_id)
        if record is None or not record.final_false_negatives:
            out.append(inst)
            continue
        fn = record.final_false_negatives
        negatives = tuple(n for i, n in enumerate(inst.negatives) if i not in fn)
        if not negatives:
            logger.warning("instance %s left with zero negatives", inst.instance_id)
        out.append(replace(inst, negatives=negatives))
    return out


def transform_relabel_hn(
    instances: list[TrainingInstance],
    records: list[DetectionRecord],
    k: int = DEFAULT_K,
) -> list[TrainingInstance]:
    """Promote detected false negatives to positives; drop over-threshold instances."""
    by_id = _join(instances, records)
    out = []
    for inst in instances:
        record = by_id.get(inst.instance_id)
        if record is None or not record.final_false_negatives:
            out.append(inst)
            continue
        fn = record.final_false_negatives
        if len(fn) > k:
            continue
        promoted = tuple(n for i, n in enumerate(inst.negatives) if i in fn)
        negatives = tuple(n for i, n in enumerate(inst.negatives) if i not in fn)
        out.append(replace(inst, positives=inst.positives + promoted, negatives=negatives))
    return out


def topk_percpos_filter(
    instance: TrainingInstance,
    pos_scores: list[float],
    neg_scores: list[float],
    percent: float = 95.0,
) -> TrainingInstance:
    """Drop negatives scoring at or above `percent`% of the best positive score."""
    if len(pos_scores) != len(instance.positives):
        raise TransformError(
            f"instance {instance.instance_id!r}: {len(pos_scores)} positive scores "
            f"for {len(instance.positives)} positives"
        )
    if len(neg_scores) != len(instance.negatives):
        raise TransformError(
            f"instance {instance.instance_id!r}: {len(neg_scores)} negative scores "
            f"for {len(instance.negatives)} negatives"
        )
    threshold = (percent / 100.0) * max(pos_scores)
    negatives = tuple(
        n for n, s in zip(instance.negatives, neg_scores) if s < threshold
    )
    return replace(instance, negatives=negatives)


def read_score_sidecar(path: str | Path) -> dict[str, tuple[list[float], list[float]]]:
    """Read {instance_id, pos_scores, neg_scores} JSONL produced by an external reranker."""
    scores: dict[str, tuple[list[float], list[float]]] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            scores[obj["instance_id"]] = (
                [float(s) for s in obj["pos_scores"]],
                [float(s) for s in obj["neg_scores"]],
            )
    return scores


def leave_one_out(
    collection: dict[str, list[TrainingInstance]], leave_out: str
) -> dict[str, list[TrainingInstance]]:
    """Materialize the collection with one dataset removed."""
    if leave_out not in collection:
        raise TransformError(f"unknown dataset {leave_out!r}")
    return {name: insts for name, insts in collection.items() if name != leave_out}
