"""Load, validate, summarize, subset, and write retrieval training datasets.

On-disk format is JSONL with keys ``id``, ``dataset``, ``query``, ``pos``,
``neg``. Passages are either plain strings or ``{"id", "title", "text"}``
objects; both forms round-trip unchanged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


class DatasetError(ValueError):
    """Malformed dataset file or invariant violation."""


@dataclass(frozen=True)
class Passage:
    text: str
    title: Optional[str] = None
    id: Optional[str] = None

    def __post_init__(self):
        if not self.text.strip():
            raise DatasetError("passage text is empty")

    def key(self) -> str:
        """Equality key: hash of NFC-normalized, case-folded, whitespace-collapsed text."""
        norm = _WS.sub(" ", unicodedata.normalize("NFC", self.text).casefold()).strip()
        return hashlib.sha256(norm.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TrainingInstance:
    instance_id: str
    dataset: str
    query: str
    positives: tuple[Passage, ...]
    negatives: tuple[Passage, ...]

    def __post_init__(self):
        if not self.positives:
            raise DatasetError(f"instance {self.instance_id!r} has zero positives")


@dataclass
class SplitStats:
    n_pairs: int
    avg_gt_per_q: Optional[float]
    avg_hn_per_q: Optional[float]


@dataclass
class DatasetStats:
    n_pairs: int
    avg_gt_per_q: Optional[float]
    avg_hn_per_q: Optional[float]
    per_dataset: dict[str, SplitStats] = field(default_factory=dict)


def _parse_passage(obj, where: str) -> Passage:
    if isinstance(obj, str):
        return Passage(text=obj)
    if isinstance(obj, dict):
        if "text" not in obj:
            raise DatasetError(f"{where}: passage object missing 'text'")
        return Passage(text=obj["text"], title=obj.get("title"), id=obj.get("id"))
    raise DatasetError(f"{where}: passage must be a string or object, got {type(obj).__name__}")


def _dedup(passages: list[Passage], where: str) -> list[Passage]:
    seen: set[str] = set()
    out = []
    for p in passages:
        k = p.key()
        if k in seen:
            logger.warning("%s: duplicate passage dropped", where)
            continue
        seen.add(k)
        out.append(p)
    return out


def parse_instance(obj: dict, line_no: int) -> TrainingInstance:
    """Build one TrainingInstance from a decoded JSONL object."""
    where = f"line {line_no}"
    dataset = obj.get("dataset", "unknown")
    query = obj.get("query")
    if not isinstance(query, str) or not query.strip():
        raise DatasetError(f"{where}: missing or empty 'query'")
    pos_raw = obj.get("pos", [])
    neg_raw = obj.get("neg", [])
    if not pos_raw:
        raise DatasetError(f"zero positives at {where}")
    positives = _dedup([_parse_passage(p, where) for p in pos_raw], f"{where} pos")
    negatives = _dedup([_parse_passage(p, where) for p in neg_raw], f"{where} neg")
    pos_keys = {p.key() for p in positives}
    kept_negs = []
    for n in negatives:
        if n.key() in pos_keys:
            logger.warning("%s: negative duplicates a positive, dropped", where)
            continue
        kept_negs.append(n)
    instance_id = obj.get("id") or f"{dataset}-{line_no}"
    return TrainingInstance(
        instance_id=instance_id,
        dataset=dataset,
        query=query,
        positives=tuple(positives),
        negatives=tuple(kept_negs),
    )


def load_dataset(path: str | Path) -> list[TrainingInstance]:
    """Load a JSONL training dataset, validating all instance invariants."""
    path = Path(path)
    instances: list[TrainingInstance] = []
    seen_ids: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"malformed JSON at line {line_no}: {e}") from e
            inst = parse_instance(obj, line_no)
            key = (inst.dataset, inst.instance_id)
            if key in seen_ids:
                raise DatasetError(f"duplicate instance_id {inst.instance_id!r} at line {line_no}")
            seen_ids.add(key)
            instances.append(inst)
    return instances


def _passage_json(p: Passage):
    if p.title is None and p.id is None:
        return p.text
    obj = {}
    if p.id is not None:
        obj["id"] = p.id
    if p.title is not None:
        obj["title"] = p.title
    obj["text"] = p.text
    return obj


def instance_to_json(inst: TrainingInstance) -> dict:
    return {
        "id": inst.instance_id,
        "dataset": inst.dataset,
        "query": inst.query,
        "pos": [_passage_json(p) for p in inst.positives],
        "neg": [_passage_json(p) for p in inst.negatives],
    }


def write_dataset(instances: Iterable[TrainingInstance], path: str | Path) -> None:
    """Write instances as JSONL; load_dataset(write_dataset(x)) == x."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        for inst in instances:
            f.write(json.dumps(instance_to_json(inst), ensure_ascii=False))
            f.write("\n")


def compute_stats(instances: list[TrainingInstance]) -> DatasetStats:
    """Pair counts and mean positives/negatives per query, overall and per dataset."""

    def split(insts: list[TrainingInstance]) -> SplitStats:
        n = len(insts)
        if n == 0:
            return SplitStats(0, None, None)
        return SplitStats(
            n_pairs=n,
            avg_gt_per_q=sum(len(i.positives) for i in insts) / n,
            avg_hn_per_q=sum(len(i.negatives) for i in insts) / n,
        )

    overall = split(instances)
    by_ds: dict[str, list[TrainingInstance]] = {}
    for inst in instances:
        by_ds.setdefault(inst.dataset, []).append(inst)
    per_dataset = {name: split(group) for name, group in sorted(by_ds.items())}
    return DatasetStats(
        n_pairs=overall.n_pairs,
        avg_gt_per_q=overall.avg_gt_per_q,
        avg_hn_per_q=overall.avg_hn_per_q,
        per_dataset=per_dataset,
    )


def sample_subset(
    instances: list[TrainingInstance],
    targets: dict[str, int],
    seed: int,
) -> list[TrainingInstance]:
    """Sample `targets[dataset]` instances per dataset, uniform without replacement.

    Output order: dataset name ascending, then sampled order. Deterministic
    under `seed`.
    """
    by_ds: dict[str, list[TrainingInstance]] = {}
    for inst in instances:
        by_ds.setdefault(inst.dataset, []).append(inst)
    rng = random.Random(seed)
    out: list[TrainingInstance] = []
    for name in sorted(targets):
        target = targets[name]
        pool = by_ds.get(name, [])
        if target > len(pool):
            raise DatasetError(
                f"target {target} exceeds pool of {len(pool)} for dataset {name!r}"
            )
        out.extend(rng.sample(pool, target))
    return out
