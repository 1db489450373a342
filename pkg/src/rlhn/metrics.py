"""Ranking and agreement metrics: mAP@10, P@L, nDCG@10, Cohen's kappa.

All rankings break score ties by candidate id ascending so results are
deterministic. Run and qrels files use the usual TREC whitespace formats.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Optional

logger = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


@dataclass
class ScoredCandidates:
    query_id: str
    scores: dict  # candidate id -> real score
    relevant: set  # subset of candidate ids

    def __post_init__(self):
        unknown = set(self.relevant) - set(self.scores)
        if unknown:
            raise MetricError(f"query {self.query_id!r}: relevant ids not scored: {unknown}")
        for cid, s in self.scores.items():
            if not math.isfinite(s):
                raise MetricError(f"query {self.query_id!r}: non-finite score for {cid!r}")


def ranked_ids(scores: dict) -> list:
    """Candidate ids by score descending, ties broken by id ascending."""
    return [cid for cid, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]


def average_precision_at_10(query: ScoredCandidates) -> float:
    ranking = ranked_ids(query.scores)[:10]
    hits = 0
    total = 0.0
    for rank, cid in enumerate(ranking, start=1):
        if cid in query.relevant:
            hits += 1
            total += hits / rank
    return total / min(len(query.relevant), 10)


def map_at_10(queries: list[ScoredCandidates]) -> float:
    """Mean AP@10 over queries with at least one relevant candidate."""
    usable = [q for q in queries if q.relevant]
    skipped = len(queries) - len(usable)
    if skipped:
        logger.warning("map_at_10: excluded %d queries with no relevant candidates", skipped)
    if not usable:
        raise MetricError("no queries with a relevant candidate")
    return sum(average_precision_at_10(q) for q in usable) / len(usable)


def precision_at_L(query: ScoredCandidates) -> float:
    """Precision at rank L, where L is the number of relevant candidates."""
    if not query.relevant:
        raise MetricError(f"query {query.query_id!r} has an empty relevant set")
    L = len(query.relevant)
    top = ranked_ids(query.scores)[:L]
    return sum(1 for cid in top if cid in query.relevant) / L


def mean_precision_at_L(queries: list[ScoredCandidates]) -> float:
    usable = [q for q in queries if q.relevant]
    if not usable:
        raise MetricError("no queries with a relevant candidate")
    return sum(precision_at_L(q) for q in usable) / len(usable)


# --- nDCG over TREC run/qrels ----------------------------------------------

def _gain(grade: int, exponential: bool) -> float:
    return (2.0 ** grade - 1.0) if exponential else float(grade)


def ndcg_at_10_query(
    run_scores: dict, qrels: dict, exponential: bool = True
) -> Optional[float]:
    """nDCG@10 for one query; None when the ideal DCG is zero."""
    ranking = ranked_ids(run_scores)[:10]
    dcg = sum(
        _gain(qrels.get(doc, 0), exponential) / math.log2(rank + 1)
        for rank, doc in enumerate(ranking, start=1)
    )
    ideal_grades = sorted(qrels.values(), reverse=True)[:10]
    idcg = sum(
        _gain(g, exponential) / math.log2(rank + 1)
        for rank, g in enumerate(ideal_grades, start=1)
    )
    if idcg == 0:
        return None
    return dcg / idcg


def ndcg_at_10(
    run: dict[str, dict], qrels: dict[str, dict], exponential: bool = True
) -> float:
    """Mean nDCG@10 over scored queries that have qrels with positive ideal gain."""
    values = []
    skipped = 0
    for qid in sorted(run):
        if qid not in qrels:
            skipped += 1
            continue
        v = ndcg_at_10_query(run[qid], qrels[qid], exponential)
        if v is None:
            skipped += 1
            continue
        values.append(v)
    if skipped:
        logger.warning("ndcg_at_10: excluded %d queries without usable qrels", skipped)
    if not values:
        raise MetricError("no scorable queries")
    return sum(values) / len(values)


def read_run(path: str | Path) -> dict[str, dict]:
    """TREC run: `qid Q0 docid rank score tag`."""
    run: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 6:
                raise MetricError(f"run line {line_no}: expected 6 fields, got {len(parts)}")
            qid, _, docid, _, score = parts[0], parts[1], parts[2], parts[3], parts[4]
            per_q = run.setdefault(qid, {})
            if docid in per_q:
                raise MetricError(f"run line {line_no}: duplicate doc {docid!r} for query {qid!r}")
            per_q[docid] = float(score)
    return run


def read_qrels(path: str | Path) -> dict[str, dict]:
    """TREC qrels: `qid 0 docid grade`, integer grades >= 0."""
    qrels: dict[str, dict] = {}
    with Path(path).open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 4:
                raise MetricError(f"qrels line {line_no}: expected 4 fields, got {len(parts)}")
            qid, _, docid, grade = parts[0], parts[1], parts[2], parts[3]
            qrels.setdefault(qid, {})[docid] = int(grade)
    return qrels


# --- Agreement --------------------------------------------------------------

@dataclass(frozen=True)
class LabelRecord:
    pair_id: str
    source: str  # "human:<annotator_id>" or "model:<name>"
    label: int  # binary relevance

    def __post_init__(self):
        if self.label not in (0, 1):
            raise MetricError(f"label must be 0 or 1, got {self.label!r}")


def cohen_kappa(a: dict[str, int], b: dict[str, int]) -> float:
    """Chance-corrected agreement between two binary labelers over the same pairs."""
    if set(a) != set(b):
        raise MetricError("label sets cover different pair ids")
    if not a:
        raise MetricError("no pairs to compare")
    n = len(a)
    p_o = sum(1 for k in a if a[k] == b[k]) / n
    p_e = sum(
        (sum(1 for v in a.values() if v == c) / n) * (sum(1 for v in b.values() if v == c) / n)
        for c in (0, 1)
    )
    if p_e == 1.0:
        logger.warning("cohen_kappa: degenerate marginals (p_e = 1)")
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


@dataclass
class ConsensusResult:
    labels: dict[str, int]
    n_ties: int
    n_excluded: int  # pairs with fewer than two sources


def aggregate_annotators(records: Iterable[LabelRecord]) -> ConsensusResult:
    """Majority vote per pair; exact ties resolve to non-relevant."""
    votes: dict[str, dict[str, int]] = {}
    for r in records:
        votes.setdefault(r.pair_id, {})[r.source] = r.label
    labels: dict[str, int] = {}
    n_ties = 0
    n_excluded = 0
    for pair_id, by_source in votes.items():
        if len(by_source) < 2:
            n_excluded += 1
            continue
        ones = sum(by_source.values())
        zeros = len(by_source) - ones
        if ones == zeros:
            n_ties += 1
            labels[pair_id] = 0
        else:
            labels[pair_id] = 1 if ones > zeros else 0
    return ConsensusResult(labels=labels, n_ties=n_ties, n_excluded=n_excluded)


def read_label_records(path: str | Path) -> list[LabelRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            records.append(LabelRecord(obj["pair_id"], obj["source"], int(obj["label"])))
    return records
