"""Parse judge output into structured verdicts.

Only the last ``<verdict>`` block counts; ``Doc (k)`` labels inside it are
chunk-local and 1-based, mapped back to global negative indices through the
chunk's index list. An index claimed both better and worse is kept in
``better`` (conservative for recall).
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from .prompting import PromptChunk

logger = logging.getLogger(__name__)


class ParseFailure(ValueError):
    """Judge output missing or violating the required verdict format."""


@dataclass(frozen=True)
class JudgeVerdict:
    instance_id: str
    chunk_index: int
    better: frozenset[int]
    worse: frozenset[int]
    thinking: str = ""
    preference: str = ""


_VERDICT = re.compile(r"<verdict>(.*?)</verdict>", re.DOTALL | re.IGNORECASE)
_TAG = {
    name: re.compile(rf"<{name}>(.*?)</{name}>", re.DOTALL | re.IGNORECASE)
    for name in ("better", "worse", "thinking", "preference")
}
_DOC = re.compile(r"doc\s*\(\s*(\d+)\s*\)", re.IGNORECASE)


def _extract(tag: str, text: str, required: bool) -> str:
    matches = _TAG[tag].findall(text)
    if not matches:
        if required:
            raise ParseFailure(f"missing <{tag}> block")
        return ""
    return matches[-1]


def _doc_labels(section: str, chunk_size: int, tag: str) -> set[int]:
    labels = set()
    for m in _DOC.finditer(section):
        k = int(m.group(1))
        if not 1 <= k <= chunk_size:
            raise ParseFailure(f"doc label {k} out of range 1..{chunk_size} in <{tag}>")
        labels.add(k)
    return labels


def parse_verdict(raw: str, chunk: PromptChunk) -> JudgeVerdict:
    """Parse one raw judge response against its chunk's index mapping."""
    verdicts = _VERDICT.findall(raw)
    if not verdicts:
        raise ParseFailure("missing <verdict> block")
    body = verdicts[-1]
    size = len(chunk.negative_indices)
    better_local = _doc_labels(_extract("better", body, required=True), size, "better")
    worse_local = _doc_labels(_extract("worse", body, required=True), size, "worse")
    overlap = better_local & worse_local
    if overlap:
        logger.warning(
            "instance %s chunk %d: labels %s in both tags, kept in better",
            chunk.instance_id, chunk.chunk_index, sorted(overlap),
        )
        worse_local -= overlap
    to_global = lambda locals_: frozenset(chunk.negative_indices[k - 1] for k in locals_)
    return JudgeVerdict(
        instance_id=chunk.instance_id,
        chunk_index=chunk.chunk_index,
        better=to_global(better_local),
        worse=to_global(worse_local),
        thinking=_extract("thinking", raw, required=False),
        preference=_extract("preference", raw, required=False),
    )


def merge_chunk_verdicts(verdicts: list[JudgeVerdict]) -> tuple[frozenset[int], frozenset[int]]:
    """Union per-chunk sets for one instance; better wins on conflict."""
    if not verdicts:
        return frozenset(), frozenset()
    ids = {v.instance_id for v in verdicts}
    if len(ids) > 1:
        raise ValueError(f"verdicts span multiple instances: {sorted(ids)}")
    better: frozenset[int] = frozenset()
    worse: frozenset[int] = frozenset()
    for v in verdicts:
        better |= v.better
        worse |= v.worse
    return better, worse - better


def format_verdict(
    better_local: set[int],
    worse_local: set[int],
    thinking: str = "",
    preference: str = "",
) -> str:
    """Render a response in the judge's required output format (mocks, round-trip tests)."""

    def doc_list(labels: set[int]) -> str:
        if not labels:
            return "[ ]"
        return "[" + ", ".join(f"Doc ({k})" for k in sorted(labels)) + "]"

    return (
        f"<thinking>\n{thinking}\n</thinking>\n"
        f"<preference>\n{preference}\n</preference>\n"
        "<verdict>\n"
        f"    <better> Preferred over or equally as ground truth: {doc_list(better_local)} </better>,\n"
        f"    <worse> Relevant but not preferred over ground truth: {doc_list(worse_local)} </worse>\n"
        "</verdict>"
    )
