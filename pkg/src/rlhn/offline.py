"""Offline judges for tests and dry runs: a scripted mock and a lexical heuristic.

Both are `send` callables for :func:`rlhn.judge.submit_batch`, so the whole
cascade (chunking, rendering, parsing, audit-log resume) is exercised with
zero API cost.
"""

from __future__ import annotations

import re
import threading
from typing import Optional

from .corpus import TrainingInstance
from .judge import ChunkRequest
from .verdict import format_verdict

_DOC_BLOCK = re.compile(r"^Doc \((\d+)\): (.*?)(?=\n\nDoc \(\d+\): |\n</documents>)", re.DOTALL | re.MULTILINE)
_QUESTION = re.compile(r"<question>\n(.*?)\n</question>", re.DOTALL)
_GT = re.compile(r"<ground_truth>\n(.*?)\n</ground_truth>", re.DOTALL)


class ScriptedJudge:
    """Answers from a per-(instance, chunk) script; records every call it serves.

    `script` maps (instance_id, chunk_index) or (instance_id, chunk_index, ask)
    to either raw response text or a (better_locals, worse_locals) pair of
    chunk-local 1-based label sets. Unscripted chunks get an empty verdict.
    """

    def __init__(self, script: Optional[dict] = None):
        self.script = dict(script or {})
        self.calls: list[tuple[str, int, int]] = []
        self._lock = threading.Lock()

    def __call__(self, request: ChunkRequest) -> tuple[str, Optional[dict]]:
        with self._lock:
            self.calls.append((request.instance_id, request.chunk_index, request.ask))
        entry = self.script.get(
            (request.instance_id, request.chunk_index, request.ask),
            self.script.get((request.instance_id, request.chunk_index)),
        )
        if entry is None:
            return format_verdict(set(), set()), None
        if isinstance(entry, str):
            return entry, None
        better, worse = entry
        return format_verdict(set(better), set(worse)), None


def _tokens(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


class HeuristicJudge:
    """Deterministic lexical-overlap judge for end-to-end tests on synthetic data.

    A document whose query-token overlap meets or exceeds the ground truth's
    overlap is called better; one reaching `worse_ratio` of it is called
    worse; the rest are not relevant.
    """

    def __init__(self, worse_ratio: float = 0.5):
        self.worse_ratio = worse_ratio
        self.calls: list[tuple[str, int, int]] = []
        self._lock = threading.Lock()

    @staticmethod
    def _overlap(query_tokens: set[str], text: str) -> float:
        if not query_tokens:
            return 0.0
        return len(query_tokens & _tokens(text)) / len(query_tokens)

    def __call__(self, request: ChunkRequest) -> tuple[str, Optional[dict]]:
        with self._lock:
            self.calls.append((request.instance_id, request.chunk_index, request.ask))
        question = _QUESTION.search(request.user).group(1)
        gt = _GT.search(request.user).group(1)
        docs = _DOC_BLOCK.findall(request.user + "\n")
        q_tokens = _tokens(question)
        gt_score = self._overlap(q_tokens, gt)
        better: set[int] = set()
        worse: set[int] = set()
        thinking_lines = []
        for label, text in docs:
            k = int(label)
            score = self._overlap(q_tokens, text)
            thinking_lines.append(f"Doc ({k}): overlap {score:.3f} vs ground truth {gt_score:.3f}")
            if gt_score > 0 and score >= gt_score:
                better.add(k)
            elif gt_score > 0 and score >= self.worse_ratio * gt_score:
                worse.add(k)
        return format_verdict(better, worse, thinking="\n".join(thinking_lines)), None
