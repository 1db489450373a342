"""Judging-prompt construction: chunking negatives and rendering payloads.

Instances with more than ``max_per_call`` negatives are split into several
calls; every chunk gets chunk-local 1-based ``Doc (i)`` labels, and the
chunk's index list maps those labels back to global 0-based positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .corpus import Passage, TrainingInstance

MAX_NEGATIVES_PER_CALL = 25

SYSTEM_PROMPT = (
    resources.files("rlhn.assets").joinpath("judge_prompt_system.txt").read_text("utf-8")
)


@dataclass(frozen=True)
class PromptChunk:
    instance_id: str
    chunk_index: int
    negative_indices: tuple[int, ...]


def chunk_negatives(
    instance: TrainingInstance, max_per_call: int = MAX_NEGATIVES_PER_CALL
) -> list[PromptChunk]:
    """Partition the instance's negative indices into chunks of at most `max_per_call`."""
    if max_per_call < 1:
        raise ValueError("max_per_call must be >= 1")
    n = len(instance.negatives)
    return [
        PromptChunk(
            instance_id=instance.instance_id,
            chunk_index=chunk_index,
            negative_indices=tuple(range(start, min(start + max_per_call, n))),
        )
        for chunk_index, start in enumerate(range(0, n, max_per_call))
    ]


def passage_text(p: Passage) -> str:
    if p.title:
        return f"{p.title}\n{p.text}"
    return p.text


def render_prompt(instance: TrainingInstance, chunk: PromptChunk) -> tuple[str, str]:
    """Render (system_text, user_text) for one chunk. Deterministic."""
    if chunk.instance_id != instance.instance_id:
        raise ValueError("chunk does not belong to this instance")
    gt = "\n\n".join(
        f"GT ({i}): {passage_text(p)}" for i, p in enumerate(instance.positives, start=1)
    )
    docs = "\n\n".join(
        f"Doc ({local}): {passage_text(instance.negatives[g])}"
        for local, g in enumerate(chunk.negative_indices, start=1)
    )
    user = (
        f"<question>\n{instance.query}\n</question>\n"
        f"<ground_truth>\n{gt}\n</ground_truth>\n"
        f"<documents>\n{docs}\n</documents>"
    )
    return SYSTEM_PROMPT, user
