"""Chat-completion judge client: batching, retry, audit log, cost ledger.

``submit_batch`` issues standard OpenAI-style chat-completion requests with
bounded concurrency and order-restored results. Every answered request is
appended to an append-only JSONL audit log before return, and rerunning with
the same log skips already-answered (instance_id, chunk_index, model, ask)
keys so paid calls are never repeated after a crash.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Optional

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "RLHN_API_KEY"

# USD per 1M input/output tokens, as of 2025-05-15; override in config as prices drift.
PRICE_TABLE: dict[str, tuple[str, str]] = {
    "mini": ("0.6", "2.4"),
    "gpt-4o": ("5.0", "20.0"),
}


class AuthenticationError(RuntimeError):
    """Endpoint rejected our credentials; the run is aborted."""


class TransientJudgeError(RuntimeError):
    """Retryable failure (429/5xx/timeout), raised internally between attempts."""


@dataclass
class JudgeConfig:
    model_name: str
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    temperature: float = 0.1
    max_output_tokens: int = 4096
    request_timeout: float = 120.0
    max_retries: int = 5
    max_concurrency: int = 4
    retry_base_delay: float = 1.0
    retry_factor: float = 2.0
    retry_max_delay: float = 60.0

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")

    @property
    def api_key(self) -> str:
        return os.environ.get(API_KEY_ENV, "")


@dataclass(frozen=True)
class CostModel:
    price_in_per_1m: Decimal
    price_out_per_1m: Decimal
    assumed_output_tokens: int = 2048

    def __post_init__(self):
        if self.price_in_per_1m < 0 or self.price_out_per_1m < 0:
            raise ValueError("prices must be >= 0")
        if self.assumed_output_tokens < 0:
            raise ValueError("assumed_output_tokens must be >= 0")

    @classmethod
    def for_model(cls, name: str, assumed_output_tokens: int = 2048) -> "CostModel":
        if name not in PRICE_TABLE:
            raise KeyError(f"no bundled prices for {name!r}; pass prices explicitly")
        pin, pout = PRICE_TABLE[name]
        return cls(Decimal(pin), Decimal(pout), assumed_output_tokens)


@dataclass(frozen=True)
class ChunkRequest:
    instance_id: str
    chunk_index: int
    system: str
    user: str
    ask: int = 0  # 0 = first ask, 1 = re-ask after a parse failure

    def key(self, model: str) -> str:
        return f"{self.instance_id}\x1f{self.chunk_index}\x1f{model}\x1f{self.ask}"

    def sha256(self) -> str:
        payload = f"{self.system}\x1f{self.user}".encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass
class RawResponse:
    instance_id: str
    chunk_index: int
    model_name: str
    content: str = ""
    usage: Optional[dict] = None
    attempt_count: int = 0
    latency: float = 0.0
    ask: int = 0
    failed: bool = False
    error: str = ""


class AuditLog:
    """Append-only JSONL request/response log with a single serialized writer."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._answered: dict[str, dict] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    if not entry.get("failed"):
                        self._answered[self._entry_key(entry)] = entry

    @staticmethod
    def _entry_key(entry: dict) -> str:
        return (
            f"{entry['instance_id']}\x1f{entry['chunk_index']}"
            f"\x1f{entry['model']}\x1f{entry.get('ask', 0)}"
        )

    def lookup(self, request: ChunkRequest, model: str) -> Optional[dict]:
        return self._answered.get(request.key(model))

    def append(self, request: ChunkRequest, model: str, response: RawResponse) -> None:
        entry = {
            "instance_id": request.instance_id,
            "chunk_index": request.chunk_index,
            "model": model,
            "ask": request.ask,
            "request_sha256": request.sha256(),
            "content": response.content,
            "usage": response.usage,
            "ts": time.time(),
            "attempts": response.attempt_count,
            "failed": response.failed,
        }
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as f:
                f.write(json.dumps(entry, ensure_ascii=False))
                f.write("\n")
                f.flush()
                os.fsync(f.fileno())
            if not response.failed:
                self._answered[request.key(model)] = entry


# A send function returns (content, usage-or-None); raising TransientJudgeError
# triggers retry, any other exception marks the request failed.
SendFn = Callable[[ChunkRequest], tuple[str, Optional[dict]]]


def _http_send(client: httpx.Client, config: JudgeConfig) -> SendFn:
    def send(request: ChunkRequest) -> tuple[str, Optional[dict]]:
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        body = {
            "model": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        }
        try:
            resp = client.post(
                config.endpoint_url, json=body, headers=headers, timeout=config.request_timeout
            )
        except (httpx.TimeoutException, httpx.TransportError) as e:
            raise TransientJudgeError(str(e)) from e
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"endpoint returned {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientJudgeError(f"HTTP {resp.status_code}")
        resp.raise_for_status()
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
        return content, data.get("usage")

    return send


def _call_with_retry(
    send: SendFn, request: ChunkRequest, config: JudgeConfig, rng: random.Random
) -> RawResponse:
    start = time.monotonic()
    attempts = 0
    last_error = ""
    while attempts < config.max_retries:
        attempts += 1
        try:
            content, usage = send(request)
            return RawResponse(
                instance_id=request.instance_id,
                chunk_index=request.chunk_index,
                model_name=config.model_name,
                content=content,
                usage=usage,
                attempt_count=attempts,
                latency=time.monotonic() - start,
                ask=request.ask,
            )
        except TransientJudgeError as e:
            last_error = str(e)
            if attempts >= config.max_retries:
                break
            delay = min(
                config.retry_base_delay * config.retry_factor ** (attempts - 1),
                config.retry_max_delay,
            )
            time.sleep(rng.uniform(0, delay))  # full jitter
        except AuthenticationError:
            raise
        except Exception as e:  # permanent: marked failed, run continues
            last_error = str(e)
            break
    return RawResponse(
        instance_id=request.instance_id,
        chunk_index=request.chunk_index,
        model_name=config.model_name,
        attempt_count=attempts,
        latency=time.monotonic() - start,
        ask=request.ask,
        failed=True,
        error=last_error,
    )


def submit_batch(
    requests: list[ChunkRequest],
    config: JudgeConfig,
    send: Optional[SendFn] = None,
    transport: Optional[httpx.BaseTransport] = None,
    audit_log: Optional[AuditLog] = None,
    rng: Optional[random.Random] = None,
) -> list[RawResponse]:
    """Judge every chunk request; results come back in input order.

    `send` overrides the HTTP path with a local callable (mock or heuristic
    judge); `transport` overrides the httpx transport for wire-level tests.
    """
    rng = rng or random.Random()
    results: list[Optional[RawResponse]] = [None] * len(requests)
    client: Optional[httpx.Client] = None
    if send is None:
        client = httpx.Client(transport=transport)
        send = _http_send(client, config)

    def work(i: int, request: ChunkRequest) -> None:
        if audit_log is not None:
            cached = audit_log.lookup(request, config.model_name)
            if cached is not None:
                results[i] = RawResponse(
                    instance_id=request.instance_id,
                    chunk_index=request.chunk_index,
                    model_name=config.model_name,
                    content=cached["content"],
                    usage=cached.get("usage"),
                    attempt_count=cached.get("attempts", 0),
                    ask=request.ask,
                )
                return
        response = _call_with_retry(send, request, config, rng)
        if audit_log is not None:
            audit_log.append(request, config.model_name, response)
        results[i] = response

    try:
        if config.max_concurrency == 1 or len(requests) <= 1:
            for i, request in enumerate(requests):
                work(i, request)
        else:
            with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
                futures = [pool.submit(work, i, r) for i, r in enumerate(requests)]
                for fut in futures:
                    fut.result()
    finally:
        if client is not None:
            client.close()
    out = [r for r in results if r is not None]
    assert len(out) == len(requests)
    n_failed = sum(r.failed for r in out)
    if n_failed:
        logger.warning("%d of %d judge calls failed permanently", n_failed, len(out))
    return out


def count_tokens(text: str, tokenizer: Optional[Callable[[str], int]] = None) -> int:
    """Token count: exact tokenizer when plugged in, else ceil(utf8_bytes / 4)."""
    if tokenizer is not None:
        return tokenizer(text)
    n = len(text.encode("utf-8"))
    return -(-n // 4)


def estimate_cost(n_calls: int, avg_input_tokens: int, cost_model: CostModel) -> Decimal:
    """USD cost of a run, exact decimal arithmetic (no sub-micro-dollar rounding)."""
    if n_calls < 0 or avg_input_tokens < 0:
        raise ValueError("inputs must be >= 0")
    return (
        Decimal(n_calls)
        * (
            Decimal(avg_input_tokens) * cost_model.price_in_per_1m
            + Decimal(cost_model.assumed_output_tokens) * cost_model.price_out_per_1m
        )
        / Decimal(1_000_000)
    )
