"""HTTP/JSON client for externally hosted reasoner and tool servers.

Wire format::

    POST <reason_url>  {"query_id", "question", "image_ref", "tool_outputs": [str]} -> {"answer": str}
    POST <tool_url>    {"tool_index", "query_id", "question", "image_ref"}        -> {"output": str}

Tool outputs are sent in ascending tool-index order.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import requests

from ..core import Query, ToolSelection
from .base import EnvironmentFailure, ReasonerVerdict

log = logging.getLogger(__name__)


class RemoteProtocolError(EnvironmentFailure):
    """The server rejected the request (4xx); retrying will not help."""


class MalformedResponse(ValueError):
    pass


@dataclass
class RemoteConfig:
    reason_url: str
    tool_urls: list[str]
    timeout: float = 10.0
    retries: int = 3  # total attempts per request
    max_concurrency: int = 4
    backoff: float = 0.05

    def __post_init__(self) -> None:
        if not self.reason_url:
            raise ValueError("remote mode needs a reason_url")
        if not self.tool_urls or not all(self.tool_urls):
            raise ValueError("remote mode needs an endpoint for every tool")
        if self.retries < 1 or self.max_concurrency < 1 or not self.timeout > 0:
            raise ValueError("retries and max_concurrency must be >= 1 and timeout > 0")

    @classmethod
    def from_dict(cls, data: dict, num_tools: int | None = None) -> "RemoteConfig":
        data = dict(data)
        urls = data.get("tool_urls")
        if isinstance(urls, str):
            if num_tools is None:
                raise ValueError("a single tool_url needs the tool count to expand")
            data["tool_urls"] = [urls] * num_tools
        return cls(**data)

    def with_env_overrides(self, environ: dict[str, str] | None = None) -> "RemoteConfig":
        """Apply TOOLGRPO_REASON_URL, TOOLGRPO_TOOL_URL and TOOLGRPO_TOOL_URL_<i> overrides."""
        env = os.environ if environ is None else environ
        urls = list(self.tool_urls)
        if "TOOLGRPO_TOOL_URL" in env:
            urls = [env["TOOLGRPO_TOOL_URL"]] * len(urls)
        for i in range(len(urls)):
            urls[i] = env.get(f"TOOLGRPO_TOOL_URL_{i}", urls[i])
        return RemoteConfig(
            reason_url=env.get("TOOLGRPO_REASON_URL", self.reason_url),
            tool_urls=urls,
            timeout=self.timeout,
            retries=self.retries,
            max_concurrency=self.max_concurrency,
            backoff=self.backoff,
        )


@dataclass
class CallStats:
    requests: int = 0
    retries: int = 0
    failures: int = 0
    in_flight: int = 0
    peak_in_flight: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def enter(self) -> None:
        with self._lock:
            self.requests += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)

    def leave(self) -> None:
        with self._lock:
            self.in_flight -= 1

    def bump(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)


class RemoteClient:
    """Posts JSON with a per-request retry budget under a shared concurrency cap."""

    def __init__(self, config: RemoteConfig, session: Any = None):
        self.config = config
        self.stats = CallStats()
        self._gate = threading.BoundedSemaphore(config.max_concurrency)
        self._http = session if session is not None else requests

    def post(self, url: str, payload: dict, expect_key: str) -> str:
        cfg = self.config
        last: Exception | None = None
        for attempt in range(1, cfg.retries + 1):
            try:
                with self._gate:
                    self.stats.enter()
                    try:
                        resp = self._http.post(url, json=payload, timeout=cfg.timeout)
                    finally:
                        self.stats.leave()
                if 400 <= resp.status_code < 500:
                    raise RemoteProtocolError(f"{url} rejected request ({resp.status_code}): {resp.text[:200]}")
                if resp.status_code >= 500:
                    raise MalformedResponse(f"server error {resp.status_code}")
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise MalformedResponse(f"non-JSON body: {resp.text[:80]!r}") from exc
                value = body.get(expect_key) if isinstance(body, dict) else None
                if not isinstance(value, str):
                    raise MalformedResponse(f"response lacks string field {expect_key!r}")
                return value
            except RemoteProtocolError:
                self.stats.bump("failures")
                raise
            except (requests.Timeout, requests.ConnectionError, MalformedResponse) as exc:
                last = exc
                if attempt < cfg.retries:
                    self.stats.bump("retries")
                    log.info("retrying %s (attempt %d/%d): %s", url, attempt + 1, cfg.retries, exc)
                    time.sleep(cfg.backoff * 2 ** (attempt - 1))
        self.stats.bump("failures")
        raise EnvironmentFailure(f"{url} failed after {cfg.retries} attempts: {last}")


def remote_reason(client: RemoteClient, endpoint: str, query: Query, tool_outputs: Sequence[str]) -> ReasonerVerdict:
    payload = {
        "query_id": query.id,
        "question": query.text,
        "image_ref": query.image_ref,
        "tool_outputs": list(tool_outputs),
    }
    return ReasonerVerdict(client.post(endpoint, payload, "answer"))


def remote_tool(client: RemoteClient, endpoint: str, tool_index: int, query: Query) -> str:
    payload = {
        "tool_index": int(tool_index),
        "query_id": query.id,
        "question": query.text,
        "image_ref": query.image_ref,
    }
    return client.post(endpoint, payload, "output")


class RemoteEnvironment:
    """Environment whose reasoner and tools live behind HTTP endpoints."""

    def __init__(self, config: RemoteConfig, session: Any = None):
        self.config = config
        self.client = RemoteClient(config, session)
        self.num_tools = len(config.tool_urls)

    def execute_tool(self, tool_index: int, query: Query) -> str:
        return remote_tool(self.client, self.config.tool_urls[tool_index], tool_index, query)

    def reason(
        self,
        query: Query,
        selection: ToolSelection,
        tool_outputs: Sequence[str],
        rng: np.random.Generator,
    ) -> ReasonerVerdict:
        return remote_reason(self.client, self.config.reason_url, query, tool_outputs)
