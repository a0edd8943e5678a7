"""HTTP client for remote models and providers, with a persistent score cache."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from . import wire
from .errors import BackendError, ConfigurationError, ProtocolError
from .initialization import CandidateGenerator
from .metrics import EmbeddingProvider
from .model import (LOG_ZERO_PROBABILITY, NEG_INF, LanguageModelBackend, ObjectiveReport,
                    Sampling, Vocabulary)
from .pso import TextAutoencoder

log = logging.getLogger(__name__)

ENV_URL = "INVERSOR_BACKEND_URL"


class HttpClient:
    """POST/GET JSON with bounded retries and exponential backoff.

    Connection errors, timeouts, 429 and 5xx are retried; other non-2xx
    statuses fail immediately. Both end in :class:`BackendError`.
    """

    def __init__(self, base_url: str | None = None, timeout: float = 30.0,
                 max_retries: int = 3, backoff: float = 0.1):
        base_url = base_url or os.environ.get(ENV_URL)
        if not base_url:
            raise ConfigurationError(f"no backend URL given and {ENV_URL} is not set")
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._local = threading.local()

    @property
    def session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            s = self._local.session = requests.Session()
        return s

    def _send(self, method: str, path: str, body: bytes | None = None, params=None) -> bytes:
        url = self.base_url + path
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.request(method, url, data=body, params=params,
                                            timeout=self.timeout,
                                            headers={"Content-Type": "application/json"})
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                continue
            if not 200 <= resp.status_code < 300:
                raise BackendError(f"{method} {path} failed with HTTP {resp.status_code}: "
                                   f"{resp.text[:200]}")
            return resp.content
        raise BackendError(f"{method} {path} failed after {self.max_retries + 1} attempts ({last})")

    def post(self, path: str, message: wire.Message, response_cls):
        data = self._send("POST", path, wire.dumps(message))
        try:
            return wire.loads(response_cls, data)
        except ProtocolError:
            log.error("malformed response from %s: %r", path, data[:500])
            raise

    def get(self, path: str, response_cls, params=None):
        data = self._send("GET", path, params=params)
        try:
            return wire.loads(response_cls, data)
        except ProtocolError:
            log.error("malformed response from %s: %r", path, data[:500])
            raise


class EvalCache:
    """Content-addressed store of :class:`ObjectiveReport` values.

    Backed by an append-only JSON-lines log when ``path`` is given; lines that
    fail to parse (e.g. a truncated tail after a crash) are ignored on load.
    Reads go to an in-memory dict; appends are serialized by a lock.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._index: dict[str, ObjectiveReport] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    @staticmethod
    def key(model_id: str, prompt: Sequence[int], continuation: Sequence[int],
            reveal_index: int) -> str:
        payload = json.dumps([model_id, [int(t) for t in prompt],
                              [int(t) for t in continuation], int(reveal_index)],
                             separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                try:
                    rec = json.loads(line)
                    rep = ObjectiveReport(wire.decode_float(rec["ll"]), int(rec["scored"]),
                                          int(rec["calls"]))
                    self._index[rec["key"]] = rep
                except (ValueError, KeyError, TypeError, ProtocolError):
                    continue

    def __len__(self) -> int:
        return len(self._index)

    def get(self, key: str) -> ObjectiveReport | None:
        return self._index.get(key)

    def put(self, key: str, report: ObjectiveReport) -> None:
        with self._lock:
            if key in self._index:
                return
            self._index[key] = report
            if self.path is not None:
                rec = {"key": key, "ll": wire.encode_float(report.log_likelihood),
                       "scored": report.tokens_scored, "calls": report.model_calls}
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def remote_logprobs(client: HttpClient, request: wire.LogprobsRequest) -> ObjectiveReport:
    """Score a continuation over the wire and sum it into a report.

    ``stopped_at`` marks the 1-based zero-probability position; log-probs
    below ``log(1e-45)`` are also treated as zero probability.
    """
    resp = client.post("/v1/logprobs", request, wire.LogprobsResponse)
    n = len(request.continuation_tokens)
    if resp.stopped_at is not None:
        if not 1 <= resp.stopped_at <= n or len(resp.logprobs) != resp.stopped_at:
            raise ProtocolError(f"inconsistent stopped_at={resp.stopped_at} for "
                                f"{len(resp.logprobs)} log-probs of {n} tokens")
        return ObjectiveReport(NEG_INF, resp.stopped_at, resp.stopped_at)
    if len(resp.logprobs) != n:
        raise ProtocolError(f"expected {n} log-probs, got {len(resp.logprobs)}")
    total = 0.0
    for pos, lp in enumerate(resp.logprobs, start=1):
        if lp < LOG_ZERO_PROBABILITY:
            if request.early_stop:
                return ObjectiveReport(NEG_INF, pos, pos)
            lp = NEG_INF
        total += lp
    return ObjectiveReport(total, n, n)


class RemoteBackend(LanguageModelBackend):
    """Language model served over HTTP; tokenization happens client-side
    against the vocabulary fetched once from ``GET /v1/vocab``."""

    def __init__(self, client: HttpClient, model_id: str | None = None,
                 cache: EvalCache | None = None):
        self.client = client
        params = {"model": model_id} if model_id else None
        v = client.get("/v1/vocab", wire.VocabResponse, params=params)
        self.model_id = v.model
        self.vocab = Vocabulary(size=v.size, tokens=tuple(v.tokens) if v.tokens else None,
                                special=frozenset(v.special), eos_id=v.eos_id)
        self.cache = cache if cache is not None else EvalCache()
        self._inflight: dict[str, threading.Event] = {}
        self._inflight_lock = threading.Lock()

    def continuation_logprobs(self, prompt, continuation, early_stop=True):
        req = wire.LogprobsRequest(self.model_id, [int(t) for t in prompt],
                                   [int(t) for t in continuation], early_stop)
        resp = self.client.post("/v1/logprobs", req, wire.LogprobsResponse)
        return resp.logprobs, resp.stopped_at

    def score(self, prompt, continuation, early_stop=True) -> ObjectiveReport:
        if not early_stop:
            return remote_logprobs(self.client, wire.LogprobsRequest(
                self.model_id, [int(t) for t in prompt], [int(t) for t in continuation], False))
        key = EvalCache.key(self.model_id, prompt, continuation, len(continuation))
        while True:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
            with self._inflight_lock:
                event = self._inflight.get(key)
                owner = event is None
                if owner:
                    event = self._inflight[key] = threading.Event()
            if owner:
                break
            event.wait()
            if self.cache.get(key) is None:
                # the owner failed; try ourselves
                continue
        try:
            rep = remote_logprobs(self.client, wire.LogprobsRequest(
                self.model_id, [int(t) for t in prompt], [int(t) for t in continuation], True))
            self.cache.put(key, rep)
            return rep
        finally:
            with self._inflight_lock:
                self._inflight.pop(key, None)
            event.set()

    def generate_tokens(self, prompt, max_new, sampling: Sampling) -> list[int]:
        req = wire.GenerateRequest(self.model_id, [int(t) for t in prompt], int(max_new),
                                   float(sampling.temperature), float(sampling.top_p),
                                   int(sampling.top_k), int(sampling.seed))
        return self.client.post("/v1/generate", req, wire.GenerateResponse).tokens[:max_new]


class RemoteEmbedder(EmbeddingProvider):
    def __init__(self, client: HttpClient):
        self.client = client

    def embed(self, text: str) -> np.ndarray:
        vec = np.asarray(self.client.post("/v1/embed", wire.EmbedRequest(text),
                                          wire.EmbedResponse).vector)
        norm = np.linalg.norm(vec)
        if norm == 0 or abs(norm - 1.0) > 1e-6:
            raise ProtocolError(f"embedding is not unit-norm (norm={norm})")
        return vec


class RemoteGenerator(CandidateGenerator):
    """Paraphraser or inverted model behind the ``/v1/invert`` contract."""

    def __init__(self, client: HttpClient, path: str = "/v1/invert"):
        self.client = client
        self.path = path

    def generate(self, target_output: str, sampling: Sampling) -> str:
        req = wire.InvertRequest(target_output, float(sampling.temperature),
                                 float(sampling.top_p), int(sampling.top_k), int(sampling.seed))
        text = self.client.post(self.path, req, wire.InvertResponse).input_text
        if not text.strip():
            raise ProtocolError("generator returned empty text")
        return text


class RemoteAutoencoder(TextAutoencoder):
    def __init__(self, client: HttpClient, vocab: Vocabulary, dimension: int):
        self.client = client
        self.vocab = vocab
        self.dimension = dimension

    def encode(self, tokens) -> np.ndarray:
        vec = self.client.post("/v1/encode", wire.EncodeRequest(self.vocab.decode(tokens)),
                               wire.EncodeResponse).vector
        if len(vec) != self.dimension:
            raise ProtocolError(f"expected a {self.dimension}-d vector, got {len(vec)}")
        return np.clip(np.asarray(vec), -1.0, 1.0)

    def decode(self, vector, max_len, sampling: Sampling) -> list[int]:
        req = wire.DecodeRequest([float(x) for x in vector], int(max_len),
                                 float(sampling.temperature), float(sampling.top_p),
                                 int(sampling.seed))
        text = self.client.post("/v1/decode", req, wire.DecodeResponse).text
        ids = self.vocab.encode(text, skip_unknown=True)[:max_len]
        if not ids:
            raise ProtocolError(f"decoder returned no in-vocabulary tokens: {text!r}")
        return ids


__all__ = ["HttpClient", "EvalCache", "RemoteBackend", "RemoteEmbedder", "RemoteGenerator",
           "RemoteAutoencoder", "remote_logprobs", "ENV_URL"]
