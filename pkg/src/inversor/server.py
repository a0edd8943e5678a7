"""Reference loopback server speaking the wire protocol.

Wraps in-process models and providers; used for integration tests and for
``inversor serve``. It is not meant to host real LLMs.
"""
from __future__ import annotations

import json
import logging
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import wire
from .errors import CapabilityError, ContractViolation, InversorError, ProtocolError
from .model import Sampling

log = logging.getLogger(__name__)


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _reply(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._reply(status, json.dumps({"error": message}).encode())

    def _count(self, path: str) -> bool:
        app = self.server.app
        with app.lock:
            app.requests[path] += 1
            if app.failures:
                status = app.failures.pop(0)
                self._error(status, "injected failure")
                return False
        return True

    def do_GET(self):
        url = urlparse(self.path)
        if not self._count(url.path):
            return
        if url.path != "/v1/vocab":
            return self._error(404, f"unknown endpoint {url.path}")
        model_id = parse_qs(url.query).get("model", [None])[0]
        try:
            model = self.server.app.model(model_id)
        except KeyError:
            return self._error(404, f"unknown model {model_id!r}")
        v = model.vocab
        resp = wire.VocabResponse(model.model_id, v.size, list(v.tokens or ()), sorted(v.special),
                                  v.eos_id)
        self._reply(200, wire.dumps(resp))

    def do_POST(self):
        url = urlparse(self.path)
        if not self._count(url.path):
            return
        handler = self.server.app.routes.get(url.path)
        if handler is None:
            return self._error(404, f"unknown endpoint {url.path}")
        body = self.rfile.read(int(self.headers.get("Content-Length", 0)))
        try:
            resp = handler(body)
        except KeyError as exc:
            return self._error(404, f"unknown model {exc}")
        except (ProtocolError, ContractViolation) as exc:
            return self._error(400, str(exc))
        except InversorError as exc:
            return self._error(501, str(exc))
        self._reply(200, wire.dumps(resp))


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    app: "LoopbackServer"


class LoopbackServer:
    """Serve ``models`` (and optional providers) on ``host:port``.

    Use as a context manager; ``port=0`` picks a free port. ``requests``
    counts hits per endpoint and :meth:`fail_next` injects error statuses.
    """

    def __init__(self, models, embedder=None, autoencoder=None, inverter=None,
                 host: str = "127.0.0.1", port: int = 0):
        models = list(models) if isinstance(models, (list, tuple)) else [models]
        self.models = {m.model_id: m for m in models}
        self.default_model = models[0].model_id
        self.embedder = embedder
        self.autoencoder = autoencoder
        self.inverter = inverter
        self.requests: Counter = Counter()
        self.failures: list[int] = []
        self.lock = threading.Lock()
        self.routes = {
            "/v1/logprobs": self._logprobs,
            "/v1/generate": self._generate,
            "/v1/embed": self._embed,
            "/v1/invert": self._invert,
            "/v1/encode": self._encode,
            "/v1/decode": self._decode,
        }
        self._httpd = _Server((host, port), _Handler)
        self._httpd.app = self
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def model(self, model_id):
        return self.models[model_id or self.default_model]

    def fail_next(self, *statuses: int) -> None:
        with self.lock:
            self.failures.extend(statuses)

    def start(self) -> "LoopbackServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- endpoints ----------------------------------------------------------

    def _logprobs(self, body):
        req = wire.loads(wire.LogprobsRequest, body)
        model = self.model(req.model)
        model.vocab.check(req.prompt_tokens, "prompt")
        model.vocab.check(req.continuation_tokens, "continuation")
        lps, stopped = model.continuation_logprobs(req.prompt_tokens, req.continuation_tokens,
                                                   req.early_stop)
        return wire.LogprobsResponse([float(x) for x in lps], stopped)

    def _generate(self, body):
        req = wire.loads(wire.GenerateRequest, body)
        model = self.model(req.model)
        model.vocab.check(req.prompt_tokens, "prompt")
        sampling = Sampling(req.temperature, req.top_p, req.top_k, req.seed)
        return wire.GenerateResponse(model.generate_tokens(req.prompt_tokens, req.max_new, sampling))

    def _embed(self, body):
        req = wire.loads(wire.EmbedRequest, body)
        if self.embedder is None:
            raise CapabilityError("no embedding provider mounted")
        return wire.EmbedResponse([float(x) for x in self.embedder.embed(req.text)])

    def _invert(self, body):
        req = wire.loads(wire.InvertRequest, body)
        if self.inverter is None:
            raise CapabilityError("no inverted model mounted")
        sampling = Sampling(req.temperature, req.top_p, req.top_k, req.seed)
        return wire.InvertResponse(self.inverter.generate(req.output_text, sampling))

    def _encode(self, body):
        req = wire.loads(wire.EncodeRequest, body)
        if self.autoencoder is None:
            raise CapabilityError("no autoencoder mounted")
        vocab = self.autoencoder.vocab
        vec = self.autoencoder.encode(vocab.encode(req.text, skip_unknown=True))
        return wire.EncodeResponse([float(x) for x in vec])

    def _decode(self, body):
        req = wire.loads(wire.DecodeRequest, body)
        if self.autoencoder is None:
            raise CapabilityError("no autoencoder mounted")
        sampling = Sampling(req.temperature, req.top_p, 0, req.seed)
        ids = self.autoencoder.decode(np.asarray(req.vector), req.max_len, sampling)
        return wire.DecodeResponse(self.autoencoder.vocab.decode(ids))
