"""Shared fixtures: config builders, a scripted HTTP stub, and data paths."""

import http.server
import json
import threading
from pathlib import Path

import pytest

from semroute.config import (
    EntropyConfig,
    MultistepConfig,
    RetrieverConfig,
    RouterConfig,
    RunConfig,
    RunnerConfig,
    SamplingConfig,
)

DATA_DIR = Path(__file__).parent / "data"


def build_config(
    *,
    n=10,
    temperature=1.0,
    length_normalized=False,
    tau_low=0.4,
    tau_high=0.9,
    signal="se",
    k=5,
    max_steps=3,
    parallelism=1,
    measure_time=False,
    seed=0,
) -> RunConfig:
    """A validated-shape RunConfig for in-process Pipeline tests."""
    return RunConfig(
        sampling=SamplingConfig(n=n, temperature=temperature),
        entropy=EntropyConfig(length_normalized=length_normalized),
        router=RouterConfig(tau_low=tau_low, tau_high=tau_high, signal=signal),
        retriever=RetrieverConfig(k=k),
        multistep=MultistepConfig(max_steps=max_steps),
        runner=RunnerConfig(parallelism=parallelism, measure_time=measure_time),
        seed=seed,
    )


def pool(*pairs):
    """[(text, prob), ...] -> scenario answer pool."""
    return [{"text": text, "probability": prob} for text, prob in pairs]


def uniform_pool(texts):
    share = 1.0 / len(texts)
    return [{"text": text, "probability": share} for text in texts]


class ScriptedHttpServer:
    """Threaded HTTP stub replaying canned responses in arrival order.

    Script entries are (status, body) pairs; dict bodies are serialized as
    JSON, strings are sent verbatim. Parsed request payloads and headers are
    logged for assertions. Once the script runs dry every further request
    gets a 200 with an empty object.
    """

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        self.request_headers = []
        self._lock = threading.Lock()
        outer = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with outer._lock:
                    try:
                        outer.requests.append(json.loads(raw))
                    except ValueError:
                        outer.requests.append(raw.decode("utf-8", "replace"))
                    outer.request_headers.append(dict(self.headers))
                    status, body = outer.script.pop(0) if outer.script else (200, {})
                payload = body if isinstance(body, str) else json.dumps(body)
                data = payload.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *_args):
                pass

        self._server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def scripted_server():
    """Factory fixture: start ScriptedHttpServer instances, close them after."""
    servers = []

    def start(script):
        server = ScriptedHttpServer(script)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


def completion_body(samples, per_token=False):
    """Build an OpenAI-style completions payload from (text, logprob) pairs.

    With per_token=True the second element is already a token logprob list.
    """
    choices = []
    for text, lp in samples:
        token_lps = lp if per_token else [lp]
        choices.append({"text": text, "logprobs": {"token_logprobs": token_lps}})
    return {"choices": choices}
