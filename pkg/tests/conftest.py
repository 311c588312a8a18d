from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from cfaudit.lexicon import Lexicon, SocialGroupTerm, load_lexicon
from cfaudit.resources import shipped_lexicon_path, shipped_templates_path

DATA_DIR = Path(__file__).parent / "data"
HELPERS_DIR = Path(__file__).parent / "helpers"
STDIO_SCORER = HELPERS_DIR / "stdio_scorer.py"


@pytest.fixture(scope="session")
def shipped_lexicon() -> Lexicon:
    return load_lexicon(shipped_lexicon_path())


@pytest.fixture(scope="session")
def shipped_lexicon_file() -> Path:
    return shipped_lexicon_path()


@pytest.fixture(scope="session")
def shipped_templates_file() -> Path:
    return shipped_templates_path()


def make_toy_lexicon() -> Lexicon:
    """Six terms over three categories; enough to exercise buckets and CTF."""
    return Lexicon(
        (
            SocialGroupTerm("turk", "nationality", "noun"),
            SocialGroupTerm("marokkaan", "nationality", "noun"),
            SocialGroupTerm("vrouw", "gender", "noun"),
            SocialGroupTerm("man", "gender", "noun"),
            SocialGroupTerm("jood", "religion", "noun"),
            SocialGroupTerm("moslim", "religion", "noun"),
        )
    )


@pytest.fixture
def toy_lexicon() -> Lexicon:
    return make_toy_lexicon()


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append((self.path, payload))  # type: ignore[attr-defined]
        handler = self.server.routes.get(self.path)  # type: ignore[attr-defined]
        if handler is None:
            self.send_response(404)
            self.end_headers()
            return
        status, body = handler(payload)
        data = body if isinstance(body, bytes) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class HttpStub:
    """A local HTTP server whose POST routes are plain callables."""

    def __init__(self):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._server.routes = {}  # type: ignore[attr-defined]
        self._server.requests = []  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list:
        return self._server.requests  # type: ignore[attr-defined]

    def route(self, path: str, handler) -> None:
        self._server.routes[path] = handler  # type: ignore[attr-defined]

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def http_stub():
    stub = HttpStub()
    yield stub
    stub.close()
