from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import pytest

from lexgraph.corpus import load_corpus
from lexgraph.graph import build_graph
from lexgraph.rules import classify, load_rules

DATA = Path(__file__).resolve().parents[1] / "src" / "lexgraph" / "data"

_CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def criterion():
    """Record a pass/fail line per acceptance criterion for the terminal summary."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        _CRITERIA.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")

    return record


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(DATA / "corpus.jsonl")


@pytest.fixture(scope="session")
def rules():
    return load_rules(DATA / "rules.json")


@pytest.fixture(scope="session")
def classifications(corpus, rules):
    return [c for doc in corpus for c in classify(doc, rules)]


@pytest.fixture(scope="session")
def fixture_graph(corpus, rules, classifications):
    return build_graph(corpus, classifications, rules)


@pytest.fixture
def json_server():
    """Start a local HTTP server answering POSTs with ``handler(request_json)``."""
    servers = []

    def start(handler):
        requests = []

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                requests.append(body)
                payload = json.dumps(handler(body)).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        port = server.server_address[1]
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{port}/", requests

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()
