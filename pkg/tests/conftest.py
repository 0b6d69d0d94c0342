import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from pivotdecode.adapters import ScriptedModel, Vocabulary
from pivotdecode.corpus import ConflictSample
from pivotdecode.pivots import PivotSpan, ReasoningChain


@pytest.fixture
def vocab():
    # ids: 0 <unk>, 1 <eos>, 2 <RPivot>, 3 </RPivot>, then the words in order
    return Vocabulary.with_specials(["Q", "A", "B", "Spain", "born", "in", "Da", "Vinci", "."])


def scripted(vocab, default, rules=()):
    """Build a ScriptedModel from token-name suffixes and dense or sparse logits."""
    return ScriptedModel.from_dict({
        "vocab": list(vocab.tokens),
        "default": default,
        "rules": [dict(r) for r in rules],
    })


@pytest.fixture
def chain():
    return ReasoningChain(("painting", "painter", "nationality"), ("painted_by", "nationality_of"))


@pytest.fixture
def sample(chain):
    passages = (
        "The painter was Italian by birth.",
        "Records describe the painter as Spanish.",
        "The painting hangs in Paris.",
        "It was restored in Rome.",
        "Nothing else is known.",
    )
    spans = (
        PivotSpan.locate(0, passages[0], "Italian", "nationality"),
        PivotSpan.locate(1, passages[1], "Spanish", "nationality"),
    )
    return ConflictSample(
        sample_id="s1",
        question="What nationality was the painter?",
        answer="Italian",
        passages=passages,
        chain=chain,
        spans=spans,
        conflict_label="high-conflict",
    )


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 - http.server naming
        length = int(self.headers.get("Content-Length", 0))
        request = json.loads(self.rfile.read(length) or b"null")
        self.server.requests.append((self.path, request))
        status, body = self.server.respond(self.path, request)
        raw = body.encode() if isinstance(body, str) else json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    """Local JSON server; assign ``server.respond = fn(path, request) -> (status, body)``."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.respond = lambda path, request: (404, {"error": "no handler"})
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    server.server_close()


def random_pairs(n, size, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield rng.normal(size=size), rng.normal(size=size)


# -- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    _ACCEPTANCE.append((marker.args[0], "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {label}" + (f"  [{detail}]" if detail else ""))
