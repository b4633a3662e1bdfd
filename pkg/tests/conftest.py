import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        srv = self.server
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        srv.requests.append({"path": self.path, "body": body, "auth": self.headers.get("Authorization")})
        status = srv.statuses.pop(0) if srv.statuses else 200
        payload = srv.responses.get(body.get("prompt"), {"error": "unknown prompt"})
        if status == 200 and body.get("prompt") not in srv.responses:
            status = 404
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def completion_server():
    """Local completions endpoint replaying canned responses keyed by prompt."""
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    srv.requests, srv.statuses = [], []
    canned = json.loads((FIXTURES / "completion_alligator.json").read_text())
    srv.responses = {canned["choices"][0]["text"]: canned}
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    srv.endpoint = f"http://127.0.0.1:{srv.server_address[1]}"
    yield srv
    srv.shutdown()
    srv.server_close()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
